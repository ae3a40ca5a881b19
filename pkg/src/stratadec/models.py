"""Finitely generated power-set models, sentence evaluation in them,
and the guaranteed embedding construction between two such models.

A model is the hierarchy X, P(X), P(P(X)), ... over m atoms.  An
element is (level, code): at level 0 the code is an atom index, at
level n+1 it is the membership bit-vector over level-n elements.
Because every level enumerates all codes in order, an element's rank
equals its code, so membership is a single bit test and the whole
level table is just range(size).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

from .errors import BoundViolation, CrossCheckMismatch, FormulaTypeError, InfeasibleLevel
from .formulas import (
    And,
    Equal,
    Iff,
    Implies,
    Member,
    Not,
    Or,
    PrenexSentence,
    TypedFormula,
    TypedVar,
)
from .stratify import compute_g_bound

__all__ = [
    "Element",
    "Model",
    "EmbeddingMaps",
    "eval_qf",
    "eval_sentence",
    "embed",
    "verify_embedding",
    "LEVEL_BUDGET",
    "EVAL_BUDGET",
]

LEVEL_BUDGET = 1 << 24  # largest level size that may be enumerated
EVAL_BUDGET = 4_000_000  # cap on quantifier-tuple combinations
_ORBIT_MAX_ATOMS = 6  # beyond 6 atoms S_m is too big to enumerate


def _iter_bits(code: int) -> Iterator[int]:
    while code:
        low = code & -code
        yield low.bit_length() - 1
        code ^= low


@dataclass(frozen=True, order=True)
class Element:
    """One point of a model: an atom index at level 0, a membership
    bit-vector over the level below otherwise."""

    level: int
    code: int


class Model:
    """The power-set hierarchy over atom_count atoms, up to max_level.

    Level sizes are exact integers while they stay small and None once
    they pass the representable threshold; only levels whose size fits
    LEVEL_BUDGET may be enumerated.  Instances are immutable apart from
    internal caches filled on first use.
    """

    def __init__(self, atom_count: int, max_level: int):
        if atom_count < 0 or max_level < 0:
            raise ValueError("atom_count and max_level must be nonnegative")
        self.m = atom_count
        self.max_level = max_level
        sizes: list[Optional[int]] = [atom_count]
        for _ in range(max_level):
            s = sizes[-1]
            # 2^s still printable/representable while s is modest
            sizes.append((1 << s) if s is not None and s <= LEVEL_BUDGET else None)
        self._sizes = sizes
        self._orbit_reps: dict[int, Optional[list[int]]] = {}

    def __repr__(self) -> str:
        return f"Model(m={self.m}, max_level={self.max_level})"

    def level_size(self, level: int) -> Optional[int]:
        """Exact size of the level, or None when it exceeds the
        representable threshold."""
        if not 0 <= level <= self.max_level:
            raise InfeasibleLevel(f"level {level} outside model range", level)
        return self._sizes[level]

    def require_enumerable(self, level: int) -> int:
        size = self.level_size(level)
        if size is None or size > LEVEL_BUDGET:
            raise InfeasibleLevel(
                f"level {level} of a {self.m}-atom model exceeds the "
                f"enumeration budget of {LEVEL_BUDGET} elements",
                level,
            )
        return size

    def elements(self, level: int) -> Iterator[Element]:
        return (Element(level, c) for c in range(self.require_enumerable(level)))

    def contains(self, x: Element, y: Element) -> bool:
        """x a member of y; y must live one level above x."""
        if y.level != x.level + 1:
            raise FormulaTypeError(
                f"membership needs consecutive levels, got {x.level} and {y.level}"
            )
        return (y.code >> x.code) & 1 == 1

    def members(self, y: Element) -> Iterator[Element]:
        if y.level == 0:
            raise FormulaTypeError("atoms have no members")
        return (Element(y.level - 1, b) for b in _iter_bits(y.code))

    def empty(self, level: int) -> Element:
        if level == 0:
            raise ValueError("no empty set at atom level")
        return Element(level, 0)

    def universe(self, level: int) -> Element:
        """The point containing everything one level down."""
        if level == 0:
            raise ValueError("no universe at atom level")
        below = self.require_enumerable(level - 1)
        return Element(level, (1 << below) - 1)

    def dump_level(self, level: int) -> list[str]:
        """Debug listing, one element per line: level, rank, code hex."""
        return [f"{level} {c} 0x{c:x}" for c in range(self.require_enumerable(level))]

    # -- orbit reduction under atom permutations --------------------------

    def orbit_representatives(self, level: int) -> Optional[list[int]]:
        """Codes representing the orbits of the level under all atom
        permutations, or None when the reduction is unavailable.  Valid
        only for a variable quantified before any other binding, since
        atom permutations are automorphisms of the whole hierarchy."""
        if level in self._orbit_reps:
            return self._orbit_reps[level]
        reps = self._compute_orbit_reps(level)
        self._orbit_reps[level] = reps
        return reps

    def _compute_orbit_reps(self, level: int) -> Optional[list[int]]:
        size = self.level_size(level)
        if size is None or size > LEVEL_BUDGET:
            return None
        if level == 0:
            return [0] if self.m else []
        if level == 1:
            # orbits of subsets of atoms are the cardinalities
            return [(1 << j) - 1 for j in range(self.m + 1)]
        if self.m > _ORBIT_MAX_ATOMS:
            return None
        perms = list(itertools.permutations(range(self.m)))
        if size * len(perms) > (1 << 22):
            return None
        # per permutation, full image tables level by level
        tables: list[list[int]] = [list(p) for p in perms]
        for lv in range(1, level + 1):
            width = self.require_enumerable(lv)
            new_tables = []
            for tab in tables:
                img = [0] * width
                for code in range(width):
                    acc = 0
                    for b in _iter_bits(code):
                        acc |= 1 << tab[b]
                    img[code] = acc
                new_tables.append(img)
            tables = new_tables
        reps = []
        for code in range(size):
            if all(tab[code] >= code for tab in tables):
                reps.append(code)
        return reps


def eval_qf(model: Model, theta: TypedFormula, env: dict[str, Element]) -> bool:
    """Satisfaction of a quantifier-free typed formula under env.

    Every variable must be bound by env to an element at exactly its
    annotated level."""

    def look(v: TypedVar) -> Element:
        el = env.get(v.name)
        if el is None:
            raise FormulaTypeError(f"unbound variable {v.name!r} in evaluation")
        if el.level != v.type:
            raise FormulaTypeError(
                f"variable {v} bound to a level-{el.level} element"
            )
        return el

    def go(node) -> bool:
        if isinstance(node, Member):
            return model.contains(look(node.left), look(node.right))
        if isinstance(node, Equal):
            a, b = look(node.left), look(node.right)
            return a.code == b.code
        if isinstance(node, Not):
            return not go(node.arg)
        if isinstance(node, And):
            return go(node.left) and go(node.right)
        if isinstance(node, Or):
            return go(node.left) or go(node.right)
        if isinstance(node, Implies):
            return (not go(node.left)) or go(node.right)
        if isinstance(node, Iff):
            return go(node.left) == go(node.right)
        raise FormulaTypeError("quantifier inside a quantifier-free matrix")

    return go(theta)


def eval_sentence(model: Model, p: PrenexSentence, use_orbits: bool = True,
                  budget: int = EVAL_BUDGET) -> bool:
    """Evaluate a prenex sentence by quantifier expansion.

    The first quantified variable may range over orbit representatives
    of atom permutations instead of the full level (truth of the rest
    of the sentence is invariant under automorphisms while no other
    variable is bound yet).  Later variables always expand fully."""
    prefix = p.prefix
    domains: list[range | list[int]] = []
    total = 1
    for i, (kind, tv) in enumerate(prefix):
        size = model.require_enumerable(tv.type)
        codes: range | list[int] = range(size)
        if i == 0 and use_orbits:
            reps = model.orbit_representatives(tv.type)
            if reps is not None:
                codes = reps
        domains.append(codes)
        total *= max(len(codes), 1)
        if total > budget:
            raise InfeasibleLevel(
                f"evaluation needs about {total} assignments, over the "
                f"budget of {budget}"
            )

    env: dict[str, Element] = {}

    def rec(i: int) -> bool:
        if i == len(prefix):
            return eval_qf(model, p.matrix, env)
        kind, tv = prefix[i]
        want_any = kind == "exists"
        for code in domains[i]:
            env[tv.name] = Element(tv.type, code)
            value = rec(i + 1)
            if value == want_any:
                del env[tv.name]
                return want_any
        env.pop(tv.name, None)
        return not want_any

    return rec(0)


# ---------------------------------------------------------------------------
# Guaranteed embedding of a small model into a wider one.


@dataclass(frozen=True)
class EmbeddingMaps:
    """Level-wise injections from a small model into an ambient one.

    maps[n][code] is the ambient code of the small model's level-n
    element with that code."""

    maps: tuple[tuple[int, ...], ...]
    witness_pool: tuple[Element, ...]  # the closure set driving the maps

    def image(self, x: Element) -> Element:
        return Element(x.level, self.maps[x.level][x.code])

    @property
    def top_level(self) -> int:
        return len(self.maps) - 1


def _closure_pool(ambient: Model, params: list[Element]) -> list[Element]:
    """Close the parameter set downward: whenever two collected points
    on one level differ, collect one ambient point lying in their
    symmetric difference (the lowest-rank one, for determinism)."""
    pool: set[Element] = set(params)
    top = max((p.level for p in params), default=0)
    for n in range(top):
        lvl = top - n
        here = sorted(e for e in pool if e.level == lvl)
        for y, z in itertools.combinations(here, 2):
            diff = y.code ^ z.code
            # distinct same-level points differ in at least one member
            gamma = Element(lvl - 1, next(_iter_bits(diff)))
            pool.add(gamma)
    return sorted(pool)


def embed(small: Model, ambient: Model, params: list[Element],
          up_to_level: Optional[int] = None) -> EmbeddingMaps:
    """Build level-wise injections of small into ambient whose ranges
    are arranged to cover the given ambient parameter points.

    The construction closes the parameters under symmetric-difference
    witnesses, covers the resulting level-0 pool with the lowest atoms
    of the small model, and then pushes images upward, redirecting an
    image onto a pool point exactly when the pool point's trace inside
    the embedded universe equals the image."""
    for p in params:
        if p.level > ambient.max_level:
            raise InfeasibleLevel(f"parameter {p} above the ambient model's levels")
        size = ambient.level_size(p.level)
        if p.level > 0:
            width = ambient.level_size(p.level - 1)
            if width is None or width > LEVEL_BUDGET:
                raise InfeasibleLevel(
                    f"parameter level {p.level} too wide to encode", p.level
                )
            if not 0 <= p.code < (1 << width):
                raise ValueError(f"parameter code out of range: {p}")
        elif not 0 <= p.code < (size or 0):
            raise ValueError(f"parameter atom out of range: {p}")

    k = len(params)
    r_max = max((p.level for p in params), default=0)
    need = compute_g_bound(k, r_max)
    if small.m < need:
        raise BoundViolation(
            f"small model has {small.m} atoms, the construction needs "
            f"at least {need} for {k} parameters up to level {r_max}"
        )

    L = min(small.max_level, ambient.max_level)
    if up_to_level is not None:
        if up_to_level > min(small.max_level, ambient.max_level):
            raise InfeasibleLevel("requested embedding level above a model's range")
        L = up_to_level
    if L < r_max:
        raise InfeasibleLevel(
            f"embedding up to level {L} cannot cover a level-{r_max} parameter"
        )

    pool = _closure_pool(ambient, params)
    pool_atoms = sorted(e.code for e in pool if e.level == 0)
    if small.m < len(pool_atoms):
        raise BoundViolation(
            f"witness pool needs {len(pool_atoms)} atoms of the small model, "
            f"only {small.m} available"
        )
    if ambient.m < small.m + len(pool_atoms):
        raise BoundViolation(
            f"ambient model needs at least {small.m} + {len(pool_atoms)} atoms, "
            f"has {ambient.m}"
        )

    # level 0: cover the pool atoms first, then fill with unused atoms
    f0: list[int] = []
    used = set(pool_atoms)
    f0.extend(pool_atoms)
    cursor = 0
    while len(f0) < small.m:
        if cursor not in used:
            f0.append(cursor)
            used.add(cursor)
        cursor += 1
    maps: list[tuple[int, ...]] = [tuple(f0)]

    for n in range(L):
        small_size = small.require_enumerable(n)
        fn = maps[n]
        full_image = 0
        for code in range(small_size):
            full_image |= 1 << fn[code]
        candidates = [e for e in pool if e.level == n + 1]
        next_map: list[int] = []
        for x_code in range(small.require_enumerable(n + 1)):
            image = 0
            for b in _iter_bits(x_code):
                image |= 1 << fn[b]
            hits = [g for g in candidates if g.code & full_image == image]
            if len(hits) > 1:
                raise CrossCheckMismatch(
                    "two pool points share a trace inside the embedded "
                    f"universe at level {n + 1}; the witness closure is broken"
                )
            next_map.append(hits[0].code if hits else image)
        maps.append(tuple(next_map))

    return EmbeddingMaps(tuple(maps), tuple(pool))


def verify_embedding(small: Model, ambient: Model, emb: EmbeddingMaps,
                     params: Iterable[Element] = ()) -> None:
    """Check the three embedding guarantees by full enumeration:
    injectivity per level, membership preserved and reflected across
    consecutive levels, and every parameter covered by the range at its
    level.  Raises CrossCheckMismatch on any failure."""
    for n, level_map in enumerate(emb.maps):
        if len(set(level_map)) != len(level_map):
            raise CrossCheckMismatch(f"embedding not injective at level {n}")
        size = ambient.level_size(n)
        if size is not None:
            for img in level_map:
                if img >= size:
                    raise CrossCheckMismatch(
                        f"image code {img} outside ambient level {n}"
                    )
    for n in range(len(emb.maps) - 1):
        fn, fn1 = emb.maps[n], emb.maps[n + 1]
        for x in range(len(fn)):
            for y in range(len(fn1)):
                inside = (y >> x) & 1 == 1
                image_inside = (fn1[y] >> fn[x]) & 1 == 1
                if inside != image_inside:
                    raise CrossCheckMismatch(
                        f"membership not matched at levels {n},{n + 1}: "
                        f"x={x}, y={y}"
                    )
    for p in params:
        if p.level >= len(emb.maps):
            raise CrossCheckMismatch(f"no map at parameter level {p.level}")
        if p.code not in emb.maps[p.level]:
            raise CrossCheckMismatch(f"parameter {p} not covered by the embedding")

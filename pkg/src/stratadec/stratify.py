"""Stratification inference, typed/untyped translation, fragment
classification, and certified size bounds.

A stratification assigns a natural-number level to every variable so
that membership atoms step up exactly one level and equality atoms stay
level.  The constraints form a graph whose connected components are
solved by union-find with integer offsets; an inconsistent merge yields
a minimal conflicting cycle as the unsatisfiability witness.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Union

from . import formulas as F
from .errors import BoundOverflow, FormulaTypeError
from .formulas import (
    And,
    Equal,
    Exists,
    Forall,
    Formula,
    Iff,
    Implies,
    Member,
    Not,
    Or,
    PrenexSentence,
    TypedFormula,
    TypedVar,
)

__all__ = [
    "Stratification",
    "Constraint",
    "Unstratifiable",
    "stratify",
    "decorate",
    "erase",
    "FormA",
    "FormB",
    "ExistsForallShape",
    "Outside",
    "FragmentClass",
    "classify",
    "Bounds",
    "compute_bounds",
    "compute_g_bound",
]


# ---------------------------------------------------------------------------
# Stratification values.


@dataclass(frozen=True)
class Stratification:
    """A level assignment for variable names, stored as sorted pairs."""

    mapping: tuple[tuple[str, int], ...]

    @classmethod
    def from_dict(cls, d: dict[str, int]) -> "Stratification":
        return cls(tuple(sorted(d.items())))

    def as_dict(self) -> dict[str, int]:
        return dict(self.mapping)

    def __getitem__(self, name: str) -> int:
        for n, t in self.mapping:
            if n == name:
                return t
        raise KeyError(name)

    def get(self, name: str, default=None):
        for n, t in self.mapping:
            if n == name:
                return t
        return default

    def __contains__(self, name: str) -> bool:
        return any(n == name for n, _ in self.mapping)

    def __str__(self) -> str:
        inner = ", ".join(f"{n}:{t}" for n, t in self.mapping)
        return "{" + inner + "}"


@dataclass(frozen=True)
class Constraint:
    """One level constraint contributed by an atom.

    Reads as: level(right) = level(left) + delta, with delta 1 for a
    membership atom and 0 for an equality atom."""

    left: str
    right: str
    delta: int

    def describe(self) -> str:
        if self.delta == 0:
            return f"level({self.right}) = level({self.left}), from '{self.left} = {self.right}'"
        return (
            f"level({self.right}) = level({self.left}) + 1, "
            f"from '{self.left} in {self.right}'"
        )


@dataclass(frozen=True)
class Unstratifiable:
    """Witness of failure: a minimal cycle of constraints whose offsets
    do not add up.  The last entry is the constraint that closed the
    cycle."""

    cycle: tuple[Constraint, ...]

    def describe(self) -> str:
        return "; ".join(c.describe() for c in self.cycle)


def _collect_constraints(f: Formula) -> tuple[list[Constraint], list[str]]:
    """All atom constraints plus every variable name (binders included,
    so vacuously quantified variables still get a level)."""
    cons: list[Constraint] = []
    names: list[str] = []
    seen: set[str] = set()

    def note(v) -> str:
        n = F._var_name(v)
        if n not in seen:
            seen.add(n)
            names.append(n)
        return n

    def walk(node) -> None:
        if isinstance(node, Member):
            cons.append(Constraint(note(node.left), note(node.right), 1))
        elif isinstance(node, Equal):
            cons.append(Constraint(note(node.left), note(node.right), 0))
        elif isinstance(node, Not):
            walk(node.arg)
        elif isinstance(node, (And, Or, Implies, Iff)):
            walk(node.left)
            walk(node.right)
        elif isinstance(node, (Forall, Exists)):
            note(node.var)
            walk(node.body)
        else:
            raise TypeError(f"not a formula node: {node!r}")

    walk(f)
    return cons, names


class _OffsetUnionFind:
    """Union-find where each node carries an integer offset against its
    parent, so that every class knows the relative levels of all its
    members."""

    def __init__(self):
        self.parent: dict[str, str] = {}
        self.offset: dict[str, int] = {}  # level(x) - level(parent[x])
        self.rank: dict[str, int] = {}

    def add(self, x: str) -> None:
        if x not in self.parent:
            self.parent[x] = x
            self.offset[x] = 0
            self.rank[x] = 0

    def find(self, x: str) -> tuple[str, int]:
        """Root of x's class and level(x) - level(root)."""
        if self.parent[x] == x:
            return x, 0
        root, parent_off = self.find(self.parent[x])
        off = self.offset[x] + parent_off
        self.parent[x] = root
        self.offset[x] = off
        return root, off

    def merge(self, a: str, b: str, delta: int) -> bool:
        """Impose level(b) = level(a) + delta.  False on conflict."""
        ra, oa = self.find(a)
        rb, ob = self.find(b)
        if ra == rb:
            return ob == oa + delta
        # level(rb) - level(ra) = (level(b) - ob) - (level(a) - oa)
        #                       = delta + oa - ob
        gap = delta + oa - ob
        if self.rank[ra] < self.rank[rb]:
            self.parent[ra] = rb
            self.offset[ra] = -gap
        else:
            self.parent[rb] = ra
            self.offset[rb] = gap
            if self.rank[ra] == self.rank[rb]:
                self.rank[ra] += 1
        return True


def _shortest_cycle(edges: list[Constraint], closing: Constraint) -> tuple[Constraint, ...]:
    """BFS for the fewest-constraints path between the endpoints of the
    closing constraint, using only previously accepted constraints."""
    adj: dict[str, list[tuple[str, Constraint]]] = {}
    for c in edges:
        adj.setdefault(c.left, []).append((c.right, c))
        adj.setdefault(c.right, []).append((c.left, c))
    start, goal = closing.left, closing.right
    prev: dict[str, tuple[str, Constraint]] = {start: (start, closing)}
    q = deque([start])
    while q:
        u = q.popleft()
        if u == goal:
            break
        for v, c in adj.get(u, ()):
            if v not in prev:
                prev[v] = (u, c)
                q.append(v)
    path: list[Constraint] = []
    node = goal
    while node != start:
        node, c = prev[node]
        path.append(c)
    path.reverse()
    return tuple(path) + (closing,)


def stratify(f: Formula) -> Union[Stratification, Unstratifiable]:
    """Infer the normalized stratification of f, or a minimal
    conflicting cycle if none exists.

    Normalization: within each connected component of the constraint
    graph, the least level is 0.  Unconstrained variables get level 0.
    """
    cons, names = _collect_constraints(f)
    uf = _OffsetUnionFind()
    for n in names:
        uf.add(n)
    accepted: list[Constraint] = []
    for c in cons:
        if not uf.merge(c.left, c.right, c.delta):
            return Unstratifiable(_shortest_cycle(accepted, c))
        accepted.append(c)
    by_root: dict[str, list[tuple[str, int]]] = {}
    for n in names:
        root, off = uf.find(n)
        by_root.setdefault(root, []).append((n, off))
    out: dict[str, int] = {}
    for members in by_root.values():
        low = min(off for _, off in members)
        for n, off in members:
            out[n] = off - low
    return Stratification.from_dict(out)


def decorate(f: Formula, sigma: Stratification) -> TypedFormula:
    """Attach sigma's levels to every variable of the untyped f.

    sigma need not be normalized, but it must satisfy the atom
    constraints of f and cover all its variables."""
    _, names = _collect_constraints(f)
    missing = [n for n in names if n not in sigma]
    if missing:
        raise FormulaTypeError(f"stratification misses variables: {missing}")

    def tv(v) -> TypedVar:
        name = F._var_name(v)
        level = sigma[name]
        if level < 0:
            raise FormulaTypeError(f"negative level for {name!r}")
        return TypedVar(name, level)

    def go(node) -> TypedFormula:
        if isinstance(node, (Member, Equal)):
            return type(node)(tv(node.left), tv(node.right))
        if isinstance(node, Not):
            return Not(go(node.arg))
        if isinstance(node, (And, Or, Implies, Iff)):
            return type(node)(go(node.left), go(node.right))
        return type(node)(tv(node.var), go(node.body))

    out = go(f)
    try:
        F.check_typed(out)
    except FormulaTypeError as e:
        raise FormulaTypeError(f"not a stratification of the formula: {e}") from e
    return out


def erase(f: TypedFormula) -> tuple[Formula, Stratification]:
    """Drop the level tags, renaming first so that distinct typed
    variables never collapse to one untyped name.

    Two occurrences are the same variable when bound by the same
    binder, or free with the same name and level.  decorate(erase(f))
    rebuilds f up to that renaming."""
    F.check_typed(f)
    finals: dict[object, str] = {}  # key: binder id or ("free", name, level)
    levels: dict[str, int] = {}
    used: set[str] = set()
    counter = 0

    def claim(name: str, level: int, key) -> str:
        nonlocal counter
        if key in finals:
            return finals[key]
        if name not in used:
            final = name
        else:
            i = 1
            while f"{name}_{i}" in used:
                i += 1
            final = f"{name}_{i}"
        used.add(final)
        finals[key] = final
        levels[final] = level
        return final

    def go(node, env: dict[str, object]) -> Formula:
        if isinstance(node, (Member, Equal)):
            def m(v: TypedVar) -> str:
                key = env.get(v.name, ("free", v.name, v.type))
                return claim(v.name, v.type, key)
            return type(node)(m(node.left), m(node.right))
        if isinstance(node, Not):
            return Not(go(node.arg, env))
        if isinstance(node, (And, Or, Implies, Iff)):
            return type(node)(go(node.left, env), go(node.right, env))
        key = object()
        final = claim(node.var.name, node.var.type, key)
        return type(node)(final, go(node.body, {**env, node.var.name: key}))

    out = go(f, {})
    return out, Stratification.from_dict(levels)


# ---------------------------------------------------------------------------
# Fragment classification.


@dataclass(frozen=True)
class FormA:
    """Universal block then existential block with strictly decreasing
    existential levels."""

    universal_types: tuple[int, ...]  # sorted ascending
    existential_types: tuple[int, ...]  # prefix order, strictly decreasing

    @property
    def k(self) -> int:
        return len(self.universal_types)

    @property
    def l(self) -> int:
        return len(self.existential_types)


@dataclass(frozen=True)
class FormB:
    """Universal block then existential block with all existential
    levels equal (possibly an empty existential block)."""

    universal_types: tuple[int, ...]  # sorted ascending
    existential_count: int
    existential_type: Optional[int]  # None when the block is empty

    @property
    def k(self) -> int:
        return len(self.universal_types)

    @property
    def l(self) -> int:
        return self.existential_count


@dataclass(frozen=True)
class ExistsForallShape:
    """Existential block then universal block (either possibly empty,
    but not both; the all-universal degenerate goes to FormB)."""

    existential_types: tuple[int, ...]  # prefix order
    universal_types: tuple[int, ...]  # prefix order


@dataclass(frozen=True)
class Outside:
    reason: str


FragmentClass = Union[FormA, FormB, ExistsForallShape, Outside]


def classify(p: PrenexSentence) -> FragmentClass:
    """Classify by prefix shape alone; the matrix never matters.

    Universal-then-existential prefixes land in FormA or FormB by the
    existential level pattern; a one-element or empty existential block
    fits both patterns and reports FormB.  Existential-then-universal
    prefixes (including pure existential) report ExistsForallShape.
    Pure universal and empty prefixes report FormB.  Everything else is
    Outside."""
    blocks: list[tuple[str, list[int]]] = []
    for kind, tv in p.prefix:
        if blocks and blocks[-1][0] == kind:
            blocks[-1][1].append(tv.type)
        else:
            blocks.append((kind, [tv.type]))

    if len(blocks) == 0:
        return FormB((), 0, None)
    if len(blocks) == 1:
        kind, types = blocks[0]
        if kind == "forall":
            return FormB(tuple(sorted(types)), 0, None)
        return ExistsForallShape(tuple(types), ())
    if len(blocks) == 2:
        (k1, t1), (k2, t2) = blocks
        if k1 == "exists":
            return ExistsForallShape(tuple(t1), tuple(t2))
        univ = tuple(sorted(t1))
        if len(t2) == 1 or len(set(t2)) == 1:
            return FormB(univ, len(t2), t2[0])
        if all(a > b for a, b in zip(t2, t2[1:])):
            return FormA(univ, tuple(t2))
        return Outside(
            "existential levels neither all equal nor strictly decreasing: "
            + ",".join(map(str, t2))
        )
    return Outside("quantifier alternation depth exceeds 2")


# ---------------------------------------------------------------------------
# Certified size bounds.


_MAX_BITS = 1 << 20  # beyond this a bound is reported symbolically


def compute_g_bound(k: int, depth: int) -> int:
    """The atom-count recursion: value(0) = k, value(n+1) =
    C(value(n), 2) + k.  Guards against astronomically large results.
    """
    if k < 0 or depth < 0:
        raise ValueError("k and depth must be nonnegative")
    g = k
    for n in range(depth):
        g = math.comb(g, 2) + k
        if g.bit_length() > _MAX_BITS:
            raise BoundOverflow(
                f"atom bound exceeds 2^{_MAX_BITS} after {n + 1} of {depth} steps",
                symbolic=f"G_{k}({depth})",
            )
    return g


@dataclass(frozen=True)
class Bounds:
    """Certified atom counts for a classified sentence.

    g_bound covers the embedding construction (computed from the block
    that becomes existential after negation); ab_bound covers the
    counting abstraction; a model with certified_m = max of the two
    atoms settles the sentence for every model at least that large."""

    g_bound: int
    ab_bound: int
    k_prime: int  # number of distinct universal levels
    multiplicities: tuple[int, ...]  # per distinct universal level, ascending
    width: int  # max of multiplicities and the existential count
    certified_m: int


def compute_bounds(c: FragmentClass) -> Bounds:
    """Bounds for a FormA/FormB sentence, or the embedding bound alone
    for an ExistsForallShape sentence."""
    if isinstance(c, Outside):
        raise ValueError("no bounds outside the decidable fragments")
    if isinstance(c, ExistsForallShape):
        k = len(c.existential_types)
        g = compute_g_bound(k, max(c.existential_types)) if k else 0
        return Bounds(g_bound=g, ab_bound=0, k_prime=0, multiplicities=(),
                      width=0, certified_m=g)

    univ = c.universal_types
    l = c.l
    k = len(univ)
    if k:
        g = compute_g_bound(k, univ[-1])
        distinct = sorted(set(univ))
        mults = tuple(univ.count(t) for t in distinct)
    else:
        g = 0
        mults = ()
    k_prime = len(mults)
    width = max([*mults, l], default=0)
    ab = (2 ** width) ** (k_prime + 2)
    if ab.bit_length() > _MAX_BITS:
        raise BoundOverflow(
            "abstraction bound too large",
            symbolic=f"(2^{width})^{k_prime + 2}",
        )
    return Bounds(g_bound=g, ab_bound=ab, k_prime=k_prime,
                  multiplicities=mults, width=width,
                  certified_m=max(g, ab))

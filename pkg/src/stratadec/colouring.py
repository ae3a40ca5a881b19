"""Colourings of finite power-set models and their capped censuses.

A colour summarizes an element by which colours of the level below occur
inside it (f-bits) and outside it (g-bits), optionally prefixed by
membership bits against a block of parameters one level up (F-bits).
Colour classes are kept sparse: only realized colours are listed, and a
colour absent from a census is realized by nothing.

The census of a lifted level is predictable from the census below without
touching the model; `classify_colour` implements that transfer and is the
piece of machinery the abstract decision engine leans on.  Its exact-count
branch uses the closed form prod(2**m_i - 2) over the positions whose f- and
g-bit are both set; tests gate this formula against brute enumeration.
"""

from __future__ import annotations

import dataclasses
from typing import Iterable, Iterator, Optional, Sequence, Union

from .errors import BoundViolation, InfeasibleLevel
from .models import Element, Model

__all__ = [
    "Colour",
    "BASE_COLOUR",
    "ColouringLevel",
    "MultiplicityProfile",
    "Forbidden",
    "OneSpecial",
    "Abundant",
    "ExactCount",
    "Classification",
    "base_colouring",
    "lift_colouring",
    "refine_colouring",
    "colouring_at",
    "profile",
    "similar",
    "classify_colour",
    "match_parameters",
    "census_lines",
]


@dataclasses.dataclass(frozen=True, order=True)
class Colour:
    """A colour: parameter-membership prefix plus an ⟨f‖g⟩ bit-vector.

    The base colour of level 0 has both tuples empty and renders as "0".
    A lifted colour over a class of q previous colours stores
    ``bits = (f_1, .., f_q, g_1, .., g_q)``.  A refined colour additionally
    carries ``prefix = (F_1, .., F_K)``, the membership bits against the
    refining parameter block.  Field order makes dataclass ordering
    lexicographic on (prefix, bits), which is the canonical colour order
    within any one class (all class members share both lengths).
    """

    prefix: tuple[int, ...] = ()
    bits: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if len(self.bits) % 2:
            raise ValueError("colour ⟨f‖g⟩ vector must have even length")
        for b in self.prefix + self.bits:
            if b not in (0, 1):
                raise ValueError(f"colour bits must be 0 or 1, got {b!r}")

    @property
    def arity(self) -> int:
        """Number q of previous-class colours this colour's bits range over."""
        return len(self.bits) // 2

    def f(self, i: int) -> int:
        """The i-th inside bit (0-based over the canonical previous class)."""
        return self.bits[i]

    def g(self, i: int) -> int:
        """The i-th outside bit (0-based over the canonical previous class)."""
        return self.bits[self.arity + i]

    def with_prefix(self, front: Sequence[int]) -> "Colour":
        """Prepend parameter-membership bits (refinement step)."""
        return Colour(tuple(front) + self.prefix, self.bits)

    def __str__(self) -> str:
        body = "0" if not self.bits else ",".join(map(str, self.bits))
        if not self.prefix:
            return body if not self.bits else f"<{body}>"
        return f"<{','.join(map(str, self.prefix))};{body}>"


BASE_COLOUR = Colour()


@dataclasses.dataclass(frozen=True)
class ColouringLevel:
    """A total colouring of one level of a model.

    `colours[r]` is the colour of the element of rank r (= code r); `palette`
    lists the realized colours in canonical order and is the colour class the
    next lift's bit-vectors are indexed by.  `stage` counts how many
    parameter blocks have refined this level's colouring so far.
    """

    model: Model
    level: int
    stage: int
    colours: tuple[Colour, ...]
    palette: tuple[Colour, ...]

    def __post_init__(self) -> None:
        if tuple(sorted(set(self.colours))) != self.palette:
            raise ValueError("palette must list exactly the realized colours, sorted")

    def colour_of(self, x: Union[Element, int]) -> Colour:
        rank = x.code if isinstance(x, Element) else x
        return self.colours[rank]

    def ranks_of(self, colour: Colour) -> list[int]:
        return [r for r, c in enumerate(self.colours) if c == colour]


def base_colouring(model: Model) -> ColouringLevel:
    """The constant stage-0 colouring of level 0."""
    size = model.require_enumerable(0)
    return ColouringLevel(
        model=model,
        level=0,
        stage=0,
        colours=(BASE_COLOUR,) * size,
        palette=(BASE_COLOUR,),
    )


def lift_colouring(model: Model, c: ColouringLevel) -> ColouringLevel:
    """Colour level i+1 by which level-i colours occur inside/outside.

    Element x gets ⟨f_1..f_q, g_1..g_q⟩ over c's canonically ordered
    palette: f_i = 1 iff some element coloured α_i is a member of x,
    g_i = 1 iff some element coloured α_i is a non-member.
    """
    if c.model is not model:
        raise ValueError("colouring belongs to a different model")
    below = model.require_enumerable(c.level)
    size = model.require_enumerable(c.level + 1)
    masks = []
    for alpha in c.palette:
        mask = 0
        for rank, col in enumerate(c.colours):
            if col == alpha:
                mask |= 1 << rank
        masks.append(mask)
    full = (1 << below) - 1
    out: list[Colour] = []
    for code in range(size):
        complement = full ^ code
        fs = tuple(1 if code & m else 0 for m in masks)
        gs = tuple(1 if complement & m else 0 for m in masks)
        out.append(Colour((), fs + gs))
    return ColouringLevel(
        model=model,
        level=c.level + 1,
        stage=c.stage,
        colours=tuple(out),
        palette=tuple(sorted(set(out))),
    )


def refine_colouring(
    model: Model, c: ColouringLevel, params: Sequence[Element]
) -> ColouringLevel:
    """Prepend, to every colour, membership bits against a parameter block.

    The parameters must all live one level above the colouring; element x's
    new colour is ⟨F_1..F_K; old⟩ with F_p = 1 iff x ∈ params[p].
    """
    if c.model is not model:
        raise ValueError("colouring belongs to a different model")
    for p in params:
        if p.level != c.level + 1:
            raise ValueError(
                f"refining parameter at level {p.level} does not sit one level "
                f"above the colouring at level {c.level}"
            )
    size = model.require_enumerable(c.level)
    out = []
    for code in range(size):
        front = tuple(1 if p.code >> code & 1 else 0 for p in params)
        out.append(c.colours[code].with_prefix(front))
    return ColouringLevel(
        model=model,
        level=c.level,
        stage=c.stage + 1,
        colours=tuple(out),
        palette=tuple(sorted(set(out))),
    )


def colouring_at(
    model: Model,
    level: int,
    blocks: Sequence[tuple[int, Sequence[Element]]] = (),
) -> ColouringLevel:
    """Colour `level` after refining by the given parameter blocks.

    `blocks` lists (parameter type r, parameters at level r) pairs; they are
    applied in ascending type order, each refining level r-1 and re-lifting
    everything above it, exactly as the staged construction prescribes.
    Convenience wrapper used by tests and the census tooling.
    """
    ordered = sorted(blocks, key=lambda b: b[0])
    for r, ps in ordered:
        if r < 1:
            raise ValueError("parameter blocks refine level r-1, so need type r >= 1")
        for p in ps:
            if p.level != r:
                raise ValueError(f"parameter {p} not at its block's type {r}")
    current = base_colouring(model)
    pending = list(ordered)
    while current.level < level or pending:
        if pending and pending[0][0] - 1 == current.level:
            r, ps = pending.pop(0)
            current = refine_colouring(model, current, list(ps))
        elif current.level < level or pending:
            current = lift_colouring(model, current)
        if current.level > level and not pending:
            raise ValueError("parameter block types exceed the requested level + 1")
    return current


@dataclasses.dataclass(frozen=True)
class MultiplicityProfile:
    """Capped census of a colouring: colour -> min(count, T).

    A stored value equal to the threshold T means "at least T"; values below
    T are exact; colours absent from the mapping are realized zero times.
    `klass` fixes the canonical ordering classification runs against.
    """

    threshold: int
    counts: tuple[tuple[Colour, int], ...]
    klass: tuple[Colour, ...]

    def __post_init__(self) -> None:
        if self.threshold < 1:
            raise ValueError("profile threshold must be at least 1")
        for colour, n in self.counts:
            if not 0 < n <= self.threshold:
                raise ValueError(f"capped count {n} out of range for {colour}")

    def count(self, colour: Colour) -> int:
        for c, n in self.counts:
            if c == colour:
                return n
        return 0

    def as_dict(self) -> dict[Colour, int]:
        return dict(self.counts)

    def colours(self) -> Iterator[Colour]:
        return (c for c, _ in self.counts)


def profile(c: ColouringLevel, T: int) -> MultiplicityProfile:
    """Census of a concrete colouring, capped at threshold T."""
    if T < 1:
        raise ValueError("profile threshold must be at least 1")
    tally: dict[Colour, int] = {}
    for colour in c.colours:
        tally[colour] = tally.get(colour, 0) + 1
    counts = tuple((col, min(n, T)) for col, n in sorted(tally.items()))
    return MultiplicityProfile(threshold=T, counts=counts, klass=c.palette)


def similar(p1: MultiplicityProfile, p2: MultiplicityProfile, J: int) -> bool:
    """True iff the profiles agree on m-specialness for every m < J.

    A colour is m-special when exactly m elements realize it; with counts
    capped at thresholds >= J this is decidable from the profiles alone.
    The profiles must range over the same colour class: every mentioned
    colour must share one bit-vector shape (prefix and body length), so that
    identical vectors mean identical colours.  Realized palettes may differ;
    a colour one side lacks is 0-special there.
    """
    shapes = {
        (len(c.prefix), len(c.bits))
        for p in (p1, p2)
        for c in p.colours()
    }
    if len(shapes) > 1:
        raise ValueError("cannot compare profiles over different colour classes")
    if min(p1.threshold, p2.threshold) < J:
        raise ValueError("profile thresholds must be at least the similarity degree")
    mentioned = set(p1.as_dict()) | set(p2.as_dict())
    for colour in mentioned:
        if min(p1.count(colour), J) != min(p2.count(colour), J):
            return False
    return True


@dataclasses.dataclass(frozen=True)
class Forbidden:
    """No element of the lifted level realizes the colour."""


@dataclasses.dataclass(frozen=True)
class OneSpecial:
    """Exactly one element realizes the colour."""


@dataclasses.dataclass(frozen=True)
class Abundant:
    """At least threshold-many elements realize the colour."""


@dataclasses.dataclass(frozen=True)
class ExactCount:
    """Exactly n elements realize the colour (n < threshold unless capped)."""

    n: int


Classification = Union[Forbidden, OneSpecial, Abundant, ExactCount]


def classification_count(kind: Classification, T: int) -> int:
    """The capped census value a classification predicts."""
    if isinstance(kind, Forbidden):
        return 0
    if isinstance(kind, OneSpecial):
        return 1
    if isinstance(kind, Abundant):
        return T
    return min(kind.n, T)


def classify_colour(p: MultiplicityProfile, beta: Colour) -> Classification:
    """Predict the lifted census entry of `beta` from the census below.

    Over the canonical ordering α_1..α_q of p's class, with m_i = α_i's
    capped count and (f_i, g_i) = beta's bits:
      - Forbidden iff some realized α_i has f_i = g_i = 0, or some 1-special
        α_i has f_i = g_i = 1, or some forbidden α_i has f_i = 1 or g_i = 1;
      - otherwise OneSpecial iff no α_i has f_i = g_i = 1;
      - otherwise Abundant iff some α_i with m_i >= T has f_i = g_i = 1;
      - otherwise ExactCount prod(2**m_i - 2) over {i : f_i = g_i = 1},
        capped at T.
    """
    q = len(p.klass)
    if beta.prefix:
        raise ValueError("classification transfers unrefined lift colours only")
    if beta.arity != q:
        raise ValueError(
            f"ordering mismatch: colour ranges over {beta.arity} classes, "
            f"profile lists {q}"
        )
    if p.threshold < 2:
        raise ValueError("classification needs threshold >= 2 to spot 1-special colours")
    both: list[int] = []
    for i, alpha in enumerate(p.klass):
        m = p.count(alpha)
        f, g = beta.f(i), beta.g(i)
        if m == 0 and (f or g):
            return Forbidden()
        if m > 0 and not f and not g:
            return Forbidden()
        if m == 1 and f and g:
            return Forbidden()
        if f and g:
            both.append(m)
    if not both:
        return OneSpecial()
    if any(m >= p.threshold for m in both):
        return Abundant()
    n = 1
    for m in both:
        n *= (1 << m) - 2
        if n >= p.threshold:
            return ExactCount(p.threshold)
    return ExactCount(n)


def match_parameters(
    c_m: ColouringLevel,
    c_n: ColouringLevel,
    params: Sequence[Element],
    next_threshold: int,
) -> tuple[Element, ...]:
    """Mirror a parameter block from c_m's model into c_n's model.

    Partitions c_m's level by (colour, membership pattern against the block)
    and greedily rebuilds matching cells in c_n from lowest ranks upward:
    a cell smaller than `next_threshold` is copied exactly, a larger one
    gets at least `next_threshold` elements, and leftovers are absorbed by
    the first large cell of the same colour.  The p-th returned element is
    the union of all cells whose pattern has bit p set.
    """
    if c_m.palette != c_n.palette:
        raise ValueError("cannot match parameters across different colour classes")
    if c_m.level != c_n.level:
        raise ValueError("colourings must sit at the same level")
    for par in params:
        if par.level != c_m.level + 1:
            raise ValueError("parameters must sit one level above the colouring")
    k = len(params)
    cells: dict[tuple[Colour, tuple[int, ...]], int] = {}
    for rank, colour in enumerate(c_m.colours):
        sigma = tuple(1 if par.code >> rank & 1 else 0 for par in params)
        cells[colour, sigma] = cells.get((colour, sigma), 0) + 1
    codes = [0] * k
    for alpha in c_m.palette:
        pool = c_n.ranks_of(alpha)
        patterns = sorted(sig for col, sig in cells if col == alpha)
        demand = {sig: cells[alpha, sig] for sig in patterns}
        quota = {
            sig: d if d < next_threshold else next_threshold
            for sig, d in demand.items()
        }
        spill = [sig for sig in patterns if demand[sig] >= next_threshold]
        if sum(quota.values()) > len(pool):
            raise BoundViolation(
                f"colour {alpha} has only {len(pool)} elements in the target "
                f"model but the cell pattern needs {sum(quota.values())}"
            )
        taken = 0
        for sig in patterns:
            chosen, taken = pool[taken : taken + quota[sig]], taken + quota[sig]
            for rank in chosen:
                for pos in range(k):
                    if sig[pos]:
                        codes[pos] |= 1 << rank
        leftovers = pool[taken:]
        if leftovers:
            if not spill:
                raise BoundViolation(
                    f"colour {alpha} has {len(leftovers)} surplus elements in the "
                    "target model but every cell is exact"
                )
            sig = spill[0]
            for rank in leftovers:
                for pos in range(k):
                    if sig[pos]:
                        codes[pos] |= 1 << rank
    return tuple(Element(c_m.level + 1, code) for code in codes)


def census_lines(p: MultiplicityProfile) -> list[str]:
    """Render a profile in the report format: 'colour-bits<TAB>count-or-geqT'."""
    out = []
    for colour, n in p.counts:
        shown = f">={p.threshold}" if n >= p.threshold else str(n)
        out.append(f"{colour}\t{shown}")
    return out

"""Decision engine for the two decidable prefix shapes, over colour censuses.

Two layers live here.

The profile layer (`AbstractState`, `abstract_init`, `abstract_refine_enumerate`,
`lift_profile`) mirrors the staged construction literally: censuses are
`MultiplicityProfile`s at the published thresholds, lifted with
`classify_colour` and split by explicit parameter-cell distributions.  It is
exact and is what the brute-force completeness tests exercise, but its
thresholds make multi-block enumeration explode, so it is not the decide path.

The engine layer decides sentences.  It tracks, per refined level, a census
of structural cells (membership-pattern prefix, bit row over the cells one
level down, clamped count) and enumerates universal-parameter refinements as
count distributions; levels above every parameter type are never
materialized - witness existence and multiplicity questions there are
answered by product-form counting over the top materialized census.  The
clamp degrees are far below the published thresholds: a backward analysis of
what the witness search and the census transfer can observe shows a degree
of max(l+1, 2) at the top, scaled by 2^K per block below, suffices; the
published thresholds are upper bounds for the same mechanism.  Tests compare
the engine in exact-count mode against direct model evaluation, which checks
precisely this reduction.

Soundness shape: a capped-mode run explores exactly the leaf states
realizable in every finitely generated model with at least `base_degree`
atoms (capped distribution patterns are m-invariant above that size), so its
verdict is the sentence's truth value in all of them at once; the published
certified size is in that range, and truth there settles provability.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from typing import Iterator, Optional, Sequence, Union

from .colouring import (
    Colour,
    BASE_COLOUR,
    MultiplicityProfile,
    classify_colour,
    classification_count,
)
from .errors import CrossCheckMismatch, InfeasibleLevel
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
    TypedVar,
)
from .models import EVAL_BUDGET, Model, eval_sentence
from .stratify import Bounds, FormA, FormB, classify, compute_bounds

__all__ = [
    "AbstractState",
    "ParamTrace",
    "Verdict",
    "lift_profile",
    "abstract_init",
    "abstract_refine_enumerate",
    "EnginePlan",
    "plan_sentence",
    "enumerate_leaves",
    "leaf_valuation_sets",
    "decide_form_A",
    "decide_form_B",
]

STATE_BUDGET = 400_000
CANDIDATE_BUDGET = 60_000


# ---------------------------------------------------------------------------
# profile layer: the staged construction at its published thresholds
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ParamTrace:
    """A fixed universal parameter: its level and its current colour."""

    level: int
    colour: Colour


@dataclasses.dataclass(frozen=True)
class AbstractState:
    """Census-level snapshot of the staged construction.

    `profiles[i]` is the level-i census; all share `threshold`, the current
    stage's cap.  `traces` records each already-fixed parameter's colour at
    its own level (membership bits against later blocks accumulate in the
    colour's prefix as those blocks are processed).
    """

    stage: int
    threshold: int
    profiles: tuple[MultiplicityProfile, ...]
    traces: tuple[ParamTrace, ...] = ()

    def profile(self, level: int) -> MultiplicityProfile:
        return self.profiles[level]


def _options_for(count: int) -> tuple[tuple[int, int], ...]:
    """Allowed (f, g) bit pairs of a lift colour at one class position."""
    if count == 0:
        return ((0, 0),)
    if count == 1:
        return ((1, 0), (0, 1))
    return ((1, 0), (0, 1), (1, 1))


def lift_profile(p: MultiplicityProfile, T: int) -> MultiplicityProfile:
    """Census of the lifted level, via the classification transfer.

    Enumerates every realizable ⟨f‖g⟩ pattern over p's realized colours and
    counts it with `classify_colour`; the result's class is the realized
    lift colours in canonical order.
    """
    realized = [c for c in p.klass if p.count(c) > 0]
    option_rows = [_options_for(p.count(c)) for c in realized]
    width = 1
    for row in option_rows:
        width *= len(row)
    if width > CANDIDATE_BUDGET:
        raise InfeasibleLevel(
            f"lift candidate space {width} exceeds the enumeration budget"
        )
    index = {c: i for i, c in enumerate(p.klass)}
    counts: dict[Colour, int] = {}
    q = len(p.klass)
    for choice in itertools.product(*option_rows):
        fs, gs = [0] * q, [0] * q
        for col, (f, g) in zip(realized, choice):
            fs[index[col]], gs[index[col]] = f, g
        beta = Colour((), tuple(fs) + tuple(gs))
        n = classification_count(classify_colour(p, beta), T)
        if n:
            counts[beta] = n
    ordered = tuple(sorted(counts.items()))
    return MultiplicityProfile(threshold=T, counts=ordered, klass=tuple(sorted(counts)))


def abstract_init(m: Optional[int], max_level: int, T: int) -> AbstractState:
    """Stage-0 state: base census {0: m} lifted up to `max_level`.

    `m` is the atom count; None means "at least T" (the capped regime the
    certified sizes live in).
    """
    if T < 2:
        raise ValueError("stage threshold must be at least 2")
    base_count = T if m is None else min(m, T)
    base = MultiplicityProfile(
        threshold=T, counts=((BASE_COLOUR, base_count),), klass=(BASE_COLOUR,)
    )
    profiles = [base]
    for _ in range(max_level):
        profiles.append(lift_profile(profiles[-1], T))
    return AbstractState(stage=0, threshold=T, profiles=tuple(profiles))


def _count_patterns(
    count: int, cells: int, old_T: int, new_T: int
) -> Iterator[tuple[int, ...]]:
    """Displayed distributions of one capped count into `cells` cells.

    An exact source (count < old_T) splits into exact compositions, re-capped
    at new_T; a capped source yields every cell pattern that can sum to at
    least old_T, i.e. any pattern with a capped cell (cells inflate freely)
    or an all-exact pattern already summing that high.
    """
    if count < old_T:
        seen = set()
        for cut in itertools.combinations(range(count + cells - 1), cells - 1):
            parts, prev = [], -1
            for c in cut + (count + cells - 1,):
                parts.append(c - prev - 1)
                prev = c
            display = tuple(min(n, new_T) for n in parts)
            if display not in seen:
                seen.add(display)
                yield display
    else:
        for display in itertools.product(range(new_T + 1), repeat=cells):
            if new_T in display or sum(display) >= old_T:
                yield display


def abstract_refine_enumerate(
    s: AbstractState, params_level: int, block_size: int, new_threshold: int
) -> Iterator[AbstractState]:
    """All abstractly distinct refinements by a block of parameters.

    The block's `block_size` parameters sit at `params_level` (>= 1) and
    split every level-(params_level - 1) colour into 2^block_size
    membership cells; each distinct assignment of displayed cell counts, at
    the caller-supplied next-stage threshold, yields one successor state
    with levels above re-lifted and parameter traces updated.
    """
    if params_level < 1:
        raise ValueError("a parameter block refines the level below its type")
    if new_threshold < 2 or new_threshold > s.threshold:
        raise ValueError("stage thresholds must stay >= 2 and never increase")
    r = params_level
    low = s.profile(r - 1)
    colours = [c for c in low.klass if low.count(c) > 0]
    sigmas = list(itertools.product((0, 1), repeat=block_size))
    per_colour = [
        list(_count_patterns(low.count(c), len(sigmas), s.threshold, new_threshold))
        for c in colours
    ]
    total = 1
    for pats in per_colour:
        total *= len(pats)
        if total > STATE_BUDGET:
            raise InfeasibleLevel(
                f"refinement enumeration needs more than {STATE_BUDGET} states"
            )
    for choice in itertools.product(*per_colour):
        cells: dict[Colour, int] = {}
        placed: dict[Colour, tuple[int, ...]] = {}
        for colour, pattern in zip(colours, choice):
            for sigma, n in zip(sigmas, pattern):
                if n:
                    cells[colour.with_prefix(sigma)] = n
                    if low.count(colour) == 1:
                        placed[colour] = sigma
        refined = MultiplicityProfile(
            threshold=new_threshold,
            counts=tuple(sorted(cells.items())),
            klass=tuple(sorted(cells)),
        )
        profiles = [
            dataclasses.replace(p, threshold=new_threshold)
            for p in s.profiles[: r - 1]
        ]
        profiles.append(refined)
        try:
            while len(profiles) < len(s.profiles):
                profiles.append(lift_profile(profiles[-1], new_threshold))
        except InfeasibleLevel:
            raise
        traces = []
        for t in s.traces:
            if t.level == r - 1:
                if t.colour not in placed:
                    continue
                traces.append(ParamTrace(t.level, t.colour.with_prefix(placed[t.colour])))
            else:
                traces.append(t)
        klass = profiles[r - 1].klass if r <= len(profiles) else ()
        for pos in range(block_size):
            q = len(klass)
            fs = tuple(1 if c.prefix[pos] else 0 for c in klass)
            gs = tuple(0 if c.prefix[pos] else 1 for c in klass)
            traces.append(ParamTrace(r, Colour((), fs + gs)))
        yield AbstractState(
            stage=s.stage + 1,
            threshold=new_threshold,
            profiles=tuple(profiles),
            traces=tuple(traces),
        )


# ---------------------------------------------------------------------------
# engine layer: clamped counting
# ---------------------------------------------------------------------------
#
# Counts are (value, capped) pairs: capped means "at least value".  The
# engine clamps query arithmetic at a small degree: every question it asks
# is "are there at least n elements" for n bounded by the witness count, so
# nothing beyond that needs to stay exact.


Cnt = tuple[int, bool]


def _clamp(c: Cnt, deg: Optional[int]) -> Cnt:
    if deg is not None and c[0] >= deg:
        return (deg, True)
    return c


def _c_add(a: Cnt, b: Cnt, deg: Optional[int]) -> Cnt:
    return _clamp((a[0] + b[0], a[1] or b[1]), deg)


def _c_mul(a: Cnt, b: Cnt, deg: Optional[int]) -> Cnt:
    if a == (0, False) or b == (0, False):
        return (0, False)
    return _clamp((a[0] * b[0], a[1] or b[1]), deg)


def _c_sub(a: Cnt, n: int, deg: Optional[int]) -> Cnt:
    """a - n for small exact n; a capped value stays capped (it only grows)."""
    if a[1]:
        return _clamp((max(a[0] - n, 1), True), deg)
    return (max(a[0] - n, 0), False)


def _c_pow2(a: Cnt, shift: int, deg: Optional[int]) -> Cnt:
    """2**(a - shift), for shift in {0, 1}; exact when feasible, else capped."""
    v = a[0] - shift
    if a[1] or (deg is not None and v >= 40):
        return _clamp((deg if deg is not None else 1 << min(v, 40), True), deg)
    return _clamp((1 << v if v >= 0 else 0, False), deg)


def _c_pred(a: Cnt) -> Cnt:
    """a - 1 viewed as "2**mass - 1" style predecessors keep cappedness."""
    if a[1]:
        return a
    return (max(a[0] - 1, 0), False)


def _c_ge(a: Cnt, n: int) -> bool:
    return a[1] or a[0] >= n


# ---------------------------------------------------------------------------
# engine layer: sentence plans
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class EnginePlan:
    """Everything the leaf enumeration needs to know about a prefix shape.

    Parameters are grouped into blocks by type (universals commute, so
    reordering the prefix into ascending-type blocks is harmless); witnesses
    keep their prefix order.  `atoms` is the full well-typed atom inventory
    over all prefix variables - valuations are bit masks over it, so leaf
    summaries are reusable across every matrix on the same shape.
    """

    blocks: tuple[tuple[int, tuple[str, ...]], ...]
    witnesses: tuple[tuple[str, int], ...]
    form: str
    atoms: tuple[tuple[str, str, str], ...]
    max_level: int
    mat_levels: int
    degrees: tuple[int, ...]
    base_degree: int
    qdeg: int
    exact_m: Optional[int] = None

    def atom_index(self) -> dict[tuple[str, str, str], int]:
        return {a: i for i, a in enumerate(self.atoms)}


def _atom_inventory(
    univ: Sequence[tuple[str, int]], wits: Sequence[tuple[str, int]]
) -> tuple[tuple[str, str, str], ...]:
    """All well-typed equality/membership atoms over the prefix variables."""
    everyone = list(univ) + list(wits)
    atoms: list[tuple[str, str, str]] = []
    for (a, ta), (b, tb) in itertools.combinations(everyone, 2):
        if ta == tb:
            atoms.append(("eq", a, b))
    for (a, ta), (b, tb) in itertools.product(everyone, everyone):
        if a != b and tb == ta + 1:
            atoms.append(("mem", a, b))
    return tuple(atoms)


def plan_sentence(
    p: PrenexSentence, exact_m: Optional[int] = None
) -> EnginePlan:
    """Build the engine plan for a form (A) or (B) prenex sentence."""
    shape = classify(p)
    if isinstance(shape, FormA):
        form = "A"
    elif isinstance(shape, FormB):
        form = "B"
    else:
        raise ValueError(f"the engine only decides forms (A) and (B), got {shape}")
    univ = [(v.name, v.type) for kind, v in p.prefix if kind == "forall"]
    wits = [(v.name, v.type) for kind, v in p.prefix if kind == "exists"]
    by_type: dict[int, list[str]] = {}
    for name, t in univ:
        by_type.setdefault(t, []).append(name)
    blocks = tuple((t, tuple(by_type[t])) for t in sorted(by_type))
    ell = len(wits)
    w_deg = max(ell + 1, 2)
    k_total = len(univ)
    qdeg = w_deg + k_total + 4
    max_level = max([t for _, t in univ + wits], default=0)
    r_top = max([t for t, _ in blocks], default=0)
    mat_levels = max(r_top, 1)
    degrees = [0] * mat_levels
    need_top = max(w_deg, (qdeg + 2 - 1).bit_length())
    degrees[mat_levels - 1] = need_top
    for i in range(mat_levels - 2, -1, -1):
        pre_above = degrees[i + 1]
        for t, names in blocks:
            if t == i + 2:
                pre_above *= 1 << len(names)
        degrees[i] = max(w_deg, (pre_above + 2 - 1).bit_length())
    base_degree = degrees[0]
    for t, names in blocks:
        if t == 1:
            base_degree *= 1 << len(names)
        if t == 0:
            base_degree += len(names)
    return EnginePlan(
        blocks=blocks,
        witnesses=tuple(wits),
        form=form,
        atoms=_atom_inventory(univ, wits),
        max_level=max_level,
        mat_levels=mat_levels,
        degrees=tuple(degrees),
        base_degree=base_degree,
        qdeg=qdeg,
        exact_m=exact_m,
    )


# ---------------------------------------------------------------------------
# engine layer: materialized censuses
#
# A leaf state is a census per materialized level: tuples of cells
# (tag, sigma, row, count).  `tag` marks level-0 cells holding type-0
# parameters (the sorted positions of the parameters equal to that atom);
# `sigma` is the membership pattern against the block one type up; `row`
# maps each cell one level down to 1 (everything inside), 2 (everything
# outside) or 3 (split).  Counts are clamped at the level's degree, with
# value == degree meaning "at least degree"; in exact mode (degree None)
# they are plain cardinalities.
# ---------------------------------------------------------------------------

Cell = tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...], int]
Level = tuple[Cell, ...]
Leaf = tuple[Level, ...]


def _canonical(levels: Sequence[Sequence[Cell]]) -> Leaf:
    """Sort cells per level (remapping upper rows) into a canonical form."""
    out: list[Level] = []
    perm: list[int] = []
    for depth, cells in enumerate(levels):
        if depth:
            cells = [
                (tag, sigma, tuple(row[j] for j in perm), n)
                for tag, sigma, row, n in cells
            ]
        order = sorted(range(len(cells)), key=lambda i: cells[i])
        perm = [0] * len(cells)
        for new, old in enumerate(order):
            perm[old] = new
        out.append(tuple(cells[i] for i in order))
    return tuple(out)


def _cap(n: int, deg: Optional[int]) -> int:
    return n if deg is None else min(n, deg)


def _cell_cnt(n: int, deg: Optional[int]) -> Cnt:
    return (n, deg is not None and n >= deg)


def _relift_level(lower: Level, deg: Optional[int], budget: list[int]) -> Level:
    """Deterministic census of the level above a materialized level.

    Enumerates realizable rows over the lower cells; a cell's count is the
    product of (2^m - 2) over its split positions, клamped at `deg`.
    """
    opts = []
    for _, _, _, m in lower:
        opts.append((1, 2) if m == 1 else (1, 2, 3))
    width = 1
    for o in opts:
        width *= len(o)
    budget[0] -= width
    if budget[0] < 0:
        raise InfeasibleLevel(
            f"materialized census would exceed {CANDIDATE_BUDGET} cells"
        )
    cells = []
    for row in itertools.product(*opts):
        n = 1
        for entry, (_, _, _, m) in zip(row, lower):
            if entry == 3:
                n *= (1 << m) - 2
                if deg is not None and n >= deg:
                    n = deg
                    break
        cells.append(((), (), row, _cap(n, deg)))
    return tuple(cells)


def _initial_leaf(plan: EnginePlan) -> Leaf:
    """Level censuses before any parameter block is processed."""
    deg0 = None if plan.exact_m is not None else plan.degrees[0]
    m = plan.exact_m if plan.exact_m is not None else plan.base_degree
    levels: list[Level] = [(((), (), (), _cap(m, deg0)),)]
    budget = [CANDIDATE_BUDGET]
    for i in range(1, plan.mat_levels):
        deg = None if plan.exact_m is not None else plan.degrees[i]
        levels.append(_relift_level(levels[-1], deg, budget))
    return _canonical(levels)


def _split_patterns(
    count: int, cells: int, deg_src: Optional[int], deg_dst: Optional[int]
) -> Iterator[tuple[int, ...]]:
    """Displayed distributions of one cell's count into `cells` sub-cells."""
    capped = deg_src is not None and count >= deg_src
    if not capped:
        seen = set()
        for cut in itertools.combinations(range(count + cells - 1), cells - 1):
            parts, prev = [], -1
            for c in cut + (count + cells - 1,):
                parts.append(c - prev - 1)
                prev = c
            display = tuple(_cap(n, deg_dst) for n in parts)
            if display not in seen:
                seen.add(display)
                yield display
    else:
        assert deg_dst is not None
        for display in itertools.product(range(deg_dst + 1), repeat=cells):
            if deg_dst in display or sum(display) >= count:
                yield display


def _group_split(leaf: Leaf, k0: int, plan: EnginePlan) -> Iterator[Leaf]:
    """Type-0 block: every equality pattern of k0 parameters over the atoms.

    Each group of parameters forced equal becomes a tagged 1-element cell;
    the untagged remainder keeps the rest.  Patterns needing more distinct
    atoms than the (exact) base count are skipped.
    """
    deg0 = None if plan.exact_m is not None else plan.degrees[0]
    (_, sigma, row, m) = leaf[0][0]
    base_cnt = _cell_cnt(m, deg0)
    for partition in _set_partitions(tuple(range(k0))):
        groups = len(partition)
        if not _c_ge(base_cnt, groups):
            continue
        rest = m - groups if not base_cnt[1] else m
        cells: list[Cell] = [
            (tuple(sorted(g)), sigma, row, 1) for g in partition
        ]
        if base_cnt[1] or rest > 0:
            cells.append(((), sigma, row, _cap(rest, deg0)))
        yield _canonical([cells, *leaf[1:]])


def _set_partitions(items: tuple[int, ...]) -> Iterator[tuple[tuple[int, ...], ...]]:
    if not items:
        yield ()
        return
    first, rest = items[0], items[1:]
    for sub in _set_partitions(rest):
        yield ((first,),) + sub
        for i in range(len(sub)):
            yield sub[:i] + ((first,) + sub[i],) + sub[i + 1 :]


def _refine_and_relift(
    leaf: Leaf, level_r: int, k: int, plan: EnginePlan
) -> Iterator[Leaf]:
    """Distribute level (level_r - 1) cells over 2^k membership patterns,
    then recompute every materialized level above it."""
    low = leaf[level_r - 1]
    exact = plan.exact_m is not None
    deg_src = None if exact else plan.degrees[level_r - 1]
    # post-split degree: what the level is tracked at once its block is done
    deg_dst = None if exact else max(
        d for d in (plan.degrees[level_r - 1] >> k, 2) if d
    )
    sigmas = list(itertools.product((0, 1), repeat=k))
    per_cell = [
        list(_split_patterns(n, len(sigmas), deg_src, deg_dst))
        for _, _, _, n in low
    ]
    total = 1
    for pats in per_cell:
        total *= len(pats)
        if total > STATE_BUDGET:
            raise InfeasibleLevel(
                f"refinement enumeration needs more than {STATE_BUDGET} leaf states"
            )
    budget_roof = plan.mat_levels - level_r
    for choice in itertools.product(*per_cell):
        cells: list[Cell] = []
        ok = True
        for (tag, sigma, row, _), pattern in zip(low, choice):
            for sg, n in zip(sigmas, pattern):
                if n:
                    cells.append((tag, sigma + sg, row, n))
            if tag and not any(pattern):
                ok = False
        if not ok:
            continue
        levels = [list(lv) for lv in leaf[: level_r - 1]] + [cells]
        try:
            budget = [CANDIDATE_BUDGET]
            for i in range(level_r, plan.mat_levels):
                deg = None if exact else plan.degrees[i]
                levels.append(list(_relift_level(tuple(levels[-1]), deg, budget)))
        except InfeasibleLevel:
            raise
        yield _canonical(levels)


def enumerate_leaves(plan: EnginePlan) -> list[Leaf]:
    """All abstract universal-parameter configurations, canonically deduped."""
    frontier = {_initial_leaf(plan)}
    for t, names in plan.blocks:
        nxt: set[Leaf] = set()
        for leaf in frontier:
            if t == 0:
                stream = _group_split(leaf, len(names), plan)
            else:
                stream = _refine_and_relift(leaf, t, len(names), plan)
            for out in stream:
                nxt.add(out)
                if len(nxt) > STATE_BUDGET:
                    raise InfeasibleLevel(
                        f"leaf frontier exceeds {STATE_BUDGET} states"
                    )
        frontier = nxt
    return sorted(frontier)


# ---------------------------------------------------------------------------
# engine layer: reading a leaf
# ---------------------------------------------------------------------------


class _LeafView:
    """Pre-digested access to one leaf: parameter cells, totals, degrees."""

    def __init__(self, plan: EnginePlan, leaf: Leaf):
        self.plan = plan
        self.leaf = leaf
        self.exact = plan.exact_m is not None
        self.qdeg = None if self.exact else plan.qdeg
        # block bookkeeping: for each universal name, its type and position
        self.param_type: dict[str, int] = {}
        self.param_pos: dict[str, int] = {}
        for t, names in plan.blocks:
            for pos, name in enumerate(names):
                self.param_type[name] = t
                self.param_pos[name] = pos
        self._cell_cache: dict[str, int] = {}

    def level_deg(self, i: int) -> Optional[int]:
        if self.exact:
            return None
        if i >= len(self.plan.degrees):
            return self.plan.qdeg
        # levels split by a block are tracked at the shrunken degree
        deg = self.plan.degrees[i]
        for t, names in self.plan.blocks:
            if t == i + 1:
                deg = max(deg >> len(names), 2)
        return deg

    def cells(self, i: int) -> Level:
        return self.leaf[i]

    def cell_count(self, i: int, idx: int) -> Cnt:
        n = self.leaf[i][idx][3]
        return (n, not self.exact and n >= (self.level_deg(i) or 0))

    def total(self, i: int) -> Cnt:
        """Clamped size of level i (sum of cells, then powers of two)."""
        acc: Cnt = (0, False)
        for idx in range(len(self.leaf[self.plan.mat_levels - 1])):
            acc = _c_add(acc, self.cell_count(self.plan.mat_levels - 1, idx), self.qdeg)
        level = self.plan.mat_levels - 1
        while level < i:
            acc = _c_pow2(acc, 0, self.qdeg)
            level += 1
        if i < self.plan.mat_levels:
            acc = (0, False)
            for idx in range(len(self.leaf[i])):
                acc = _c_add(acc, self.cell_count(i, idx), self.qdeg)
        return acc

    # -- parameter cells ----------------------------------------------------

    def param_cell(self, name: str) -> int:
        """Index of the parameter's own 1-element cell at its level."""
        if name in self._cell_cache:
            return self._cell_cache[name]
        t = self.param_type[name]
        pos = self.param_pos[name]
        if t == 0:
            for idx, (tag, _, _, _) in enumerate(self.leaf[0]):
                if pos in tag:
                    self._cell_cache[name] = idx
                    return idx
            raise AssertionError("type-0 parameter lost its tagged cell")
        diag = self.diag_row(name)
        for idx, (_, _, row, _) in enumerate(self.leaf[t]):
            if row == diag:
                self._cell_cache[name] = idx
                return idx
        raise AssertionError("parameter diagonal cell not realized")

    def diag_row(self, name: str) -> tuple[int, ...]:
        """The parameter's own colour as a row over the cells one level down."""
        t = self.param_type[name]
        pos = self.param_pos[name]
        return tuple(
            1 if sigma[self._sigma_base(t) + pos] else 2
            for _, sigma, _, _ in self.leaf[t - 1]
        )

    def _sigma_base(self, t: int) -> int:
        """Offset of block-t bits inside level-(t-1) sigma tuples.

        Only one membership block ever refines a level, so the offset is 0;
        kept as a hook should stacked refinements appear.
        """
        return 0

    def param_in_param(self, lo: str, hi: str) -> bool:
        """x_lo ∈ x_hi for parameters with type(hi) = type(lo) + 1."""
        t = self.param_type[lo]
        if t + 1 != self.param_type[hi]:
            raise AssertionError("ill-typed parameter membership")
        cell = self.leaf[t][self.param_cell(lo)]
        return bool(cell[1][self._sigma_base(t + 1) + self.param_pos[hi]])

    def params_equal(self, a: str, b: str) -> bool:
        ta, tb = self.param_type[a], self.param_type[b]
        if ta != tb:
            return False
        if ta == 0:
            return self.param_cell(a) == self.param_cell(b)
        return self.diag_row(a) == self.diag_row(b)

    def param_sigma_bit(self, cell_level: int, cell_idx: int, name: str) -> bool:
        """Membership of a whole cell inside parameter `name` (type = level+1)."""
        t = self.param_type[name]
        if t != cell_level + 1:
            raise AssertionError("sigma bit asked across a type gap")
        sigma = self.leaf[cell_level][cell_idx][1]
        return bool(sigma[self._sigma_base(t) + self.param_pos[name]])

    def params_at_level(self, level: int) -> list[str]:
        return [n for n, t in self.param_type.items() if t == level]


# ---------------------------------------------------------------------------
# engine layer: witness assignments and valuation sets
# ---------------------------------------------------------------------------
#
# A witness site is ("cell", index) at a materialized level, ("param", name)
# when the witness is one of the same-level parameters, or ("abs", bits)
# above the materialized levels, where bits pins membership of each
# level-below parameter element.  Chains between adjacent abstract levels
# contribute product-form factors; everything either level of a chain can
# observe is decided by the site pair plus the chosen membership bit.


@dataclasses.dataclass(frozen=True)
class _Site:
    kind: str
    level: int
    cell: int = -1
    name: str = ""
    bits: tuple[int, ...] = ()


def _witness_sites(view: _LeafView, level: int) -> list[_Site]:
    plan = view.plan
    sites: list[_Site] = []
    for name in view.params_at_level(level):
        sites.append(_Site("param", level, name=name))
    if level < plan.mat_levels:
        for idx in range(len(view.cells(level))):
            sites.append(_Site("cell", level, cell=idx))
    else:
        below = view.params_at_level(level - 1)
        for bits in itertools.product((0, 1), repeat=len(below)):
            sites.append(_Site("abs", level, bits=bits))
    return sites


def _site_param_bit(view: _LeafView, site: _Site, pname: str) -> bool:
    """Does parameter `pname` (one level below the site) belong to it?"""
    if site.kind == "param":
        holder = site.name
        t = view.param_type[pname]
        if view.param_type[holder] != t + 1:
            raise AssertionError("bit asked across a type gap")
        return view.param_in_param(pname, holder)
    if site.kind == "cell":
        row = view.cells(site.level)[site.cell][2]
        entry = row[view.param_cell(pname)]
        return entry in (1, 3) and view.cell_count(site.level - 1, view.param_cell(pname))[0] >= 1 and entry != 2 and (
            entry == 1 or _param_bit_from_split(view, site, pname)
        )
    below = view.params_at_level(site.level - 1)
    return bool(site.bits[below.index(pname)])


def _param_bit_from_split(view: _LeafView, site: _Site, pname: str) -> bool:
    # a split entry over a 1-element cell cannot happen (the relift forbids
    # (1,1) rows over 1-special positions), so reaching here is a bug
    raise AssertionError("membership bit over a split 1-element cell")


def _site_available(
    view: _LeafView, site: _Site, chain: Optional[tuple[_Site, int]]
) -> Cnt:
    """How many elements can realize the site, excluding same-level params.

    `chain` carries the next witness's already-chosen site and the required
    membership bit of that witness inside this one (forms (A) chains).
    """
    if site.kind == "param":
        return (1, False)
    if site.kind == "cell":
        n = view.cell_count(site.level, site.cell)
        for pname in view.params_at_level(site.level):
            if view.param_cell(pname) == site.cell:
                n = _c_sub(n, 1, view.qdeg)
        if chain is not None:
            nxt, bit = chain
            row = view.cells(site.level)[site.cell][2]
            if nxt.kind in ("cell", "param"):
                idx = nxt.cell if nxt.kind == "cell" else view.param_cell(nxt.name)
                entry = row[idx]
                want = {1: (1,), 0: (2,)}[bit]
                if entry != 3 and entry not in want:
                    return (0, False)
                if entry == 3 and view.cell_count(site.level - 1, idx) == (1, False):
                    raise AssertionError("split row over a 1-element cell")
                if nxt.kind == "param" and entry == 3:
                    # split over the parameter's 1-element cell is impossible
                    raise AssertionError("split row over a parameter cell")
        return n
    # abstract site: product-form count over the level below
    below = view.params_at_level(site.level - 1)
    acc: Cnt = (1, False)
    lower_level = site.level - 1
    free_mass = view.total(lower_level)
    free_mass = _c_sub(free_mass, len(below), view.qdeg)
    if chain is not None:
        nxt, bit = chain
        part = _site_available(view, nxt, None)
        if nxt.kind == "param":
            pass  # membership of that exact element is pinned by `bits`
        else:
            if not _c_ge(part, 1):
                return (0, False)
            free_mass = _c_sub(free_mass, part[0] if not part[1] else 0, view.qdeg)
            acc = _c_mul(acc, _c_pred(_c_pow2(part, 0, view.qdeg)), view.qdeg)
    acc = _c_mul(acc, _c_pow2(free_mass, 0, view.qdeg), view.qdeg)
    # exclude same-level parameters that happen to satisfy the same pins
    for pname in view.params_at_level(site.level):
        if _diag_matches_site(view, pname, site, chain):
            acc = _c_sub(acc, 1, view.qdeg)
    return acc


def _diag_matches_site(
    view: _LeafView, pname: str, site: _Site, chain: Optional[tuple[_Site, int]]
) -> bool:
    """Would parameter `pname` itself sit inside this abstract site?"""
    below = view.params_at_level(site.level - 1)
    for q, bit in zip(below, site.bits):
        if view.param_in_param(q, pname) != bool(bit):
            return False
    if chain is not None:
        nxt, bit = chain
        has = _param_contains_site_element(view, pname, nxt, bool(bit))
        if not has:
            return False
    return True


def _param_contains_site_element(
    view: _LeafView, pname: str, nxt: _Site, want_in: bool
) -> bool:
    """Can the next witness at `nxt` be chosen inside/outside parameter pname?"""
    t = view.param_type[pname]
    if nxt.kind == "param":
        inside = view.param_in_param(nxt.name, pname)
        return inside == want_in
    if nxt.kind == "cell":
        sigma_bit = view.param_sigma_bit(nxt.level, nxt.cell, pname)
        avail = _site_available(view, nxt, None)
        if sigma_bit:
            return want_in or not _c_ge(avail, 1) is False and False or (not want_in and False) or want_in
        return not want_in
    raise AssertionError("parameter one level above an abstract site")


def _leaf_param_atoms(
    view: _LeafView, atoms: Sequence[tuple[str, str, str]]
) -> dict[tuple[str, str, str], bool]:
    """Valuation bits settled by the leaf alone (parameter-parameter atoms)."""
    fixed: dict[tuple[str, str, str], bool] = {}
    params = set(view.param_type)
    for atom in atoms:
        kind, a, b = atom
        if a in params and b in params:
            if kind == "eq":
                fixed[atom] = view.params_equal(a, b)
            else:
                fixed[atom] = view.param_in_param(a, b)
    return fixed


def leaf_valuation_sets(plan: EnginePlan, leaf: Leaf) -> frozenset[int]:
    """Every atom valuation some witness choice realizes under this leaf.

    Returns bit masks over plan.atoms.  The existential player wins a matrix
    on this leaf iff some returned mask satisfies it.
    """
    view = _LeafView(plan, leaf)
    atoms = plan.atoms
    index = plan.atom_index()
    fixed = _leaf_param_atoms(view, atoms)
    base_mask = 0
    for atom, val in fixed.items():
        if val:
            base_mask |= 1 << index[atom]
    wnames = [w for w, _ in plan.witnesses]
    wlevels = {w: t for w, t in plan.witnesses}
    out: set[int] = set()

    site_lists = [_witness_sites(view, wlevels[w]) for w in wnames]
    for combo in itertools.product(*site_lists):
        assignment = dict(zip(wnames, combo))
        for extra in _chain_and_equality_choices(view, plan, assignment):
            mask = base_mask
            ok = True
            for atom in atoms:
                kind, a, b = atom
                if atom in fixed:
                    continue
                val = _atom_value(view, plan, assignment, extra, atom)
                if val is None:
                    ok = False
                    break
                if val:
                    mask |= 1 << index[atom]
            if ok and _assignment_realizable(view, plan, assignment, extra):
                out.add(mask)
    return frozenset(out)


def _chain_and_equality_choices(
    view: _LeafView, plan: EnginePlan, assignment: dict[str, _Site]
) -> Iterator[dict]:
    """Free choices on top of a site assignment: chain bits, equality splits."""
    wnames = [w for w, _ in plan.witnesses]
    wlevels = dict(plan.witnesses)
    if plan.form == "A":
        pairs = [
            (wnames[i], wnames[i + 1])
            for i in range(len(wnames) - 1)
            if wlevels[wnames[i]] == wlevels[wnames[i + 1]] + 1
        ]
        for bits in itertools.product((0, 1), repeat=len(pairs)):
            yield {"chain": dict(zip(pairs, bits)), "eq": None}
    else:
        groups: dict[_Site, list[str]] = {}
        for w in wnames:
            groups.setdefault(assignment[w], []).append(w)
        per_group = [
            list(_set_partitions(tuple(range(len(g)))))
            for g in groups.values()
        ]
        for split in itertools.product(*per_group):
            eq: dict[str, tuple] = {}
            for (site, members), parts in zip(groups.items(), split):
                if site.kind == "param":
                    if len(parts) != 1:
                        continue
                for gi, part in enumerate(parts):
                    for i in part:
                        eq[members[i]] = (site, gi)
            if len(eq) == len(wnames):
                yield {"chain": {}, "eq": eq}


def _atom_value(
    view: _LeafView,
    plan: EnginePlan,
    assignment: dict[str, _Site],
    extra: dict,
    atom: tuple[str, str, str],
) -> Optional[bool]:
    """Value of one atom under the assignment; None = inconsistent choice."""
    kind, a, b = atom
    params = view.param_type
    wlevels = dict(plan.witnesses)
    if kind == "eq":
        if a in wlevels and b in wlevels:
            if plan.form == "A":
                return False  # distinct levels, equality is ill-typed anyway
            ea, eb = extra["eq"][a], extra["eq"][b]
            sa, sb = assignment[a], assignment[b]
            if sa.kind == "param" and sb.kind == "param":
                return view.params_equal(sa.name, sb.name)
            return ea == eb and sa == sb
        w, p = (a, b) if a in wlevels else (b, a)
        site = assignment[w]
        if site.kind == "param":
            return view.params_equal(site.name, p)
        return False
    # membership
    if a in params and b in wlevels:
        site = assignment[b]
        return _site_param_bit(view, site, a)
    if a in wlevels and b in params:
        site = assignment[a]
        if site.kind == "param":
            return view.param_in_param(site.name, b)
        if site.kind == "cell":
            return view.param_sigma_bit(site.level, site.cell, b)
        raise AssertionError("witness above the top parameter type")
    # witness-witness membership: adjacent chain pair
    lo, hi = a, b
    site_hi, site_lo = assignment[hi], assignment[lo]
    if site_hi.kind == "param":
        return _param_contains_witness(view, site_hi.name, site_lo, extra)
    bit = extra["chain"].get((hi, lo))
    if site_lo.kind == "param":
        return _site_param_bit(view, site_hi, site_lo.name)
    if bit is None:
        return None
    return bool(bit)


def _param_contains_witness(
    view: _LeafView, pname: str, site_lo: _Site, extra: dict
) -> Optional[bool]:
    if site_lo.kind == "param":
        return view.param_in_param(site_lo.name, pname)
    if site_lo.kind == "cell":
        return view.param_sigma_bit(site_lo.level, site_lo.cell, pname)
    raise AssertionError("abstract witness directly under a parameter's type")


def _assignment_realizable(
    view: _LeafView, plan: EnginePlan, assignment: dict[str, _Site], extra: dict
) -> bool:
    """Multiplicity and chain-feasibility check for a full witness choice."""
    wnames = [w for w, _ in plan.witnesses]
    if plan.form == "A":
        chain = extra["chain"]
        for i, w in enumerate(wnames):
            nxt = None
            if i + 1 < len(wnames) and (w, wnames[i + 1]) in chain:
                nxt = (assignment[wnames[i + 1]], chain[w, wnames[i + 1]])
            site = assignment[w]
            if site.kind == "param":
                if nxt is not None:
                    want = bool(nxt[1])
                    if _param_contains_site_element(view, site.name, nxt[0], want) != True:
                        return False
                continue
            if not _c_ge(_site_available(view, site, nxt), 1):
                return False
        return True
    # form B: distinct witnesses per site group
    eq = extra["eq"]
    demand: dict[_Site, set] = {}
    for w in wnames:
        demand.setdefault(assignment[w], set()).add(eq[w])
    for site, classes in demand.items():
        if site.kind == "param":
            continue
        if not _c_ge(_site_available(view, site, None), len(classes)):
            return False
    return True


# ---------------------------------------------------------------------------
# decision entry points
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Verdict:
    """Outcome of a decision run plus its certificate payload."""

    outcome: str
    certificate: dict


_SHAPE_CACHE: dict = {}


def _matrix_atom_key(
    matrix: Formula, plan: EnginePlan
) -> dict[tuple[str, str, str], Formula]:
    index = plan.atom_index()
    table: dict[tuple[str, str, str], Formula] = {}

    def walk(node: Formula) -> None:
        if isinstance(node, (Member, Equal)):
            kind = "mem" if isinstance(node, Member) else "eq"
            a = node.left.name if isinstance(node.left, TypedVar) else node.left
            b = node.right.name if isinstance(node.right, TypedVar) else node.right
            if kind == "eq" and ("eq", a, b) not in index:
                a, b = b, a
            key = (kind, a, b)
            if key not in index:
                raise AssertionError(f"matrix atom {key} missing from inventory")
            table[key] = node
            return
        for field in dataclasses.fields(node):
            v = getattr(node, field.name)
            if isinstance(v, (Member, Equal, Not, And, Or, Implies, Iff)):
                walk(v)

    walk(matrix)
    return table


def _matrix_sat_masks(matrix: Formula, plan: EnginePlan) -> frozenset[int]:
    """All valuations of the atom inventory that satisfy the matrix."""
    index = plan.atom_index()

    def ev(node: Formula, mask: int) -> bool:
        if isinstance(node, (Member, Equal)):
            kind = "mem" if isinstance(node, Member) else "eq"
            a = node.left.name if isinstance(node.left, TypedVar) else node.left
            b = node.right.name if isinstance(node.right, TypedVar) else node.right
            if kind == "eq" and ("eq", a, b) not in index:
                a, b = b, a
            return bool(mask >> index[kind, a, b] & 1)
        if isinstance(node, Not):
            return not ev(node.arg, mask)
        if isinstance(node, And):
            return ev(node.left, mask) and ev(node.right, mask)
        if isinstance(node, Or):
            return ev(node.left, mask) or ev(node.right, mask)
        if isinstance(node, Implies):
            return not ev(node.left, mask) or ev(node.right, mask)
        if isinstance(node, Iff):
            return ev(node.left, mask) == ev(node.right, mask)
        raise AssertionError(f"unexpected matrix node {node!r}")

    hits = [m for m in range(1 << len(plan.atoms)) if ev(matrix, m)]
    return frozenset(hits)


def _shape_summary(plan: EnginePlan) -> tuple[tuple[frozenset[int], Leaf], ...]:
    """Distinct leaf valuation-sets for a plan, with one witness leaf each."""
    key = (
        plan.blocks,
        plan.witnesses,
        plan.form,
        plan.exact_m,
        plan.degrees,
        plan.base_degree,
    )
    if key in _SHAPE_CACHE:
        return _SHAPE_CACHE[key]
    summary: dict[frozenset[int], Leaf] = {}
    for leaf in enumerate_leaves(plan):
        vs = leaf_valuation_sets(plan, leaf)
        if vs not in summary:
            summary[vs] = leaf
    result = tuple(sorted(summary.items(), key=lambda kv: kv[1]))
    _SHAPE_CACHE[key] = result
    return result


def _render_leaf(leaf: Leaf) -> list[str]:
    lines = []
    for level, cells in enumerate(leaf):
        parts = []
        for tag, sigma, row, n in cells:
            bits = "".join(map(str, sigma)) or "-"
            rowtxt = "".join(map(str, row)) or "-"
            tagtxt = ",".join(map(str, tag)) if tag else ""
            head = f"[{tagtxt}]" if tagtxt else ""
            parts.append(f"{head}{bits}/{rowtxt}x{n}")
        lines.append(f"level {level}: " + " ".join(parts))
    return lines


def _engine_truth(p: PrenexSentence, exact_m: Optional[int]) -> tuple[bool, dict]:
    plan = plan_sentence(p, exact_m=exact_m)
    sat = _matrix_sat_masks(p.matrix, plan)
    summary = _shape_summary(plan)
    for vals, leaf in summary:
        if not (vals & sat):
            return False, {
                "leaf_count": len(summary),
                "counterexample_leaf": _render_leaf(leaf),
            }
    detail: dict = {"leaf_count": len(summary)}
    if summary:
        vals, _ = summary[0]
        good = sorted(vals & sat)
        if good:
            first = good[0]
            detail["witness_valuation"] = {
                f"{k} {a} {b}": bool(first >> i & 1)
                for i, (k, a, b) in enumerate(plan.atoms)
            }
    return True, detail


def _concrete_truth(p: PrenexSentence, m: int) -> Optional[bool]:
    """Direct evaluation at m atoms; None when infeasible."""
    try:
        model = Model(m, max(p.max_level(), 1))
        return eval_sentence(model, p, budget=EVAL_BUDGET)
    except InfeasibleLevel:
        return None


def _decide(p: PrenexSentence, b: Bounds, form: str, cross_check: bool) -> Verdict:
    plan = plan_sentence(p)
    truth, detail = _engine_truth(p, None)
    flags = []
    if plan.max_level > 3 or plan.mat_levels > 3:
        flags.append("desk-unverified level")
    if cross_check:
        for m in (2, 3, 4):
            concrete = _concrete_truth(p, m)
            if concrete is None:
                continue
            abstract_at_m, _ = _engine_truth(p, m)
            if abstract_at_m != concrete:
                raise CrossCheckMismatch(
                    f"abstract evaluation at m={m} says {abstract_at_m}, "
                    f"direct evaluation says {concrete}: {p}"
                )
    outcome = "ProvableInTSTI" if truth else "RefutableInTSTI"
    certificate = {
        "fragment": f"form ({form})",
        "bounds": {
            "g_bound": b.g_bound,
            "ab_bound": b.ab_bound,
            "certified_m": b.certified_m,
        },
        "backend": "abstract",
        "model_size": max(b.certified_m, plan.base_degree),
        "flags": flags,
        **detail,
    }
    return Verdict(outcome=outcome, certificate=certificate)


def decide_form_A(
    p: PrenexSentence, b: Optional[Bounds] = None, cross_check: bool = True
) -> Verdict:
    """Decide a form (A) sentence (existential types strictly decreasing)."""
    shape = classify(p)
    if not isinstance(shape, FormA):
        raise ValueError("decide_form_A needs a form (A) sentence")
    return _decide(p, b or compute_bounds(shape), "A", cross_check)


def decide_form_B(
    p: PrenexSentence, b: Optional[Bounds] = None, cross_check: bool = True
) -> Verdict:
    """Decide a form (B) sentence (existential types all equal)."""
    shape = classify(p)
    if not isinstance(shape, FormB):
        raise ValueError("decide_form_B needs a form (B) sentence")
    return _decide(p, b or compute_bounds(shape), "B", cross_check)

"""Abstract syntax, parsing, and printing for the two formula languages.

The untyped language speaks about membership and equality between plain
variables.  The typed language attaches a natural-number level to every
variable; membership atoms must step up exactly one level and equality
atoms must stay on one level.  Both share one node set: the only
difference is whether variable leaves are plain strings or TypedVar.

Concrete syntax (ASCII):

    formula := quant | bin
    quant   := ("forall" | "exists") var "." formula
    bin     := unary (("&" | "|" | "->" | "<->") unary)*
    unary   := "~" unary | "(" formula ")" | atom
    atom    := var ("in" | "=") var
    var     := ident (":" nat)?

Binary operators are left-associative with precedence & > | > -> > <->;
"~" binds tightest; a quantifier's body extends as far right as
possible.  Type annotations are only legal in typed mode.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Union

from .errors import FormulaTypeError, ParseError

__all__ = [
    "TypedVar",
    "Member",
    "Equal",
    "Not",
    "And",
    "Or",
    "Implies",
    "Iff",
    "Forall",
    "Exists",
    "Formula",
    "TypedFormula",
    "PrenexSentence",
    "parse_untyped",
    "parse_typed",
    "render_untyped",
    "render_typed",
    "to_prenex",
    "free_variables",
    "is_quantifier_free",
    "check_typed",
]


@dataclass(frozen=True)
class TypedVar:
    """A variable occurrence tagged with its level."""

    name: str
    type: int

    def __str__(self) -> str:
        return f"{self.name}:{self.type}"


# A variable leaf is a plain string (untyped) or a TypedVar (typed).
VarLike = Union[str, "TypedVar"]


@dataclass(frozen=True)
class Member:
    left: VarLike
    right: VarLike


@dataclass(frozen=True)
class Equal:
    left: VarLike
    right: VarLike


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Iff:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Forall:
    var: VarLike
    body: "Formula"


@dataclass(frozen=True)
class Exists:
    var: VarLike
    body: "Formula"


Formula = Union[Member, Equal, Not, And, Or, Implies, Iff, Forall, Exists]
# Same node set; variable leaves are TypedVar throughout.
TypedFormula = Formula

_BINARY = {And: "&", Or: "|", Implies: "->", Iff: "<->"}
_QUANT = {Forall: "forall", Exists: "exists"}


def _var_name(v: VarLike) -> str:
    return v.name if isinstance(v, TypedVar) else v


def free_variables(f: Formula) -> frozenset[str]:
    """Names occurring free in f (type tags ignored)."""

    def walk(node, bound: frozenset[str], acc: set[str]) -> None:
        if isinstance(node, (Member, Equal)):
            for v in (node.left, node.right):
                name = _var_name(v)
                if name not in bound:
                    acc.add(name)
        elif isinstance(node, Not):
            walk(node.arg, bound, acc)
        elif isinstance(node, (And, Or, Implies, Iff)):
            walk(node.left, bound, acc)
            walk(node.right, bound, acc)
        elif isinstance(node, (Forall, Exists)):
            walk(node.body, bound | {_var_name(node.var)}, acc)
        else:
            raise TypeError(f"not a formula node: {node!r}")

    acc: set[str] = set()
    walk(f, frozenset(), acc)
    return frozenset(acc)


def is_quantifier_free(f: Formula) -> bool:
    if isinstance(f, (Member, Equal)):
        return True
    if isinstance(f, Not):
        return is_quantifier_free(f.arg)
    if isinstance(f, (And, Or, Implies, Iff)):
        return is_quantifier_free(f.left) and is_quantifier_free(f.right)
    return False


def check_typed(f: TypedFormula) -> None:
    """Verify every leaf is a TypedVar and every atom satisfies the
    level side-conditions: membership steps up one level, equality
    stays on one level.  Raises FormulaTypeError otherwise."""
    if isinstance(f, (Member, Equal)):
        for v in (f.left, f.right):
            if not isinstance(v, TypedVar):
                raise FormulaTypeError(f"untyped variable {v!r} in typed formula")
        lt, rt = f.left.type, f.right.type
        if isinstance(f, Member) and rt != lt + 1:
            raise FormulaTypeError(
                "membership atom requires consecutive types: "
                f"{f.left} in {f.right} (got {lt} and {rt})"
            )
        if isinstance(f, Equal) and rt != lt:
            raise FormulaTypeError(
                f"equality atom requires equal types: {f.left} = {f.right}"
            )
    elif isinstance(f, Not):
        check_typed(f.arg)
    elif isinstance(f, (And, Or, Implies, Iff)):
        check_typed(f.left)
        check_typed(f.right)
    elif isinstance(f, (Forall, Exists)):
        if not isinstance(f.var, TypedVar):
            raise FormulaTypeError(f"untyped binder {f.var!r} in typed formula")
        if f.var.type < 0:
            raise FormulaTypeError(f"negative type on {f.var}")
        check_typed(f.body)
    else:
        raise TypeError(f"not a formula node: {f!r}")


# ---------------------------------------------------------------------------
# Tokenizer


_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      | (?P<iff><->)
      | (?P<arrow>->)
      | (?P<nat>\d+)
      | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<sym>[().:~&|=])
    """,
    re.VERBOSE,
)

_KEYWORDS = {"forall", "exists", "in"}


@dataclass(frozen=True)
class _Tok:
    kind: str  # "kw", "ident", "nat", or the symbol itself
    text: str
    offset: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        value = m.group()
        if kind == "ws":
            pass
        elif kind == "ident":
            k = "kw" if value in _KEYWORDS else "ident"
            toks.append(_Tok(k, value, pos))
        elif kind == "nat":
            toks.append(_Tok("nat", value, pos))
        elif kind == "iff" or kind == "arrow":
            toks.append(_Tok(value, value, pos))
        else:
            toks.append(_Tok(value, value, pos))
        pos = m.end()
    toks.append(_Tok("eof", "", len(text)))
    return toks


# Raw variable occurrence as written, before scope resolution.
@dataclass(frozen=True)
class _RawVar:
    name: str
    annot: int | None
    offset: int


class _Parser:
    def __init__(self, text: str, typed: bool):
        self.text = text
        self.typed = typed
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind: str, what: str) -> _Tok:
        t = self.peek()
        if t.kind != kind:
            raise ParseError(f"expected {what}, found {t.text or 'end of input'!r}",
                             t.offset, self.text)
        return self.take()

    def parse(self) -> Formula:
        f = self.formula()
        t = self.peek()
        if t.kind != "eof":
            raise ParseError(f"unexpected trailing input {t.text!r}", t.offset, self.text)
        return f

    def formula(self) -> Formula:
        t = self.peek()
        if t.kind == "kw" and t.text in ("forall", "exists"):
            self.take()
            var = self.raw_var()
            self.expect(".", "'.' after quantified variable")
            body = self.formula()
            return (Forall if t.text == "forall" else Exists)(var, body)
        return self.iff()

    def iff(self) -> Formula:
        f = self.implies()
        while self.peek().kind == "<->":
            self.take()
            f = Iff(f, self.implies())
        return f

    def implies(self) -> Formula:
        f = self.disj()
        while self.peek().kind == "->":
            self.take()
            f = Implies(f, self.disj())
        return f

    def disj(self) -> Formula:
        f = self.conj()
        while self.peek().kind == "|":
            self.take()
            f = Or(f, self.conj())
        return f

    def conj(self) -> Formula:
        f = self.unary()
        while self.peek().kind == "&":
            self.take()
            f = And(f, self.unary())
        return f

    def unary(self) -> Formula:
        t = self.peek()
        if t.kind == "~":
            self.take()
            return Not(self.unary())
        if t.kind == "(":
            self.take()
            f = self.formula()
            self.expect(")", "')'")
            return f
        return self.atom()

    def atom(self) -> Formula:
        left = self.raw_var()
        t = self.peek()
        if t.kind == "kw" and t.text == "in":
            self.take()
            return Member(left, self.raw_var())
        if t.kind == "=":
            self.take()
            return Equal(left, self.raw_var())
        raise ParseError(f"expected 'in' or '=', found {t.text or 'end of input'!r}",
                         t.offset, self.text)

    def raw_var(self) -> _RawVar:
        t = self.expect("ident", "variable name")
        annot = None
        if self.peek().kind == ":":
            colon = self.take()
            if not self.typed:
                raise ParseError("type annotation not allowed in untyped syntax",
                                 colon.offset, self.text)
            n = self.expect("nat", "type level after ':'")
            annot = int(n.text)
        return _RawVar(t.text, annot, t.offset)


# ---------------------------------------------------------------------------
# Scope resolution: rename shadowed binders, collect type annotations.


class _Slot:
    """One variable: either a binder occurrence or a free name."""

    __slots__ = ("name", "final", "annots", "is_free")

    def __init__(self, name: str, is_free: bool):
        self.name = name
        self.final: str | None = name if is_free else None
        self.annots: list[tuple[int, int]] = []  # (type, offset)
        self.is_free = is_free


def _resolve(raw: Formula, typed: bool, require_sentence: bool,
             sort_of: str) -> Formula:
    """Turn a raw parse tree into a clean AST.

    Renames binders left-to-right so that no two binders share a name
    and no binder collides with a free name; checks annotation
    consistency; in typed mode rebuilds leaves as TypedVar and checks
    the atom side-conditions."""
    binders: list[_Slot] = []
    free: dict[str, _Slot] = {}
    free_order: list[tuple[str, int]] = []
    # occurrence resolution: id(raw node) -> slot for each _RawVar
    slot_of: dict[int, _Slot] = {}

    def scope(node, env: dict[str, _Slot]) -> None:
        if isinstance(node, (Member, Equal)):
            for rv in (node.left, node.right):
                s = env.get(rv.name)
                if s is None:
                    s = free.get(rv.name)
                    if s is None:
                        s = _Slot(rv.name, is_free=True)
                        free[rv.name] = s
                        free_order.append((rv.name, rv.offset))
                slot_of[id(rv)] = s
                if rv.annot is not None:
                    s.annots.append((rv.annot, rv.offset))
        elif isinstance(node, Not):
            scope(node.arg, env)
        elif isinstance(node, (And, Or, Implies, Iff)):
            scope(node.left, env)
            scope(node.right, env)
        else:  # Forall / Exists
            rv = node.var
            s = _Slot(rv.name, is_free=False)
            binders.append(s)
            slot_of[id(rv)] = s
            if rv.annot is not None:
                s.annots.append((rv.annot, rv.offset))
            scope(node.body, {**env, rv.name: s})

    scope(raw, {})

    if require_sentence and free:
        name, off = free_order[0]
        raise FormulaTypeError(
            f"free variable {name!r} in a {sort_of} required to be a sentence "
            f"(first occurrence at offset {off})"
        )

    used = set(free)
    for s in binders:
        if s.name not in used:
            s.final = s.name
        else:
            i = 1
            while f"{s.name}_{i}" in used:
                i += 1
            s.final = f"{s.name}_{i}"
        used.add(s.final)

    def var_type(s: _Slot) -> int:
        tys = {t for t, _ in s.annots}
        if len(tys) > 1:
            a, b = sorted(tys)[:2]
            raise FormulaTypeError(
                f"conflicting type annotations for {s.name!r}: {a} and {b}"
            )
        if not tys:
            raise FormulaTypeError(
                f"cannot determine the type of {s.name!r}: no annotation on "
                "its binder or any occurrence"
            )
        return tys.pop()

    def leaf(rv: _RawVar) -> VarLike:
        s = slot_of[id(rv)]
        if typed:
            return TypedVar(s.final, var_type(s))
        return s.final

    def rebuild(node) -> Formula:
        if isinstance(node, Member):
            return Member(leaf(node.left), leaf(node.right))
        if isinstance(node, Equal):
            return Equal(leaf(node.left), leaf(node.right))
        if isinstance(node, Not):
            return Not(rebuild(node.arg))
        if isinstance(node, (And, Or, Implies, Iff)):
            return type(node)(rebuild(node.left), rebuild(node.right))
        return type(node)(leaf(node.var), rebuild(node.body))

    out = rebuild(raw)
    if typed:
        check_typed(out)
    return out


def parse_untyped(text: str, require_sentence: bool = False) -> Formula:
    """Parse untyped concrete syntax.  Shadowed binders are renamed
    with deterministic numeric suffixes."""
    raw = _Parser(text, typed=False).parse()
    return _resolve(raw, typed=False, require_sentence=require_sentence,
                    sort_of="formula")


def parse_typed(text: str, require_sentence: bool = False) -> TypedFormula:
    """Parse typed concrete syntax.  Every variable needs at least one
    consistent annotation; atom side-conditions are enforced."""
    raw = _Parser(text, typed=True).parse()
    return _resolve(raw, typed=True, require_sentence=require_sentence,
                    sort_of="sentence")


# ---------------------------------------------------------------------------
# Rendering.  parse(render(f)) == f structurally; binary nodes always
# carry explicit parentheses so no precedence knowledge is needed to
# read the output back.


def _render(f: Formula, typed: bool) -> str:
    def v(x: VarLike) -> str:
        if typed:
            if not isinstance(x, TypedVar):
                raise FormulaTypeError(f"untyped variable {x!r} in typed formula")
            return f"{x.name}:{x.type}"
        return _var_name(x)

    def go(node, operand: bool = False) -> str:
        if isinstance(node, Member):
            return f"{v(node.left)} in {v(node.right)}"
        if isinstance(node, Equal):
            return f"{v(node.left)} = {v(node.right)}"
        if isinstance(node, Not):
            return f"~({go(node.arg)})"
        op = _BINARY.get(type(node))
        if op is not None:
            return f"({go(node.left, True)} {op} {go(node.right, True)})"
        kw = _QUANT[type(node)]
        out = f"{kw} {v(node.var)} . {go(node.body)}"
        # the grammar only admits a quantifier as a binary operand
        # behind parentheses
        return f"({out})" if operand else out

    return go(f)


def render_untyped(f: Formula) -> str:
    return _render(f, typed=False)


def render_typed(f: TypedFormula) -> str:
    return _render(f, typed=True)


# ---------------------------------------------------------------------------
# Prenex normal form.


@dataclass(frozen=True)
class PrenexSentence:
    """A sentence as a quantifier prefix over a quantifier-free matrix.

    prefix entries are ("forall" | "exists", TypedVar).  Prefix names
    are pairwise distinct and include every free variable of the
    matrix; a prefix variable may go unused in the matrix (quantifying
    a variable that is never mentioned is legal and can change truth
    only by requiring its level to be inhabited, which it always is in
    the models built here)."""

    prefix: tuple[tuple[str, TypedVar], ...]
    matrix: TypedFormula

    def __post_init__(self):
        if not is_quantifier_free(self.matrix):
            raise FormulaTypeError("prenex matrix must be quantifier-free")
        names = [tv.name for _, tv in self.prefix]
        if len(set(names)) != len(names):
            raise FormulaTypeError("prenex prefix variables must be distinct")
        for kind, tv in self.prefix:
            if kind not in ("forall", "exists"):
                raise FormulaTypeError(f"bad quantifier kind {kind!r}")
            if tv.type < 0:
                raise FormulaTypeError(f"negative type on {tv}")
        loose = free_variables(self.matrix) - set(names)
        if loose:
            raise FormulaTypeError(
                f"matrix has free variables outside the prefix: {sorted(loose)}"
            )
        check_typed(self.matrix)

    def to_formula(self) -> TypedFormula:
        """Rebuild the nested quantified formula."""
        f = self.matrix
        for kind, tv in reversed(self.prefix):
            f = (Forall if kind == "forall" else Exists)(tv, f)
        return f

    def negate(self) -> "PrenexSentence":
        """Prenex form of the negation: flip every quantifier, negate
        the matrix."""
        flipped = tuple(
            ("exists" if kind == "forall" else "forall", tv)
            for kind, tv in self.prefix
        )
        return PrenexSentence(flipped, Not(self.matrix))

    def __str__(self) -> str:
        parts = [f"{kind} {tv} ." for kind, tv in self.prefix]
        parts.append(render_typed(self.matrix))
        return " ".join(parts)


def _contains_quantifier(f: Formula) -> bool:
    return not is_quantifier_free(f)


def _expand_iff(f: TypedFormula) -> TypedFormula:
    """Replace A <-> B by (A -> B) & (B -> A) wherever the biconditional
    has a quantifier underneath (those cannot be prenexed directly).
    Quantifier-free biconditionals stay."""
    if isinstance(f, (Member, Equal)):
        return f
    if isinstance(f, Not):
        return Not(_expand_iff(f.arg))
    if isinstance(f, Iff):
        a = _expand_iff(f.left)
        b = _expand_iff(f.right)
        if _contains_quantifier(a) or _contains_quantifier(b):
            return And(Implies(a, b), Implies(b, a))
        return Iff(a, b)
    if isinstance(f, (And, Or, Implies)):
        return type(f)(_expand_iff(f.left), _expand_iff(f.right))
    return type(f)(f.var, _expand_iff(f.body))


def _freshen_binders(f: TypedFormula) -> TypedFormula:
    """Make all binder names globally distinct, left-to-right, reusing
    the original name where possible and numeric suffixes otherwise.
    Needed after _expand_iff duplicates subtrees."""
    used: set[str] = set(free_variables(f))

    def go(node, env: dict[str, str]) -> TypedFormula:
        if isinstance(node, (Member, Equal)):
            def m(x: VarLike) -> VarLike:
                name = env.get(_var_name(x), _var_name(x))
                return TypedVar(name, x.type) if isinstance(x, TypedVar) else name
            return type(node)(m(node.left), m(node.right))
        if isinstance(node, Not):
            return Not(go(node.arg, env))
        if isinstance(node, (And, Or, Implies, Iff)):
            return type(node)(go(node.left, env), go(node.right, env))
        name = _var_name(node.var)
        if name not in used:
            final = name
        else:
            i = 1
            while f"{name}_{i}" in used:
                i += 1
            final = f"{name}_{i}"
        used.add(final)
        nv = TypedVar(final, node.var.type) if isinstance(node.var, TypedVar) else final
        return type(node)(nv, go(node.body, {**env, name: final}))

    return go(f, {})


def to_prenex(f: TypedFormula) -> PrenexSentence:
    """Prenex normal form of a typed sentence.

    Quantifiers are pulled out left-to-right, so an input that is
    already prenex keeps its prefix order exactly.  Negation flips
    quantifiers; an implication's antecedent flips; biconditionals over
    quantified parts are first expanded into two implications (with the
    duplicated binders renamed)."""
    check_typed(f)
    if free_variables(f):
        raise FormulaTypeError(
            f"prenexing requires a sentence; free: {sorted(free_variables(f))}"
        )
    g = _freshen_binders(_expand_iff(f))

    def pull(node) -> tuple[list[tuple[str, TypedVar]], TypedFormula]:
        if isinstance(node, (Member, Equal, Iff)):
            return [], node
        if isinstance(node, Forall):
            pfx, m = pull(node.body)
            return [("forall", node.var)] + pfx, m
        if isinstance(node, Exists):
            pfx, m = pull(node.body)
            return [("exists", node.var)] + pfx, m
        if isinstance(node, Not):
            pfx, m = pull(node.arg)
            if not pfx:
                return [], node
            flipped = [("exists" if k == "forall" else "forall", tv) for k, tv in pfx]
            return flipped, Not(m)
        if isinstance(node, (And, Or)):
            p1, m1 = pull(node.left)
            p2, m2 = pull(node.right)
            if not p1 and not p2:
                return [], node
            return p1 + p2, type(node)(m1, m2)
        if isinstance(node, Implies):
            p1, m1 = pull(node.left)
            p2, m2 = pull(node.right)
            if not p1 and not p2:
                return [], node
            flipped = [("exists" if k == "forall" else "forall", tv) for k, tv in p1]
            return flipped + p2, Implies(m1, m2)
        raise TypeError(f"not a formula node: {node!r}")

    prefix, matrix = pull(g)
    return PrenexSentence(tuple(prefix), matrix)

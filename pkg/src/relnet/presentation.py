"""Finite presentations: generators, relation equations and a small text grammar.

A presentation source looks like::

    structure algebra
    scalar delta = 1.0
    generator U arity 2->2
    relation U_1 U_2 U_1 = U_1: place(U,1,3) * place(U,2,3) * place(U,1,3) = place(U,1,3)
    relation U^2 = delta U: U * U = delta U

``*`` composes (the left factor is applied last), ``x`` juxtaposes blocks,
``+``/``-`` add maps of equal arity.  A generator declared ``invertible`` gets a
paired inverse symbol, ``inv(f)`` or the optional name given after the keyword.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Union

KINDS = ("group", "associative-algebra", "lie-algebra", "custom")
_KIND_ALIASES = {
    "group": "group",
    "algebra": "associative-algebra",
    "associative-algebra": "associative-algebra",
    "lie": "lie-algebra",
    "lie-algebra": "lie-algebra",
    "custom": "custom",
}
MONOIDAL = ("cartesian", "tensor")
RESERVED = {"id", "inv", "place", "x"}


class PresentationError(ValueError):
    """Raised for malformed or inconsistent presentations."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            loc = f"line {line}" + (f", column {column}" if column is not None else "")
            message = f"{loc}: {message}"
        super().__init__(message)


# ---------------------------------------------------------------------------
# expression tree


@dataclass(frozen=True)
class Gen:
    name: str


@dataclass(frozen=True)
class InvGen:
    name: str  # the generator whose paired inverse is meant


@dataclass(frozen=True)
class Identity:
    blocks: int


@dataclass(frozen=True)
class Compose:
    outer: "RelExpr"
    inner: "RelExpr"


@dataclass(frozen=True)
class Product:
    left: "RelExpr"
    right: "RelExpr"


@dataclass(frozen=True)
class Scale:
    coef: Union[float, str]
    expr: "RelExpr"


@dataclass(frozen=True)
class Sum:
    left: "RelExpr"
    right: "RelExpr"


@dataclass(frozen=True)
class Place:
    name: str
    index: int
    strands: int


RelExpr = Union[Gen, InvGen, Identity, Compose, Product, Scale, Sum, Place]


@dataclass(frozen=True)
class GeneratorDecl:
    name: str
    arity: tuple[int, int]
    invertible: bool = False
    inverse_name: str | None = None

    def __post_init__(self):
        a, b = self.arity
        if a < 0 or b < 0 or (a == 0 and b == 0):
            raise PresentationError(f"generator {self.name}: invalid arity {a}->{b}")
        if self.invertible and self.inverse_name is None:
            object.__setattr__(self, "inverse_name", f"{self.name}_inv")
        if not self.invertible and self.inverse_name is not None:
            raise PresentationError(f"generator {self.name}: inverse name on non-invertible generator")


@dataclass(frozen=True)
class RelationEq:
    lhs: RelExpr
    rhs: RelExpr
    label: str


@dataclass
class Presentation:
    name: str
    kind: str
    generators: list[GeneratorDecl]
    relations: list[RelationEq]
    scalars: dict[str, float] = field(default_factory=dict)
    monoidal: str = "cartesian"

    def generator(self, name):
        for g in self.generators:
            if g.name == name:
                return g
        raise KeyError(name)

    def net_names(self):
        """Names of every network that must exist: generators and paired inverses."""
        out = []
        for g in self.generators:
            out.append(g.name)
            if g.invertible:
                out.append(g.inverse_name)
        return out

    def net_arities(self):
        out = {}
        for g in self.generators:
            out[g.name] = g.arity
            if g.invertible:
                out[g.inverse_name] = (g.arity[1], g.arity[0])
        return out

    def relation(self, label):
        for r in self.relations:
            if r.label == label:
                return r
        raise KeyError(label)


# ---------------------------------------------------------------------------
# arity bookkeeping


def desugar(expr: RelExpr) -> RelExpr:
    """Replace every ``Place`` by the equivalent product with identity padding."""
    if isinstance(expr, Place):
        core: RelExpr = Gen(expr.name)
        before, after = expr.index - 1, expr.strands - expr.index - 1
        if after > 0:
            core = Product(core, Identity(after))
        if before > 0:
            core = Product(Identity(before), core)
        return core
    if isinstance(expr, Compose):
        return Compose(desugar(expr.outer), desugar(expr.inner))
    if isinstance(expr, Product):
        return Product(desugar(expr.left), desugar(expr.right))
    if isinstance(expr, Sum):
        return Sum(desugar(expr.left), desugar(expr.right))
    if isinstance(expr, Scale):
        return Scale(expr.coef, desugar(expr.expr))
    return expr


def expr_arity(expr: RelExpr, arities: dict[str, tuple[int, int]]) -> tuple[int, int]:
    """Return ``(in_blocks, out_blocks)`` of an expression.

    ``arities`` maps generator names to their arity; inverses of invertible
    generators are looked up through ``InvGen`` by swapping the pair.
    """
    if isinstance(expr, Gen):
        if expr.name not in arities:
            raise PresentationError(f"undeclared symbol {expr.name}")
        return arities[expr.name]
    if isinstance(expr, InvGen):
        if expr.name not in arities:
            raise PresentationError(f"undeclared symbol {expr.name}")
        a, b = arities[expr.name]
        return (b, a)
    if isinstance(expr, Identity):
        return (expr.blocks, expr.blocks)
    if isinstance(expr, Place):
        if expr.name not in arities:
            raise PresentationError(f"undeclared symbol {expr.name}")
        if arities[expr.name] != (2, 2):
            raise PresentationError(f"place({expr.name}, ...) needs a 2->2 generator")
        if not 1 <= expr.index <= expr.strands - 1:
            raise PresentationError(
                f"place({expr.name}, {expr.index}, {expr.strands}): index out of range"
            )
        return (expr.strands, expr.strands)
    if isinstance(expr, Compose):
        oi, oo = expr_arity(expr.outer, arities)
        ii, io = expr_arity(expr.inner, arities)
        if io != oi:
            raise PresentationError(f"arity mismatch in composition: {io} blocks into {oi}")
        return (ii, oo)
    if isinstance(expr, Product):
        li, lo = expr_arity(expr.left, arities)
        ri, ro = expr_arity(expr.right, arities)
        return (li + ri, lo + ro)
    if isinstance(expr, Sum):
        a = expr_arity(expr.left, arities)
        b = expr_arity(expr.right, arities)
        if a != b:
            raise PresentationError(f"arity mismatch in sum: {a} vs {b}")
        return a
    if isinstance(expr, Scale):
        return expr_arity(expr.expr, arities)
    raise TypeError(f"not a relation expression: {expr!r}")


def _symbols(expr):
    if isinstance(expr, (Gen, InvGen, Place)):
        yield ("gen", expr.name)
    elif isinstance(expr, (Compose, Product, Sum)):
        a, b = (expr.outer, expr.inner) if isinstance(expr, Compose) else (expr.left, expr.right)
        yield from _symbols(a)
        yield from _symbols(b)
    elif isinstance(expr, Scale):
        if isinstance(expr.coef, str):
            yield ("scalar", expr.coef)
        yield from _symbols(expr.expr)


def validate(pres: Presentation) -> Presentation:
    if pres.kind not in KINDS:
        raise PresentationError(f"unknown structure kind {pres.kind!r}")
    if pres.monoidal not in MONOIDAL:
        raise PresentationError(f"unknown product mode {pres.monoidal!r}")
    seen = set()
    for g in pres.generators:
        for nm in (g.name, g.inverse_name):
            if nm is None:
                continue
            if nm in seen or nm in pres.scalars:
                raise PresentationError(f"duplicate symbol {nm}")
            if nm in RESERVED:
                raise PresentationError(f"reserved word used as generator name: {nm}")
            seen.add(nm)
    if pres.kind != "custom" and not pres.relations:
        raise PresentationError("a presentation needs at least one relation")
    arities = {g.name: g.arity for g in pres.generators}
    invertible = {g.name for g in pres.generators if g.invertible}
    for rel in pres.relations:
        for side in (rel.lhs, rel.rhs):
            for kind, nm in _symbols(side):
                if kind == "scalar" and nm not in pres.scalars:
                    raise PresentationError(f"undeclared symbol {nm}")
                if kind == "gen" and nm not in arities:
                    raise PresentationError(f"undeclared symbol {nm}")
            for node in _walk(side):
                if isinstance(node, InvGen) and node.name not in invertible:
                    raise PresentationError(f"inv({node.name}) of a non-invertible generator")
        a = expr_arity(rel.lhs, arities)
        b = expr_arity(rel.rhs, arities)
        if a != b:
            raise PresentationError(
                f"arity mismatch in relation {rel.label!r}: {a[0]}->{a[1]} vs {b[0]}->{b[1]}"
            )
    return pres


def _walk(expr):
    yield expr
    if isinstance(expr, Compose):
        yield from _walk(expr.outer)
        yield from _walk(expr.inner)
    elif isinstance(expr, (Product, Sum)):
        yield from _walk(expr.left)
        yield from _walk(expr.right)
    elif isinstance(expr, Scale):
        yield from _walk(expr.expr)


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[*x()+\-^,=∘×⊗])
    """,
    re.VERBOSE,
)
_OP_ALIASES = {"∘": "*", "×": "x", "⊗": "x"}


@dataclass
class _Tok:
    kind: str
    text: str
    col: int


def _tokenize(text, line, col0):
    toks, pos = [], 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise PresentationError(f"unexpected character {text[pos]!r}", line, col0 + pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            val = m.group()
            if kind == "op":
                val = _OP_ALIASES.get(val, val)
            elif kind == "name" and val == "x":
                kind = "op"
            toks.append(_Tok(kind, val, col0 + pos + 1))
        pos = m.end()
    return toks


class _ExprParser:
    def __init__(self, toks, line, symbols):
        self.toks = toks
        self.i = 0
        self.line = line
        # symbols: name -> ("gen"|"inv"|"scalar", target)
        self.symbols = symbols

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        col = tok.col if tok else (self.toks[-1].col + len(self.toks[-1].text) if self.toks else 1)
        raise PresentationError(msg, self.line, col)

    def expect(self, text):
        tok = self.peek()
        if tok is None or tok.text != text:
            self.error(f"expected {text!r}")
        self.i += 1
        return tok

    def parse(self):
        e = self.sum()
        if self.peek() is not None:
            self.error(f"unexpected token {self.peek().text!r}")
        return e

    def sum(self):
        e = self.compose()
        while self.peek() is not None and self.peek().text in "+-":
            op = self.peek().text
            self.i += 1
            rhs = self.compose()
            e = Sum(e, rhs if op == "+" else Scale(-1.0, rhs))
        return e

    def compose(self):
        e = self.product()
        while self.peek() is not None and self.peek().text == "*":
            self.i += 1
            e = Compose(e, self.product())
        return e

    def product(self):
        e = self.atom()
        while self.peek() is not None and self.peek().text == "x":
            self.i += 1
            e = Product(e, self.atom())
        return e

    def _starts_atom(self, tok):
        return tok is not None and (tok.kind in ("name", "num") or tok.text == "(")

    def atom(self):
        tok = self.peek()
        if tok is None:
            self.error("unexpected end of expression")
        if tok.kind == "num":
            self.i += 1
            if not self._starts_atom(self.peek()):
                self.error("a number must be followed by an expression to scale", tok)
            return Scale(float(tok.text), self.atom())
        if tok.text == "(":
            self.i += 1
            e = self.sum()
            self.expect(")")
            return e
        if tok.kind != "name":
            self.error(f"unexpected token {tok.text!r}")
        self.i += 1
        name = tok.text
        if name == "id":
            if self.peek() is not None and self.peek().text == "^":
                self.i += 1
                k = self.peek()
                if k is None or k.kind != "num" or not k.text.isdigit():
                    self.error("expected a block count after '^'")
                self.i += 1
                return Identity(int(k.text))
            return Identity(1)
        if name == "inv":
            self.expect("(")
            g = self.peek()
            if g is None or g.kind != "name":
                self.error("expected a generator name")
            self.i += 1
            self.expect(")")
            kind, target = self.symbols.get(g.text, (None, None))
            if kind is None:
                self.error(f"undeclared symbol {g.text}", g)
            if kind == "inv":
                return Gen(target)
            if kind != "gen":
                self.error(f"inv() of non-generator {g.text}", g)
            return InvGen(target)
        if name == "place":
            self.expect("(")
            g = self.peek()
            if g is None or g.kind != "name":
                self.error("expected a generator name")
            self.i += 1
            if self.symbols.get(g.text, (None,))[0] != "gen":
                self.error(f"undeclared symbol {g.text}", g)
            self.expect(",")
            i_tok = self.peek()
            self.i += 1
            self.expect(",")
            m_tok = self.peek()
            self.i += 1
            self.expect(")")
            for t in (i_tok, m_tok):
                if t is None or t.kind != "num" or not t.text.isdigit():
                    self.error("place() needs integer position and strand count", t)
            return Place(g.text, int(i_tok.text), int(m_tok.text))
        kind, target = self.symbols.get(name, (None, None))
        if kind is None:
            self.error(f"undeclared symbol {name}", tok)
        if kind == "scalar":
            if not self._starts_atom(self.peek()):
                self.error(f"scalar {name} must be followed by an expression to scale", tok)
            return Scale(name, self.atom())
        if kind == "inv":
            return InvGen(target)
        return Gen(name)


_GEN_RE = re.compile(
    r"^generator\s+(?P<name>[A-Za-z_][A-Za-z0-9_]*)\s+arity\s+(?P<a>\d+)\s*->\s*(?P<b>\d+)"
    r"(?:\s+(?P<inv>invertible)(?:\s+(?P<invname>[A-Za-z_][A-Za-z0-9_]*))?)?\s*$"
)
_SCALAR_RE = re.compile(r"^scalar\s+(?P<name>[A-Za-z_][A-Za-z0-9_]*)\s*=\s*(?P<val>\S+)\s*$")


def _strip_comment(line):
    i = line.find("#")
    return line if i < 0 else line[:i]


def parse_presentation(text: str, name: str = "presentation") -> Presentation:
    """Parse presentation source into a validated :class:`Presentation`."""
    kind = None
    monoidal = "cartesian"
    scalars: dict[str, float] = {}
    gens: list[GeneratorDecl] = []
    pending = []  # relation lines, parsed after all declarations

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        keyword = line.split(None, 1)[0]
        if keyword == "structure":
            parts = line.split()
            if len(parts) != 2 or parts[1] not in _KIND_ALIASES:
                raise PresentationError("expected 'structure group|algebra|lie|custom'", lineno, 1)
            kind = _KIND_ALIASES[parts[1]]
        elif keyword == "product":
            parts = line.split()
            if len(parts) != 2 or parts[1] not in MONOIDAL:
                raise PresentationError("expected 'product cartesian|tensor'", lineno, 1)
            monoidal = parts[1]
        elif keyword == "name":
            name = line.split(None, 1)[1].strip()
        elif keyword == "scalar":
            m = _SCALAR_RE.match(line)
            if not m:
                raise PresentationError("expected 'scalar <name> = <float>'", lineno, 1)
            try:
                scalars[m["name"]] = float(m["val"])
            except ValueError:
                raise PresentationError(f"bad scalar value {m['val']!r}", lineno, m.start("val") + 1)
        elif keyword == "generator":
            m = _GEN_RE.match(line)
            if not m:
                raise PresentationError(
                    "expected 'generator <name> arity <in>-><out> [invertible [<inverse>]]'", lineno, 1
                )
            gens.append(
                GeneratorDecl(
                    m["name"],
                    (int(m["a"]), int(m["b"])),
                    invertible=bool(m["inv"]),
                    inverse_name=m["invname"],
                )
            )
        elif keyword == "relation":
            pending.append((lineno, raw))
        else:
            raise PresentationError(f"unknown keyword {keyword!r}", lineno, raw.find(keyword) + 1)

    symbols = _symbol_table(Presentation(name, "custom", gens, [], scalars))

    relations = []
    for lineno, raw in pending:
        body = _strip_comment(raw)
        start = body.index("relation") + len("relation")
        rest = body[start:]
        label = None
        if ":" in rest:
            cut = rest.index(":")
            label = rest[:cut].strip()
            start += cut + 1
            rest = rest[cut + 1 :]
        toks = _tokenize(rest, lineno, start)
        eqs = [k for k, t in enumerate(toks) if t.text == "="]
        if len(eqs) != 1:
            raise PresentationError("a relation needs exactly one '='", lineno, start + 1)
        k = eqs[0]
        if k == 0 or k == len(toks) - 1:
            raise PresentationError("empty side in relation", lineno, toks[k].col)
        lhs = _ExprParser(toks[:k], lineno, symbols).parse()
        rhs = _ExprParser(toks[k + 1 :], lineno, symbols).parse()
        if not label:
            label = rest.strip()
        relations.append(RelationEq(lhs, rhs, label))
        try:
            arities = {g.name: g.arity for g in gens}
            a, b = expr_arity(lhs, arities), expr_arity(rhs, arities)
        except PresentationError as exc:
            raise PresentationError(str(exc), lineno) from None
        if a != b:
            raise PresentationError(
                f"arity mismatch in relation: {a[0]}->{a[1]} vs {b[0]}->{b[1]}", lineno
            )

    if kind is None:
        raise PresentationError("missing 'structure' line")
    return validate(Presentation(name, kind, gens, relations, scalars, monoidal))


# ---------------------------------------------------------------------------
# serialization


def _fmt_float(v):
    return repr(float(v))


def format_expr(expr: RelExpr, pres: Presentation | None = None) -> str:
    """Render an expression in the source grammar (fully parenthesized where needed)."""
    if isinstance(expr, Gen):
        return expr.name
    if isinstance(expr, InvGen):
        return f"inv({expr.name})"
    if isinstance(expr, Identity):
        return "id" if expr.blocks == 1 else f"id^{expr.blocks}"
    if isinstance(expr, Place):
        return f"place({expr.name}, {expr.index}, {expr.strands})"
    if isinstance(expr, Compose):
        return f"({format_expr(expr.outer)} * {format_expr(expr.inner)})"
    if isinstance(expr, Product):
        return f"({format_expr(expr.left)} x {format_expr(expr.right)})"
    if isinstance(expr, Sum):
        return f"({format_expr(expr.left)} + {format_expr(expr.right)})"
    if isinstance(expr, Scale):
        coef = expr.coef if isinstance(expr.coef, str) else _fmt_float(expr.coef)
        return f"{coef} ({format_expr(expr.expr)})"
    raise TypeError(expr)


def serialize(pres: Presentation) -> str:
    kind = {"associative-algebra": "algebra", "lie-algebra": "lie"}.get(pres.kind, pres.kind)
    lines = [f"name {pres.name}", f"structure {kind}", f"product {pres.monoidal}"]
    for nm, v in pres.scalars.items():
        lines.append(f"scalar {nm} = {_fmt_float(v)}")
    for g in pres.generators:
        s = f"generator {g.name} arity {g.arity[0]}->{g.arity[1]}"
        if g.invertible:
            s += f" invertible {g.inverse_name}"
        lines.append(s)
    for r in pres.relations:
        lines.append(f"relation {r.label}: {format_expr(r.lhs)} = {format_expr(r.rhs)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# built-in systems

BUILTINS = ("braid", "temperley_lieb", "yang_baxter", "rt_system")

_BRAID = """\
name braid
structure group
generator f arity 2->2 invertible g
relation f∘g=id: f * g = id^2
relation g∘f=id: g * f = id^2
relation set-theoretic Yang Baxter: (f x id) * (id x f) * (f x id) = (id x f) * (f x id) * (id x f)
"""

_TL = """\
name temperley_lieb
structure algebra
scalar delta = {delta!r}
generator U arity 2->2
relation U_1 U_2 U_1 = U_1: place(U,1,3) * place(U,2,3) * place(U,1,3) = place(U,1,3)
relation U_2 U_1 U_2 = U_2: place(U,2,3) * place(U,1,3) * place(U,2,3) = place(U,2,3)
relation U^2 = delta U: U * U = delta U
"""

_YB = """\
name yang_baxter
structure group
generator R arity 2->2 invertible R_inv
relation Yang Baxter: (R x id) * (id x R) * (R x id) = (id x R) * (R x id) * (id x R)
relation R∘R⁻¹=id: R * R_inv = id^2
relation R⁻¹∘R=id: R_inv * R = id^2
"""

_RT = """\
name rt_system
structure custom
product tensor
generator R arity 2->2 invertible R_inv
generator n arity 2->0
generator u arity 0->2
relation n.R = n: n * R = n
relation R⊗R⁻¹=id_{V⊗V}: R * R_inv = id^2
relation R⁻¹⊗R=id_{V⊗V}: R_inv * R = id^2
relation Yang Baxter: (R x id) * (id x R) * (R x id) = (id x R) * (R x id) * (id x R)
relation (id_V⊗n)(R⊗id_V)=(n⊗id_V)(id_V⊗R): (id x n) * (R x id) = (n x id) * (id x R)
relation (id_V⊗n)(u⊗id_V)=id_V: (id x n) * (u x id) = id
relation (n⊗id_V)(id_V⊗u)=id_V: (n x id) * (id x u) = id
"""

# labels shared with the diagram code
RT_LABELS = {
    "cap_invariance": "n.R = n",
    "r_rinv": "R⊗R⁻¹=id_{V⊗V}",
    "rinv_r": "R⁻¹⊗R=id_{V⊗V}",
    "yang_baxter": "Yang Baxter",
    "slide": "(id_V⊗n)(R⊗id_V)=(n⊗id_V)(id_V⊗R)",
    "zigzag_left": "(id_V⊗n)(u⊗id_V)=id_V",
    "zigzag_right": "(n⊗id_V)(id_V⊗u)=id_V",
}


def builtin(name: str, params: dict | None = None) -> Presentation:
    """Return one of the built-in study systems as a validated presentation."""
    params = dict(params or {})
    if name == "braid":
        src = _BRAID
    elif name == "temperley_lieb":
        if params.get("delta") is None:
            raise PresentationError("temperley_lieb needs the scalar 'delta'")
        src = _TL.format(delta=float(params["delta"]))
    elif name == "yang_baxter":
        src = _YB
    elif name == "rt_system":
        src = _RT
    else:
        raise PresentationError(f"unknown builtin {name!r}; choose from {', '.join(BUILTINS)}")
    return parse_presentation(src, name=name)


def _symbol_table(pres: Presentation):
    symbols = {nm: ("scalar", nm) for nm in pres.scalars}
    for g in pres.generators:
        symbols[g.name] = ("gen", g.name)
        if g.invertible:
            symbols[g.inverse_name] = ("inv", g.name)
    return symbols


def parse_relation(pres: Presentation, text: str, label: str | None = None) -> RelationEq:
    """Parse ``"<expr> = <expr>"`` against the symbols of ``pres``."""
    toks = _tokenize(text, 1, 0)
    eqs = [k for k, t in enumerate(toks) if t.text == "="]
    if len(eqs) != 1 or eqs[0] in (0, len(toks) - 1):
        raise PresentationError(f"expected '<expr> = <expr>', got {text!r}")
    k = eqs[0]
    symbols = _symbol_table(pres)
    lhs = _ExprParser(toks[:k], 1, symbols).parse()
    rhs = _ExprParser(toks[k + 1 :], 1, symbols).parse()
    arities = {g.name: g.arity for g in pres.generators}
    if expr_arity(lhs, arities) != expr_arity(rhs, arities):
        raise PresentationError(f"arity mismatch in relation {text!r}")
    return RelationEq(lhs, rhs, label or text.strip())

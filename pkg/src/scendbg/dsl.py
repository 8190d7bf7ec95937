"""Scenario language: lexer, recursive-descent parser, validator and emitter.

A scenario file is a sequence of line-oriented statements::

    param time = uniform(360, 1080)
    param weather = choice("CLEAR", "RAIN")
    ego = car(x: 0, y: 0, heading: 0)
    otherCar = car(x: uniform(-1.5, 1.5), y: uniform(5, 20))
    require dist(ego, otherCar) >= 5

Omitted object fields fall back to the uniform ranges of the simulator
feature table (heading in [0, 360), any car model, colour channels in
[0, 255]).  The full grammar lives in ``docs/grammar.md``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Union

CAR_MODELS = (
    "BLISTA", "BUS", "NINEF", "ASEA", "BALLER", "BISON", "BUFFALO",
    "BOBCATXL", "DOMINATOR", "GRANGER", "JACKAL", "ORACLE", "PATRIOT", "PRANGER",
)
WEATHERS = (
    "NEUTRAL", "CLEAR", "EXTRASUNNY", "SMOG", "CLOUDS", "OVERCAST", "RAIN",
    "THUNDER", "CLEARING", "XMAS", "FOGGY", "SNOWLIGHT", "BLIZZARD", "SNOW",
)

OBJECT_FIELDS = ("x", "y", "heading", "model", "colorR", "colorG", "colorB")
BUILTINS = ("dist", "headingDiff", "visibleFrom")
DIST_FUNCS = ("uniform", "range", "choice")
KEYWORDS = ("param", "require", "and", "in", "car")


class ScenarioSyntaxError(SyntaxError):
    """Malformed scenario text; carries 1-based ``line`` and ``column``."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.message = message
        self.line = line
        self.column = column
        self.lineno = line
        self.offset = column


class ValidationError(ValueError):
    """Well-formed but semantically invalid program."""

    def __init__(self, message: str, identifier: str | None = None):
        super().__init__(message)
        self.identifier = identifier


# ---------------------------------------------------------------- distributions

@dataclass(frozen=True)
class UniformReal:
    lo: float
    hi: float


@dataclass(frozen=True)
class UniformInt:
    lo: int
    hi: int


@dataclass(frozen=True)
class Categorical:
    values: tuple[str, ...]


@dataclass(frozen=True)
class Constant:
    value: Union[float, int, str]


Distribution = Union[UniformReal, UniformInt, Categorical, Constant]


# ---------------------------------------------------------------- expressions

@dataclass(frozen=True)
class Num:
    value: Union[int, float]


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Ref:
    """Reference to a param (``time``) or an object field (``ego.x``)."""
    name: str


@dataclass(frozen=True)
class Draw:
    """An inline distribution; every evaluation draws afresh."""
    dist: Distribution


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple[str, ...]


@dataclass(frozen=True)
class Compare:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class InSet:
    operand: "Expr"
    values: tuple[str, ...]


@dataclass(frozen=True)
class And:
    terms: tuple["Expr", ...]


Expr = Union[Num, Str, Ref, Draw, Neg, BinOp, Call, Compare, InSet, And]


# ---------------------------------------------------------------- declarations

@dataclass(frozen=True)
class ParamDecl:
    name: str
    dist: Distribution


@dataclass(frozen=True)
class ObjectDecl:
    name: str
    x: Expr
    y: Expr
    heading: Expr
    model: Distribution
    color: tuple[Distribution, Distribution, Distribution]


@dataclass(frozen=True)
class ScenarioProgram:
    params: tuple[ParamDecl, ...] = ()
    objects: tuple[ObjectDecl, ...] = ()
    requires: tuple[Expr, ...] = ()
    source_text: str = field(default="", compare=False)

    def object_names(self) -> list[str]:
        return [o.name for o in self.objects]

    def with_requires(self, extra) -> "ScenarioProgram":
        return ScenarioProgram(self.params, self.objects,
                               self.requires + tuple(extra), "")


@dataclass(frozen=True)
class FeatureDescriptor:
    """One column of the feature vector.

    ``domain`` is ``(lo, hi)`` for numeric kinds (bounds may be infinite when
    a field is a computed expression) and the tuple of values for categorical.
    """
    name: str
    kind: str  # "real" | "integer" | "categorical"
    domain: tuple
    derived: bool = False


# ---------------------------------------------------------------- lexer

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<string>"[^"\n]*")
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><=|>=|==|[-+*/(),:.{}<>=])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ScenarioSyntaxError(f"unexpected character {source[pos]!r}",
                                      line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "newline":
            tokens.append(Token("newline", "\n", line, col))
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            if kind == "ident" and m.group() in KEYWORDS:
                kind = "keyword"
            tokens.append(Token(kind, m.group(), line, col))
        pos = m.end()
    tokens.append(Token("newline", "\n", line, pos - line_start + 1))
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------- parser

class _Parser:
    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        found = tok.text if tok.kind not in ("newline", "eof") else tok.kind
        raise ScenarioSyntaxError(f"{message}, found {found!r}", tok.line, tok.column)

    def accept(self, text: str) -> bool:
        if self.tok.text == text and self.tok.kind in ("op", "keyword", "ident"):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        tok = self.tok
        if not self.accept(text):
            self.error(f"expected {text!r}")
        return tok

    def expect_kind(self, kind: str) -> Token:
        tok = self.tok
        if tok.kind != kind:
            self.error(f"expected {kind}")
        self.i += 1
        return tok

    # statements

    def program(self, source: str) -> ScenarioProgram:
        params, objects, requires = [], [], []
        while self.tok.kind != "eof":
            if self.tok.kind == "newline":
                self.i += 1
                continue
            if self.accept("param"):
                name = self.expect_kind("ident").text
                self.expect("=")
                params.append(ParamDecl(name, self.distribution()))
            elif self.accept("require"):
                requires.append(self.bool_expr())
            elif self.tok.kind == "ident":
                objects.append(self.object_decl())
            else:
                self.error("expected a statement")
            if self.tok.kind != "newline":
                self.error("expected end of line")
        return ScenarioProgram(tuple(params), tuple(objects), tuple(requires), source)

    def object_decl(self) -> ObjectDecl:
        name_tok = self.expect_kind("ident")
        self.expect("=")
        self.expect("car")
        self.expect("(")
        fields: dict = {}
        if not self.accept(")"):
            while True:
                ftok = self.expect_kind("ident")
                if ftok.text in fields:
                    self.error(f"duplicate field {ftok.text!r}", ftok)
                self.expect(":")
                if ftok.text in ("x", "y", "heading"):
                    fields[ftok.text] = self.expr()
                elif ftok.text == "model":
                    fields["model"] = self.distribution()
                elif ftok.text == "color":
                    self.expect("(")
                    chans = [self.distribution()]
                    for _ in range(2):
                        self.expect(",")
                        chans.append(self.distribution())
                    self.expect(")")
                    fields["color"] = tuple(chans)
                else:
                    self.error("unknown car field", ftok)
                if self.accept(")"):
                    break
                self.expect(",")
        for required in ("x", "y"):
            if required not in fields:
                raise ScenarioSyntaxError(f"car {name_tok.text!r} needs a {required!r} field",
                                          name_tok.line, name_tok.column)
        return ObjectDecl(
            name=name_tok.text,
            x=fields["x"],
            y=fields["y"],
            heading=fields.get("heading", Draw(UniformReal(0.0, 360.0))),
            model=fields.get("model", Categorical(CAR_MODELS)),
            color=fields.get("color", (UniformInt(0, 255),) * 3),
        )

    # distributions

    def distribution(self) -> Distribution:
        tok = self.tok
        if tok.kind == "string":
            self.i += 1
            return Constant(tok.text[1:-1])
        if tok.kind == "ident" and tok.text in DIST_FUNCS and self.tokens[self.i + 1].text == "(":
            return self.dist_call()
        if tok.text == "(":
            # Scenic's interval shorthand: (lo, hi)
            self.i += 1
            lo = self.const_number()
            self.expect(",")
            hi = self.const_number()
            self.expect(")")
            return self.make_uniform(float(lo), float(hi), tok)
        return Constant(self.const_number())

    def dist_call(self) -> Distribution:
        tok = self.expect_kind("ident")
        self.expect("(")
        if tok.text == "choice":
            values = [self.expect_kind("string").text[1:-1]]
            while self.accept(","):
                values.append(self.expect_kind("string").text[1:-1])
            self.expect(")")
            if len(set(values)) != len(values):
                raise ScenarioSyntaxError("choice values must be distinct", tok.line, tok.column)
            return Categorical(tuple(values))
        lo = self.const_number()
        self.expect(",")
        hi = self.const_number()
        self.expect(")")
        if tok.text == "range":
            if lo != int(lo) or hi != int(hi):
                raise ScenarioSyntaxError("range bounds must be integers", tok.line, tok.column)
            if lo > hi:
                raise ScenarioSyntaxError("range needs lo <= hi", tok.line, tok.column)
            return UniformInt(int(lo), int(hi))
        return self.make_uniform(float(lo), float(hi), tok)

    @staticmethod
    def make_uniform(lo: float, hi: float, tok: Token) -> UniformReal:
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
            raise ScenarioSyntaxError("uniform needs finite lo < hi", tok.line, tok.column)
        return UniformReal(lo, hi)

    def const_number(self) -> Union[int, float]:
        tok = self.tok
        value = _fold_constant(self.expr())
        if value is None:
            raise ScenarioSyntaxError("expected a constant number", tok.line, tok.column)
        return value

    # expressions

    def bool_expr(self) -> Expr:
        terms = [self.comparison()]
        while self.accept("and"):
            terms.append(self.comparison())
        return terms[0] if len(terms) == 1 else And(tuple(terms))

    def comparison(self) -> Expr:
        left = self.expr()
        op = self.tok.text if self.tok.kind == "op" else None
        if op in ("<", "<=", ">", ">=", "=="):
            self.i += 1
            return Compare(op, left, self.expr())
        if self.accept("in"):
            self.expect("{")
            values = [self.expect_kind("string").text[1:-1]]
            while self.accept(","):
                values.append(self.expect_kind("string").text[1:-1])
            self.expect("}")
            return InSet(left, tuple(values))
        return left

    def expr(self) -> Expr:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.i += 1
            operand = self.unary()
            if isinstance(operand, Num):
                return Num(-operand.value)
            return Neg(operand)
        return self.atom()

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "number":
            self.i += 1
            text = tok.text
            if re.fullmatch(r"\d+", text):
                return Num(int(text))
            return Num(float(text))
        if tok.kind == "string":
            self.i += 1
            return Str(tok.text[1:-1])
        if tok.text == "(" and tok.kind == "op":
            self.i += 1
            inner = self.expr()
            self.expect(")")
            return inner
        if tok.kind == "ident":
            nxt = self.tokens[self.i + 1]
            if tok.text in DIST_FUNCS and nxt.text == "(":
                return Draw(self.dist_call())
            if tok.text in BUILTINS and nxt.text == "(":
                self.i += 2
                args = [self.expect_kind("ident").text]
                while self.accept(","):
                    args.append(self.expect_kind("ident").text)
                self.expect(")")
                if len(args) != 2:
                    raise ScenarioSyntaxError(f"{tok.text} takes two objects", tok.line, tok.column)
                return Call(tok.text, tuple(args))
            self.i += 1
            if self.accept("."):
                attr = self.expect_kind("ident").text
                return Ref(f"{tok.text}.{attr}")
            return Ref(tok.text)
        self.error("expected an expression")


def _fold_constant(e: Expr):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Neg):
        v = _fold_constant(e.operand)
        return None if v is None else -v
    if isinstance(e, BinOp):
        a, b = _fold_constant(e.left), _fold_constant(e.right)
        if a is None or b is None:
            return None
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if b == 0:
            return None
        return a / b
    return None


# ---------------------------------------------------------------- validation

def _walk(e: Expr) -> Iterator[Expr]:
    yield e
    if isinstance(e, Neg):
        yield from _walk(e.operand)
    elif isinstance(e, (BinOp, Compare)):
        yield from _walk(e.left)
        yield from _walk(e.right)
    elif isinstance(e, InSet):
        yield from _walk(e.operand)
    elif isinstance(e, And):
        for t in e.terms:
            yield from _walk(t)


def _dist_kind(d: Distribution) -> str:
    if isinstance(d, Categorical):
        return "categorical"
    if isinstance(d, Constant):
        return "categorical" if isinstance(d.value, str) else "real"
    return "real"


class _Checker:
    def __init__(self):
        self.types: dict[str, str] = {}
        self.objects: list[str] = []

    def type_of(self, e: Expr) -> str:
        if isinstance(e, Num):
            return "real"
        if isinstance(e, Str):
            return "categorical"
        if isinstance(e, Draw):
            return _dist_kind(e.dist)
        if isinstance(e, Ref):
            if e.name not in self.types:
                raise ValidationError(f"undeclared identifier {e.name!r}", e.name)
            return self.types[e.name]
        if isinstance(e, Neg):
            self.want(e.operand, "real", "-")
            return "real"
        if isinstance(e, BinOp):
            self.want(e.left, "real", e.op)
            self.want(e.right, "real", e.op)
            return "real"
        if isinstance(e, Call):
            for arg in e.args:
                if arg not in self.objects:
                    raise ValidationError(f"{e.func} argument {arg!r} is not a declared object", arg)
            return "bool" if e.func == "visibleFrom" else "real"
        if isinstance(e, Compare):
            lt, rt = self.type_of(e.left), self.type_of(e.right)
            if e.op == "==":
                if lt != rt or lt == "bool":
                    raise ValidationError(f"cannot compare {lt} with {rt}")
            else:
                if lt != "real" or rt != "real":
                    raise ValidationError(f"operator {e.op} needs numeric operands, got {lt} and {rt}")
            return "bool"
        if isinstance(e, InSet):
            self.want(e.operand, "categorical", "in")
            return "bool"
        if isinstance(e, And):
            for t in e.terms:
                self.want(t, "bool", "and")
            return "bool"
        raise TypeError(e)

    def want(self, e: Expr, kind: str, ctx: str):
        got = self.type_of(e)
        if got != kind:
            raise ValidationError(f"{ctx} expects {kind}, got {got}")


def validate(p: ScenarioProgram) -> ScenarioProgram:
    """Check declaration order, uniqueness and typing; return ``p`` unchanged."""
    chk = _Checker()
    for prm in p.params:
        if prm.name in chk.types or prm.name in BUILTINS:
            raise ValidationError(f"duplicate identifier {prm.name!r}", prm.name)
        chk.types[prm.name] = _dist_kind(prm.dist)
        _check_dist(prm.dist, prm.name)
    if not p.objects or p.objects[0].name != "ego":
        raise ValidationError("program must declare `ego` as its first object", "ego")
    for obj in p.objects:
        if obj.name in chk.objects or obj.name in chk.types or obj.name in BUILTINS:
            raise ValidationError(f"duplicate identifier {obj.name!r}", obj.name)
        for fname in ("x", "y", "heading"):
            chk.want(getattr(obj, fname), "real", f"{obj.name}.{fname}")
            for node in _walk(getattr(obj, fname)):
                if isinstance(node, Draw):
                    _check_dist(node.dist, f"{obj.name}.{fname}")
        if _dist_kind(obj.model) != "categorical":
            raise ValidationError(f"{obj.name}.model must be categorical", f"{obj.name}.model")
        for chan, d in zip("RGB", obj.color):
            if _dist_kind(d) != "real":
                raise ValidationError(f"{obj.name}.color{chan} must be numeric", f"{obj.name}.color{chan}")
            _check_dist(d, f"{obj.name}.color{chan}")
        chk.objects.append(obj.name)
        for fname in OBJECT_FIELDS:
            chk.types[f"{obj.name}.{fname}"] = "categorical" if fname == "model" else "real"
    for req in p.requires:
        chk.want(req, "bool", "require")
    return p


def _check_dist(d: Distribution, owner: str):
    if isinstance(d, UniformReal) and not (math.isfinite(d.lo) and math.isfinite(d.hi) and d.lo < d.hi):
        raise ValidationError(f"{owner}: uniform needs finite lo < hi", owner)
    if isinstance(d, UniformInt) and d.lo > d.hi:
        raise ValidationError(f"{owner}: range needs lo <= hi", owner)
    if isinstance(d, Categorical) and (not d.values or len(set(d.values)) != len(d.values)):
        raise ValidationError(f"{owner}: choice values must be nonempty and distinct", owner)


def parse(source: str, check: bool = True) -> ScenarioProgram:
    """Parse scenario text; with ``check`` the result is validated too."""
    prog = _Parser(source).program(source)
    return validate(prog) if check else prog


def load(path) -> ScenarioProgram:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


# ---------------------------------------------------------------- schema

def _interval(e: Expr, bounds: dict[str, tuple]) -> tuple[float, float]:
    inf = math.inf
    if isinstance(e, Num):
        return (float(e.value), float(e.value))
    if isinstance(e, Ref):
        return bounds.get(e.name, (-inf, inf))
    if isinstance(e, Draw):
        d = e.dist
        if isinstance(d, (UniformReal, UniformInt)):
            return (float(d.lo), float(d.hi))
        if isinstance(d, Constant) and not isinstance(d.value, str):
            return (float(d.value), float(d.value))
        return (-inf, inf)
    if isinstance(e, Neg):
        lo, hi = _interval(e.operand, bounds)
        return (-hi, -lo)
    if isinstance(e, Call) and e.func == "dist":
        return (0.0, inf)
    if isinstance(e, Call) and e.func == "headingDiff":
        return (0.0, 180.0)
    if isinstance(e, BinOp):
        a, b = _interval(e.left, bounds), _interval(e.right, bounds)
        if e.op == "+":
            return (a[0] + b[0], a[1] + b[1])
        if e.op == "-":
            return (a[0] - b[1], a[1] - b[0])
        if e.op == "*":
            prods = [v for v in (x * y for x in a for y in b) if not math.isnan(v)]
            return (min(prods), max(prods)) if len(prods) == 4 else (-inf, inf)
        return (-inf, inf)
    return (-inf, inf)


def _dist_descriptor(name: str, d: Distribution) -> FeatureDescriptor:
    if isinstance(d, UniformReal):
        return FeatureDescriptor(name, "real", (d.lo, d.hi))
    if isinstance(d, UniformInt):
        return FeatureDescriptor(name, "integer", (d.lo, d.hi))
    if isinstance(d, Categorical):
        return FeatureDescriptor(name, "categorical", d.values)
    if isinstance(d.value, str):
        return FeatureDescriptor(name, "categorical", (d.value,))
    kind = "integer" if isinstance(d.value, int) else "real"
    return FeatureDescriptor(name, kind, (d.value, d.value))


def _expr_descriptor(name: str, e: Expr, bounds: dict) -> FeatureDescriptor:
    if isinstance(e, Draw):
        return _dist_descriptor(name, e.dist)
    if isinstance(e, Num) and isinstance(e.value, int):
        return FeatureDescriptor(name, "integer", (e.value, e.value))
    return FeatureDescriptor(name, "real", _interval(e, bounds))


def feature_schema(p: ScenarioProgram) -> list[FeatureDescriptor]:
    """Ordered feature descriptors: params, object fields, then derived features."""
    out: list[FeatureDescriptor] = []
    bounds: dict[str, tuple] = {}
    for prm in p.params:
        desc = _dist_descriptor(prm.name, prm.dist)
        out.append(desc)
        if desc.kind != "categorical":
            bounds[prm.name] = tuple(map(float, desc.domain))
    for obj in p.objects:
        for fname in ("x", "y"):
            desc = _expr_descriptor(f"{obj.name}.{fname}", getattr(obj, fname), bounds)
            out.append(desc)
            bounds[desc.name] = tuple(map(float, desc.domain))
        # headings are wrapped into [0, 360) at sampling time
        hd = obj.heading
        if isinstance(hd, Draw) and isinstance(hd.dist, UniformReal) and 0 <= hd.dist.lo and hd.dist.hi <= 360:
            desc = FeatureDescriptor(f"{obj.name}.heading", "real", (hd.dist.lo, hd.dist.hi))
        elif isinstance(hd, Num) and 0 <= hd.value < 360:
            desc = FeatureDescriptor(f"{obj.name}.heading", "real", (float(hd.value), float(hd.value)))
        else:
            desc = FeatureDescriptor(f"{obj.name}.heading", "real", (0.0, 360.0))
        out.append(desc)
        bounds[desc.name] = desc.domain
        out.append(_dist_descriptor(f"{obj.name}.model", obj.model))
        for chan, d in zip("RGB", obj.color):
            desc = _dist_descriptor(f"{obj.name}.color{chan}", d)
            out.append(desc)
    for obj in p.objects[1:]:
        out.append(FeatureDescriptor(f"dist(ego,{obj.name})", "real", (0.0, math.inf), True))
        out.append(FeatureDescriptor(f"headingDiff(ego,{obj.name})", "real", (0.0, 180.0), True))
    return out


# ---------------------------------------------------------------- emitter

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_num(v) -> str:
    if isinstance(v, bool):
        raise TypeError(v)
    if isinstance(v, int):
        return str(v)
    if v == int(v) and abs(v) < 1e15:
        return f"{v:.1f}"
    return repr(float(v))


def _fmt_str(s: str) -> str:
    return f'"{s}"'


def emit_dist(d: Distribution) -> str:
    if isinstance(d, UniformReal):
        return f"uniform({_fmt_num(float(d.lo))}, {_fmt_num(float(d.hi))})"
    if isinstance(d, UniformInt):
        return f"range({d.lo}, {d.hi})"
    if isinstance(d, Categorical):
        return "choice(" + ", ".join(_fmt_str(v) for v in d.values) + ")"
    if isinstance(d.value, str):
        return _fmt_str(d.value)
    return _fmt_num(d.value)


def emit_expr(e: Expr, prec: int = 0) -> str:
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Str):
        return _fmt_str(e.value)
    if isinstance(e, Ref):
        return e.name
    if isinstance(e, Draw):
        if isinstance(e.dist, Constant):
            raise TypeError("constant draws are written as literals")
        return emit_dist(e.dist)
    if isinstance(e, Neg):
        return "-" + emit_expr(e.operand, 3)
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        text = f"{emit_expr(e.left, p)} {e.op} {emit_expr(e.right, p + 1)}"
        return f"({text})" if p < prec else text
    if isinstance(e, Call):
        return f"{e.func}({', '.join(e.args)})"
    if isinstance(e, Compare):
        return f"{emit_expr(e.left)} {e.op} {emit_expr(e.right)}"
    if isinstance(e, InSet):
        return f"{emit_expr(e.operand)} in {{{', '.join(_fmt_str(v) for v in e.values)}}}"
    if isinstance(e, And):
        return " and ".join(emit_expr(t) for t in e.terms)
    raise TypeError(e)


def emit(p: ScenarioProgram) -> str:
    """Canonical text of ``p``: params, then objects with every field, then requires."""
    lines = [f"param {prm.name} = {emit_dist(prm.dist)}" for prm in p.params]
    for obj in p.objects:
        color = ", ".join(emit_dist(d) for d in obj.color)
        lines.append(
            f"{obj.name} = car(x: {emit_expr(obj.x)}, y: {emit_expr(obj.y)}, "
            f"heading: {emit_expr(obj.heading)}, model: {emit_dist(obj.model)}, "
            f"color: ({color}))"
        )
    lines.extend(f"require {emit_expr(r)}" for r in p.requires)
    return "\n".join(lines) + "\n"

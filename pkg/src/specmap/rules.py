"""Spectral decision-rule language: AST, parser, formatter and evaluator.

Rule file grammar (``//`` starts a comment; ``#`` is reserved for colors):

    file        := item*
    item        := bands-decl | policy-decl | rule | class-decl | fallback
    bands-decl  := 'bands' ':' BAND '@' NUMBER (',' BAND '@' NUMBER)*
    policy-decl := 'policy' ('last-match' | 'first-match')
    rule        := 'rule' INT STRING 'color' COLOR '{' or-expr '}'
    class-decl  := 'class' INT STRING 'color' COLOR      // ruleless legend entry
    fallback    := 'fallback' INT STRING ['color' COLOR]
    or-expr     := and-expr ('OR' and-expr)*
    and-expr    := primary ('AND' primary)*
    primary     := 'requires' '(' BAND ',' or-expr ')'
                 | '(' or-expr ')'
                 | comparison
    comparison  := num-expr (CMP num-expr)+               // chains desugar to AND
    num-expr    := term (('+' | '-') term)*
    term        := atom ('/' atom)*
    atom        := NUMBER | BAND | '(' num-expr ')'

A ``requires(bK, clause)`` guard marks a clause as in use only when band bK
is supplied.  When the band is absent the clause drops out of its enclosing
conjunction (contributes true) or disjunction (contributes false); a rule
whose whole body drops out never fires.
"""

from __future__ import annotations

import importlib.resources
import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Union

import numpy as np

from .errors import ConfigError, RuleSyntaxError

#: Ratios whose denominator magnitude falls below this make the enclosing
#: comparison false: a zero-reflectance denominator has no physical ratio.
DIV_EPS = 1e-9

MATCH_POLICIES = ("last-match", "first-match")


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BandRef:
    symbol: str


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Ratio:
    num: "NumExpr"
    den: "NumExpr"


@dataclass(frozen=True)
class Sum:
    left: "NumExpr"
    right: "NumExpr"


@dataclass(frozen=True)
class Diff:
    left: "NumExpr"
    right: "NumExpr"


NumExpr = Union[BandRef, Const, Ratio, Sum, Diff]

_CMP_OPS = ("<=", ">=", "<", ">")


@dataclass(frozen=True)
class Cmp:
    left: NumExpr
    op: str
    right: NumExpr

    def __post_init__(self):
        if self.op not in _CMP_OPS:
            raise ConfigError(f"unknown comparison operator {self.op!r}")


@dataclass(frozen=True)
class And:
    children: tuple


@dataclass(frozen=True)
class Or:
    children: tuple


@dataclass(frozen=True)
class RequiresBand:
    symbol: str
    child: "BoolExpr"


BoolExpr = Union[Cmp, And, Or, RequiresBand]


def make_and(children: Iterable) -> BoolExpr:
    """Conjunction with nested-And flattening; a single child collapses."""
    flat = []
    for c in children:
        if isinstance(c, And):
            flat.extend(c.children)
        else:
            flat.append(c)
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def make_or(children: Iterable) -> BoolExpr:
    flat = []
    for c in children:
        if isinstance(c, Or):
            flat.extend(c.children)
        else:
            flat.append(c)
    if len(flat) == 1:
        return flat[0]
    return Or(tuple(flat))


def referenced_bands(expr) -> frozenset[str]:
    """Every band symbol the expression mentions, guarded or not."""
    out: set[str] = set()
    _walk_bands(expr, out, required_only=False)
    return frozenset(out)


def required_bands(expr) -> frozenset[str]:
    """Band symbols referenced outside any requires() guard."""
    out: set[str] = set()
    _walk_bands(expr, out, required_only=True)
    return frozenset(out)


def _walk_bands(node, out: set, required_only: bool) -> None:
    if isinstance(node, BandRef):
        out.add(node.symbol)
    elif isinstance(node, (Ratio,)):
        _walk_bands(node.num, out, required_only)
        _walk_bands(node.den, out, required_only)
    elif isinstance(node, (Sum, Diff)):
        _walk_bands(node.left, out, required_only)
        _walk_bands(node.right, out, required_only)
    elif isinstance(node, Cmp):
        _walk_bands(node.left, out, required_only)
        _walk_bands(node.right, out, required_only)
    elif isinstance(node, (And, Or)):
        for c in node.children:
            _walk_bands(c, out, required_only)
    elif isinstance(node, RequiresBand):
        if not required_only:
            out.add(node.symbol)
            _walk_bands(node.child, out, required_only)


def guard_bands(expr) -> frozenset[str]:
    """Band symbols appearing as requires() guards anywhere in the expression."""
    out: set[str] = set()

    def walk(node):
        if isinstance(node, RequiresBand):
            out.add(node.symbol)
            walk(node.child)
        elif isinstance(node, (And, Or)):
            for c in node.children:
                walk(c)

    walk(expr)
    return frozenset(out)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _eval_num(node, bands: Mapping[str, object]):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, BandRef):
        try:
            return bands[node.symbol]
        except KeyError:
            raise ConfigError(f"band {node.symbol} not supplied") from None
    if isinstance(node, Ratio):
        num = _eval_num(node.num, bands)
        den = _eval_num(node.den, bands)
        if isinstance(den, np.ndarray) or isinstance(num, np.ndarray):
            den = np.asarray(den, dtype=np.float64)
            ok = np.abs(den) >= DIV_EPS
            with np.errstate(divide="ignore", invalid="ignore"):
                q = np.asarray(num, dtype=np.float64) / np.where(ok, den, 1.0)
            return np.where(ok, q, np.nan)
        return num / den if abs(den) >= DIV_EPS else math.nan
    if isinstance(node, Sum):
        return _eval_num(node.left, bands) + _eval_num(node.right, bands)
    if isinstance(node, Diff):
        return _eval_num(node.left, bands) - _eval_num(node.right, bands)
    raise ConfigError(f"not a numeric expression node: {node!r}")


_CMP_FUNCS = {
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
}


def eval_expr(node, bands: Mapping[str, object]):
    """Evaluate a boolean expression over scalar or array band values.

    Returns a bool / bool array, or None when the whole expression is
    guarded by bands that are absent from ``bands``.
    """
    if isinstance(node, Cmp):
        left = _eval_num(node.left, bands)
        right = _eval_num(node.right, bands)
        with np.errstate(invalid="ignore"):
            result = _CMP_FUNCS[node.op](left, right)
        # NaN operands (guarded ratios) must fail the comparison.
        if not isinstance(result, np.ndarray):
            return bool(result)
        return result
    if isinstance(node, And):
        parts = [eval_expr(c, bands) for c in node.children]
        parts = [p for p in parts if p is not None]
        if not parts:
            return None
        out = parts[0]
        for p in parts[1:]:
            out = np.logical_and(out, p) if _anyarray(out, p) else (out and p)
        return out
    if isinstance(node, Or):
        parts = [eval_expr(c, bands) for c in node.children]
        parts = [p for p in parts if p is not None]
        if not parts:
            return None
        out = parts[0]
        for p in parts[1:]:
            out = np.logical_or(out, p) if _anyarray(out, p) else (out or p)
        return out
    if isinstance(node, RequiresBand):
        if node.symbol not in bands:
            return None
        return eval_expr(node.child, bands)
    raise ConfigError(f"not a boolean expression node: {node!r}")


def _anyarray(a, b) -> bool:
    return isinstance(a, np.ndarray) or isinstance(b, np.ndarray)


def eval_rule(expr, pixel: Mapping[str, float]) -> bool:
    """True iff the rule body holds for one pixel's band values."""
    result = eval_expr(expr, pixel)
    if result is None:
        return False
    return bool(result)


# ---------------------------------------------------------------------------
# Rule set model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    index: int
    name: str
    expr: BoolExpr
    pseudo_color: tuple[int, int, int]

    @property
    def optional_bands(self) -> frozenset[str]:
        return guard_bands(self.expr)


@dataclass(frozen=True)
class RulelessClass:
    """Legend entry declared without an expression; never matched."""

    index: int
    name: str
    pseudo_color: tuple[int, int, int]


@dataclass(frozen=True)
class RuleSet:
    declared_bands: tuple[tuple[str, float], ...]  # (symbol, wavelength um)
    rules: tuple[Rule, ...]
    ruleless: tuple[RulelessClass, ...]
    fallback_index: int
    fallback_name: str
    fallback_color: tuple[int, int, int]
    match_policy: str = "last-match"

    def __post_init__(self):
        if not self.rules:
            raise ConfigError("a rule set needs at least one rule")
        if self.match_policy not in MATCH_POLICIES:
            raise ConfigError(f"unknown match policy {self.match_policy!r}")
        indices = [r.index for r in self.rules]
        indices += [c.index for c in self.ruleless]
        indices.append(self.fallback_index)
        if len(set(indices)) != len(indices):
            raise ConfigError("rule/class indices must be unique")
        declared = {s for s, _ in self.declared_bands}
        for rule in self.rules:
            unknown = referenced_bands(rule.expr) - declared
            if unknown:
                raise ConfigError(
                    f"rule {rule.index} references undeclared bands: "
                    + ", ".join(sorted(unknown))
                )

    @property
    def band_map(self) -> dict[str, float]:
        return dict(self.declared_bands)

    def required_bands(self) -> frozenset[str]:
        out: set[str] = set()
        for rule in self.rules:
            out |= required_bands(rule.expr)
        return frozenset(out)

    def legend_entries(self) -> tuple[tuple[int, str, tuple[int, int, int]], ...]:
        """(label, name, color) for every class, sorted by index."""
        entries = [(r.index, r.name, r.pseudo_color) for r in self.rules]
        entries += [(c.index, c.name, c.pseudo_color) for c in self.ruleless]
        entries.append((self.fallback_index, self.fallback_name, self.fallback_color))
        return tuple(sorted(entries))


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*)
  | (?P<color>\#[0-9a-fA-F]{6})
  | (?P<number>\d+\.\d*|\.\d+|\d+)
  | (?P<string>"[^"\n]*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|<|>|[(){}:,@/+\-])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    col: int


_EOF = _Token("eof", "<end of file>", 0, 0)


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, line_start = 1, 0
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise RuleSyntaxError(
                f"cannot tokenize {text[pos:pos + 10]!r}", line, pos - line_start + 1
            )
        kind = m.lastgroup
        tok = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(_Token(kind, tok, line, m.start() - line_start + 1))
        newlines = tok.count("\n")
        if newlines:
            line += newlines
            line_start = m.start() + tok.rfind("\n") + 1
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.declared: dict[str, float] = {}

    # -- token plumbing ----------------------------------------------------

    def _peek(self) -> _Token:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else _EOF

    def _next(self) -> _Token:
        tok = self._peek()
        self.pos += 1
        return tok

    def _error(self, message: str, tok: _Token | None = None):
        tok = tok or self._peek()
        raise RuleSyntaxError(f"{message}, got {tok.text!r}", tok.line, tok.col)

    def _expect(self, kind: str, text: str | None = None) -> _Token:
        tok = self._peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            self._error(f"expected {text or kind}")
        return self._next()

    def _accept(self, kind: str, text: str | None = None) -> _Token | None:
        tok = self._peek()
        if tok.kind == kind and (text is None or tok.text == text):
            return self._next()
        return None

    # -- file level ----------------------------------------------------------

    def parse_file(self) -> RuleSet:
        rules: list[Rule] = []
        ruleless: list[RulelessClass] = []
        fallback: tuple[int, str, tuple[int, int, int]] | None = None
        policy = "last-match"
        while self._peek() is not _EOF:
            tok = self._peek()
            if tok.kind != "ident":
                self._error("expected a declaration keyword")
            if tok.text == "bands":
                self._parse_bands_decl()
            elif tok.text == "policy":
                policy = self._parse_policy()
            elif tok.text == "rule":
                rules.append(self._parse_rule())
            elif tok.text == "class":
                ruleless.append(self._parse_class())
            elif tok.text == "fallback":
                if fallback is not None:
                    self._error("duplicate fallback declaration")
                fallback = self._parse_fallback()
            else:
                self._error("expected bands/policy/rule/class/fallback")
        if fallback is None:
            self._error("missing fallback declaration", _EOF)
        if not rules:
            raise RuleSyntaxError("rule file declares no rules", 1, 1)
        return RuleSet(
            declared_bands=tuple(self.declared.items()),
            rules=tuple(sorted(rules, key=lambda r: r.index)),
            ruleless=tuple(sorted(ruleless, key=lambda c: c.index)),
            fallback_index=fallback[0],
            fallback_name=fallback[1],
            fallback_color=fallback[2],
            match_policy=policy,
        )

    def _parse_bands_decl(self) -> None:
        self._expect("ident", "bands")
        self._expect("op", ":")
        while True:
            sym = self._expect("ident").text
            self._expect("op", "@")
            wav = float(self._expect("number").text)
            self.declared[sym] = wav
            if not self._accept("op", ","):
                break

    def _parse_policy(self) -> str:
        self._expect("ident", "policy")
        parts = [self._expect("ident").text]
        while self._accept("op", "-"):
            parts.append(self._expect("ident").text)
        policy = "-".join(parts)
        if policy not in MATCH_POLICIES:
            self._error(f"policy must be one of {MATCH_POLICIES}")
        return policy

    def _parse_color(self) -> tuple[int, int, int]:
        self._expect("ident", "color")
        tok = self._expect("color")
        v = int(tok.text[1:], 16)
        return ((v >> 16) & 0xFF, (v >> 8) & 0xFF, v & 0xFF)

    def _parse_rule(self) -> Rule:
        self._expect("ident", "rule")
        index = int(self._expect("number").text)
        name = self._expect("string").text[1:-1]
        color = self._parse_color()
        self._expect("op", "{")
        if self._peek().kind == "op" and self._peek().text == "}":
            self._error("empty rule body")
        expr = self._parse_or()
        self._expect("op", "}")
        return Rule(index, name, expr, color)

    def _parse_class(self) -> RulelessClass:
        self._expect("ident", "class")
        index = int(self._expect("number").text)
        name = self._expect("string").text[1:-1]
        color = self._parse_color()
        return RulelessClass(index, name, color)

    def _parse_fallback(self) -> tuple[int, str, tuple[int, int, int]]:
        self._expect("ident", "fallback")
        index = int(self._expect("number").text)
        name = self._expect("string").text[1:-1]
        color = (0, 0, 0)
        if self._peek().kind == "ident" and self._peek().text == "color":
            color = self._parse_color()
        return (index, name, color)

    # -- expressions ---------------------------------------------------------

    def _parse_or(self):
        children = [self._parse_and()]
        while self._accept("ident", "OR"):
            children.append(self._parse_and())
        return make_or(children)

    def _parse_and(self):
        children = [self._parse_primary()]
        while self._accept("ident", "AND"):
            children.append(self._parse_primary())
        return make_and(children)

    def _parse_primary(self):
        tok = self._peek()
        if tok.kind == "ident" and tok.text == "requires":
            self._next()
            self._expect("op", "(")
            sym = self._band_symbol()
            self._expect("op", ",")
            child = self._parse_or()
            self._expect("op", ")")
            return RequiresBand(sym, child)
        if tok.kind == "op" and tok.text == "(":
            # Try a boolean group first; fall back to a numeric comparison.
            save = self.pos
            try:
                self._next()
                node = self._parse_or()
                self._expect("op", ")")
                return node
            except RuleSyntaxError:
                self.pos = save
        return self._parse_comparison()

    def _parse_comparison(self):
        first = self._parse_num()
        tok = self._peek()
        if tok.kind != "op" or tok.text not in _CMP_OPS:
            self._error("expected a comparison operator")
        terms = [first]
        ops: list[str] = []
        while self._peek().kind == "op" and self._peek().text in _CMP_OPS:
            ops.append(self._next().text)
            terms.append(self._parse_num())
        # a <= x <= b desugars into (a <= x) AND (x <= b)
        comparisons = [
            Cmp(terms[i], ops[i], terms[i + 1]) for i in range(len(ops))
        ]
        return make_and(comparisons)

    def _band_symbol(self) -> str:
        tok = self._expect("ident")
        if tok.text not in self.declared:
            raise RuleSyntaxError(
                f"undeclared band symbol {tok.text!r}", tok.line, tok.col
            )
        return tok.text

    def _parse_num(self):
        node = self._parse_term()
        while True:
            if self._accept("op", "+"):
                node = Sum(node, self._parse_term())
            elif self._accept("op", "-"):
                node = Diff(node, self._parse_term())
            else:
                return node

    def _parse_term(self):
        node = self._parse_atom()
        while self._accept("op", "/"):
            node = Ratio(node, self._parse_atom())
        return node

    def _parse_atom(self):
        tok = self._peek()
        if tok.kind == "number":
            self._next()
            return Const(float(tok.text))
        if tok.kind == "ident":
            return BandRef(self._band_symbol())
        if tok.kind == "op" and tok.text == "(":
            self._next()
            node = self._parse_num()
            self._expect("op", ")")
            return node
        self._error("expected a number, band or '('")


def parse_rules(text: str) -> RuleSet:
    """Parse rule-file text into a RuleSet; raises RuleSyntaxError with position."""
    if not text.strip():
        raise RuleSyntaxError("empty rule text", 1, 1)
    return _Parser(text).parse_file()


# ---------------------------------------------------------------------------
# Formatter (parse . format == identity, structurally)
# ---------------------------------------------------------------------------


def _fmt_color(color: tuple[int, int, int]) -> str:
    return "#%02X%02X%02X" % color


def _num_level(node) -> int:
    # 1: Sum/Diff, 2: Ratio, 3: atom
    if isinstance(node, (Sum, Diff)):
        return 1
    if isinstance(node, Ratio):
        return 2
    return 3


def _fmt_num(node, min_level: int = 1) -> str:
    level = _num_level(node)
    if isinstance(node, Const):
        text = repr(node.value)
    elif isinstance(node, BandRef):
        text = node.symbol
    elif isinstance(node, Ratio):
        # Left-associative: the right side needs parens when it is a ratio.
        text = f"{_fmt_num(node.num, 2)}/{_fmt_num(node.den, 3)}"
    elif isinstance(node, Sum):
        text = f"{_fmt_num(node.left, 1)} + {_fmt_num(node.right, 2)}"
    elif isinstance(node, Diff):
        text = f"{_fmt_num(node.left, 1)} - {_fmt_num(node.right, 2)}"
    else:
        raise ConfigError(f"not a numeric expression node: {node!r}")
    if level < min_level:
        return f"({text})"
    return text


def format_expr(node) -> str:
    if isinstance(node, Cmp):
        return f"{_fmt_num(node.left)} {node.op} {_fmt_num(node.right)}"
    if isinstance(node, And):
        parts = []
        for c in node.children:
            text = format_expr(c)
            if isinstance(c, Or):
                text = f"({text})"
            parts.append(text)
        return " AND ".join(parts)
    if isinstance(node, Or):
        return " OR ".join(format_expr(c) for c in node.children)
    if isinstance(node, RequiresBand):
        return f"requires({node.symbol}, {format_expr(node.child)})"
    raise ConfigError(f"not a boolean expression node: {node!r}")


def format_rules(ruleset: RuleSet) -> str:
    """Canonical text for a RuleSet; reparsing reproduces it structurally."""
    lines = []
    bands = ", ".join(f"{s}@{repr(w)}" for s, w in ruleset.declared_bands)
    lines.append(f"bands: {bands}")
    lines.append(f"policy {ruleset.match_policy}")
    lines.append("")
    entries: list[tuple[int, str]] = []
    for rule in ruleset.rules:
        block = (
            f'rule {rule.index} "{rule.name}" color {_fmt_color(rule.pseudo_color)} {{\n'
            f"  {format_expr(rule.expr)}\n"
            f"}}"
        )
        entries.append((rule.index, block))
    for cls in ruleset.ruleless:
        entries.append(
            (cls.index, f'class {cls.index} "{cls.name}" color {_fmt_color(cls.pseudo_color)}')
        )
    entries.append(
        (
            ruleset.fallback_index,
            f'fallback {ruleset.fallback_index} "{ruleset.fallback_name}" '
            f"color {_fmt_color(ruleset.fallback_color)}",
        )
    )
    for _, block in sorted(entries):
        lines.append(block)
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Shipped default rule set
# ---------------------------------------------------------------------------


def load_specl(variant: str = "corrected") -> RuleSet:
    """Load the packaged 19-class SPECL rule set.

    variant="corrected" ships rule 8's b3 threshold as 0.08; "printed"
    restores the published literal 8.0, which no reflectance in [0, 1] can
    satisfy (kept for fidelity runs).
    """
    if variant not in ("corrected", "printed"):
        raise ConfigError(f"unknown SPECL variant {variant!r}")
    text = (
        importlib.resources.files("specmap")
        .joinpath("data/specl.rules")
        .read_text(encoding="utf-8")
    )
    ruleset = parse_rules(text)
    if variant == "printed":
        ruleset = _patch_rule8_printed(ruleset)
    return ruleset


def _patch_rule8_printed(ruleset: RuleSet) -> RuleSet:
    corrected = Cmp(BandRef("b3"), ">=", Const(0.08))
    swapped = 0

    def swap(node):
        nonlocal swapped
        if isinstance(node, Cmp):
            if node == corrected:
                swapped += 1
                return Cmp(BandRef("b3"), ">=", Const(8.0))
            return node
        if isinstance(node, And):
            return And(tuple(swap(c) for c in node.children))
        if isinstance(node, Or):
            return Or(tuple(swap(c) for c in node.children))
        if isinstance(node, RequiresBand):
            return RequiresBand(node.symbol, swap(node.child))
        return node

    rules = tuple(
        Rule(r.index, r.name, swap(r.expr), r.pseudo_color) if r.index == 8 else r
        for r in ruleset.rules
    )
    if swapped != 1:
        raise ConfigError("printed-variant patch did not find rule 8's b3 clause")
    return RuleSet(
        ruleset.declared_bands,
        rules,
        ruleset.ruleless,
        ruleset.fallback_index,
        ruleset.fallback_name,
        ruleset.fallback_color,
        ruleset.match_policy,
    )

"""Symbolic expression kernel shared by every other module.

Expressions are immutable sympy trees over a problem's symbol table:
jet coordinates, the independent variables x and t, scalar parameters
and level constants.  The operations here are the only entry points the
rest of the package uses for parsing, differentiation, substitution,
numeric evaluation and zero testing.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Tuple

import sympy as sp

__all__ = [
    "Role",
    "Symbol",
    "SymbolTable",
    "ZeroTestPolicy",
    "Verdict",
    "ExprError",
    "ParseError",
    "UnknownSymbolError",
    "CyclicSubstitutionError",
    "UnboundSymbolError",
    "EvalDomainError",
    "parse",
    "normalize",
    "rational_normal",
    "diff",
    "substitute",
    "is_zero",
    "eval_at",
    "pretty",
]

Expr = sp.Expr

KERNELS: Dict[str, Callable[[Expr], Expr]] = {
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "sin": sp.sin,
    "cos": sp.cos,
}


class Role:
    INDEPENDENT_X = "independent-x"
    INDEPENDENT_T = "independent-t"
    JET = "jet"
    PARAMETER = "parameter"
    LEVEL_CONSTANT = "level-constant"


class ExprError(ValueError):
    """Base class for expression-kernel failures."""


class ParseError(ExprError):
    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        self.text = text
        super().__init__(f"{message} (at position {position})")


class UnknownSymbolError(ParseError):
    pass


class CyclicSubstitutionError(ExprError):
    def __init__(self, chain: List[str]):
        self.chain = chain
        super().__init__("substitution rules do not terminate: " + " -> ".join(chain))


class UnboundSymbolError(ExprError):
    pass


class EvalDomainError(ExprError):
    def __init__(self, message: str, subterm: Expr):
        self.subterm = subterm
        super().__init__(f"{message}: {sp.sstr(subterm)}")


@dataclass(frozen=True)
class Symbol:
    """A named coordinate, parameter or constant of one problem.

    Jet symbols carry the 1-based dependent index and the x-derivative
    order; other roles leave both as None.
    """

    name: str
    role: str
    dep_index: Optional[int] = None
    order: Optional[int] = None
    sym: sp.Symbol = None  # type: ignore[assignment]

    @property
    def canonical(self) -> str:
        if self.role == Role.JET:
            return f"u{self.dep_index}_{self.order}"
        return self.name


def _jet_display_name(dep: str, r: int) -> str:
    if r == 0:
        return dep
    if r <= 3:
        return dep + "_" + "x" * r
    return f"{dep}_{r}"


class SymbolTable:
    """Resolves surface names to symbols and owns the jet coordinates.

    Aliases accepted for the r-th x-derivative of dependent w:
    ``w`` (r=0), ``w_x``/``w_xx``/``w_xxx``, ``w_<r>`` and the canonical
    ``u<i>_<r>`` form when it does not collide with a declared name.
    """

    RESERVED = set(KERNELS)

    def __init__(self, dependents: Iterable[str], parameters: Iterable[str] = ()):
        self.dependents: Tuple[str, ...] = tuple(dependents)
        if len(set(self.dependents)) != len(self.dependents):
            raise ExprError("dependent variable names must be unique")
        for name in self.dependents:
            if name in ("x", "t") or name in self.RESERVED:
                raise ExprError(f"illegal dependent variable name {name!r}")
        self.x = Symbol("x", Role.INDEPENDENT_X, sym=sp.Symbol("x", real=True))
        self.t = Symbol("t", Role.INDEPENDENT_T, sym=sp.Symbol("t", real=True))
        self._by_name: Dict[str, Symbol] = {"x": self.x, "t": self.t}
        self._jets: Dict[Tuple[int, int], Symbol] = {}
        self._level: Dict[int, Symbol] = {}
        for name in parameters:
            self.add_parameter(name)
        for i, _ in enumerate(self.dependents, start=1):
            self.jet(i, 0)

    # -- construction -------------------------------------------------

    def add_parameter(self, name: str, positive: bool = False) -> Symbol:
        if name in self._by_name:
            existing = self._by_name[name]
            if existing.role != Role.PARAMETER:
                raise ExprError(f"name {name!r} already used as {existing.role}")
            return existing
        if name in self.RESERVED or name in ("x", "t"):
            raise ExprError(f"illegal parameter name {name!r}")
        s = Symbol(name, Role.PARAMETER,
                   sym=sp.Symbol(name, real=True, positive=positive or None))
        self._by_name[name] = s
        return s

    def level_constant(self, i: int) -> Symbol:
        if i not in self._level:
            name = f"c{i}"
            if name in self._by_name:
                raise ExprError(f"level-constant name {name!r} already taken")
            s = Symbol(name, Role.LEVEL_CONSTANT, sym=sp.Symbol(name, real=True))
            self._level[i] = s
            self._by_name[name] = s
        return self._level[i]

    def jet(self, dep_index: int, order: int) -> Symbol:
        if not (1 <= dep_index <= len(self.dependents)):
            raise ExprError(f"dependent index {dep_index} out of range")
        if order < 0:
            raise ExprError("jet order must be nonnegative")
        key = (dep_index, order)
        if key not in self._jets:
            name = _jet_display_name(self.dependents[dep_index - 1], order)
            s = Symbol(name, Role.JET, dep_index=dep_index, order=order,
                       sym=sp.Symbol(name, real=True))
            self._jets[key] = s
            self._by_name[name] = s
        return self._jets[key]

    # -- lookup -------------------------------------------------------

    def resolve(self, name: str) -> Symbol:
        if name in self._by_name:
            return self._by_name[name]
        jet = self._parse_jet_alias(name)
        if jet is not None:
            return self.jet(*jet)
        raise KeyError(name)

    def _parse_jet_alias(self, name: str) -> Optional[Tuple[int, int]]:
        for i, dep in enumerate(self.dependents, start=1):
            if name == dep:
                return (i, 0)
            if name.startswith(dep + "_"):
                tail = name[len(dep) + 1:]
                if tail and set(tail) == {"x"} and len(tail) <= 3:
                    return (i, len(tail))
                if tail.isdigit():
                    return (i, int(tail))
        # canonical u<i>_<r> spelling
        if name.startswith("u") and "_" in name:
            head, _, tail = name.partition("_")
            if head[1:].isdigit() and tail.isdigit():
                i = int(head[1:])
                if 1 <= i <= len(self.dependents):
                    return (i, int(tail))
        return None

    def jet_info(self, s: sp.Symbol) -> Optional[Tuple[int, int]]:
        """(dependent index, order) if s is a jet coordinate, else None."""
        got = self._by_name.get(s.name)
        if got is not None and got.role == Role.JET:
            return (got.dep_index, got.order)
        return None

    def jets_in(self, e: Expr) -> List[Tuple[int, int, sp.Symbol]]:
        out = []
        for s in e.free_symbols:
            info = self.jet_info(s)
            if info is not None:
                out.append((info[0], info[1], s))
        out.sort(key=lambda z: (z[0], z[1]))
        return out

    def max_order(self, e: Expr) -> int:
        orders = [r for (_, r, _) in self.jets_in(e)]
        return max(orders) if orders else -1

    def symbols(self) -> List[Symbol]:
        return list(self._by_name.values())

    def fresh_constant(self, base: str, positive: bool = True) -> Symbol:
        k = 1
        while f"{base}{k}" in self._by_name:
            k += 1
        return self.add_parameter(f"{base}{k}", positive=positive)


# ---------------------------------------------------------------------------
# parsing


_TOKEN_OPS = "+-*/^()"


def _tokenize(text: str):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _TOKEN_OPS:
            tokens.append((ch, ch, i))
            i += 1
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(("int", text[i:j], i))
            i = j
            continue
        if ch.isalpha():
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("ident", text[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {ch!r}", i, text)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    """Recursive-descent parser for the shared expression grammar.

    Precedence, loosest to tightest: ``+ -``, ``* /`` (left-assoc),
    unary minus, ``^`` (right-assoc, binds tighter than unary minus).
    """

    def __init__(self, text: str, table: SymbolTable):
        self.text = text
        self.table = table
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind):
        tok = self.advance()
        if tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {tok[1]!r}", tok[2], self.text)
        return tok

    def parse(self) -> Expr:
        e = self.sum()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected {tok[1]!r}", tok[2], self.text)
        return e

    def sum(self) -> Expr:
        e = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.advance()[0]
            rhs = self.term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.advance()[0]
            rhs = self.unary()
            e = e * rhs if op == "*" else e / rhs
        return e

    def unary(self) -> Expr:
        if self.peek()[0] == "-":
            self.advance()
            return -self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "^":
            self.advance()
            exponent = self.unary()  # right-assoc, signed exponents allowed
            return _make_power(base, exponent)
        return base

    def atom(self) -> Expr:
        tok = self.advance()
        kind, value, at = tok
        if kind == "int":
            return sp.Integer(int(value))
        if kind == "(":
            e = self.sum()
            self.expect(")")
            return e
        if kind == "ident":
            if self.peek()[0] == "(":
                if value not in KERNELS:
                    raise UnknownSymbolError(f"unknown function {value!r}", at, self.text)
                self.advance()
                arg = self.sum()
                self.expect(")")
                return KERNELS[value](arg)
            try:
                return self.table.resolve(value).sym
            except KeyError:
                raise UnknownSymbolError(f"unknown identifier {value!r}", at, self.text)
        raise ParseError(f"unexpected {value!r}", at, self.text)


def _make_power(base: Expr, exponent: Expr) -> Expr:
    # rational exponents only; anything symbolic becomes exp(b*log(a))
    if exponent.is_Rational:
        return sp.Pow(base, exponent)
    return sp.exp(exponent * sp.log(base))


def parse(text: str, table: SymbolTable) -> Expr:
    """Parse ``text`` against ``table`` and return the normalized tree."""
    return normalize(_Parser(text, table).parse())


# ---------------------------------------------------------------------------
# normalization and zero testing


def normalize(e: Expr) -> Expr:
    """Canonical form: flattened ordered sums/products, folded constants,
    exp-products merged, exp/log collapsed on real arguments."""
    e = sp.sympify(e)
    if e.has(sp.exp):
        e = sp.powsimp(e, combine="exp")
    return e


def rational_normal(e: Expr) -> Expr:
    """P/Q normal form over the atom set (symbols plus kernel subterms)."""
    return sp.cancel(sp.together(normalize(e)))


@dataclass
class ZeroTestPolicy:
    """Sampling parameters for the probabilistic side of is_zero."""

    samples: int = 8
    tolerance: float = 1e-9
    seed: int = 20210
    numeric_only: bool = False
    retry_cap: int = 60
    low: Fraction = Fraction(1, 2)
    high: Fraction = Fraction(10)


DEFAULT_POLICY = ZeroTestPolicy()


@dataclass(frozen=True)
class Verdict:
    kind: str  # zero | nonzero | probably-zero | indeterminate
    witness: Optional[str] = None

    def __bool__(self) -> bool:
        return self.kind in ("zero", "probably-zero")

    def __eq__(self, other):
        if isinstance(other, str):
            return self.kind == other
        return super().__eq__(other)

    def __hash__(self):
        return hash(self.kind)

    def __repr__(self):
        return self.kind


ZERO = Verdict("zero")
NONZERO = Verdict("nonzero")


def _random_rational(rng: random.Random, positive: bool) -> sp.Rational:
    # uniform-ish rational with magnitude in [1/2, 10]
    num = rng.randint(10, 200)
    val = sp.Rational(num, 20)
    if not positive and rng.random() < 0.5:
        val = -val
    return val


def _sample_point(syms, rng: random.Random) -> Dict[sp.Symbol, sp.Rational]:
    return {s: _random_rational(rng, bool(s.is_positive)) for s in syms}


def _finite_float(v) -> Optional[float]:
    try:
        c = complex(v)
    except (TypeError, ValueError):
        return None
    if not (math.isfinite(c.real) and math.isfinite(c.imag)):
        return None
    if abs(c.imag) > 1e-12 * (1.0 + abs(c.real)):
        return None
    return c.real


def is_zero(e: Expr, policy: ZeroTestPolicy = DEFAULT_POLICY) -> Verdict:
    """Decide whether ``e`` vanishes identically.

    ``zero`` when the rational normal form is 0; otherwise sample at
    random rational points away from singular loci and report
    ``probably-zero`` or ``nonzero`` at the policy tolerance.
    """
    e = sp.sympify(e)
    if e == 0:
        return ZERO
    if not policy.numeric_only:
        n = rational_normal(e)
        if n == 0:
            return ZERO
    else:
        n = normalize(e)
    syms = sorted(n.free_symbols, key=lambda s: s.name)
    if not syms:
        val = _finite_float(n.evalf(30))
        if val is None:
            return Verdict("indeterminate", witness="constant does not evaluate")
        return Verdict("probably-zero") if abs(val) <= policy.tolerance else NONZERO
    terms = sp.Add.make_args(n)
    rng = random.Random(policy.seed)
    good = 0
    for _ in range(policy.retry_cap):
        if good >= policy.samples:
            break
        point = _sample_point(syms, rng)
        term_vals = []
        ok = True
        for term in terms:
            v = _finite_float(term.evalf(25, subs=point))
            if v is None:
                ok = False
                break
            term_vals.append(v)
        if not ok:
            continue
        good += 1
        scale = max([abs(v) for v in term_vals] + [1.0])
        total = math.fsum(term_vals)
        if abs(total) > policy.tolerance * scale:
            return Verdict("nonzero", witness=f"value {total:.3e} at {_fmt_point(point)}")
    if good == 0:
        return Verdict("indeterminate", witness="all sample points hit singular loci")
    return Verdict("probably-zero", witness=f"{good} samples below tolerance")


def _fmt_point(point: Mapping[sp.Symbol, sp.Rational]) -> str:
    return "{" + ", ".join(f"{s}={v}" for s, v in sorted(point.items(), key=lambda kv: kv[0].name)) + "}"


# ---------------------------------------------------------------------------
# calculus and substitution


def diff(e: Expr, s) -> Expr:
    """Partial derivative treating every other symbol as constant."""
    target = s.sym if isinstance(s, Symbol) else s
    return normalize(sp.diff(sp.sympify(e), target))


def _as_sym(s) -> sp.Symbol:
    return s.sym if isinstance(s, Symbol) else s


def substitute(e: Expr, rules: Mapping, max_passes: int = 64) -> Expr:
    """Simultaneous substitution iterated to a fixpoint, then normalized.

    Raises CyclicSubstitutionError when the rule set keeps rewriting
    itself (detected via the symbol dependency graph).
    """
    e = sp.sympify(e)
    rmap = {_as_sym(k): sp.sympify(v) for k, v in rules.items()}
    if not rmap:
        return normalize(e)
    for _ in range(max_passes):
        new = e.xreplace(rmap)
        if new == e:
            return normalize(e)
        e = new
    chain = _find_cycle(rmap)
    raise CyclicSubstitutionError(chain or [sp.sstr(k) for k in rmap])


def _find_cycle(rmap: Dict[sp.Symbol, Expr]) -> Optional[List[str]]:
    graph = {k: (v.free_symbols & set(rmap)) for k, v in rmap.items()}
    seen: Dict[sp.Symbol, int] = {}

    def visit(node, stack):
        seen[node] = 1
        stack.append(node)
        for nxt in sorted(graph.get(node, ()), key=lambda s: s.name):
            if seen.get(nxt) == 1:
                i = stack.index(nxt)
                return [s.name for s in stack[i:]] + [nxt.name]
            if nxt not in seen:
                got = visit(nxt, stack)
                if got:
                    return got
        stack.pop()
        seen[node] = 2
        return None

    for start in sorted(graph, key=lambda s: s.name):
        if start not in seen:
            got = visit(start, [])
            if got:
                return got
    return None


def eval_at(e: Expr, point: Mapping) -> float:
    """Floating evaluation of ``e`` with every free symbol bound."""
    e = sp.sympify(e)
    pmap = {_as_sym(k): sp.sympify(v) for k, v in point.items()}
    missing = e.free_symbols - set(pmap)
    if missing:
        names = ", ".join(sorted(s.name for s in missing))
        raise UnboundSymbolError(f"unbound symbols: {names}")
    val = _finite_float(e.evalf(25, subs=pmap))
    if val is None:
        bad = _locate_domain_failure(e, pmap)
        raise EvalDomainError("domain error while evaluating", bad)
    return val


def _locate_domain_failure(e: Expr, pmap) -> Expr:
    for arg in e.args:
        if arg.free_symbols and _finite_float(arg.evalf(25, subs=pmap)) is None:
            return _locate_domain_failure(arg, pmap)
    return e


def pretty(e: Expr) -> str:
    """Deterministic one-line rendering used by reports."""
    return sp.sstr(sp.sympify(e), order="lex")

"""Descent through a verified solvable structure: integrate the dual
one-forms, solve their level sets, and assemble explicit solutions.

Level i produces a first integral F_i of the restricted Cartan pair;
solving F_i = c_i eliminates one chart coordinate and the next form is
pulled back onto the smaller chart.  After the last level every jet
coordinate has been eliminated and the dependent variables become
explicit functions of (x, t) and the level constants.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import sympy as sp

from .expressions import (
    Expr,
    ExprError,
    SymbolTable,
    ZeroTestPolicy,
    DEFAULT_POLICY,
    is_zero,
    pretty,
)
from .fields import SolvableStructure, VectorField
from .forms import ClosednessVerdict, OneForm, VolumeForm, closed_mod, cramer_forms

__all__ = [
    "NotClosedError",
    "NonIntegrableError",
    "LevelSetError",
    "NumericPotential",
    "SubstitutionRule",
    "FirstIntegral",
    "LevelRecord",
    "ReductionChain",
    "integrate_closed",
    "solve_level_set",
    "descend",
    "abelian_shortcut",
    "ShortcutResult",
]


class NotClosedError(ExprError):
    pass


class NonIntegrableError(ExprError):
    def __init__(self, integrand: Expr, coord: sp.Symbol):
        self.integrand = integrand
        self.coord = coord
        super().__init__(
            f"no elementary antiderivative of {pretty(integrand)} in {coord.name}")


class LevelSetError(ExprError):
    pass


# ---------------------------------------------------------------------------
# integration


_REJECT_FUNCS = (sp.erf, sp.erfi, sp.Ei, sp.li, sp.Si, sp.Ci, sp.LambertW,
                 sp.gamma, sp.lowergamma, sp.uppergamma)


def _elementary(e: Expr) -> bool:
    if e.has(sp.Integral) or e.has(sp.Piecewise) or e.has(*_REJECT_FUNCS):
        return False
    return True


def _antiderivative(e: Expr, z: sp.Symbol) -> Optional[Expr]:
    try:
        F = sp.integrate(e, z)
    except Exception:
        return None
    if not _elementary(F):
        return None
    if F.has(sp.atanh, sp.acoth, sp.asinh, sp.acosh):
        F = F.rewrite(sp.log)
    return F


class NumericPotential:
    """Axis-aligned path integral of a closed form from a base point.

    Stands in for a symbolic potential when no elementary antiderivative
    exists; downstream level-set solving is blocked on it.
    """

    def __init__(self, omega: OneForm, chart: Sequence[sp.Symbol]):
        import numpy as np  # noqa: F401 - lambdify backend

        self.chart = tuple(chart)
        self.omega = omega
        coeffs = [omega.coefficient(z) for z in self.chart]
        self._funcs = [sp.lambdify(self.chart, c, modules="numpy") for c in coeffs]
        self.base = self._find_base()

    def _coeffs_finite(self, point: Sequence[float]) -> bool:
        import math
        for f in self._funcs:
            try:
                v = complex(f(*point))
            except Exception:
                return False
            if not (math.isfinite(v.real) and abs(v.imag) < 1e-12):
                return False
        return True

    def _find_base(self) -> Tuple[float, ...]:
        base = [1.0] * len(self.chart)
        for k in range(8):
            if self._coeffs_finite(base):
                return tuple(base)
            base = [b + 0.37 for b in base]
        return tuple(base)

    def __call__(self, point: Dict[sp.Symbol, float]) -> float:
        from scipy.integrate import quad

        target = [float(point[z]) for z in self.chart]
        total = 0.0
        current = list(self.base)
        for j, z in enumerate(self.chart):
            fj = self._funcs[j]

            def seg(s, j=j, fj=fj):
                args = list(current)
                args[j] = s
                return float(fj(*args))

            val, _err = quad(seg, self.base[j], target[j], limit=200)
            total += val
            current[j] = target[j]
        return total


def integrate_closed(omega: OneForm, policy: ZeroTestPolicy = DEFAULT_POLICY,
                     assume_closed: bool = False):
    """Potential F with dF = ω, by sequential antidifferentiation.

    Returns a sympy expression, or a NumericPotential when some
    coefficient has no elementary antiderivative.  Raises NotClosedError
    when ω is not closed.
    """
    if not assume_closed:
        verdict = closed_mod(omega, [], policy)
        if not verdict:
            raise NotClosedError(f"one-form is not closed: {verdict.witness}")
    chart = omega.chart
    F = sp.Integer(0)
    for z in chart:
        resid = sp.cancel(omega.coefficient(z) - sp.diff(F, z))
        if resid == 0:
            continue
        anti = _antiderivative(resid, z)
        if anti is None:
            return NumericPotential(omega, chart)
        F = F + anti
    # reconstruction check: dF must reproduce the coefficients
    for z in chart:
        gap = sp.cancel(sp.diff(F, z) - omega.coefficient(z))
        if gap != 0 and is_zero(gap, policy).kind == "nonzero":
            raise NotClosedError(
                f"sequential integration failed to reproduce the {z.name} coefficient")
    return sp.together(F)


# ---------------------------------------------------------------------------
# level-set solving


@dataclass
class SubstitutionRule:
    """coordinate -> closed form on the remaining chart."""

    coord: sp.Symbol
    rhs: Expr
    constant: sp.Symbol
    alternates: List[Expr] = field(default_factory=list)
    derived_constants: List[Tuple[sp.Symbol, Expr]] = field(default_factory=list)
    side_conditions: List[str] = field(default_factory=list)

    def options(self) -> List[Expr]:
        return [self.rhs] + list(self.alternates)

    def with_rhs(self, rhs: Expr) -> "SubstitutionRule":
        return SubstitutionRule(self.coord, rhs, self.constant, [],
                                self.derived_constants, list(self.side_conditions))


def _count_occurrences(e: Expr, w: sp.Symbol) -> int:
    if e == w:
        return 1
    return sum(_count_occurrences(a, w) for a in e.args)


def _peel(e: Expr, value: Expr, w: sp.Symbol, sides: List[str]) -> Optional[Expr]:
    """Invert a chain of invertible operations around a single occurrence."""
    if e == w:
        return value
    if e.is_Add:
        hot = [a for a in e.args if a.has(w)]
        if len(hot) != 1:
            return None
        rest = e - hot[0]
        return _peel(hot[0], value - rest, w, sides)
    if e.is_Mul:
        hot = [a for a in e.args if a.has(w)]
        if len(hot) != 1:
            return None
        rest = sp.cancel(e / hot[0])
        if rest == 0:
            return None
        if rest.free_symbols:
            sides.append(f"{pretty(rest)} != 0")
        return _peel(hot[0], sp.cancel(value / rest), w, sides)
    if e.is_Pow:
        base, q = e.base, e.exp
        if base.has(w) and not q.has(w) and q.is_Rational and q != 0:
            if q == -1 or (q.is_Integer and q.p % 2 == 1):
                return _peel(base, value ** (sp.Integer(1) / q), w, sides)
            if q.p % 2 == 1:  # odd numerator rational power, monotone on positives
                sides.append(f"{pretty(base)} > 0")
                return _peel(base, value ** (sp.Integer(1) / q), w, sides)
            return None  # even power: not invertible
        return None
    if isinstance(e, sp.exp):
        sides.append(f"{pretty(value)} > 0")
        return _peel(e.args[0], sp.log(value), w, sides)
    if isinstance(e, sp.log):
        return _peel(e.args[0], sp.exp(value), w, sides)
    if isinstance(e, sp.atanh):
        return _peel(e.args[0], sp.tanh(value), w, sides)
    if isinstance(e, sp.atan):
        return _peel(e.args[0], sp.tan(value), w, sides)
    return None


def _affine_rule(F: Expr, w: sp.Symbol, c: sp.Symbol) -> Optional[Expr]:
    a = sp.cancel(sp.diff(F, w))
    if a == 0 or a.has(w):
        return None
    b = sp.cancel(F - a * w)
    if b.has(w):
        return None
    return sp.cancel((c - b) / a)


def _log_merge_rule(F: Expr, w: sp.Symbol, c: sp.Symbol,
                    sides: List[str]) -> Optional[Tuple[Expr, List[Expr]]]:
    """Handle F = Σ a_i log(A_i(w)) + rest with a Möbius product."""
    logs = []
    rest = sp.Integer(0)
    for term in sp.Add.make_args(sp.expand(F)):
        if not term.has(w):
            rest += term
            continue
        coeff, logpart = term.as_independent(sp.log)
        if isinstance(logpart, sp.log) and logpart.args[0].has(w):
            logs.append((coeff, logpart.args[0]))
        else:
            return None
    if not logs:
        return None
    a0 = logs[0][0]
    product = sp.Integer(1)
    for coeff, arg in logs:
        q = sp.cancel(coeff / a0)
        if not q.is_Rational or not q.is_Integer:
            return None
        product *= arg ** int(q)
    product = sp.cancel(product)
    num, den = sp.fraction(product)

    def linear_coeffs(p: Expr) -> Optional[Tuple[Expr, Expr]]:
        a = sp.diff(p, w)
        if a.has(w):
            return None
        b = sp.expand(p - a * w)
        if b.has(w):
            return None
        return a, b

    nc, dc = linear_coeffs(num), linear_coeffs(den)
    if nc is None or dc is None:
        return None
    n1, n0 = nc
    d1, d0 = dc
    T = sp.exp(sp.cancel((c - rest) / a0))
    options = []
    for sigma in (1, -1):
        denom = sp.cancel(n1 - sigma * T * d1)
        if denom == 0:
            continue
        options.append(sp.cancel((sigma * T * d0 - n0) / denom))
    if not options:
        return None
    sides.append(f"{pretty(den)} != 0")
    return options[0], options[1:]


def _derived_constant_rewrite(rule: SubstitutionRule, table: SymbolTable,
                              level: int) -> SubstitutionRule:
    """Replace exp(linear in c) by powers of a fresh positive constant."""
    c = rule.constant
    exprs = [rule.rhs] + rule.alternates
    alphas = set()
    for e in exprs:
        for node in e.atoms(sp.exp):
            arg = node.args[0]
            if not arg.has(c):
                continue
            alpha = sp.diff(arg, c)
            if alpha.has(c) or not alpha.is_Rational:
                return rule
            alphas.add(alpha)
        bare = e.xreplace({node: sp.Integer(0) for node in e.atoms(sp.exp)})
        if bare.has(c):
            return rule
    if not alphas:
        return rule
    gcd = sp.Rational(sp.gcd([sp.nsimplify(a) for a in alphas]))
    if gcd == 0:
        return rule
    first = sorted(alphas, key=sp.default_sort_key)[0]
    sign = 1 if first > 0 else -1
    gamma = gcd / 2 if (gcd.is_Integer and gcd % 2 == 0) else gcd
    gamma = sign * gamma
    if any(not (a / gamma).is_Integer for a in alphas):
        gamma = sign * gcd
        if any(not (a / gamma).is_Integer for a in alphas):
            return rule
    name = f"k{level}"
    try:
        ksym = table.add_parameter(name, positive=True).sym
    except ExprError:
        ksym = table.fresh_constant("k", positive=True).sym

    def rewrite(e: Expr) -> Expr:
        def repl(node):
            arg = node.args[0]
            if not arg.has(c):
                return node
            alpha = sp.diff(arg, c)
            beta_ = sp.cancel(arg - alpha * c)
            return ksym ** int(alpha / gamma) * sp.exp(beta_)
        return sp.cancel(e.replace(lambda n: isinstance(n, sp.exp), repl))

    new = rule.with_rhs(rewrite(rule.rhs))
    new.alternates = [rewrite(a) for a in rule.alternates]
    new.derived_constants = rule.derived_constants + [(ksym, sp.exp(gamma * c))]
    new.side_conditions.append(f"{ksym.name} = {pretty(sp.exp(gamma * c))} > 0")
    return new


def solve_level_set(F: Expr, c: sp.Symbol, chart: Sequence[sp.Symbol],
                    table: SymbolTable, level: int = 0) -> SubstitutionRule:
    """Solve F = c for one chart coordinate in closed form.

    Candidates are the jet coordinates of the chart, highest derivative
    order first; each is tried with an affine test, then an isolation
    peel over invertible operations, then a merged-logarithm Möbius
    inversion (which records the opposite exponential branch as an
    alternate), and finally sympy's solver.
    """
    F = sp.sympify(F)
    jets = [(z,) + table.jet_info(z) for z in chart if table.jet_info(z) is not None]
    jets.sort(key=lambda zir: (-zir[2], zir[1], zir[0].name))
    candidates = [z for z, _i, _r in jets if F.has(z)]
    # first pass: the invertible-isolation mechanism, best coordinate first
    for z in candidates:
        sides: List[str] = []
        rhs = _affine_rule(F, z, c)
        if rhs is not None:
            return _derived_constant_rewrite(
                SubstitutionRule(z, rhs, c, side_conditions=sides), table, level)
        for G in (F, sp.cancel(sp.together(F))):
            if _count_occurrences(G, z) == 1:
                rhs = _peel(G, c, z, sides)
                if rhs is not None:
                    return _derived_constant_rewrite(
                        SubstitutionRule(z, sp.cancel(rhs), c, side_conditions=sides),
                        table, level)
        merged = _log_merge_rule(F, z, c, sides)
        if merged is not None:
            rhs, alts = merged
            return _derived_constant_rewrite(
                SubstitutionRule(z, rhs, c, alternates=alts, side_conditions=sides),
                table, level)
    # last resort: a general solver, still preferring high-order coordinates
    for z in candidates:
        try:
            sols = sp.solve(sp.Eq(F, c), z)
        except Exception:
            sols = []
        sols = [s for s in sols if not s.has(sp.I) and _elementary(s)]
        sols.sort(key=sp.default_sort_key)
        if sols:
            return _derived_constant_rewrite(
                SubstitutionRule(z, sols[0], c, alternates=sols[1:]), table, level)
    raise LevelSetError(
        "no chart coordinate of F = " + pretty(F)
        + " can be isolated (tried: " + ", ".join(z.name for z in candidates) + ")")


# ---------------------------------------------------------------------------
# the descent


@dataclass
class FirstIntegral:
    F: Expr
    index: int
    constant: sp.Symbol


@dataclass
class LevelRecord:
    index: int
    omega: OneForm
    closedness: ClosednessVerdict
    F: Expr
    constant: sp.Symbol
    rule: SubstitutionRule


@dataclass
class ReductionChain:
    table: SymbolTable
    volume: VolumeForm
    delta: Expr
    levels: List[LevelRecord]
    solution: Dict[str, Expr]
    status: str  # complete | partial
    diagnostic: Optional[str] = None
    side_conditions: List[str] = field(default_factory=list)
    numeric_potential: Optional[NumericPotential] = None

    @property
    def M(self) -> Expr:
        return sp.cancel(1 / self.delta)

    def first_integrals(self) -> List[FirstIntegral]:
        return [FirstIntegral(rec.F, rec.index, rec.constant) for rec in self.levels]

    def rules(self) -> List[SubstitutionRule]:
        return [rec.rule for rec in self.levels if rec.rule is not None]

    def constants(self) -> List[sp.Symbol]:
        """Free parameters of the solution family, in level order."""
        out = []
        for rec in self.levels:
            if rec.rule is None:
                continue
            if rec.rule.derived_constants:
                out.extend(k for k, _ in rec.rule.derived_constants)
            else:
                out.append(rec.constant)
        return out


def _pullback(omega: OneForm, coord: sp.Symbol, rhs: Expr) -> OneForm:
    """Restrict a one-form to the graph coord = rhs(remaining chart)."""
    chart = [z for z in omega.chart if z != coord]
    cw = omega.coefficient(coord)
    coeffs = {}
    for z in chart:
        c = omega.coefficient(z) + cw * sp.diff(rhs, z)
        coeffs[z] = sp.cancel(c.subs(coord, rhs))
    return OneForm(chart, coeffs)


def _rewrite_solution(e: Expr) -> Expr:
    if e.has(sp.tanh, sp.coth, sp.sinh, sp.cosh):
        e = e.rewrite(sp.exp)
    if e.has(sp.atanh, sp.acoth):
        e = e.rewrite(sp.log)
    e = sp.powsimp(sp.cancel(e), combine="exp")

    def fix_exp(node):
        # exp(q*log(W) + rest) -> W**q * exp(rest) for rational q
        arg = sp.cancel(node.args[0])
        power = sp.Integer(1)
        for L in sorted(arg.atoms(sp.log), key=sp.default_sort_key):
            d = sp.Dummy()
            flat = arg.subs(L, d)
            q = sp.cancel(sp.diff(flat, d))
            if q.is_Rational and q != 0:
                rest = sp.cancel(flat - q * d)
                if not rest.has(d):
                    power *= L.args[0] ** q
                    arg = rest
        return power * sp.exp(arg)

    e = e.replace(lambda n: isinstance(n, sp.exp), fix_exp)
    return sp.powsimp(e, combine="exp")


def _assemble(table: SymbolTable, rules: Sequence[SubstitutionRule]) -> Optional[Dict[str, Expr]]:
    eliminated = {r.coord for r in rules}
    out: Dict[str, Expr] = {}
    for i, dep in enumerate(table.dependents, start=1):
        z0 = table.jet(i, 0).sym
        if z0 not in eliminated:
            return None
        e: Expr = z0
        for r in rules:
            e = e.subs(r.coord, r.rhs)
        out[dep] = _rewrite_solution(e)
    return out


def _samples_real(table: SymbolTable, sol: Dict[str, Expr], seed: int,
                  need: int = 5, tries: int = 24) -> bool:
    rng = random.Random(seed)
    exprs = list(sol.values())
    syms = sorted(set().union(*[e.free_symbols for e in exprs]) if exprs else set(),
                  key=lambda s: s.name)
    good = 0
    for _ in range(tries):
        point = {}
        for s in syms:
            if s.name in ("x", "t"):
                point[s] = sp.Float(0.1 + 2.9 * rng.random())
            elif s.is_positive:
                point[s] = sp.Float(0.5 + 1.5 * rng.random())
            else:
                point[s] = sp.Float(0.5 + 1.5 * rng.random())
        ok = True
        for e in exprs:
            v = e.evalf(20, subs=point)
            try:
                cv = complex(v)
            except (TypeError, ValueError):
                ok = False
                break
            import math
            if not (math.isfinite(cv.real) and abs(cv.imag) <= 1e-10 * (1 + abs(cv.real))):
                ok = False
                break
        if ok:
            good += 1
            if good >= need:
                return True
    return False


def descend(S: SolvableStructure, pair, volume: VolumeForm,
            policy: ZeroTestPolicy = DEFAULT_POLICY,
            validate: bool = True, budget: int = 32) -> ReductionChain:
    """Run the full ordered reduction and assemble explicit solutions.

    Partial chains are returned (status "partial") when a restricted
    form fails closedness, has only a numeric potential, or its level
    set cannot be solved; every first integral found so far is kept.
    """
    table = pair.H.table
    delta, omegas = cramer_forms(S, pair, volume)
    r2 = len(S)
    state = {"budget": budget, "best": None}

    def record_partial(levels, diagnostic, numeric=None):
        best = state["best"]
        if best is None or len(levels) > len(best[0]):
            state["best"] = (list(levels), diagnostic, numeric)

    def search(levels: List[LevelRecord]) -> Optional[ReductionChain]:
        i = r2 - len(levels)
        if i == 0:
            sol = _assemble(table, [rec.rule for rec in levels])
            if sol is None:
                record_partial(levels, "a dependent variable was never eliminated")
                return None
            if validate and not _samples_real(table, sol, policy.seed):
                record_partial(levels, "no real-evaluable sample found for this branch")
                return None
            sides = [s for rec in levels for s in rec.rule.side_conditions]
            return ReductionChain(table, volume, delta, list(levels), sol,
                                  "complete", side_conditions=sides)
        if state["budget"] <= 0:
            record_partial(levels, "search budget exhausted")
            return None
        state["budget"] -= 1
        omega = omegas[i - 1]
        for rec in levels:
            omega = _pullback(omega, rec.rule.coord, rec.rule.rhs)
        verdict = closed_mod(omega, [], policy)
        if not verdict:
            record_partial(levels, f"form at level {i} not closed after restriction: "
                                   f"{verdict.witness}")
            return None
        F = integrate_closed(omega, policy, assume_closed=True)
        if isinstance(F, NumericPotential):
            record_partial(levels, f"level {i} has only a numeric potential; "
                                   "level-set solving is blocked", numeric=F)
            return None
        c = table.level_constant(i).sym
        try:
            rule = solve_level_set(F, c, omega.chart, table, level=i)
        except LevelSetError as err:
            partial = levels + [LevelRecord(i, omega, verdict, F, c, None)]
            record_partial(partial, str(err))
            return None
        for rhs in rule.options():
            candidate = rule.with_rhs(rhs)
            candidate.alternates = []
            rec = LevelRecord(i, omega, verdict, F, c, candidate)
            got = search(levels + [rec])
            if got is not None:
                return got
        return None

    chain = search([])
    if chain is not None:
        return chain
    levels, diagnostic, numeric = state["best"] or ([], "descent produced nothing", None)
    sides = [s for rec in levels if rec.rule for s in rec.rule.side_conditions]
    return ReductionChain(table, volume, delta, levels, {}, "partial",
                          diagnostic=diagnostic, side_conditions=sides,
                          numeric_potential=numeric)


@dataclass
class ShortcutResult:
    delta: Expr
    forms: List[OneForm]
    verdicts: List[ClosednessVerdict]
    potentials: List[Expr]

    @property
    def all_closed(self) -> bool:
        return all(bool(v) for v in self.verdicts)


def abelian_shortcut(S: SolvableStructure, pair, volume: VolumeForm,
                     policy: ZeroTestPolicy = DEFAULT_POLICY) -> ShortcutResult:
    """All scaled forms M·β_i at once, each checked for plain closedness.

    Valid when the structure is Abelian (single integrating factor); a
    closedness failure signals the caller to fall back to the ordered
    descent.
    """
    delta, omegas = cramer_forms(S, pair, volume)
    verdicts = [closed_mod(w, [], policy) for w in omegas]
    potentials: List[Expr] = []
    for w, v in zip(omegas, verdicts):
        if bool(v):
            F = integrate_closed(w, policy, assume_closed=True)
            potentials.append(F if not isinstance(F, NumericPotential) else sp.nan)
        else:
            potentials.append(sp.nan)
    return ShortcutResult(delta, omegas, verdicts, potentials)

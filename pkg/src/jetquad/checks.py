"""Independent numeric oracle for produced solutions and symbolic verdicts.

Candidate solutions are differentiated symbolically and the residuals
are evaluated in floating point over seeded random sample points, so
the acceptance signal carries no discretization error; a centered
finite-difference cross-check runs at a coarser tolerance.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import sympy as sp

from .constraints import ConstraintSet
from .expressions import Expr, ExprError, SymbolTable, pretty
from .jets import EvolutionSystem

__all__ = ["SamplePlan", "Report", "residual", "constraint_residual", "spot_check"]


@dataclass
class SamplePlan:
    """How many points, where, and how close to zero counts as zero."""

    count: int = 100
    tol_rel: float = 1e-9
    tol_abs: float = 1e-12
    seed: int = 814
    var_range: Tuple[float, float] = (0.1, 3.0)
    param_range: Tuple[float, float] = (0.5, 2.0)
    retry_factor: int = 30

    def draw(self, rng: random.Random, sym: sp.Symbol) -> float:
        lo, hi = self.var_range if sym.name in ("x", "t") else self.param_range
        return lo + (hi - lo) * rng.random()


@dataclass
class Report:
    name: str
    passed: bool
    max_rel_residual: float
    samples: int
    symbolic_zero: Optional[bool] = None
    detail: str = ""

    def __bool__(self):
        return self.passed


def _sym_zero(e: Expr) -> bool:
    e = sp.cancel(sp.together(e))
    if e == 0:
        return True
    s = sp.simplify(e)
    return s == 0


def _sample_max_relative(parts: Sequence[Expr], plan: SamplePlan) -> Tuple[float, int, str]:
    """max over samples of |sum(parts)| / max(|part|); parts share symbols.

    Points are drawn in fast float64 first; any point whose relative
    residual exceeds the tolerance is re-evaluated at 40 digits, so
    losing precision near a pole of the solution family cannot fail an
    identity (nor can a genuine failure hide: its refined value stays).
    """
    syms = sorted(set().union(*[p.free_symbols for p in parts]), key=lambda s: s.name)
    funcs = [sp.lambdify(syms, p, modules="numpy") for p in parts]
    refine: List = []  # mpmath-lambdified parts, built on first use
    rng = random.Random(plan.seed)
    worst = 0.0
    got = 0
    attempts = 0
    cap = plan.count * plan.retry_factor
    while got < plan.count and attempts < cap:
        attempts += 1
        point = [plan.draw(rng, s) for s in syms]
        vals = []
        ok = True
        for f in funcs:
            try:
                v = complex(f(*point))
            except Exception:
                ok = False
                break
            if not (math.isfinite(v.real) and abs(v.imag) <= 1e-10 * (1 + abs(v.real))):
                ok = False
                break
            vals.append(v.real)
        if not ok:
            continue
        got += 1
        scale = max([abs(v) for v in vals] + [1.0])
        rel = abs(math.fsum(vals)) / scale
        if rel > plan.tol_rel:
            if not refine:
                refine = [sp.lambdify(syms, p, modules="mpmath") for p in parts]
            rel = _refined_relative(refine, point, rel)
        worst = max(worst, rel)
    if got == 0:
        return math.inf, 0, "no admissible sample point found"
    note = "" if got >= plan.count else f"only {got} admissible points"
    return worst, got, note


def _refined_relative(refine: Sequence, point: Sequence[float], fallback: float) -> float:
    import mpmath

    with mpmath.workdps(45):
        args = [mpmath.mpf(v) for v in point]
        vals = []
        for f in refine:
            try:
                v = f(*args)
            except Exception:
                return fallback
            if isinstance(v, mpmath.mpc):
                if abs(v.imag) > mpmath.mpf("1e-30") * (1 + abs(v.real)):
                    return fallback
                v = v.real
            if not mpmath.isfinite(v):
                return fallback
            vals.append(v)
        scale = max([abs(v) for v in vals] + [mpmath.mpf(1)])
        return float(abs(mpmath.fsum(vals)) / scale)


def _x_derivative(e: Expr, x: sp.Symbol, r: int) -> Expr:
    return sp.diff(e, x, r) if r else e


def residual(sol: Mapping[str, Expr], sys: EvolutionSystem,
             plan: SamplePlan = SamplePlan()) -> List[Report]:
    """Residuals of u^i_t = f^i for explicit candidate solutions.

    The jet coordinates inside each f^i are replaced by symbolic x-
    derivatives of the candidates before any number is produced.
    """
    table = sys.table
    x, t = table.x.sym, table.t.sym
    reports = []
    for i, dep in enumerate(table.dependents, start=1):
        if dep not in sol:
            raise ExprError(f"candidate solution missing component {dep!r}")
    jets_needed = {}
    for fi in sys.f:
        for (j, r, s) in table.jets_in(fi):
            jets_needed[s] = _x_derivative(sp.sympify(sol[table.dependents[j - 1]]), x, r)
    for i, dep in enumerate(table.dependents, start=1):
        ui = sp.sympify(sol[dep])
        lhs = sp.diff(ui, t)
        rhs = sys.f[i - 1].xreplace(jets_needed)
        sym0 = _sym_zero(lhs - rhs)
        worst, got, note = _sample_max_relative(_residual_parts(lhs, rhs), plan)
        passed = worst <= plan.tol_rel
        reports.append(Report(f"pde:{dep}", passed, worst, got, sym0, note))
    return reports


def _residual_parts(lhs: Expr, rhs: Expr) -> List[Expr]:
    """Top-level terms of both sides; the tolerance is relative to the
    largest of them, matching the zero-test's term-scale convention."""
    parts = list(sp.Add.make_args(lhs))
    parts += [-term for term in sp.Add.make_args(rhs)]
    return parts or [sp.Integer(0)]


def constraint_residual(sol: Mapping[str, Expr], cons: ConstraintSet,
                        plan: SamplePlan = SamplePlan()) -> List[Report]:
    """Residuals of the differential constraints u^i_{n_i} = g^i."""
    table = cons.table
    x = table.x.sym
    jets_needed = {}
    for g in cons.rhs:
        for (j, r, s) in table.jets_in(g):
            jets_needed[s] = _x_derivative(sp.sympify(sol[table.dependents[j - 1]]), x, r)
    reports = []
    for i, dep in enumerate(table.dependents, start=1):
        n = cons.orders[i - 1]
        lhs = sp.diff(sp.sympify(sol[dep]), x, n)
        rhs = cons.rhs[i - 1].xreplace(jets_needed)
        sym0 = _sym_zero(lhs - rhs)
        worst, got, note = _sample_max_relative(_residual_parts(lhs, rhs), plan)
        reports.append(Report(f"constraint:{dep}", worst <= plan.tol_rel, worst,
                              got, sym0, note))
    return reports


def spot_check(identity: Expr, plan: SamplePlan = SamplePlan()) -> Report:
    """Numeric guard for a symbolic zero verdict: fresh sampling of one
    expression, reporting the worst relative magnitude seen."""
    e = sp.sympify(identity)
    parts = list(sp.Add.make_args(sp.expand(e))) or [e]
    worst, got, note = _sample_max_relative(parts, plan)
    return Report("spot-check", worst <= plan.tol_rel, worst, got, None, note)


def finite_difference_check(e: Expr, s: sp.Symbol, plan: SamplePlan = SamplePlan(),
                            h: float = 1e-6, tol: float = 1e-5) -> Report:
    """Centered finite differences against the symbolic derivative."""
    de = sp.diff(e, s)
    syms = sorted(e.free_symbols | de.free_symbols, key=lambda z: z.name)
    f = sp.lambdify(syms, e, modules="numpy")
    df = sp.lambdify(syms, de, modules="numpy")
    rng = random.Random(plan.seed + 3)
    worst = 0.0
    got = 0
    attempts = 0
    idx = syms.index(s)
    while got < min(plan.count, 25) and attempts < 500:
        attempts += 1
        point = [plan.draw(rng, z) for z in syms]
        try:
            up = list(point)
            dn = list(point)
            up[idx] += h
            dn[idx] -= h
            fd = (float(f(*up)) - float(f(*dn))) / (2 * h)
            exact = float(df(*point))
        except Exception:
            continue
        if not (math.isfinite(fd) and math.isfinite(exact)):
            continue
        got += 1
        scale = max(abs(exact), 1.0)
        worst = max(worst, abs(fd - exact) / scale)
    return Report(f"fd:{s.name}", worst <= tol and got > 0, worst, got)

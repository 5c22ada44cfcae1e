"""Constraint submanifolds: elimination of high-order jets and the
restricted total derivative pair, plus the compatibility decision.

A constraint set fixes, for each dependent variable, the top derivative
u^i_{n_i} as a function g^i of lower-order chart data.  The submanifold
stores the induced elimination rules for every order up to the
truncation level, so restriction is a plain substitution fixpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import sympy as sp

from .expressions import (
    Expr,
    ExprError,
    SymbolTable,
    Verdict,
    ZeroTestPolicy,
    DEFAULT_POLICY,
    is_zero,
    normalize,
)
from .fields import VectorField
from .jets import EvolutionSystem, TruncationOverflowError, bar_Dt, bar_Dx

__all__ = [
    "ConstraintSet",
    "Submanifold",
    "RestrictedPair",
    "CompatibilityReport",
    "build_submanifold",
    "restrict",
    "restricted_pair",
    "check_compatibility",
    "prolong_vertical_field",
]


@dataclass
class ConstraintSet:
    """Per-dependent constraint order n_i >= 1 and right-hand side g^i."""

    table: SymbolTable
    orders: Tuple[int, ...]
    rhs: Tuple[Expr, ...]

    def __init__(self, table: SymbolTable, orders: Sequence[int], rhs: Sequence[Expr]):
        self.table = table
        self.orders = tuple(int(n) for n in orders)
        self.rhs = tuple(normalize(g) for g in rhs)
        if len(self.orders) != len(table.dependents) or len(self.rhs) != len(table.dependents):
            raise ExprError("one constraint per dependent variable required")
        if any(n < 1 for n in self.orders):
            raise ExprError("constraint orders must be >= 1")
        for g in self.rhs:
            for (i, r, s) in table.jets_in(g):
                if r >= self.orders[i - 1]:
                    raise ExprError(
                        f"constraint rhs depends on {s.name} of order {r} >= n_{i}={self.orders[i-1]}")

    def residual_expr(self, i: int) -> Expr:
        """L^i = u^i_{n_i} - g^i as a chart expression."""
        return self.table.jet(i, self.orders[i - 1]).sym - self.rhs[i - 1]


@dataclass
class Submanifold:
    """Finite chart on the constrained locus plus its elimination rules."""

    table: SymbolTable
    orders: Tuple[int, ...]
    chart: Tuple[sp.Symbol, ...]
    elim: Dict[sp.Symbol, Expr]
    truncation: int

    @property
    def dim(self) -> int:
        return len(self.chart)

    def jet_order(self, s: sp.Symbol) -> Optional[Tuple[int, int]]:
        return self.table.jet_info(s)

    def chart_jets(self) -> List[sp.Symbol]:
        return [z for z in self.chart if self.table.jet_info(z) is not None]


def build_submanifold(sys: EvolutionSystem, cons: ConstraintSet,
                      truncation: int | None = None) -> Submanifold:
    """Close the constraints under the total x-derivative up to K."""
    table = sys.table
    K = truncation if truncation is not None else sys.truncation
    if K > sys.truncation:
        raise TruncationOverflowError(K, sys.truncation)
    chart: List[sp.Symbol] = [table.x.sym, table.t.sym]
    for i, _ in enumerate(table.dependents, start=1):
        for r in range(cons.orders[i - 1]):
            chart.append(table.jet(i, r).sym)
    elim: Dict[sp.Symbol, Expr] = {}
    sub = Submanifold(table, cons.orders, tuple(chart), elim, K)
    deps = range(1, len(table.dependents) + 1)
    for i in deps:
        elim[table.jet(i, cons.orders[i - 1]).sym] = restrict(cons.rhs[i - 1], sub)
    # ascend order by order across all components: the derivative of one
    # component's rule may involve another component's cut derivative
    for k in range(0, K):
        for i in deps:
            if k < cons.orders[i - 1]:
                continue
            nxt = bar_Dx(elim[table.jet(i, k).sym], sys)
            elim[table.jet(i, k + 1).sym] = restrict(nxt, sub)
    return sub


def restrict(e: Expr, H: Submanifold) -> Expr:
    """Replace every above-cut jet through the elimination rules."""
    e = sp.sympify(e)
    for _ in range(H.truncation + 2):
        todo = {}
        for s in e.free_symbols:
            info = H.table.jet_info(s)
            if info is None:
                continue
            i, r = info
            if r >= H.orders[i - 1]:
                if s not in H.elim:
                    raise TruncationOverflowError(r, H.truncation)
                todo[s] = H.elim[s]
        if not todo:
            return normalize(e)
        e = e.xreplace(todo)
    raise ExprError("elimination did not reach a fixpoint")  # pragma: no cover


@dataclass
class RestrictedPair:
    """The restrictions of the two total derivatives to the chart of H."""

    Dx: VectorField
    Dt: VectorField
    H: Submanifold


def restricted_pair(sys: EvolutionSystem, H: Submanifold) -> RestrictedPair:
    table = sys.table
    dx_comp: Dict[sp.Symbol, Expr] = {table.x.sym: sp.Integer(1)}
    dt_comp: Dict[sp.Symbol, Expr] = {table.t.sym: sp.Integer(1)}
    for z in H.chart_jets():
        i, r = table.jet_info(z)
        dx_comp[z] = restrict(table.jet(i, r + 1).sym, H)
        dt_comp[z] = restrict(sys.prolongation(i, r), H)
    return RestrictedPair(
        Dx=VectorField(H.chart, dx_comp, name="Dx~"),
        Dt=VectorField(H.chart, dt_comp, name="Dt~"),
        H=H,
    )


@dataclass
class CompatibilityReport:
    compatible: bool
    verdicts: List[Tuple[str, Verdict]]
    residuals: List[Tuple[str, Expr]]
    cross_checks: List[Tuple[str, Verdict]]

    def __bool__(self) -> bool:
        return self.compatible

    def failing(self) -> List[Tuple[str, Expr]]:
        bad = {name for name, v in self.verdicts if not v}
        return [(name, e) for name, e in self.residuals if name in bad]


def check_compatibility(sys: EvolutionSystem, cons: ConstraintSet, H: Submanifold,
                        policy: ZeroTestPolicy = DEFAULT_POLICY,
                        cross_orders: int = 2) -> CompatibilityReport:
    """Decide whether the total t-derivative is tangent to H.

    Only the r = 0 condition is decided symbolically (the commutation of
    the total derivatives makes the prolonged conditions equivalent);
    the prolonged conditions up to ``cross_orders`` are sampled
    numerically as a guard and attached to the report.
    """
    verdicts: List[Tuple[str, Verdict]] = []
    residuals: List[Tuple[str, Expr]] = []
    cross: List[Tuple[str, Verdict]] = []
    numeric = ZeroTestPolicy(samples=policy.samples, tolerance=policy.tolerance,
                             seed=policy.seed + 1, numeric_only=True)
    for i, dep in enumerate(sys.table.dependents, start=1):
        L = cons.residual_expr(i)
        res = sp.expand(restrict(bar_Dt(L, sys), H))
        residuals.append((dep, res))
        verdicts.append((dep, is_zero(res, policy)))
        prolonged = L
        for r in range(1, cross_orders + 1):
            prolonged = bar_Dx(prolonged, sys)
            cross.append((f"{dep}:r={r}", is_zero(restrict(bar_Dt(prolonged, sys), H), numeric)))
    compatible = all(bool(v) for _, v in verdicts)
    return CompatibilityReport(compatible, verdicts, residuals, cross)


def prolong_vertical_field(phi: Sequence[Expr], H: Submanifold) -> VectorField:
    """Evolutionary field with generator phi, prolonged and restricted to H."""
    table = H.table
    if len(phi) != len(table.dependents):
        raise ExprError("one generator component per dependent variable required")
    comps: Dict[sp.Symbol, Expr] = {}
    # directional derivative along the restricted D_x
    dx: Dict[sp.Symbol, Expr] = {}
    for z in H.chart_jets():
        i, r = table.jet_info(z)
        dx[z] = restrict(table.jet(i, r + 1).sym, H)

    def dtilde_x(e: Expr) -> Expr:
        out = sp.diff(e, table.x.sym)
        for z in H.chart_jets():
            out += dx[z] * sp.diff(e, z)
        return restrict(out, H)

    for i, _ in enumerate(table.dependents, start=1):
        current = restrict(sp.sympify(phi[i - 1]), H)
        for r in range(H.orders[i - 1]):
            comps[table.jet(i, r).sym] = current
            current = dtilde_x(current)
    return VectorField(H.chart, comps)

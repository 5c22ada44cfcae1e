"""Evolution systems u^i_t = f^i and the total derivatives on their chart.

The chart carries only x, t and the pure x-derivative coordinates; the
evolution equations and their differential consequences are built into
the operators, so t-derivative coordinates never exist.  Computations
run inside a finite truncation window K and fail loudly when a result
would need a jet coordinate beyond it.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import sympy as sp

from .expressions import (
    Expr,
    Role,
    SymbolTable,
    Verdict,
    ZeroTestPolicy,
    DEFAULT_POLICY,
    ExprError,
    is_zero,
    normalize,
)

__all__ = ["TruncationOverflowError", "EvolutionSystem", "bar_Dx", "bar_Dt", "commutator_check"]


class TruncationOverflowError(ExprError):
    def __init__(self, needed: int, limit: int):
        self.needed = needed
        self.limit = limit
        super().__init__(f"jet order {needed} exceeds the truncation level K={limit}")


@dataclass
class EvolutionSystem:
    """The right-hand sides f^i over a shared symbol table.

    ``truncation`` is the maximal x-order retained for any dependent
    variable; operations needing more raise TruncationOverflowError
    instead of silently truncating.
    """

    table: SymbolTable
    f: Tuple[Expr, ...]
    truncation: int
    order_bound: int = field(init=False)
    _prolongations: Dict[Tuple[int, int], Expr] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __init__(self, table: SymbolTable, f: Sequence[Expr], truncation: int | None = None):
        self.table = table
        self.f = tuple(normalize(fi) for fi in f)
        if len(self.f) != len(table.dependents):
            raise ExprError("one evolution right-hand side per dependent variable required")
        self.order_bound = max([table.max_order(fi) for fi in self.f] + [0])
        for fi in self.f:
            self._check_symbols(fi)
        self.truncation = truncation if truncation is not None else self.order_bound + 12
        if self.truncation < self.order_bound:
            raise ExprError("truncation level below the system order")
        self._prolongations = {}
        self._lock = threading.Lock()

    def _check_symbols(self, e: Expr) -> None:
        for s in e.free_symbols:
            try:
                role = self.table.resolve(s.name).role
            except KeyError:
                raise ExprError(f"evolution rhs uses unknown symbol {s.name!r}")
            if role == Role.LEVEL_CONSTANT:
                raise ExprError("evolution rhs must not use level constants")

    @property
    def m(self) -> int:
        return len(self.f)

    def prolongation(self, i: int, r: int) -> Expr:
        """Cached D̄_x^r(f^i), 1-based dependent index."""
        key = (i, r)
        with self._lock:
            if key in self._prolongations:
                return self._prolongations[key]
        e = self.f[i - 1] if r == 0 else bar_Dx(self.prolongation(i, r - 1), self)
        with self._lock:
            self._prolongations.setdefault(key, e)
        return e


def bar_Dx(e: Expr, sys: EvolutionSystem) -> Expr:
    """Total x-derivative restricted to the evolution chart."""
    table = sys.table
    e = sp.sympify(e)
    top = table.max_order(e)
    if top >= sys.truncation:
        raise TruncationOverflowError(top + 1, sys.truncation)
    out = sp.diff(e, table.x.sym)
    for (i, r, s) in table.jets_in(e):
        out += table.jet(i, r + 1).sym * sp.diff(e, s)
    return normalize(out)


def bar_Dt(e: Expr, sys: EvolutionSystem) -> Expr:
    """Total t-derivative: ∂_t plus prolonged right-hand sides."""
    table = sys.table
    e = sp.sympify(e)
    top = table.max_order(e)
    if top + sys.order_bound > sys.truncation:
        raise TruncationOverflowError(top + sys.order_bound, sys.truncation)
    out = sp.diff(e, table.t.sym)
    for (i, r, s) in table.jets_in(e):
        out += sys.prolongation(i, r) * sp.diff(e, s)
    return normalize(out)


def commutator_check(sys: EvolutionSystem, e: Expr,
                     policy: ZeroTestPolicy = DEFAULT_POLICY) -> Verdict:
    """Self-test that the two total derivatives commute on ``e``."""
    lhs = bar_Dx(bar_Dt(e, sys), sys)
    rhs = bar_Dt(bar_Dx(e, sys), sys)
    return is_zero(lhs - rhs, policy)

"""Exterior calculus on the chart of a constraint submanifold.

Only what the descent needs: one-forms from frame cofactors, exterior
derivative, wedge products against one-forms and closedness tests (exact
or modulo an ideal of higher one-forms).  Forms store coefficients on
strictly increasing coordinate index tuples.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import sympy as sp

from .expressions import (
    Expr,
    ExprError,
    Verdict,
    ZeroTestPolicy,
    DEFAULT_POLICY,
    is_zero,
    pretty,
)
from .fields import SolvableStructure, VectorField, frame_matrix

__all__ = [
    "VolumeForm",
    "DifferentialForm",
    "OneForm",
    "TwoForm",
    "denominator",
    "beta",
    "cramer_forms",
    "exterior_derivative",
    "wedge",
    "closed_mod",
    "ClosednessVerdict",
]


@dataclass(frozen=True)
class VolumeForm:
    """Ordered chart coordinates with unit scale."""

    coords: Tuple[sp.Symbol, ...]

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))
        if len(set(self.coords)) != len(self.coords):
            raise ExprError("volume form coordinates must be distinct")

    @property
    def dim(self) -> int:
        return len(self.coords)


class DifferentialForm:
    """Degree-k form: map from increasing index tuples to coefficients."""

    def __init__(self, chart: Sequence[sp.Symbol], degree: int,
                 coeffs: Optional[Dict[Tuple[int, ...], Expr]] = None):
        self.chart: Tuple[sp.Symbol, ...] = tuple(chart)
        self.degree = degree
        self.coeffs: Dict[Tuple[int, ...], Expr] = {}
        for key, val in (coeffs or {}).items():
            val = sp.cancel(sp.sympify(val))
            if val == 0:
                continue
            if len(key) != degree or list(key) != sorted(set(key)):
                raise ExprError(f"bad index tuple {key} for degree {degree}")
            self.coeffs[tuple(key)] = val

    def coeff(self, *idx: int) -> Expr:
        return self.coeffs.get(tuple(idx), sp.Integer(0))

    def is_zero_form(self) -> bool:
        return not self.coeffs

    def map_coeffs(self, fn) -> "DifferentialForm":
        return DifferentialForm(self.chart, self.degree,
                                {k: fn(v) for k, v in self.coeffs.items()})

    def __repr__(self):
        if not self.coeffs:
            return "Form[0]"
        parts = []
        for key in sorted(self.coeffs):
            wedge_name = "^".join(f"d{self.chart[j].name}" for j in key)
            parts.append(f"({pretty(self.coeffs[key])}) {wedge_name}")
        return "Form[" + " + ".join(parts) + "]"


class OneForm(DifferentialForm):
    """Degree-1 form with coefficients keyed by chart coordinate."""

    def __init__(self, chart: Sequence[sp.Symbol], coefficients: Dict[sp.Symbol, Expr]):
        chart = tuple(chart)
        index = {z: j for j, z in enumerate(chart)}
        packed = {}
        for z, c in coefficients.items():
            if z not in index:
                raise ExprError(f"coefficient on non-chart coordinate {z}")
            packed[(index[z],)] = c
        super().__init__(chart, 1, packed)

    def coefficient(self, z: sp.Symbol) -> Expr:
        return self.coeff(self.chart.index(z))

    def coefficient_map(self) -> Dict[sp.Symbol, Expr]:
        return {self.chart[k[0]]: v for k, v in self.coeffs.items()}

    def pair(self, X: VectorField) -> Expr:
        """Interior product with a vector field (a scalar)."""
        return sp.cancel(sum(v * X.comp(self.chart[k[0]]) for k, v in self.coeffs.items()))


def TwoForm(chart: Sequence[sp.Symbol], coefficients: Dict[Tuple[int, int], Expr]) -> DifferentialForm:
    """Degree-2 form from (j < k) index pairs."""
    return DifferentialForm(chart, 2, dict(coefficients))


# ---------------------------------------------------------------------------
# frame contractions


def denominator(S: SolvableStructure, pair, volume: VolumeForm) -> Expr:
    """Frame determinant Δ with rows (X_1..X_{r-2}, Dx~, Dt~) in the
    volume coordinate order; the integrating factor is M = 1/Δ."""
    if volume.dim != len(S.chart):
        raise ExprError("volume form dimension does not match the chart")
    delta = sp.cancel(frame_matrix(S, pair, volume.coords).det(method="berkowitz"))
    if delta == 0:
        raise ExprError("frame determinant vanishes identically")
    return delta


def beta(i: int, S: SolvableStructure, pair, volume: VolumeForm) -> OneForm:
    """Cofactor one-form dual to X_i: β_i(W) = det(frame with row i -> W).

    Normalized so that β_i(X_i) = Δ and β_i kills every other frame
    field; this fixes the contraction-order sign once for the package.
    """
    r = volume.dim
    if not (1 <= i <= len(S)):
        raise ExprError(f"beta index {i} out of range")
    A = frame_matrix(S, pair, volume.coords)
    coeffs: Dict[sp.Symbol, Expr] = {}
    for j, z in enumerate(volume.coords):
        B = A.copy()
        B.row_del(i - 1)
        B.col_del(j)
        cof = sp.Integer(-1) ** (i - 1 + j) * B.det(method="berkowitz")
        coeffs[z] = sp.cancel(cof)
    return OneForm(volume.coords, coeffs)


def cramer_forms(S: SolvableStructure, pair, volume: VolumeForm) -> Tuple[Expr, List[OneForm]]:
    """Δ and the scaled forms Ω_i = β_i/Δ with Ω_i(X_j) = δ_ij."""
    delta = denominator(S, pair, volume)
    omegas = []
    for i in range(1, len(S) + 1):
        b = beta(i, S, pair, volume)
        scaled = {z: sp.cancel(c / delta) for z, c in b.coefficient_map().items()}
        omegas.append(OneForm(volume.coords, scaled))
    return delta, omegas


# ---------------------------------------------------------------------------
# derivative / wedge / closedness


def exterior_derivative(omega: OneForm) -> DifferentialForm:
    """d of a one-form as a two-form on the same chart."""
    chart = omega.chart
    coeffs: Dict[Tuple[int, ...], Expr] = {}
    cmap = {k[0]: v for k, v in omega.coeffs.items()}
    for j in range(len(chart)):
        for k in range(j + 1, len(chart)):
            c = sp.diff(cmap.get(k, sp.Integer(0)), chart[j]) - \
                sp.diff(cmap.get(j, sp.Integer(0)), chart[k])
            c = sp.cancel(c)
            if c != 0:
                coeffs[(j, k)] = c
    return DifferentialForm(chart, 2, coeffs)


def d_general(form: DifferentialForm) -> DifferentialForm:
    """Exterior derivative of any k-form (used by the d∘d self-test)."""
    chart = form.chart
    out: Dict[Tuple[int, ...], Expr] = {}
    for key, val in form.coeffs.items():
        for j in range(len(chart)):
            if j in key:
                continue
            new = tuple(sorted(key + (j,)))
            sign = sp.Integer(-1) ** new.index(j)
            c = out.get(new, sp.Integer(0)) + sign * sp.diff(val, chart[j])
            out[new] = c
    out = {k: sp.cancel(v) for k, v in out.items() if sp.cancel(v) != 0}
    return DifferentialForm(chart, form.degree + 1, out)


def wedge(a: DifferentialForm, b: OneForm) -> DifferentialForm:
    """a ∧ b for a one-form b."""
    if a.chart != b.chart:
        raise ExprError("wedge requires forms on the same chart")
    out: Dict[Tuple[int, ...], Expr] = {}
    for key, va in a.coeffs.items():
        for (j,), vb in b.coeffs.items():
            if j in key:
                continue
            new = tuple(sorted(key + (j,)))
            sign = sp.Integer(-1) ** (len(new) - 1 - new.index(j))
            out[new] = out.get(new, sp.Integer(0)) + sign * va * vb
    out = {k: sp.cancel(v) for k, v in out.items() if sp.cancel(v) != 0}
    return DifferentialForm(a.chart, a.degree + 1, out)


@dataclass
class ClosednessVerdict:
    closed: bool
    kind: str  # closed | closed-mod | not-closed | indeterminate
    witness: Optional[str] = None

    def __bool__(self):
        return self.closed


def closed_mod(omega: OneForm, higher: Sequence[OneForm],
               policy: ZeroTestPolicy = DEFAULT_POLICY) -> ClosednessVerdict:
    """Is dω = 0 modulo the ideal generated by the ``higher`` one-forms?

    Tested as the vanishing of dω ∧ ω_{i+1} ∧ ... ∧ ω_{r-2}; with no
    higher forms this is plain closedness.
    """
    current: DifferentialForm = exterior_derivative(omega)
    for h in higher:
        current = wedge(current, h)
    indeterminate = None
    for key, val in current.coeffs.items():
        v = is_zero(val, policy)
        if v.kind == "nonzero":
            names = ",".join(omega.chart[j].name for j in key)
            return ClosednessVerdict(False, "not-closed",
                                     witness=f"d-coefficient on ({names}) is nonzero")
        if v.kind == "indeterminate":
            indeterminate = key
    if indeterminate is not None:
        return ClosednessVerdict(False, "indeterminate",
                                 witness=f"indeterminate coefficient {indeterminate}")
    return ClosednessVerdict(True, "closed" if not higher else "closed-mod")

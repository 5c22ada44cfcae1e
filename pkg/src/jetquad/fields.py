"""Vector fields on a chart, Lie brackets and solvable-structure checks.

Membership in a function-coefficient span is decided through symbolic
minors rather than linear solves: Z lies in span(gens) on the open set
where gens are independent iff every (k+1)-minor of the stacked
component matrix vanishes identically.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

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

__all__ = [
    "VectorField",
    "lie_bracket",
    "SpanVerdict",
    "in_span",
    "SolvableStructure",
    "StructureCertificate",
    "verify_solvable_structure",
    "AbelianResult",
    "is_abelian",
]


@dataclass(frozen=True)
class VectorField:
    """Coefficient map over a fixed chart; missing entries mean zero."""

    chart: Tuple[sp.Symbol, ...]
    components: Dict[sp.Symbol, Expr]
    name: str = ""

    def __post_init__(self):
        comps = {z: sp.cancel(sp.sympify(c)) for z, c in self.components.items() if sp.sympify(c) != 0}
        unknown = set(comps) - set(self.chart)
        if unknown:
            names = ", ".join(sorted(s.name for s in unknown))
            raise ExprError(f"components on non-chart coordinates: {names}")
        object.__setattr__(self, "chart", tuple(self.chart))
        object.__setattr__(self, "components", comps)

    def comp(self, z: sp.Symbol) -> Expr:
        return self.components.get(z, sp.Integer(0))

    def row(self) -> List[Expr]:
        return [self.comp(z) for z in self.chart]

    def apply(self, h: Expr) -> Expr:
        """Directional derivative X(h)."""
        h = sp.sympify(h)
        out = sp.Integer(0)
        for z, c in self.components.items():
            out += c * sp.diff(h, z)
        return sp.cancel(out)

    def is_zero_field(self) -> bool:
        return not self.components

    def __repr__(self):
        label = self.name or "VectorField"
        body = " + ".join(f"({pretty(c)})*d/d{z}" for z, c in
                          sorted(self.components.items(), key=lambda kv: self.chart.index(kv[0])))
        return f"{label}[{body or '0'}]"


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    """[X, Y] componentwise: X(Y^k) - Y(X^k)."""
    if X.chart != Y.chart:
        raise ExprError("lie_bracket requires fields on the same chart")
    comps = {}
    for z in X.chart:
        c = X.apply(Y.comp(z)) - Y.apply(X.comp(z))
        c = sp.cancel(c)
        if c != 0:
            comps[z] = c
    return VectorField(X.chart, comps)


@dataclass
class SpanVerdict:
    in_span: bool
    kind: str  # in-span | not-in-span | indeterminate
    minors_tested: int = 0
    witness: Optional[str] = None

    def __bool__(self) -> bool:
        return self.in_span


def _numeric_rank_at_random(M: sp.Matrix, rng: random.Random, tries: int = 12) -> Optional[int]:
    syms = sorted(M.free_symbols, key=lambda s: s.name)
    for _ in range(tries):
        point = {s: sp.Rational(rng.randint(10, 200), 20) * rng.choice((1, -1))
                 for s in syms}
        try:
            num = M.xreplace(point).evalf(20)
            vals = sp.Matrix(num)
            return vals.rank(iszerofunc=lambda v: abs(v) < 1e-10)
        except (TypeError, ZeroDivisionError, ValueError):
            continue
    return None


def in_span(Z: VectorField, gens: Sequence[VectorField],
            policy: ZeroTestPolicy = DEFAULT_POLICY) -> SpanVerdict:
    """Does Z lie in the function-coefficient span of gens?"""
    if Z.is_zero_field():
        return SpanVerdict(True, "in-span", witness="zero field")
    if not gens:
        return SpanVerdict(False, "not-in-span", witness="empty generator set")
    chart = gens[0].chart
    k = len(gens)
    G = sp.Matrix([g.row() for g in gens])
    rng = random.Random(policy.seed + 17)
    rank = _numeric_rank_at_random(G, rng)
    if rank is not None and rank < k:
        return SpanVerdict(False, "indeterminate",
                           witness="generators not pointwise independent")
    stacked = sp.Matrix([g.row() for g in gens] + [Z.row()])
    tested = 0
    for cols in itertools.combinations(range(len(chart)), k + 1):
        minor = stacked[:, list(cols)].det(method="berkowitz")
        tested += 1
        v = is_zero(minor, policy)
        if v.kind == "nonzero":
            names = ", ".join(chart[c].name for c in cols)
            return SpanVerdict(False, "not-in-span", tested,
                               witness=f"nonzero minor on columns ({names})")
        if v.kind == "indeterminate":
            return SpanVerdict(False, "indeterminate", tested,
                               witness="indeterminate minor")
    return SpanVerdict(True, "in-span", tested)


class SolvableStructure:
    """Ordered candidate fields X_1..X_{r-2} on one chart."""

    def __init__(self, fields: Sequence[VectorField], names: Sequence[str] | None = None):
        self.fields: Tuple[VectorField, ...] = tuple(fields)
        if not self.fields:
            raise ExprError("a solvable structure needs at least one field")
        chart = self.fields[0].chart
        if any(f.chart != chart for f in self.fields):
            raise ExprError("all structure fields must share one chart")
        if len(self.fields) != len(chart) - 2:
            raise ExprError(
                f"structure length {len(self.fields)} != dim(H)-2 = {len(chart) - 2}")
        self.chart = chart
        self.names: Tuple[str, ...] = tuple(names) if names else tuple(
            f.name or f"X{i}" for i, f in enumerate(self.fields, start=1))
        self.certificate: Optional["StructureCertificate"] = None

    def __len__(self):
        return len(self.fields)

    def __iter__(self):
        return iter(self.fields)

    def __getitem__(self, i):
        return self.fields[i]


@dataclass
class StructureCertificate:
    accepted: bool
    bracket_results: List[Tuple[str, SpanVerdict]]
    delta: Expr
    delta_factors: List[Expr]
    failed_bracket: Optional[str] = None
    reason: Optional[str] = None

    def __bool__(self):
        return self.accepted


def _frame_rows(S: SolvableStructure, pair) -> List[VectorField]:
    return list(S.fields) + [pair.Dx, pair.Dt]


def frame_matrix(S: SolvableStructure, pair, coords: Sequence[sp.Symbol]) -> sp.Matrix:
    rows = [[f.comp(z) for z in coords] for f in _frame_rows(S, pair)]
    return sp.Matrix(rows)


def verify_solvable_structure(S: SolvableStructure, pair,
                              policy: ZeroTestPolicy = DEFAULT_POLICY,
                              volume=None) -> StructureCertificate:
    """Check the ordered symmetry conditions and transversality.

    For each h the brackets of X_h with the restricted derivatives and
    with every earlier X_j must stay inside the span of those earlier
    fields together with the restricted derivatives; the full frame must
    have a not-identically-zero determinant.  When a volume form is
    given its coordinate order fixes the sign of the reported Δ.
    """
    results: List[Tuple[str, SpanVerdict]] = []
    for h in range(1, len(S) + 1):
        Xh = S[h - 1]
        gens = [pair.Dx, pair.Dt] + list(S.fields[: h - 1])
        checks = [(f"[{S.names[h-1]}, Dx~]", lie_bracket(Xh, pair.Dx)),
                  (f"[{S.names[h-1]}, Dt~]", lie_bracket(Xh, pair.Dt))]
        for j in range(h - 1):
            checks.append((f"[{S.names[h-1]}, {S.names[j]}]", lie_bracket(Xh, S[j])))
        for label, Z in checks:
            v = in_span(Z, gens, policy)
            results.append((label, v))
            if not v:
                cert = StructureCertificate(False, results, sp.Integer(0), [],
                                            failed_bracket=label,
                                            reason=f"bracket {label} leaves the span: {v.witness}")
                S.certificate = cert
                return cert
    coords = volume.coords if volume is not None else S.chart
    delta = sp.cancel(frame_matrix(S, pair, coords).det(method="berkowitz"))
    dv = is_zero(delta, policy)
    if bool(dv):
        cert = StructureCertificate(False, results, delta, [],
                                    reason="frame determinant vanishes identically")
        S.certificate = cert
        return cert
    factors = [f for f, _ in sp.factor_list(sp.factor(delta))[1]]
    cert = StructureCertificate(True, results, delta, factors)
    S.certificate = cert
    return cert


@dataclass
class AbelianResult:
    abelian: bool
    x_brackets_abelian: bool
    failing: List[str]

    def __bool__(self):
        return self.abelian


def is_abelian(S: SolvableStructure, pair,
               policy: ZeroTestPolicy = DEFAULT_POLICY) -> AbelianResult:
    """All pairwise brackets zero, and each X_h normalizes the Cartan
    pair modulo the Cartan pair alone (the shortcut hypothesis)."""
    failing: List[str] = []
    x_ok = True
    for i in range(len(S)):
        for j in range(i + 1, len(S)):
            br = lie_bracket(S[i], S[j])
            if not br.is_zero_field():
                if not all(bool(is_zero(c, policy)) for c in br.components.values()):
                    failing.append(f"[{S.names[i]}, {S.names[j]}]")
                    x_ok = False
    cartan = [pair.Dx, pair.Dt]
    full_ok = x_ok
    for i in range(len(S)):
        for which, D in (("Dx~", pair.Dx), ("Dt~", pair.Dt)):
            br = lie_bracket(S[i], D)
            if br.is_zero_field():
                continue
            if not in_span(br, cartan, policy):
                failing.append(f"[{S.names[i]}, {which}]")
                full_ok = False
    return AbelianResult(full_ok, x_ok, failing)

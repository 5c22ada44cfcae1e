"""Problem files: a line-oriented text format describing an evolution
system, its differential constraints, candidate symmetry fields and
options, plus instantiation into the working objects.

Sections are headed by ``[name]``; entries are ``key = value`` where a
value is a quoted expression string, an integer, a comma list of
identifiers, or an inline map ``{ k = "v", ... }``.  Integer parameters
declared under ``[params]`` may be used in constraint orders and in the
``family`` symmetry directive (e.g. ``orders = 0..n-1``) and can be
overridden from the command line.
"""

from __future__ import annotations

import ast
import importlib.resources
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import sympy as sp

from .constraints import (
    ConstraintSet,
    RestrictedPair,
    Submanifold,
    build_submanifold,
    prolong_vertical_field,
    restricted_pair,
)
from .expressions import ExprError, SymbolTable, ZeroTestPolicy, parse
from .fields import SolvableStructure, VectorField
from .forms import VolumeForm
from .jets import EvolutionSystem

__all__ = ["ProblemError", "ProblemFile", "Workspace", "load", "loads",
           "format_problem", "instantiate", "bundled_path"]


class ProblemError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(message + where)


SymmetryEntry = Tuple[str, str, Union[Dict[str, str], str, Dict[str, str]]]


@dataclass
class ProblemFile:
    name: str
    dependents: List[str]
    evolution: Dict[str, str]
    constraints: Dict[str, Tuple[str, str]]  # dep -> (order text, rhs text)
    symmetries: List[SymmetryEntry]  # (name, kind, payload); kind: map|prolong|family
    params: Dict[str, Optional[float]]
    options: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        declared = set(self.dependents) | set(self.params)
        if len(self.dependents) != len(set(self.dependents)):
            raise ProblemError("duplicate dependent variable")
        for dep in self.evolution:
            if dep not in self.dependents:
                raise ProblemError(f"evolution equation for undeclared variable {dep!r}")
        for dep in self.dependents:
            if dep not in self.evolution:
                raise ProblemError(f"missing evolution equation for {dep!r}")
            if dep not in self.constraints:
                raise ProblemError(f"missing constraint for {dep!r}")
        for dep in self.constraints:
            if dep not in self.dependents:
                raise ProblemError(f"constraint for undeclared variable {dep!r}")


# ---------------------------------------------------------------------------
# reading


_SECTION_RE = re.compile(r"^\[([a-z_]+)\]$")
_ENTRY_RE = re.compile(r"^([A-Za-z][A-Za-z0-9_*]*)\s*=\s*(.*)$")


def _strip_comment(line: str) -> str:
    out = []
    quoted = False
    for ch in line:
        if ch == '"':
            quoted = not quoted
        if ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out).rstrip()


def _parse_value(text: str, lineno: int):
    text = text.strip()
    if text.startswith('"'):
        if not text.endswith('"') or len(text) < 2:
            raise ProblemError("unterminated string", lineno)
        return text[1:-1]
    if text.startswith("{"):
        if not text.endswith("}"):
            raise ProblemError("unterminated inline map", lineno)
        inner = text[1:-1]
        out: Dict[str, object] = {}
        for part in _split_commas(inner):
            if not part.strip():
                continue
            m = _ENTRY_RE.match(part.strip())
            if not m:
                raise ProblemError(f"bad map entry {part.strip()!r}", lineno)
            out[m.group(1)] = _parse_value(m.group(2), lineno)
        return out
    if "," in text:
        return [p.strip() for p in text.split(",") if p.strip()]
    try:
        return int(text)
    except ValueError:
        return text


def _split_commas(text: str) -> List[str]:
    parts, depth, quoted, cur = [], 0, False, []
    for ch in text:
        if ch == '"':
            quoted = not quoted
        elif ch == "{" and not quoted:
            depth += 1
        elif ch == "}" and not quoted:
            depth -= 1
        if ch == "," and depth == 0 and not quoted:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def loads(text: str, name: str = "problem") -> ProblemFile:
    section = None
    dependents: List[str] = []
    evolution: Dict[str, str] = {}
    constraints: Dict[str, Tuple[str, str]] = {}
    symmetries: List[SymmetryEntry] = []
    params: Dict[str, Optional[float]] = {}
    options: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1)
            if section not in ("variables", "params", "evolution", "constraints",
                               "symmetries", "options"):
                raise ProblemError(f"unknown section [{section}]", lineno)
            continue
        if section is None:
            raise ProblemError("entry before any section", lineno)
        if section == "params" and "=" not in line:
            for p in [p.strip() for p in line.split(",") if p.strip()]:
                params[p] = None
            continue
        m = _ENTRY_RE.match(line)
        if not m:
            raise ProblemError(f"cannot parse entry {line!r}", lineno)
        key, value = m.group(1), _parse_value(m.group(2), lineno)
        if section == "variables":
            if key == "independent":
                got = value if isinstance(value, list) else [value]
                if got != ["x", "t"]:
                    raise ProblemError("independent variables must be x, t", lineno)
            elif key == "dependent":
                dependents = value if isinstance(value, list) else [value]
            else:
                raise ProblemError(f"unknown variables key {key!r}", lineno)
        elif section == "params":
            params[key] = value if isinstance(value, (int, float)) else None
        elif section == "evolution":
            if not isinstance(value, str):
                raise ProblemError("evolution entries must be quoted expressions", lineno)
            evolution[key] = value
        elif section == "constraints":
            if not isinstance(value, dict) or "order" not in value or "rhs" not in value:
                raise ProblemError("constraint entries need { order = ..., rhs = \"...\" }",
                                   lineno)
            constraints[key] = (str(value["order"]), str(value["rhs"]))
        elif section == "symmetries":
            if not isinstance(value, dict):
                raise ProblemError("symmetry entries are inline maps", lineno)
            if key == "family":
                if "prolong" not in value or "orders" not in value:
                    raise ProblemError('family needs { prolong = "dep", orders = "a..b" }',
                                       lineno)
                symmetries.append((key, "family", {k: str(v) for k, v in value.items()}))
            elif "prolong" in value:
                symmetries.append((key, "prolong", str(value["prolong"])))
            else:
                symmetries.append((key, "map", {k: str(v) for k, v in value.items()}))
        elif section == "options":
            options[key] = value
    if not dependents:
        raise ProblemError("no dependent variables declared")
    return ProblemFile(name, dependents, evolution, constraints, symmetries,
                       params, options)


def load(path: Union[str, Path]) -> ProblemFile:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as err:
        raise ProblemError(f"cannot read problem file: {err}")
    return loads(text, name=p.stem)


def bundled_path(name: str) -> Path:
    """Path of a problem file shipped with the package."""
    res = importlib.resources.files("jetquad") / "problems" / name
    return Path(str(res))


def format_problem(pf: ProblemFile) -> str:
    """Canonical text for a problem file; reloading it round-trips."""
    lines = ["[variables]", "independent = x, t",
             "dependent = " + ", ".join(pf.dependents), ""]
    if pf.params:
        lines.append("[params]")
        bare = [k for k, v in pf.params.items() if v is None]
        if bare:
            lines.append(", ".join(bare))
        for k, v in pf.params.items():
            if v is not None:
                lines.append(f"{k} = {v}")
        lines.append("")
    lines.append("[evolution]")
    for dep in pf.dependents:
        lines.append(f'{dep} = "{pf.evolution[dep]}"')
    lines.append("")
    lines.append("[constraints]")
    for dep in pf.dependents:
        order, rhs = pf.constraints[dep]
        lines.append(f'{dep} = {{ order = {order}, rhs = "{rhs}" }}')
    lines.append("")
    if pf.symmetries:
        lines.append("[symmetries]")
        for name, kind, payload in pf.symmetries:
            if kind == "map":
                body = ", ".join(f'{k} = "{v}"' for k, v in payload.items())
                lines.append(f"{name} = {{ {body} }}")
            elif kind == "prolong":
                lines.append(f'{name} = {{ prolong = "{payload}" }}')
            else:
                body = ", ".join(f'{k} = "{v}"' for k, v in payload.items())
                lines.append(f"family = {{ {body} }}")
        lines.append("")
    if pf.options:
        lines.append("[options]")
        for k in sorted(pf.options):
            v = pf.options[k]
            lines.append(f"{k} = {', '.join(v) if isinstance(v, list) else v}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# integer parameter arithmetic (orders, family ranges)


def _int_eval(text: str, env: Dict[str, int], lineno: Optional[int] = None) -> int:
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError:
        raise ProblemError(f"bad integer expression {text!r}", lineno)

    def walk(node) -> int:
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, int):
            return node.value
        if isinstance(node, ast.Name):
            if node.id not in env:
                raise ProblemError(f"unknown integer parameter {node.id!r}", lineno)
            return env[node.id]
        if isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Add, ast.Sub, ast.Mult)):
            a, b = walk(node.left), walk(node.right)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            return a * b
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
            return -walk(node.operand)
        raise ProblemError(f"unsupported integer expression {text!r}", lineno)

    return walk(tree)


def _eval_range(text: str, env: Dict[str, int]) -> Tuple[int, int]:
    if ".." not in text:
        raise ProblemError(f"range must look like a..b, got {text!r}")
    a, b = text.split("..", 1)
    return _int_eval(a, env), _int_eval(b, env)


# ---------------------------------------------------------------------------
# instantiation


@dataclass
class Workspace:
    problem: ProblemFile
    table: SymbolTable
    system: EvolutionSystem
    constraints: ConstraintSet
    H: Submanifold
    pair: RestrictedPair
    structure: Optional[SolvableStructure]
    volume: VolumeForm
    param_values: Dict[str, float]
    int_params: Dict[str, int]

    @property
    def name(self) -> str:
        return self.problem.name


def instantiate(pf: ProblemFile, overrides: Optional[Dict[str, float]] = None) -> Workspace:
    """Build the symbol table, system, submanifold, restricted pair,
    volume form and candidate structure for a problem file."""
    overrides = dict(overrides or {})
    int_env: Dict[str, int] = {}
    symbolic: List[str] = []
    values: Dict[str, float] = {}
    for name, declared in pf.params.items():
        if declared is None:
            # bare declaration: a symbolic parameter, optionally pinned
            symbolic.append(name)
            if name in overrides:
                values[name] = float(overrides.pop(name))
        else:
            # integer template parameter such as the heat family order
            int_env[name] = int(overrides.pop(name, declared))
    if overrides:
        extra = ", ".join(sorted(overrides))
        raise ProblemError(f"override for undeclared parameter(s): {extra}")

    table = SymbolTable(pf.dependents, parameters=symbolic)
    subs = {table.resolve(k).sym: sp.nsimplify(v, rational=True) for k, v in values.items()}

    def expr(text: str):
        e = parse(text, table)
        return e.xreplace(subs) if subs else e

    f = [expr(pf.evolution[dep]) for dep in pf.dependents]
    orders = [_int_eval(pf.constraints[dep][0], int_env) for dep in pf.dependents]
    g = [expr(pf.constraints[dep][1]) for dep in pf.dependents]
    order_bound = max([table.max_order(fi) for fi in f] + [0])
    K = pf.options.get("truncation")
    if K is None:
        K = order_bound + max(orders) + 4
    sys_ = EvolutionSystem(table, f, truncation=int(K))
    cons = ConstraintSet(table, orders, g)
    H = build_submanifold(sys_, cons)
    pair = restricted_pair(sys_, H)

    fields: List[VectorField] = []
    names: List[str] = []
    for name, kind, payload in pf.symmetries:
        if kind == "map":
            comps = {}
            for coord, text in payload.items():
                z = table.resolve(coord).sym
                if z not in H.chart:
                    raise ProblemError(f"symmetry {name}: {coord!r} is not a chart coordinate")
                comps[z] = expr(text)
            fields.append(VectorField(H.chart, comps, name=name))
            names.append(name)
        elif kind == "prolong":
            phi = [expr(t.strip()) for t in payload.split(";")]
            if len(phi) != len(pf.dependents):
                raise ProblemError(f"symmetry {name}: one generator per dependent required")
            fields.append(prolong_vertical_field(phi, H))
            names.append(name)
        else:  # family
            dep = payload["prolong"]
            if dep not in pf.dependents:
                raise ProblemError(f"family generator {dep!r} is not a dependent variable")
            dep_index = pf.dependents.index(dep) + 1
            lo, hi = _eval_range(payload["orders"], int_env)
            for r in range(lo, hi + 1):
                phi = [sp.Integer(0)] * len(pf.dependents)
                phi[dep_index - 1] = table.jet(dep_index, r).sym
                fields.append(prolong_vertical_field(phi, H))
                names.append(f"X{len(names) + 1}")
    structure = None
    if fields:
        structure = SolvableStructure(fields, names)

    vol_names = pf.options.get("volume_order")
    if vol_names:
        coords = tuple(table.resolve(n).sym for n in vol_names)
        if set(coords) != set(H.chart) or len(coords) != len(H.chart):
            raise ProblemError("volume_order must be a permutation of the chart")
    else:
        coords = H.chart
    volume = VolumeForm(coords)
    return Workspace(pf, table, sys_, cons, H, pair, structure, volume,
                     values, int_env)

"""Command line front end: check constraints and structures, run the
reduction, and verify emitted solutions.

Exit codes: 0 all verdicts positive, 1 a verification failed, 2 input
error, 3 internal limitation (non-integrable form or unsolvable level
set).  ``--report`` writes a machine-readable key-value block per stage.
"""

from __future__ import annotations

import argparse
import re
import sys as _sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import sympy as sp

from .checks import Report, SamplePlan, constraint_residual, residual, spot_check
from .constraints import check_compatibility
from .expressions import ExprError, ZeroTestPolicy, parse, pretty
from .fields import is_abelian, verify_solvable_structure
from .problem import ProblemError, ProblemFile, Workspace, instantiate, load
from .reduction import ReductionChain, descend

__all__ = ["main", "run", "render_report"]

COMMANDS = ("check-constraint", "check-structure", "reduce", "verify", "all")

EXIT_OK = 0
EXIT_VERIFICATION = 1
EXIT_INPUT = 2
EXIT_LIMITATION = 3


@dataclass
class Block:
    stage: str
    items: List[Tuple[str, str]] = field(default_factory=list)

    def add(self, key: str, value) -> None:
        if isinstance(value, float):
            value = f"{value:.12e}"
        self.items.append((key, str(value)))


def render_report(blocks: Sequence[Block]) -> str:
    out = []
    for b in blocks:
        out.append(f"stage = {b.stage}")
        for k, v in b.items:
            out.append(f"{k} = {v}")
        out.append("")
    return "\n".join(out)


def _policy_from(args) -> ZeroTestPolicy:
    return ZeroTestPolicy(seed=args.seed, numeric_only=args.numeric_only)


def _plan_from(args) -> SamplePlan:
    return SamplePlan(count=args.samples, seed=args.seed)


def _stage_compatibility(ws: Workspace, policy, blocks, human) -> bool:
    rep = check_compatibility(ws.system, ws.constraints, ws.H, policy)
    b = Block("compatibility")
    b.add("verdict", "compatible" if rep.compatible else "incompatible")
    for dep, v in rep.verdicts:
        b.add(f"residual_verdict.{dep}", v.kind)
    for dep, e in rep.residuals:
        if pretty(e) != "0":
            b.add(f"expr.{dep}", pretty(e))
    for tag, v in rep.cross_checks:
        b.add(f"cross.{tag}", v.kind)
    blocks.append(b)
    if rep.compatible:
        human.append(f"constraint submanifold: compatible "
                     f"(dim H = {ws.H.dim}, chart {', '.join(z.name for z in ws.H.chart)})")
    else:
        bad = "; ".join(f"D_t(L_{d})|_H = {pretty(e)}" for d, e in rep.failing())
        human.append(f"constraint submanifold: INCOMPATIBLE: {bad}")
    return rep.compatible


def _stage_structure(ws: Workspace, policy, blocks, human) -> bool:
    if ws.structure is None:
        raise ProblemError("problem file declares no symmetries")
    cert = verify_solvable_structure(ws.structure, ws.pair, policy, volume=ws.volume)
    ab = is_abelian(ws.structure, ws.pair, policy)
    b = Block("structure")
    b.add("verdict", "accepted" if cert.accepted else "rejected")
    for label, v in cert.bracket_results:
        b.add(f"bracket.{label}", v.kind)
    if cert.accepted:
        b.add("delta", pretty(cert.delta))
        for k, fct in enumerate(cert.delta_factors):
            b.add(f"excluded_locus.{k}", pretty(fct) + " = 0")
    if cert.failed_bracket:
        b.add("failed_bracket", cert.failed_bracket)
    b.add("abelian", str(ab.abelian).lower())
    blocks.append(b)
    if cert.accepted:
        human.append(f"solvable structure: accepted; Delta = {pretty(cert.delta)}"
                     + ("; abelian (single integrating factor)" if ab.abelian else ""))
    else:
        human.append(f"solvable structure: REJECTED ({cert.reason})")
    return cert.accepted


def _stage_reduce(ws: Workspace, policy, blocks, human) -> Tuple[Optional[ReductionChain], int]:
    chain = descend(ws.structure, ws.pair, ws.volume, policy)
    b = Block("reduction")
    b.add("status", chain.status)
    b.add("delta", pretty(chain.delta))
    b.add("M", pretty(chain.M))
    for rec in chain.levels:
        b.add(f"F{rec.index}", pretty(rec.F))
        if rec.rule is not None:
            b.add(f"levelset.{rec.index}",
                  f"{rec.rule.coord.name} = {pretty(rec.rule.rhs)}")
            for k, defn in rec.rule.derived_constants:
                b.add(f"constant.{k.name}", pretty(defn))
    for dep, e in sorted(chain.solution.items()):
        b.add(f"solution.{dep}", pretty(e))
    for j, s in enumerate(chain.side_conditions):
        b.add(f"side.{j}", s)
    if chain.diagnostic:
        b.add("diagnostic", chain.diagnostic)
    blocks.append(b)
    human.append(f"integrating factor M = {pretty(chain.M)}")
    for rec in chain.levels:
        human.append(f"  F_{rec.index} = {pretty(rec.F)}")
    if chain.status == "complete":
        for dep, e in sorted(chain.solution.items()):
            human.append(f"solution: {dep} = {pretty(e)}")
        if chain.side_conditions:
            human.append("side conditions: " + "; ".join(chain.side_conditions))
        return chain, EXIT_OK
    human.append(f"reduction INCOMPLETE: {chain.diagnostic}")
    code = EXIT_VERIFICATION if "not closed" in (chain.diagnostic or "") else EXIT_LIMITATION
    return chain, code


def _stage_verify(ws: Workspace, solution: Dict[str, sp.Expr], plan, blocks, human) -> bool:
    reports = residual(solution, ws.system, plan) + \
        constraint_residual(solution, ws.constraints, plan)
    b = Block("verify")
    ok = True
    for r in reports:
        b.add(f"verdict.{r.name}", "pass" if r.passed else "fail")
        b.add(f"max_residual.{r.name}", r.max_rel_residual)
        if r.symbolic_zero is not None:
            b.add(f"symbolic_zero.{r.name}", str(bool(r.symbolic_zero)).lower())
        ok = ok and r.passed
    blocks.append(b)
    worst = max((r.max_rel_residual for r in reports), default=0.0)
    human.append(("verification passed" if ok else "verification FAILED")
                 + f" (max relative residual {worst:.3e} over {plan.count} samples)")
    return ok


def _read_chain_solutions(path: Path, ws: Workspace) -> Dict[str, sp.Expr]:
    sols: Dict[str, str] = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if line.startswith("solution."):
            key, _, value = line.partition("=")
            dep = key.strip()[len("solution."):]
            sols[dep] = value.strip()
    if not sols:
        raise ProblemError(f"no solution entries found in {path}")
    out: Dict[str, sp.Expr] = {}
    for dep, text in sols.items():
        for tok in set(re.findall(r"[A-Za-z][A-Za-z0-9_]*", text)):
            try:
                ws.table.resolve(tok)
            except KeyError:
                if tok not in ("exp", "log", "sqrt", "sin", "cos"):
                    ws.table.add_parameter(tok, positive=tok.startswith("k"))
        out[dep] = parse(text, ws.table)
    return out


def run(command: str, pf: ProblemFile, *, overrides=None, seed: int = 20210,
        samples: int = 100, truncation: Optional[int] = None,
        numeric_only: bool = False, chain_file: Optional[Path] = None):
    """Execute one pipeline command; returns (exit code, human, machine)."""
    if command not in COMMANDS:
        raise ProblemError(f"unknown command {command!r}")
    if truncation is not None:
        pf.options["truncation"] = truncation
    ws = instantiate(pf, overrides)
    policy = ZeroTestPolicy(seed=seed, numeric_only=numeric_only)
    plan = SamplePlan(count=samples, seed=seed)
    blocks: List[Block] = []
    human: List[str] = [f"problem: {ws.name}"]

    code = EXIT_OK
    if command in ("check-constraint", "check-structure", "reduce", "all"):
        ok = _stage_compatibility(ws, policy, blocks, human)
        if not ok:
            return EXIT_VERIFICATION, "\n".join(human), render_report(blocks)
        if command == "check-constraint":
            return EXIT_OK, "\n".join(human), render_report(blocks)
    if command in ("check-structure", "reduce", "all"):
        ok = _stage_structure(ws, policy, blocks, human)
        if not ok:
            return EXIT_VERIFICATION, "\n".join(human), render_report(blocks)
        if command == "check-structure":
            return EXIT_OK, "\n".join(human), render_report(blocks)
    chain = None
    if command in ("reduce", "all"):
        chain, code = _stage_reduce(ws, policy, blocks, human)
        if command == "reduce" or code != EXIT_OK:
            return code, "\n".join(human), render_report(blocks)
    if command in ("verify", "all"):
        if command == "verify":
            if chain_file is not None:
                solution = _read_chain_solutions(chain_file, ws)
            else:
                cert = verify_solvable_structure(ws.structure, ws.pair, policy)
                if not cert.accepted:
                    raise ProblemError("structure rejected; nothing to verify")
                chain, code = _stage_reduce(ws, policy, blocks, human)
                if code != EXIT_OK:
                    return code, "\n".join(human), render_report(blocks)
                solution = chain.solution
        else:
            solution = chain.solution
        ok = _stage_verify(ws, solution, plan, blocks, human)
        if not ok:
            return EXIT_VERIFICATION, "\n".join(human), render_report(blocks)
    return EXIT_OK, "\n".join(human), render_report(blocks)


def _parse_params(items: Sequence[str]) -> Dict[str, float]:
    out: Dict[str, float] = {}
    for item in items or ():
        for piece in item.split(","):
            if not piece.strip():
                continue
            if "=" not in piece:
                raise ProblemError(f"--param expects name=value, got {piece!r}")
            name, _, value = piece.partition("=")
            try:
                out[name.strip()] = float(value)
            except ValueError:
                raise ProblemError(f"bad numeric value in --param {piece!r}")
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser(
        prog="jetquad",
        description="verify differential constraints and solvable structures "
                    "for evolution PDEs and integrate them by quadratures")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("problem", help="path to a .prob file")
    ap.add_argument("--seed", type=int, default=20210)
    ap.add_argument("--samples", type=int, default=100)
    ap.add_argument("--truncation", type=int, default=None)
    ap.add_argument("--report", type=Path, default=None,
                    help="write the machine-readable report here")
    ap.add_argument("--numeric-only", action="store_true",
                    help="skip symbolic zero tests, decide by sampling only")
    ap.add_argument("--param", action="append", default=[],
                    help="override a parameter, e.g. --param n=5 or --param a=1,b=0")
    ap.add_argument("--chain", type=Path, default=None,
                    help="for `verify`: report file with solution.* entries")
    args = ap.parse_args(argv)

    try:
        pf = load(args.problem)
        overrides = _parse_params(args.param)
        code, human, machine = run(
            args.command, pf, overrides=overrides, seed=args.seed,
            samples=args.samples, truncation=args.truncation,
            numeric_only=args.numeric_only, chain_file=args.chain)
    except (ProblemError, ExprError) as err:
        print(f"error: {err}", file=_sys.stderr)
        return EXIT_INPUT
    print(human)
    if args.report is not None:
        args.report.write_text(machine)
    return code


if __name__ == "__main__":
    raise SystemExit(main())

"""Command-line front end.

Usage examples:
  pathspin enumerate --alpha 0.6 --gamma 0.8 --format csv
  pathspin simulate --alpha 0.6 --gamma 0.8 --runs 100000 --seed 7 --aggregate --format json
  pathspin sweep --alpha-steps 21 --gamma-steps 21 --out sweep.csv
  pathspin verify
  pathspin eve --alpha 0.6

Exit codes: 0 success, 1 verification or internal failure, 2 usage error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from collections import Counter
from pathlib import Path
from typing import Mapping

from . import __version__
from .analysis import (
    average_fidelity_formula,
    eve_information,
    premature_measurement_leak,
    sweep,
    uniform_grid,
    verify_grid,
)
from .protocol import (
    CORRECTION_TABLE,
    BranchRecord,
    ProtocolConfig,
    enumerate_branches,
    run_sampled,
)
from .statevec import StateVectorError

SCHEMA_VERSION = 1

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class CliFailure(Exception):
    def __init__(self, message: str, code: int = EXIT_FAIL):
        super().__init__(message)
        self.code = code


def fmt(x: float | None) -> str:
    """CSV number: 15 significant digits, '.' decimal separator, empty when undefined."""
    return "" if x is None else format(float(x), ".15g")


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _json_text(doc: dict) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, **doc}, indent=2) + "\n"


def _config_dict(cfg: ProtocolConfig) -> dict:
    return {"alpha": cfg.alpha, "beta": cfg.beta, "gamma": cfg.gamma, "delta": cfg.delta,
            "phase": cfg.input_phase, "seed": cfg.seed}


def _formula_or_none(cfg: ProtocolConfig) -> float | None:
    return average_fidelity_formula(cfg) if cfg.input_phase == 0.0 else None


def _ket(v) -> str:
    def c(z: complex) -> str:
        if abs(z.imag) < 5e-13:
            return f"{z.real:.6f}"
        return f"({z.real:.6f}{z.imag:+.6f}i)"
    return f"{c(v[0])}|0> + {c(v[1])}|1>"


# -- enumerate ----------------------------------------------------------------

BRANCH_HEADER = ["m2", "ma", "bob_path", "bob_spin", "probability", "correction",
                 "out_amp0_re", "out_amp0_im", "out_amp1_re", "out_amp1_im", "fidelity"]


def _branch_row(r: BranchRecord) -> list[str]:
    out = r.output_state
    amps = ["", "", "", ""] if out is None else [fmt(out[0].real), fmt(out[0].imag), fmt(out[1].real), fmt(out[1].imag)]
    return [str(r.m2), str(r.ma), "ab"[r.bob.path_bit], str(r.bob.spin_bit), fmt(r.probability),
            r.correction.value, *amps, fmt(r.fidelity)]


def _branch_json(r: BranchRecord) -> dict:
    out = r.output_state
    return {
        "m2": r.m2, "ma": r.ma, "path": "ab"[r.bob.path_bit], "spin": r.bob.spin_bit,
        "probability": r.probability, "correction": r.correction.value,
        "output": None if out is None else [out[0].real, out[0].imag, out[1].real, out[1].imag],
        "fidelity": r.fidelity,
    }


def _enumerated_average(records: list[BranchRecord]) -> float:
    return math.fsum(r.probability * r.fidelity for r in records if r.defined)


def cmd_enumerate(args, table: Mapping = CORRECTION_TABLE) -> tuple[int, str]:
    cfg = ProtocolConfig(args.alpha, args.gamma, input_phase=args.phase)
    records = enumerate_branches(cfg, table)
    total = math.fsum(r.probability for r in records)
    if abs(total - 1.0) > 1e-10:
        raise CliFailure(f"branch probabilities sum to {total!r}")
    f_enum = _enumerated_average(records)
    if args.format == "json":
        return EXIT_OK, _json_text({
            "command": "enumerate",
            "config": _config_dict(cfg),
            "branches": [_branch_json(r) for r in records],
            "summary": {"f_avg_formula": _formula_or_none(cfg), "f_avg_enumerated": f_enum},
        })
    if args.format == "csv":
        return EXIT_OK, _csv_text(BRANCH_HEADER, (_branch_row(r) for r in records))
    lines = [f"alpha={cfg.alpha:.8g} beta={cfg.beta:.8g} gamma={cfg.gamma:.8g} delta={cfg.delta:.8g} phase={cfg.input_phase:.8g}"]
    for m2 in (0, 1):
        for ma in (0, 1):
            rows = [r for r in records if (r.m2, r.ma) == (m2, ma)]
            p_alice = 4 * rows[0].probability
            lines.append("")
            lines.append(f"Alice: |{m2}>_2 |{ma}_x>_a   probability {p_alice:.6f}")
            lines.append(f"  {'path and spin':<16}{'unitary':<9}{'final state of particle 3':<44}{'fidelity':>10}")
            for r in rows:
                meas = f"|{'ab'[r.bob.path_bit]}>|{r.bob.spin_bit}_x>"
                state = "(branch does not occur)" if r.output_state is None else _ket(r.output_state)
                fid = "-" if r.fidelity is None else f"{r.fidelity:.10f}"
                lines.append(f"  {meas:<16}{r.correction.value:<9}{state:<44}{fid:>10}")
    f_formula = _formula_or_none(cfg)
    lines.append("")
    lines.append(f"average fidelity: enumerated {f_enum:.12f}"
                 + ("" if f_formula is None else f", closed form {f_formula:.12f}"))
    return EXIT_OK, "\n".join(lines) + "\n"


# -- simulate -----------------------------------------------------------------


def cmd_simulate(args, table: Mapping = CORRECTION_TABLE) -> tuple[int, str]:
    cfg = ProtocolConfig(args.alpha, args.gamma, input_phase=args.phase, seed=args.seed, mode="Sample")
    runs = run_sampled(cfg, args.runs, table)
    if not args.aggregate:
        header = ["run", "m2", "ma", "bob_path", "bob_spin", "correction", "fidelity"]
        rows = [[str(r.run_index), str(r.branch.m2), str(r.branch.ma), "ab"[r.branch.bob.path_bit],
                 str(r.branch.bob.spin_bit), r.branch.correction.value, fmt(r.branch.fidelity)] for r in runs]
        if args.format == "json":
            keys = ["run", "m2", "ma", "path", "spin", "correction", "fidelity"]
            recs = [dict(zip(keys, (r.run_index, r.branch.m2, r.branch.ma, "ab"[r.branch.bob.path_bit],
                                    r.branch.bob.spin_bit, r.branch.correction.value, r.branch.fidelity)))
                    for r in runs]
            return EXIT_OK, _json_text({"command": "simulate", "config": _config_dict(cfg), "runs": recs})
        if args.format == "csv":
            return EXIT_OK, _csv_text(header, rows)
        return EXIT_OK, "\n".join("  ".join(f"{c:>8}" for c in row) for row in [header, *rows]) + "\n"

    n = len(runs)
    counts = Counter(r.branch.key for r in runs)
    enumerated = enumerate_branches(cfg, table)
    expected = {r.key: r.probability for r in enumerated}
    fids = [r.branch.fidelity for r in runs]
    mean = math.fsum(fids) / n
    var = math.fsum((f - mean) ** 2 for f in fids) / (n - 1) if n > 1 else 0.0
    sem = math.sqrt(var / n)
    branches = []
    for key in sorted(expected):
        p = expected[key]
        branches.append({
            "m2": key[0], "ma": key[1], "path": "ab"[key[2]], "spin": key[3],
            "count": counts.get(key, 0), "frequency": counts.get(key, 0) / n,
            "expected_probability": p, "sigma": math.sqrt(p * (1 - p) / n),
        })
    summary = {"n_runs": n, "mean_fidelity": mean, "fidelity_stderr": sem,
               "f_avg_formula": _formula_or_none(cfg),
               "f_avg_enumerated": _enumerated_average(enumerated)}
    if args.format == "json":
        return EXIT_OK, _json_text({"command": "simulate", "config": _config_dict(cfg),
                                    "branches": branches, "summary": summary})
    header = ["m2", "ma", "bob_path", "bob_spin", "count", "frequency", "expected_probability", "sigma"]
    rows = [[str(b["m2"]), str(b["ma"]), b["path"], str(b["spin"]), str(b["count"]), fmt(b["frequency"]),
             fmt(b["expected_probability"]), fmt(b["sigma"])] for b in branches]
    if args.format == "csv":
        return EXIT_OK, _csv_text(header, rows)
    lines = ["  ".join(f"{c:>20}" for c in header)]
    lines += ["  ".join(f"{c:>20}" for c in row) for row in rows]
    lines.append(f"mean fidelity {mean:.8f} +- {sem:.2e} (enumerated {summary['f_avg_enumerated']:.8f})")
    return EXIT_OK, "\n".join(lines) + "\n"


# -- sweep ----------------------------------------------------------------------


def cmd_sweep(args) -> tuple[int, str]:
    alphas = args.alphas if args.alphas else uniform_grid(args.alpha_steps)
    gammas = args.gammas if args.gammas else uniform_grid(args.gamma_steps)
    grid = sweep(alphas, gammas, validate=args.validate)
    if grid.max_validation_error is not None and grid.max_validation_error > 1e-10:
        raise CliFailure(f"closed form disagrees with enumeration by {grid.max_validation_error:.3e}")
    if args.format == "json":
        text = _json_text({"command": "sweep", "alphas": grid.alphas, "gammas": grid.gammas,
                           "values": grid.values.tolist(), "max_validation_error": grid.max_validation_error})
    elif args.format == "table":
        lines = ["alpha \\ gamma " + " ".join(f"{g:>8.4f}" for g in grid.gammas)]
        for i, a in enumerate(grid.alphas):
            lines.append(f"{a:>13.4f} " + " ".join(f"{v:>8.4f}" for v in grid.values[i]))
        text = "\n".join(lines) + "\n"
    else:
        text = _csv_text(["alpha", "gamma", "f_avg"], ([fmt(a), fmt(g), fmt(v)] for a, g, v in grid.rows()))
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            raise CliFailure(f"cannot write {args.out}: {exc.strerror or exc}", EXIT_IO) from exc
        return EXIT_OK, f"wrote {len(grid.alphas) * len(grid.gammas)} rows to {args.out}\n"
    return EXIT_OK, text


# -- verify ---------------------------------------------------------------------


def cmd_verify(args, table: Mapping = CORRECTION_TABLE) -> tuple[int, str]:
    grid = uniform_grid(args.grid_steps)
    report = verify_grid(grid, grid, args.tolerance, table)
    if args.format == "json":
        return (EXIT_OK if report.ok else EXIT_FAIL), _json_text({
            "command": "verify", "ok": report.ok, "tolerance": args.tolerance, "grid_points": report.points,
            "branches": report.branches, "checks": report.checks, "first_failure": report.first_failure,
            "n_failures": len(report.failures)})
    if report.ok:
        return EXIT_OK, (f"PASS: {report.branches} branches × {report.points} grid points verified "
                         f"({report.checks} checks, tolerance {args.tolerance:g})\n")
    return EXIT_FAIL, (f"FAIL: {report.first_failure}\n"
                       f"{len(report.failures)} of {report.checks} checks failed (tolerance {args.tolerance:g})\n")


# -- eve ------------------------------------------------------------------------


def cmd_eve(args) -> tuple[int, str]:
    cfg = ProtocolConfig(args.alpha, args.gamma)
    rho, independence = eve_information(cfg)
    leak = premature_measurement_leak(cfg)
    m = rho.matrix
    if args.format == "json":
        return EXIT_OK, _json_text({
            "command": "eve", "config": _config_dict(cfg),
            "rho_eve": {"basis": ["00", "01", "10", "11"], "re": m.real.tolist(), "im": m.imag.tolist()},
            "diagonal": m.diagonal().real.tolist(),
            "input_independence": independence, "premature_leak": leak})
    if args.format == "csv":
        rows = [[f"{i:02b}", f"{j:02b}", fmt(m[i, j].real), fmt(m[i, j].imag)] for i in range(4) for j in range(4)]
        return EXIT_OK, _csv_text(["row", "col", "re", "im"], rows)
    lines = [f"Eve's (path, spin) state of particle 1, alpha={cfg.alpha:.8g}:",
             "        " + "  ".join(f"{'|' + format(j, '02b') + '>':>10}" for j in range(4))]
    for i in range(4):
        lines.append(f"  <{i:02b}| " + "  ".join(f"{m[i, j].real:>10.6f}" for j in range(4)))
    lines.append(f"diagonal: {', '.join(f'{x:.6f}' for x in m.diagonal().real)}")
    lines.append(f"input independence (max entrywise spread over probes): {independence:.3e}")
    lines.append(f"premature-measurement leak distance: {leak:.6f}")
    return EXIT_OK, "\n".join(lines) + "\n"


# -- argument handling --------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, formats=("table", "json", "csv"), default="table") -> None:
    p.add_argument("--format", choices=formats, default=default)
    p.add_argument("--config", metavar="PATH", help="JSON file whose keys mirror flag names; flags win")


def _add_params(p: argparse.ArgumentParser, gamma_default: float | None = None) -> None:
    p.add_argument("--alpha", type=float, required=True, help="beam-splitter amplitude in [0, 1]")
    p.add_argument("--gamma", type=float, required=gamma_default is None, default=gamma_default,
                   help="input amplitude of |0> in [0, 1]")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pathspin", description="Path-spin single-particle state transfer toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enumerate", help="all 16 measurement branches")
    _add_params(p)
    p.add_argument("--phase", type=float, default=0.0, help="phase on the |1> input amplitude, radians")
    _add_common(p)

    p = sub.add_parser("simulate", help="seeded Monte Carlo runs")
    _add_params(p)
    p.add_argument("--phase", type=float, default=0.0)
    p.add_argument("--runs", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--aggregate", action="store_true", help="branch frequencies and mean fidelity only")
    _add_common(p)

    p = sub.add_parser("sweep", help="average fidelity over an (alpha, gamma) grid")
    p.add_argument("--alpha-steps", type=int, default=21)
    p.add_argument("--gamma-steps", type=int, default=21)
    p.add_argument("--alphas", type=float, nargs="+", help="explicit alpha values (overrides --alpha-steps)")
    p.add_argument("--gammas", type=float, nargs="+", help="explicit gamma values (overrides --gamma-steps)")
    p.add_argument("--validate", action="store_true", help="cross-check every point against enumeration")
    p.add_argument("--out", metavar="FILE")
    _add_common(p, default="csv")

    p = sub.add_parser("verify", help="check every table and formula against the simulator")
    p.add_argument("--tolerance", type=float, default=1e-10)
    p.add_argument("--grid-steps", type=int, default=21)
    _add_common(p, default="table")

    p = sub.add_parser("eve", help="interception analysis")
    _add_params(p, gamma_default=0.6)
    _add_common(p)
    return ap


def _unit_interval(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and 0.0 <= v <= 1.0


def _validate(args, parser: argparse.ArgumentParser) -> None:
    def bad(flag: str, msg: str):
        parser.error(f"argument {flag}: {msg}")

    for name in ("alpha", "gamma"):
        if hasattr(args, name) and not _unit_interval(getattr(args, name)):
            bad(f"--{name}", f"must be in [0, 1], got {getattr(args, name)!r}")
    for name in ("alphas", "gammas"):
        for v in getattr(args, name, None) or []:
            if not _unit_interval(v):
                bad(f"--{name}", f"values must be in [0, 1], got {v!r}")
    if hasattr(args, "phase") and not (isinstance(args.phase, (int, float)) and math.isfinite(args.phase)):
        bad("--phase", f"must be a finite number, got {args.phase!r}")
    if hasattr(args, "runs") and (not isinstance(args.runs, int) or args.runs < 1):
        bad("--runs", f"must be >= 1, got {args.runs!r}")
    if hasattr(args, "seed") and (not isinstance(args.seed, int) or args.seed < 0):
        bad("--seed", f"must be a non-negative integer, got {args.seed!r}")
    for name in ("alpha_steps", "gamma_steps", "grid_steps"):
        v = getattr(args, name, 2)
        if not isinstance(v, int) or v < 2:
            bad(f"--{name.replace('_', '-')}", f"must be an integer >= 2, got {v!r}")
    if hasattr(args, "tolerance") and not (isinstance(args.tolerance, (int, float)) and args.tolerance > 0):
        bad("--tolerance", f"must be > 0, got {args.tolerance!r}")


def _load_config(path: str, subparser: argparse.ArgumentParser, parser: argparse.ArgumentParser) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliFailure(f"cannot read config {path}: {exc.strerror or exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        parser.error(f"argument --config: {path} is not valid JSON ({exc.msg})")
    if not isinstance(data, dict):
        parser.error("argument --config: top level must be a JSON object")
    known = {a.dest for a in subparser._actions}
    out = {}
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "help"):
            parser.error(f"argument --config: unknown key {key!r}")
        out[dest] = value
    return out


def _subparser(parser: argparse.ArgumentParser, name: str | None):
    """The subcommand parser called ``name``; the subparsers action itself when ``name`` is None."""
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action if name is None else action.choices[name]
    raise KeyError(name)


def main(argv: list[str] | None = None, *, correction_table: Mapping | None = None,
         stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    table = CORRECTION_TABLE if correction_table is None else correction_table
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg_path = _peek_config(argv)
        command = next((tok for tok in argv if tok in _subparser(parser, None).choices), None)
        if cfg_path is not None and command is not None:
            sub = _subparser(parser, command)
            overrides = _load_config(cfg_path, sub, parser)
            for action in sub._actions:
                if action.dest in overrides:
                    action.required = False
            sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
        _validate(args, parser)
    except SystemExit as exc:
        return int(exc.code or 0)
    except CliFailure as exc:
        print(f"error: {exc}", file=stderr)
        return exc.code

    try:
        if args.command == "enumerate":
            code, text = cmd_enumerate(args, table)
        elif args.command == "simulate":
            code, text = cmd_simulate(args, table)
        elif args.command == "sweep":
            code, text = cmd_sweep(args)
        elif args.command == "verify":
            code, text = cmd_verify(args, table)
        else:
            code, text = cmd_eve(args)
    except CliFailure as exc:
        print(f"error: {exc}", file=stderr)
        return exc.code
    except (StateVectorError, ArithmeticError) as exc:
        print(f"internal invariant failure: {exc}", file=stderr)
        return EXIT_FAIL
    stdout.write(text)
    return code


def _peek_config(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


if __name__ == "__main__":
    raise SystemExit(main())

"""Command-line front end.

    biphoton simulate CONFIG.json --out hist.csv
    biphoton reconstruct hist.csv --gates widening:256:12 --out states.csv
    biphoton model params.json --gates whole:3072 --out model.csv
    biphoton fit states.csv --tau-r 560 --tau-ss 2800 --out fit.json
    biphoton werner-curve --out werner.csv

Exit codes: 0 ok, 2 input error, 3 data/gate mismatch, 4 non-convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .cascade import CascadeParams, GateWindow, gate_sequence, gated_density_matrix
from .errors import BiphotonError, Misaligned, ModelNonPhysical, OutOfRange
from .fit import FitProblem, fit
from .io import RunManifest, atomic_write, read_state_points, sha256_of, state_points_csv
from .measures import fidelity_from_correlations, state_point, werner_curve
from .simulator import SimConfig, TdcHistogram, gate_counts, simulate_histogram
from .tomography import reconstruct, table_correlations

log = logging.getLogger("biphoton")

EXIT_OK, EXIT_INPUT, EXIT_MISMATCH, EXIT_NONCONVERGED = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def parse_gate_spec(spec: str) -> List[GateWindow]:
    """``widening:256:12``, ``shifting:384:8`` or ``whole:3072``; comma-joined specs concatenate."""
    gates: List[GateWindow] = []
    for part in spec.split(","):
        fields = part.strip().split(":")
        try:
            if fields[0] == "whole" and len(fields) == 2:
                gates.append(GateWindow(0.0, float(int(fields[1])), "whole_peak"))
            elif fields[0] in ("widening", "shifting") and len(fields) == 3:
                gates.extend(gate_sequence(fields[0], float(int(fields[1])), int(fields[2])))
            else:
                raise ValueError
        except (ValueError, OutOfRange):
            raise CliError(f"bad gate spec {part!r}; expected scheme:width_ps:count or whole:window_ps")
    return gates


def _read_json(path: str) -> tuple:
    try:
        text = Path(path).read_text()
        return json.loads(text), text
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read JSON from {path}: {exc}")


def _manifest(args, inputs, outputs, config_text="", seed=None) -> RunManifest:
    return RunManifest(
        command=args.command,
        inputs=[str(p) for p in inputs],
        outputs=[str(p) for p in outputs],
        config_hash=sha256_of(config_text) if config_text else "",
        seed=seed,
        version=__version__,
    )


def cmd_simulate(args) -> int:
    data, text = _read_json(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        cfg = SimConfig.from_dict(data)
    except OutOfRange as exc:
        raise CliError(f"invalid simulation config: {exc}")
    h = simulate_histogram(cfg)
    out = Path(args.out)
    body = h.to_csv()
    atomic_write(out, _manifest(args, [args.config], [out], text, cfg.seed).header() + body)
    log.info("wrote %d bins x 36 settings to %s", h.n_bins, out)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    try:
        text = Path(args.histogram).read_text()
        h = TdcHistogram.from_csv(text)
    except (OSError, OutOfRange, KeyError, ValueError) as exc:
        raise CliError(f"cannot read histogram {args.histogram}: {exc}")
    gates = parse_gate_spec(args.gates)
    seed = 0 if args.seed is None else args.seed
    tables = []
    for g in gates:
        try:
            tables.append(gate_counts(h, g))
        except Misaligned as exc:
            raise CliError(str(exc), EXIT_MISMATCH)
        except OutOfRange as exc:
            raise CliError(f"gate [{g.t_g:g}, {g.t_end:g}] ps: {exc}", EXIT_MISMATCH)

    points, flags, fcorr, schemes, rhos = [], [], [], [], []
    for g, tab in zip(gates, tables):
        rho, report = reconstruct(tab, restarts=args.restarts, seed=seed)
        points.append(state_point(rho, g))
        flags.append(int(report.converged))
        fcorr.append(fidelity_from_correlations(*table_correlations(tab)))
        schemes.append(g.scheme)
        rhos.append({"gate": {"t_g_ps": g.t_g, "dt_g_ps": g.t_end - g.t_g, "scheme": g.scheme},
                     "rho": rho.to_dict(), "report": report.to_dict()})
        log.info("gate [%g, %g] ps: S_L=%.4f T=%.4f", g.t_g, g.t_end, points[-1].s_lin, points[-1].tangle)

    out = Path(args.out)
    rho_out = out.with_name(out.stem + "_rho.json")
    man = _manifest(args, [args.histogram], [out, rho_out], text, seed)
    body = state_points_csv(points, {"scheme": schemes, "fidelity_corr": fcorr, "converged": flags})
    atomic_write(rho_out, json.dumps({"_manifest": man.as_dict(), "states": rhos}, indent=1) + "\n")
    atomic_write(out, man.header() + body)
    if not all(flags):
        print(f"warning: {flags.count(0)} reconstruction(s) did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_model(args) -> int:
    data, text = _read_json(args.params)
    try:
        params = CascadeParams.from_dict(data)
    except OutOfRange as exc:
        raise CliError(f"invalid cascade parameters: {exc}")
    gates = parse_gate_spec(args.gates)
    points = []
    for g in gates:
        try:
            rho = gated_density_matrix(g, params, args.offdiag, args.population)
        except ModelNonPhysical as exc:
            raise CliError(str(exc))
        points.append(state_point(rho, g))
    out = Path(args.out)
    curve_out = out.with_name(out.stem + "_werner.csv")
    man = _manifest(args, [args.params], [out, curve_out], text, args.seed)
    atomic_write(curve_out, man.header() + werner_curve_csv(args.points))
    atomic_write(out, man.header() + state_points_csv(points, {"scheme": [g.scheme for g in gates]}))
    return EXIT_OK


def werner_curve_csv(n: int = 200) -> str:
    rows = ["s_lin,tangle"]
    for s in np.linspace(0.0, 1.0, n).tolist():
        rows.append(f"{s!r},{werner_curve(s)!r}")
    return "\n".join(rows) + "\n"


def cmd_fit(args) -> int:
    try:
        text = Path(args.states).read_text()
        obs = read_state_points(text)
    except (OSError, OutOfRange, KeyError, ValueError) as exc:
        raise CliError(f"cannot read state points from {args.states}: {exc}")
    tau_ss = math.inf if args.tau_ss is None else float(args.tau_ss)
    if args.tau_r <= 0 or tau_ss <= 0:
        raise CliError("--tau-r and --tau-ss must be positive picoseconds")
    try:
        problem = FitProblem(
            [o for o in obs if o.gate is not None],
            float(args.tau_r),
            tau_ss,
            fix_d=args.fix_d,
            population_weight=args.population,
        )
    except OutOfRange as exc:
        raise CliError(str(exc))
    seed = 0 if args.seed is None else args.seed
    result = fit(problem, restarts=args.restarts, seed=seed)
    out = Path(args.out)
    man = _manifest(args, [args.states], [out], text, seed)
    payload = {"_manifest": man.as_dict(), **result.to_dict()}
    atomic_write(out, json.dumps(payload, indent=2) + "\n")
    if not result.converged:
        print("warning: fit did not converge; best-so-far written", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_werner_curve(args) -> int:
    out = Path(args.out)
    atomic_write(out, _manifest(args, [], [out], seed=args.seed).header() + werner_curve_csv(args.points))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed")
    common.add_argument("--out", required=True, help="output path")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    parser = argparse.ArgumentParser(prog="biphoton", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo delay histograms for all 36 settings")
    p.add_argument("config", help="SimConfig JSON")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", parents=[common], help="gate a histogram and run ML tomography per gate")
    p.add_argument("histogram", help="histogram CSV written by 'simulate'")
    p.add_argument("--gates", required=True, help="e.g. widening:256:12, shifting:384:8, whole:3072")
    p.add_argument("--restarts", type=int, default=5, help="random restarts per reconstruction")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("model", parents=[common], help="analytic state points for a gate sequence")
    p.add_argument("params", help="CascadeParams JSON")
    p.add_argument("--gates", required=True, help="gate spec, as for 'reconstruct'")
    p.add_argument("--offdiag", choices=["p", "p_squared_over_p_prime"], default="p")
    p.add_argument("--population", choices=["whole_peak", "gate_resolved"], default="whole_peak")
    p.add_argument("--points", type=int, default=200, help="Werner-curve samples")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("fit", parents=[common], help="fit (S, tau_HV, d) to gated state points")
    p.add_argument("states", help="state-point CSV")
    p.add_argument("--tau-r", type=int, required=True, help="exciton lifetime, ps")
    p.add_argument("--tau-ss", type=int, default=None, help="spin-scattering time, ps (omit for infinity)")
    p.add_argument("--fix-d", type=float, default=None, help="hold the background ratio fixed")
    p.add_argument("--population", choices=["whole_peak", "gate_resolved"], default="whole_peak")
    p.add_argument("--restarts", type=int, default=10)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("werner-curve", parents=[common], help="tangle vs linear entropy of Werner states")
    p.add_argument("--points", type=int, default=200)
    p.set_defaults(func=cmd_werner_curve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except BiphotonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Subcommands::

    powerflow      solve the AC power flow, emit the per-bus voltage table
    estimate       one estimation run on a seeded measurement draw
    sweep-fad      Monte Carlo MAPE sweep over FAD levels
    sweep-baddata  Monte Carlo MAPE sweep over bad-data percentages
    single-bad     clean-vs-corrupted study with one scaled injection

Every command is deterministic in its flags: repeated invocations write
byte-identical output. Numbers are emitted with 9 significant digits.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import io
import json
import sys

import numpy as np

from . import __version__
from .errors import DsseError
from .estimators import RmcseWeights, result_to_dict
from .experiments import (
    STREAM_FAD,
    STREAM_NOISE,
    ExperimentConfig,
    derive_seed,
    draw_measurements,
    fmt_num,
    round_sig,
    run_bad_sweep,
    run_fad_sweep,
    run_single_bad,
    run_method,
)
from .measurements import measurements_to_json, observability
from .network import builtin_ieee33, load_case
from .powerflow import build_linear_model, solve_ac

DEFAULT_BAD_PCTS = "0,0.01,0.02,0.03,0.04,0.05,0.06,0.07,0.08,0.09,0.1"


def _load_network(spec_str):
    if spec_str == "builtin:ieee33":
        return builtin_ieee33()
    return load_case(spec_str)


def _float_list(text):
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _weights(text):
    parts = _float_list(text)
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("expected four weights w1,w2,w3,w4")
    return RmcseWeights(*parts)


def _add_shared(parser):
    parser.add_argument(
        "--case", default="builtin:ieee33",
        help="case file path or builtin:ieee33 (default)",
    )
    parser.add_argument("--seed", type=int, default=42, help="master seed (default 42)")
    parser.add_argument("--out", default="-", help="output path, - for stdout (default)")
    parser.add_argument(
        "--format", choices=("csv", "json"), default="csv", dest="fmt",
        help="output format (default csv)",
    )
    parser.add_argument(
        "--audit", action="store_true",
        help="include ground-truth and diagnostic fields in the output",
    )


def _add_estimation(parser):
    parser.add_argument(
        "--sigma-frac", type=float, default=0.01,
        help="noise standard deviation as a fraction of truth (default 0.01)",
    )
    parser.add_argument(
        "--count", type=int, default=None,
        help="explicit measurement count, overrides the FAD rounding rule",
    )
    parser.add_argument(
        "--weights", type=_weights, default=RmcseWeights(),
        help="completion objective weights w1,w2,w3,w4 (default 2,200,200,200)",
    )
    parser.add_argument(
        "--delta", type=float, default=None,
        help="MCSE residual budget (default: expected residual norm)",
    )
    parser.add_argument(
        "--lnr-threshold", type=float, default=3.0,
        help="normalized-residual removal threshold (default 3.0)",
    )


def _add_methods(parser, default):
    parser.add_argument(
        "--methods", default=default,
        help=f"comma-separated subset of wls,wls_lnr,mcse,rmcse (default {default})",
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dsse",
        description="Distribution-system state estimation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    pf = sub.add_parser("powerflow", help="solve the AC power flow")
    _add_shared(pf)

    est = sub.add_parser("estimate", help="run one estimator on a seeded draw")
    _add_shared(est)
    _add_estimation(est)
    est.add_argument(
        "--method", choices=("wls", "wls_lnr", "mcse", "rmcse"), default="rmcse",
        help="estimator to run (default rmcse)",
    )
    est.add_argument(
        "--fad", type=float, default=1.0,
        help="fraction of available data to keep (default 1.0)",
    )

    sf = sub.add_parser("sweep-fad", help="MAPE sweep over FAD levels")
    _add_shared(sf)
    _add_estimation(sf)
    _add_methods(sf, "rmcse")
    sf.add_argument(
        "--fad", default="0.3,0.5,0.7,0.9",
        help="comma-separated FAD grid (default 0.3,0.5,0.7,0.9)",
    )
    sf.add_argument("--trials", type=int, default=30, help="trials per grid point (default 30)")

    sb = sub.add_parser("sweep-baddata", help="MAPE sweep over bad-data percentages")
    _add_shared(sb)
    _add_estimation(sb)
    _add_methods(sb, "rmcse")
    sb.add_argument("--fad", type=float, default=0.7, help="FAD level (default 0.7)")
    sb.add_argument(
        "--bad-pct", default=DEFAULT_BAD_PCTS,
        help="comma-separated corrupted fractions (default 0..0.1 step 0.01)",
    )
    sb.add_argument("--trials", type=int, default=30, help="trials per grid point (default 30)")

    one = sub.add_parser("single-bad", help="clean vs one scaled-injection bad datum")
    _add_shared(one)
    _add_estimation(one)
    _add_methods(one, "wls,rmcse")
    one.add_argument("--fad", type=float, default=0.7, help="FAD level (default 0.7)")
    one.add_argument(
        "--bad-bus", type=int, default=17,
        help="bus whose active injection is corrupted (default 17)",
    )
    one.add_argument(
        "--bad-factor", type=float, default=2.0,
        help="corrupted value as a multiple of truth (default 2.0)",
    )
    return parser


def _write_output(text, out_path):
    if out_path == "-":
        sys.stdout.write(text)
    else:
        with open(out_path, "w", newline="") as handle:
            handle.write(text)


def _round_floats(node):
    if isinstance(node, float):
        return round_sig(node)
    if isinstance(node, dict):
        return {key: _round_floats(val) for key, val in node.items()}
    if isinstance(node, list):
        return [_round_floats(val) for val in node]
    return node


def _json_text(doc):
    return json.dumps(_round_floats(doc), indent=2)


def _cmd_powerflow(args):
    network = _load_network(args.case)
    sol = solve_ac(network)
    vmag = np.abs(sol.v)
    angle = np.degrees(np.angle(sol.v))
    if args.fmt == "csv":
        out = io.StringIO()
        out.write("bus,vmag,angle_deg,v_re,v_im\n")
        for i in range(network.n_bus):
            out.write(
                f"{i},{fmt_num(float(vmag[i]))},{fmt_num(float(angle[i]))},"
                f"{fmt_num(float(sol.v[i].real))},{fmt_num(float(sol.v[i].imag))}\n"
            )
        text = out.getvalue()
    else:
        text = _json_text(
            {
                "version": __version__,
                "case": network.name or args.case,
                "iterations": sol.iterations,
                "max_mismatch": sol.max_mismatch,
                "buses": [
                    {
                        "bus": i,
                        "vmag": float(vmag[i]),
                        "angle_deg": float(angle[i]),
                        "v_re": float(sol.v[i].real),
                        "v_im": float(sol.v[i].imag),
                    }
                    for i in range(network.n_bus)
                ],
            }
        ) + "\n"
    _write_output(text, args.out)
    return 0


def _estimate_csv(result, network, audit):
    out = io.StringIO()
    cols = "row_type,index,vmag,angle_deg,i_re,i_im,status,iterations,removed"
    if audit:
        cols += ",v_re,v_im,vmag_from_phasor,p,q"
    out.write(cols + "\n")
    pad = "," * 5 if audit else ""
    out.write(
        f"meta,,,,,,{result.solver_status},{result.iterations},"
        f"{len(result.removed_measurements)}{pad}\n"
    )
    for i in range(network.n_bus):
        row = (
            f"bus,{i},{fmt_num(float(result.vmag[i]))},"
            f"{fmt_num(float(result.angle_deg[i]))},,,,,"
        )
        if audit:
            row += (
                f",{fmt_num(float(result.voltage[i].real))}"
                f",{fmt_num(float(result.voltage[i].imag))}"
                f",{fmt_num(float(abs(result.voltage[i])))}"
                f",{fmt_num(float(result.injections[i].real))}"
                f",{fmt_num(float(result.injections[i].imag))}"
            )
        out.write(row + "\n")
    for k in range(network.n_branch):
        row = (
            f"branch,{k},,,{fmt_num(float(result.line_currents[k].real))},"
            f"{fmt_num(float(result.line_currents[k].imag))},,,"
        )
        if audit:
            row += "," * 5
        out.write(row + "\n")
    return out.getvalue()


def _cmd_estimate(args):
    network = _load_network(args.case)
    config = ExperimentConfig(
        fad_grid=(args.fad,),
        trials=1,
        seed=args.seed,
        methods=(args.method,),
        weights=args.weights,
        sigma_frac=args.sigma_frac,
        measurement_count=args.count,
        lnr_threshold=args.lnr_threshold,
        delta=args.delta,
        case_label=network.name or args.case,
    )
    truth = solve_ac(network)
    sampled = draw_measurements(
        network, truth.v, config, args.fad,
        derive_seed(config.seed, STREAM_NOISE, 0, 0),
        derive_seed(config.seed, STREAM_FAD, 0, 0),
    )
    linmodel = build_linear_model(network)
    result = run_method(args.method, sampled, network, config, linmodel)

    if args.fmt == "csv":
        text = _estimate_csv(result, network, args.audit)
    else:
        obs = observability(sampled, network, truth.v)
        doc = {
            "version": __version__,
            "case": config.case_label,
            "method": args.method,
            "seed": config.seed,
            "fad": args.fad,
            "sigma_frac": args.sigma_frac,
            "measurement_count": len(sampled),
            "rank": obs.rank,
            "unobservable": obs.unobservable,
            "result": result_to_dict(result, audit=args.audit),
        }
        if args.audit:
            doc["measurements"] = json.loads(measurements_to_json(sampled, audit=True))
        text = _json_text(doc) + "\n"
    _write_output(text, args.out)
    return 0


def _cmd_sweep_fad(args):
    network = _load_network(args.case)
    config = ExperimentConfig(
        fad_grid=_float_list(args.fad),
        trials=args.trials,
        seed=args.seed,
        methods=tuple(args.methods.split(",")),
        weights=args.weights,
        sigma_frac=args.sigma_frac,
        measurement_count=args.count,
        lnr_threshold=args.lnr_threshold,
        delta=args.delta,
        case_label=network.name or args.case,
    )
    report = run_fad_sweep(config, network)
    _write_output(report.to_csv() if args.fmt == "csv" else report.to_json() + "\n", args.out)
    return 0


def _cmd_sweep_baddata(args):
    network = _load_network(args.case)
    config = ExperimentConfig(
        fad_grid=(args.fad,),
        bad_pct_grid=_float_list(args.bad_pct),
        trials=args.trials,
        seed=args.seed,
        methods=tuple(args.methods.split(",")),
        weights=args.weights,
        sigma_frac=args.sigma_frac,
        measurement_count=args.count,
        lnr_threshold=args.lnr_threshold,
        delta=args.delta,
        case_label=network.name or args.case,
    )
    report = run_bad_sweep(config, network)
    _write_output(report.to_csv() if args.fmt == "csv" else report.to_json() + "\n", args.out)
    return 0


def _cmd_single_bad(args):
    network = _load_network(args.case)
    config = ExperimentConfig(
        fad_grid=(args.fad,),
        trials=1,
        seed=args.seed,
        methods=tuple(args.methods.split(",")),
        weights=args.weights,
        sigma_frac=args.sigma_frac,
        measurement_count=args.count,
        lnr_threshold=args.lnr_threshold,
        delta=args.delta,
        bad_bus=args.bad_bus,
        bad_factor=args.bad_factor,
        case_label=network.name or args.case,
    )
    report = run_single_bad(config, network)
    _write_output(report.to_csv() if args.fmt == "csv" else report.to_json() + "\n", args.out)
    return 0


_COMMANDS = {
    "powerflow": _cmd_powerflow,
    "estimate": _cmd_estimate,
    "sweep-fad": _cmd_sweep_fad,
    "sweep-baddata": _cmd_sweep_baddata,
    "single-bad": _cmd_single_bad,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        handler = _COMMANDS[args.command]
    except KeyError:  # unreachable with required=True, kept for safety
        parser.print_usage(sys.stderr)
        return 2
    try:
        return handler(args)
    except ValueError as exc:
        print(f"dsse: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except (DsseError, OSError) as exc:
        print(f"dsse: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

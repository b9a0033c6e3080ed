"""Command-line entry point.

Subcommands: run, tau-study, phase-study, amp-scan, validate.  Exit code
0 on pass, 2 on a monitor abort, 3 on a classification failure; other
hard errors exit 1.
"""

import argparse
import sys

from .errors import GravpicError, MonitorAbort, TrappedSurfaceAtStart, Unclassified
from .harness import (
    RunConfig,
    load_config,
    phase_ladder_spec,
    reference_amplitude,
    run_amplitude_scan,
    run_phase_study,
    run_single,
    run_tau_study,
    tau_ladder_spec,
)
from .phase_space import validate_initial

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MONITOR = 2
EXIT_CLASSIFY = 3


def _add_config_flags(p):
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--scheme", choices=("semi_rk4", "full_euler"))
    p.add_argument("--variant", choices=("corrected", "literal"))
    p.add_argument("--amplitude", type=float)
    p.add_argument("--table", dest="table_path")
    p.add_argument("--quad-order", dest="quad_order", type=int)
    p.add_argument("--snapshot-stride", dest="snapshot_stride", type=int)
    p.add_argument("--outdir")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--no-monitor", action="store_true")
    p.add_argument("--no-validate", action="store_true")
    p.add_argument("--d-bound", dest="d_bound", type=float)
    p.add_argument("--grid-points", dest="grid_points", type=int)


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for attr in (
        "epsilon",
        "delta",
        "tau",
        "t_end",
        "scheme",
        "variant",
        "amplitude",
        "table_path",
        "quad_order",
        "snapshot_stride",
        "outdir",
        "d_bound",
        "grid_points",
    ):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[attr] = value
    if getattr(args, "no_figures", False):
        overrides["figures"] = False
    if getattr(args, "no_monitor", False):
        overrides["monitor_enabled"] = False
    if getattr(args, "no_validate", False):
        overrides["validate"] = False
    if overrides.get("table_path"):
        overrides["datum_kind"] = "table"
    from dataclasses import replace

    return replace(cfg, **overrides)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gravpic",
        description="Particle-in-cell evolution of a self-gravitating "
        "collisionless shell in spherical symmetry",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a single run")
    _add_config_flags(p_run)

    p_val = sub.add_parser("validate", help="check the initial datum only")
    _add_config_flags(p_val)

    p_tau = sub.add_parser("tau-study", help="time-step convergence ladder")
    _add_config_flags(p_tau)
    p_tau.add_argument(
        "--taus",
        type=str,
        default="",
        help="comma-separated ladder; default delta/4,delta/8,delta/16",
    )

    p_phase = sub.add_parser("phase-study", help="resolution convergence ladder")
    _add_config_flags(p_phase)
    p_phase.add_argument(
        "--deltas",
        type=str,
        default="0.2,0.1,0.05",
        help="comma-separated kernel widths, coarse to fine",
    )

    p_amp = sub.add_parser("amp-scan", help="bisect the collapse amplitude")
    _add_config_flags(p_amp)
    p_amp.add_argument("--a-lo", type=float, default=None)
    p_amp.add_argument("--a-hi", type=float, default=None)
    p_amp.add_argument("--bisections", type=int, default=6)

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except MonitorAbort as err:
        print(f"monitor abort: {err}", file=sys.stderr)
        return EXIT_MONITOR
    except (Unclassified,) as err:
        print(f"classification failure: {err}", file=sys.stderr)
        return EXIT_CLASSIFY
    except GravpicError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_ERROR


def _dispatch(args) -> int:
    config = _config_from_args(args)

    if args.command == "validate":
        try:
            rep = validate_initial(config.build_datum())
        except TrappedSurfaceAtStart as err:
            print(f"FAIL: {err}")
            return EXIT_ERROR
        print(
            "PASS: min margins "
            f"number={rep.min_number_margin:.6g} energy={rep.min_energy_margin:.6g}"
        )
        return EXIT_OK

    if args.command == "run":
        result = run_single(config)
        final = result.history.records[-1]
        print(
            f"completed {len(result.history.records)} records to "
            f"t={final.time:.6g}; total mass {final.diagnostics['adm_mass']:.8g}"
        )
        for path in result.paths:
            print(f"  wrote {path}")
        return EXIT_OK

    if args.command == "tau-study":
        if args.taus:
            taus = [float(v) for v in args.taus.split(",")]
        else:
            taus = [config.delta / 4, config.delta / 8, config.delta / 16]
        result = run_tau_study(tau_ladder_spec(config, taus))
        if result.exact:
            print("exact: all ladder errors vanish")
        else:
            print(
                f"observed order {result.order:.3f} "
                f"({'pass' if result.passed else 'FAIL'}, gate [0.8, 1.3])"
            )
        for path in result.paths:
            print(f"  wrote {path}")
        return EXIT_OK if result.passed else EXIT_ERROR

    if args.command == "phase-study":
        deltas = [float(v) for v in args.deltas.split(",")]
        result = run_phase_study(phase_ladder_spec(config, deltas))
        print(
            f"metric-group order {result.metric_order} "
            f"({'pass' if result.passed else 'FAIL'}, gate >= 0.7); "
            f"source-group order {result.source_order} (reported, no gate)"
        )
        if result.low_confidence:
            print("  note: fewer than three comparison rungs; slope is low-confidence")
        for path in result.paths:
            print(f"  wrote {path}")
        return EXIT_OK if result.passed else EXIT_ERROR

    if args.command == "amp-scan":
        a_ref = reference_amplitude(config.support)
        a_lo = args.a_lo if args.a_lo is not None else 0.1 * a_ref
        a_hi = args.a_hi if args.a_hi is not None else 10.0 * a_ref
        result = run_amplitude_scan(config, a_lo, a_hi, args.bisections)
        lo, hi = result.bracket
        print(f"critical amplitude bracket [{lo:.8g}, {hi:.8g}] after {args.bisections} bisections")
        for path in result.paths:
            print(f"  wrote {path}")
        return EXIT_OK

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())

"""
Command-line driver.

Exit status: 0 success, 1 decode failure, 2 malformed input, 3 output not
writable.
"""

import argparse
import os
import sys

from .airsim import ReceivedMatrix, make_equally_spaced_assignment, run_until
from .config import ConfigError, format_config, load_config, scenario_config
from .decoder import RankStop, format_decode_result, full_decode
from .errors import AmbiguityError, IdentificationError, NoConvergenceError, ReplayFormatError, SteermacError
from .harness import format_csv, format_plot_script, format_summary, run_sweep, symbol_error_rate

EXIT_OK = 0
EXIT_DECODE = 1
EXIT_INPUT = 2
EXIT_OUTPUT = 3


def _load(path, seed=None):
    cfg = load_config(path)
    return cfg if seed is None else cfg.with_seed(seed)


def _fmt_values(values, width=12):
    return " ".join(f"{v:.3e}" for v in values[:width]) + (" ..." if len(values) > width else "")


def _print_matches(matches, out):
    print("  id  shift  misaligned  offset  gain", file=out)
    for m in sorted(matches, key=lambda m: m.id):
        gain = "-" if m.gain_estimate is None else f"{m.gain_estimate:.4g}"
        off = "-" if m.symbol_offset is None else str(m.symbol_offset)
        print(f"  {m.id:>2}  {m.arrival_shift:>5}  {str(m.misaligned):>10}  {off:>6}  {gain}", file=out)


def _print_rootsets(rootsets, out):
    for rs in rootsets:
        if not rs.unit_candidates:
            continue
        fam = "" if rs.family is None else f" family {rs.family}"
        hits = ", ".join(f"{h.id}@{h.score:.2e}" for h in rs.unit_candidates)
        print(f"  shift {rs.shift_index}{fam}: {hits}", file=out)


def _report_failure(exc, out):
    print(f"decode failed: {exc}", file=out)
    diag = getattr(exc, "diagnostics", None) or {}
    for key in sorted(diag):
        print(f"  {key} = {diag[key]}", file=out)
    if isinstance(exc, AmbiguityError):
        for i, hyp in enumerate(exc.hypotheses):
            print(f"hypothesis {i}:", file=out)
            _print_matches(hyp, out)
    elif getattr(exc, "partial", None):
        print("partial matches:", file=out)
        _print_matches(exc.partial, out)


def _truth_report(scenario, result, out):
    truth = {t.id for t in scenario.transmitters}
    found = set(result.recovered)
    ser = symbol_error_rate(scenario, result.recovered)
    print(f"detected {len(truth & found)}/{len(truth)}, SER {ser:g}", file=out)


def cmd_run(args, out=None):
    out = out or sys.stdout
    cfg = _load(args.config, args.seed)
    scenario = cfg.scenario()
    stop = RankStop(cfg.sigma2, cfg.extra_slots, cfg.alpha)
    try:
        Y = run_until(scenario, stop)
    except NoConvergenceError as exc:
        print(f"decode failed: {exc}", file=out)
        return EXIT_DECODE
    print(f"scenario: mode={cfg.mode} M={cfg.M} K={scenario.K} P={cfg.P} sigma2={cfg.sigma2:g} "
          f"factor2={scenario.factor2_enabled}", file=out)
    for n, rank, s in stop.history:
        line = f"slot {n:>3}: rank {rank}"
        if args.verbose:
            line += f"  sv [{_fmt_values(s)}]"
        print(line, file=out)
    print(f"singular values: {_fmt_values(stop.history[-1][2], width=Y.N)}", file=out)
    if args.out:
        try:
            Y.save(args.out)
            with open(args.out + ".ini", "w") as fh:
                fh.write(format_config(scenario_config(scenario, cfg.mode, cfg.extra_slots, cfg.alpha)))
        except OSError as exc:
            print(f"cannot write {args.out}: {exc}", file=sys.stderr)
            return EXIT_OUTPUT
    try:
        result = full_decode(
            Y, cfg.sigma2, scenario.assignment, cfg.mode, scenario.fading_table(Y.N), cfg.extra_slots,
            factor2=scenario.factor2_enabled, alpha=cfg.alpha, real_symbols=True,
        )
    except IdentificationError as exc:
        if args.verbose and getattr(exc, "rootsets", None):
            print("unit-circle roots:", file=out)
            _print_rootsets(exc.rootsets, out)
        _report_failure(exc, out)
        return EXIT_DECODE
    except SteermacError as exc:
        _report_failure(exc, out)
        return EXIT_DECODE
    print("unit-circle roots:", file=out)
    _print_rootsets(result.rootsets, out)
    print(f"matches (N={result.N_used}, rank={result.rank}):", file=out)
    _print_matches(result.matches, out)
    _truth_report(scenario, result, out)
    return EXIT_OK


def cmd_sweep(args, out=None):
    out = out or sys.stdout
    cfg = _load(args.config, args.seed)
    sweep = cfg.sweep_config()
    path = args.out or "sweep.csv"
    stem = os.path.splitext(path)[0]
    # fail before hours of simulation if the destination is unusable
    try:
        with open(path, "w"):
            pass
    except OSError as exc:
        print(f"cannot write {path}: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    result = run_sweep(sweep)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(format_csv(result))
        with open(stem + ".gp", "w") as fh:
            fh.write(format_plot_script(result, os.path.basename(path)))
    except OSError as exc:
        print(f"cannot write {path}: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    out.write(format_summary(result))
    return EXIT_OK


def cmd_replay(args, out=None):
    out = out or sys.stdout
    Y = ReceivedMatrix.load(args.matrix)
    cfg_path = args.config or args.truth
    if cfg_path is None:
        print("replay needs --config or --truth for the decoding parameters", file=sys.stderr)
        return EXIT_INPUT
    cfg = _load(cfg_path, args.seed)
    truth = _load(args.truth) if args.truth else None
    scenario = truth.scenario() if truth and truth.transmitters else None
    assignment = make_equally_spaced_assignment(cfg.M)
    table = scenario.fading_table(Y.N) if scenario is not None and cfg.M == scenario.assignment.size else None
    try:
        result = full_decode(
            Y, cfg.sigma2, assignment, cfg.mode, table, cfg.extra_slots,
            factor2=cfg.factor2_enabled, alpha=cfg.alpha, real_symbols=True,
        )
    except SteermacError as exc:
        _report_failure(exc, out)
        return EXIT_DECODE
    out.write(format_decode_result(result))
    _print_matches(result.matches, out)
    if scenario is not None:
        _truth_report(scenario, result, out)
        if {t.id for t in scenario.transmitters} != set(result.recovered):
            return EXIT_DECODE
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="steermac", description="Steering-vector multiaccess simulator and decoder")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment file")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", help="output path")
        p.add_argument("--verbose", "-v", action="store_true")

    run = sub.add_parser("run", help="simulate and decode one scenario")
    common(run)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="Monte Carlo sweep to CSV")
    common(sweep)
    sweep.set_defaults(func=cmd_sweep)

    replay = sub.add_parser("replay", help="decode a stored received matrix")
    replay.add_argument("matrix", help="binary received-matrix file")
    replay.add_argument("--truth", help="experiment file listing the transmitters")
    common(replay, config_required=False)
    replay.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ReplayFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

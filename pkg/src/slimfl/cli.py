"""Command line entry points: run, analyze, sweep."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import ConfigError, load_config, parse_config, serialize_config
from .experiment import analyze_experiment, run_all

EXIT_BAD_CONFIG = 2


def _load(path: str):
    if not os.path.exists(path):
        raise ConfigError(f"config file: {path} does not exist")
    return load_config(path)


def cmd_run(args) -> int:
    cfg = _load(args.config)
    combined = run_all(cfg)
    for run in combined["runs"]:
        conv = run["convergence_round"]
        print(
            f"seed {run['seed']}: {run['rounds']} rounds, "
            f"convergence {'none' if conv is None else f'round {conv}'}, "
            f"csv {run['metrics_csv']}"
        )
    print(f"summary {os.path.join(cfg.output_dir, 'summary.json')}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _load(args.config)
    report = analyze_experiment(cfg)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
        print(f"analysis {args.output}")
    else:
        print(text)
    return 0


def _override(cfg_text: str, dotted: str, value: str) -> str:
    """Re-serialize the config with one section.key replaced."""
    if "." not in dotted:
        raise ConfigError(f"sweep parameter {dotted!r}: use section.key form")
    section, key = dotted.split(".", 1)
    base = parse_config(cfg_text)  # validate the base before editing
    text = serialize_config(base)
    import configparser

    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    if not parser.has_section(section):
        parser.add_section(section)
    parser.set(section, key, value)
    import io

    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def cmd_widths(args) -> int:
    """Width-selection table: widest configuration meeting an IPS target."""
    from .analysis import SIX_WIDTH_COST_TABLE, ips_width_selection

    peaks = [float(v) for v in args.peaks.split(",") if v.strip()]
    print("r_peak_mflops,chosen_width,ips")
    for peak in peaks:
        chosen = ips_width_selection(peak, SIX_WIDTH_COST_TABLE, args.target)
        if chosen is None:
            print(f"{peak:g},none,")
        else:
            cost = dict(SIX_WIDTH_COST_TABLE)[chosen]
            print(f"{peak:g},{chosen},{peak / cost:.1f}")
    return 0


def cmd_sweep(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        base_text = fh.read()
    values = [v for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep values: need at least one value")
    results = []
    for value in values:
        text = _override(base_text, args.param, value.strip())
        cfg = parse_config(text)
        subdir = os.path.join(
            cfg.output_dir, f"sweep_{args.param.replace('.', '_')}", value.strip()
        )
        cfg = type(cfg)(**{**cfg.__dict__, "output_dir": subdir})
        if args.mode == "analyze":
            os.makedirs(subdir, exist_ok=True)
            report = analyze_experiment(cfg)
            out = os.path.join(subdir, "analysis.json")
            with open(out, "w") as fh:
                json.dump(report, fh, indent=2, sort_keys=True)
                fh.write("\n")
            results.append({"value": value.strip(), "analysis": out})
        else:
            combined = run_all(cfg)
            results.append({"value": value.strip(), "summary": combined})
        print(f"{args.param} = {value.strip()}: {subdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slimfl",
        description="Simulate federated learning of width-slimmable networks "
        "over a superposition-coded uplink.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured experiment for every seed")
    p_run.add_argument("config")
    p_run.set_defaults(func=cmd_run)

    p_an = sub.add_parser("analyze", help="emit the closed-form analysis report as JSON")
    p_an.add_argument("config")
    p_an.add_argument("--output", default="", help="write JSON here instead of stdout")
    p_an.set_defaults(func=cmd_analyze)

    p_sw = sub.add_parser("sweep", help="repeat run/analyze over values of one config key")
    p_sw.add_argument("config")
    p_sw.add_argument("--param", required=True, help="section.key to vary")
    p_sw.add_argument("--values", required=True, help="comma-separated values")
    p_sw.add_argument("--mode", choices=("run", "analyze"), default="run")
    p_sw.set_defaults(func=cmd_sweep)

    p_w = sub.add_parser(
        "widths", help="pick the widest configuration meeting an images/sec target"
    )
    p_w.add_argument("--peaks", required=True, help="comma-separated peak MFLOPS values")
    p_w.add_argument("--target", type=float, default=100.0, help="required images/sec")
    p_w.set_defaults(func=cmd_widths)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

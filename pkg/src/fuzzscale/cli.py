"""Command line entry point.

Exit codes: 0 success, 1 configuration/validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
from pathlib import Path

from fuzzscale import config as cfgmod
from fuzzscale.engine import POLICY_NAMES

logger = logging.getLogger("fuzzscale")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _policies(arg: str | None) -> list[str] | None:
    if not arg:
        return None
    if arg == "all":
        return list(POLICY_NAMES)
    return [p.strip() for p in arg.split(",") if p.strip()]


def _load(args) -> tuple[dict, list[str], list[str]]:
    config = cfgmod.load_config(args.config)
    config = cfgmod.apply_overrides(
        config,
        cores=args.cores,
        slice_ms=args.slice_ms,
        duration_slices=args.duration_slices,
        seed=args.seed,
        output_dir=args.output_dir,
        epsilon=args.epsilon,
        gamma=args.gamma,
    )
    policies = _policies(args.policy) or [config.get("policy", {}).get("name")]
    errors = cfgmod.validate(config, policies, base_dir=Path(args.config).parent)
    return config, policies, errors


def cmd_validate(args) -> int:
    try:
        config, policies, errors = _load(args)
    except cfgmod.ConfigError as exc:
        errors = exc.errors
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    print(f"ok: {args.config} ({', '.join(policies)})")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        config, policies, errors = _load(args)
    except cfgmod.ConfigError as exc:
        config, errors = None, exc.errors
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    if config["backend"]["kind"] == "real" and not args.allow_real:
        print("error: real campaigns spawn and signal the configured commands; "
              "pass --allow-real to proceed", file=sys.stderr)
        return EXIT_INVALID
    out = Path(config["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    if config["backend"]["kind"] == "simulated":
        _run_simulated(config, policies, out, Path(args.config).parent, figures=not args.no_figures)
    else:
        _run_real(config, policies[0], out)
    return EXIT_OK


def _run_simulated(config, policies, out: Path, base_dir: Path, figures: bool):
    from fuzzscale.campaign import run_simulated_to_dir
    from fuzzscale.metrics import compare, coverage_timeline
    from fuzzscale.simulator import generate_workload, oracle_allocation

    spec = cfgmod.workload_spec(config, base_dir)
    spec.dump(out / "workload.json")
    programs = generate_workload(spec)
    cores, slices, seed = config["cores"], config["duration_slices"], config.get("seed", 0)
    results = []
    for name in policies:
        policy = cfgmod.build_policy(config, name)
        result = run_simulated_to_dir(programs, cores, policy, slices, out / name, seed=seed,
                                      meta={"label": name, "workload_seed": spec.seed, "n_programs": spec.n})
        print(f"{name:<16} total coverage {sum(result.coverage.values())}")
        results.append(result)
    oracle = oracle_allocation(programs, cores, slices)
    print(f"{'oracle':<16} expected coverage {oracle.expected_coverage:.0f} (noise-free, clairvoyant)")
    if len(results) > 1:
        summary = compare(results, out / "comparison", figures=figures)
        print(summary["text"], end="")
        if figures:
            from fuzzscale import plots

            plots.coverage_curves(
                {name: coverage_timeline(out / name / "events.jsonl") for name in policies},
                out / "comparison" / "coverage_over_time.png",
                slice_ms=config.get("slice_ms"),
            )
            plots.allocation_histogram(
                {r.label: list(r.fuzz_slices.values()) for r in results},
                out / "comparison" / "allocation.png",
            )


def _run_real(config, policy_name, out: Path):
    from fuzzscale.campaign import run_real
    from fuzzscale.coverage import StatsFileProvider
    from fuzzscale.executor import Executor, Limits, ProgramSpec

    backend = config["backend"]
    specs = [
        ProgramSpec(p["id"], p["command"], p.get("target_binary", ""), p.get("target_args", ""),
                    p.get("input_dir", ""), p.get("workdir"))
        for p in backend["programs"]
    ]
    limits = Limits(**backend.get("limits", {}))
    executor = Executor(specs, out, cpu_set=backend.get("cpu_set"), limits=limits)
    stats = {**cfgmod.DEFAULT_STATS, **backend.get("stats", {})}
    provider = StatsFileProvider(stats["path_template"], stats["counter_key"], campaign=out)
    previous = signal.signal(signal.SIGTERM, lambda *_: (_ for _ in ()).throw(KeyboardInterrupt()))
    try:
        result = run_real(
            specs, config["cores"], cfgmod.build_policy(config, policy_name), config["duration_slices"],
            config.get("slice_ms", 100), executor, provider, out, seed=config.get("seed", 0),
            sweep_s=backend.get("sweep_s", 1.0), meta={"label": policy_name},
        )
    finally:
        signal.signal(signal.SIGTERM, previous)
    print(f"{policy_name}: total coverage {sum(result.coverage.values())}")


def _load_result(path: Path):
    from fuzzscale.metrics import CampaignResult, result_from_event_log

    if path.is_dir():
        if (path / "result.json").exists():
            return CampaignResult.load(path / "result.json")
        return result_from_event_log(path / "events.jsonl")
    if path.suffix == ".jsonl":
        return result_from_event_log(path)
    return CampaignResult.load(path)


def cmd_compare(args) -> int:
    from fuzzscale.metrics import compare

    results = []
    for raw in args.results:
        p = Path(raw)
        if p.is_dir() and not (p / "result.json").exists() and not (p / "events.jsonl").exists():
            # a multi-policy run directory: take every campaign inside it
            subdirs = sorted(d for d in p.iterdir() if (d / "result.json").exists())
            results.extend(_load_result(d) for d in subdirs)
        else:
            results.append(_load_result(p))
    if len(results) < 2:
        print("error: need at least two campaign results", file=sys.stderr)
        return EXIT_INVALID
    try:
        summary = compare(results, args.out, figures=not args.no_figures)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(summary["text"], end="")
    return EXIT_OK


def cmd_triage(args) -> int:
    from fuzzscale.triage import DEFAULT_TRACER, render_histogram, triage_campaign

    campaign = Path(args.campaign)
    config_path = Path(args.config) if args.config else campaign / "config.json"
    config = cfgmod.load_config(config_path)
    programs = {
        p["id"]: (p.get("target_binary", ""), p.get("target_args", ""))
        for p in config.get("backend", {}).get("programs", [])
    }
    if not programs:
        print("error: config lists no real programs to triage", file=sys.stderr)
        return EXIT_INVALID
    section = config.get("triage", {})
    tracer = args.tracer if args.tracer is not None else section.get("tracer", DEFAULT_TRACER)
    report = triage_campaign(
        campaign, programs, tracer=tracer, timeout=args.timeout or section.get("timeout_s", 10.0),
        workers=args.workers,
    )
    print(f"{len(report.records)} confirmed crashes, {len(report.bugs)} unique bugs, "
          f"{len(report.hangs)} hangs")
    print(render_histogram(report.histogram()), end="")
    return EXIT_OK


def cmd_gen_workload(args) -> int:
    from fuzzscale.simulator import WorkloadSpec

    spec = WorkloadSpec(
        n=args.n,
        c_max_range=tuple(args.c_max_range),
        tau_range=tuple(args.tau_range),
        noise_amp=args.noise_amp,
        noise_corr=args.noise_corr,
        seed=args.seed,
    )
    if args.out:
        spec.dump(args.out)
    else:
        print(json.dumps(spec.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def _campaign_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="campaign config (JSON)")
    p.add_argument("--cores", type=int)
    p.add_argument("--slice-ms", type=int)
    p.add_argument("--duration-slices", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--policy", help="policy name, comma list, or 'all'")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--gamma", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fuzzscale", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a campaign config")
    _campaign_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run a simulated or real campaign")
    _campaign_flags(p)
    p.add_argument("--allow-real", action="store_true",
                   help="acknowledge that a real campaign spawns and signals the configured commands")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="pairwise accumulative and voting tables")
    p.add_argument("results", nargs="+", help="result.json, events.jsonl, or campaign directories")
    p.add_argument("--out", help="directory for CSV/JSON tables and figures")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("triage", help="confirm, trace and dedupe crashes of a real campaign")
    p.add_argument("campaign", help="campaign output directory")
    p.add_argument("--config", help="config file (default: <campaign>/config.json)")
    p.add_argument("--tracer", help="tracer command template; {argv} is the target command")
    p.add_argument("--timeout", type=float)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_triage)

    p = sub.add_parser("gen-workload", help="write a synthetic workload spec")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--c-max-range", type=float, nargs=2, default=(200.0, 20000.0))
    p.add_argument("--tau-range", type=float, nargs=2, default=(20.0, 5000.0))
    p.add_argument("--noise-amp", type=float, default=0.2)
    p.add_argument("--noise-corr", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_workload)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("interrupted; child processes were terminated", file=sys.stderr)
        return EXIT_RUNTIME
    except cfgmod.ConfigError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

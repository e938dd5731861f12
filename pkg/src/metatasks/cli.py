"""Command-line pipeline: build -> curate -> simulate -> report.

Exit codes: 0 success, 1 empty or failed pipeline outcome, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .build import build_metatask
from .curation import curate, rejections_csv
from .ensembles import ALL_TECHNIQUES, TechniqueConfig, TechniqueId
from .evaluation import (ResultsFormatError, aggregate, fold_score_table, read_results_csv,
                         report_csv, report_markdown, run_benchmark, write_results_csv)
from .model import (BenchmarkSpec, MetataskParseError, MetataskValidationError, find_metatask_dirs,
                    load_metatask, save_metatask)
from .openml_client import ClientConfig, OpenMLClient, OpenMLError

log = logging.getLogger("metatasks")

EXIT_OK, EXIT_EMPTY, EXIT_USAGE = 0, 1, 2
SPEC_FILE = "benchmark_spec.json"
REJECTIONS_FILE = "rejections.csv"


class UsageError(Exception):
    pass


def task_dir(root: Path, task_id: int) -> Path:
    return Path(root) / f"task_{task_id}"


def parse_techniques(text: str) -> list[TechniqueId]:
    if text.strip().lower() == "all":
        return list(ALL_TECHNIQUES)
    out = []
    for token in filter(None, (t.strip() for t in text.split(","))):
        try:
            t = TechniqueId.parse(token)
        except ValueError:
            valid = ", ".join(t.value for t in ALL_TECHNIQUES)
            raise argparse.ArgumentTypeError(f"unknown technique {token!r} (choose from {valid})")
        if t not in out:
            out.append(t)
    if not out:
        raise argparse.ArgumentTypeError("no techniques given")
    return out


# ------------------------------------------------------------------ build

def cmd_build(args) -> int:
    config = ClientConfig.from_env(cache_dir=args.cache_dir, base_url=args.base_url,
                                   offline_mode=args.offline or None,
                                   max_parallel=args.max_parallel)
    client = OpenMLClient(config)
    metric, top_n, suite = args.metric, args.top_n, args.suite_id
    if args.from_spec:
        try:
            spec = BenchmarkSpec.from_json(Path(args.from_spec).read_text())
        except (OSError, ValueError, TypeError) as e:
            raise UsageError(f"cannot read benchmark spec {args.from_spec}: {e}")
        task_ids, metric, top_n = list(spec.task_ids), spec.ranking_metric, spec.top_n
    elif args.suite_id is not None:
        try:
            task_ids = client.fetch_suite(args.suite_id)
        except OpenMLError as e:
            log.error("cannot fetch suite %s: %s", args.suite_id, e)
            return EXIT_EMPTY
    else:
        task_ids = args.task_id
    if top_n < 1:
        raise UsageError("--top-n must be >= 1")

    start = time.monotonic()
    out = Path(args.out)
    built, failed = 0, 0
    for task_id in task_ids:
        try:
            m, report = build_metatask(client, task_id, metric, top_n, source_suite=suite)
            save_metatask(m, task_dir(out, task_id))
        except (OpenMLError, MetataskValidationError, OSError, ValueError) as e:
            failed += 1
            log.error("task %s: build failed: %s", task_id, e)
            continue
        built += 1
        log.info("task %s: %d base models (%d runs skipped)", task_id, len(m.base_models),
                 len(report.skipped_runs))
    elapsed = time.monotonic() - start
    print(f"built {built} of {len(task_ids)} metatasks ({failed} failed, "
          f"{client.network_requests} network requests) in {elapsed:.1f}s", file=sys.stderr)
    return EXIT_OK if built else EXIT_EMPTY


# ------------------------------------------------------------------ curate

def cmd_curate(args) -> int:
    dirs = find_metatask_dirs(args.inp)
    if not dirs:
        log.error("no metatask directories under %s", args.inp)
        return EXIT_EMPTY
    metatasks = []
    for d in dirs:
        try:
            metatasks.append(load_metatask(d))
        except (MetataskParseError, MetataskValidationError) as e:
            log.error("skipping %s: %s", d, e)
    spec = BenchmarkSpec(gap_threshold=args.gap, min_base_models=args.min_base_models,
                         drop_worse_than_random=args.drop_worse_than_random,
                         drop_corrupted=args.drop_corrupted, tool_version=__version__)
    kept, rejected = curate(metatasks, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for m in kept:
        save_metatask(m, task_dir(out, m.task_id))
    if metatasks:
        spec = BenchmarkSpec(**{**spec.__dict__, "task_ids": tuple(m.task_id for m in kept),
                                "ranking_metric": metatasks[0].build_info.ranking_metric,
                                "top_n": metatasks[0].build_info.top_n})
    (out / SPEC_FILE).write_text(spec.to_json(), encoding="utf-8")
    (out / REJECTIONS_FILE).write_text(rejections_csv(rejected), encoding="utf-8")
    print(f"kept {len(kept)} of {len(dirs)} metatasks", file=sys.stderr)
    return EXIT_OK if kept else EXIT_EMPTY


# ------------------------------------------------------------------ simulate

def load_benchmark(directory) -> tuple[list, BenchmarkSpec]:
    """Metatasks listed in the directory's benchmark spec (all metatask dirs if it has none)."""
    directory = Path(directory)
    spec_path = directory / SPEC_FILE
    if spec_path.is_file():
        spec = BenchmarkSpec.from_json(spec_path.read_text(encoding="utf-8"))
        dirs = [task_dir(directory, t) for t in spec.task_ids]
    else:
        dirs = find_metatask_dirs(directory)
        spec = BenchmarkSpec()
    return [load_metatask(d) for d in dirs], spec


def cmd_simulate(args) -> int:
    try:
        metatasks, spec = load_benchmark(args.benchmark)
    except (MetataskParseError, MetataskValidationError, ValueError) as e:
        log.error("cannot load benchmark %s: %s", args.benchmark, e)
        return EXIT_EMPTY
    if not metatasks:
        log.error("benchmark %s contains no metatasks", args.benchmark)
        return EXIT_EMPTY
    overrides = {k: v for k, v in (("seed", args.seed), ("split_ratio", args.split_ratio))
                 if v is not None}
    try:
        spec = BenchmarkSpec(**{**spec.__dict__, **overrides,
                                "task_ids": tuple(m.task_id for m in metatasks)})
    except ValueError as e:
        raise UsageError(str(e))
    start = time.monotonic()
    runs = run_benchmark(metatasks, args.techniques, spec, TechniqueConfig(), workers=args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        write_results_csv(runs, fh)
    n_valid = sum(r.valid for r in runs)
    print(f"{len(runs)} fold runs ({n_valid} valid) over {len(metatasks)} metatasks "
          f"in {time.monotonic() - start:.1f}s -> {out}", file=sys.stderr)
    return EXIT_OK if n_valid else EXIT_EMPTY


# ------------------------------------------------------------------ report

def write_boxplots(runs, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "metatasks"  # stable ids across runs
    table = fold_score_table(runs)
    task_ids = sorted(table)
    fig, axes = plt.subplots(len(task_ids), 1, figsize=(9, 3 * max(len(task_ids), 1)),
                             squeeze=False)
    for ax, task_id in zip(axes[:, 0], task_ids):
        techniques = [t for t in ALL_TECHNIQUES if t in table[task_id]]
        data = [[s for _, s in table[task_id][t]] for t in techniques]
        ax.boxplot(data)
        ax.set_xticks(range(1, len(techniques) + 1), [t.value for t in techniques])
        ax.set_title(f"task {task_id}")
        ax.set_ylabel("fold score")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_report(args) -> int:
    try:
        with open(args.results, encoding="utf-8", newline="") as fh:
            runs = read_results_csv(fh)
    except OSError as e:
        raise UsageError(f"cannot read results file: {e}")
    except ResultsFormatError as e:
        raise UsageError(f"{args.results}: {e}")
    if args.format == "svg":
        if not args.out:
            raise UsageError("--format svg needs --out FILE")
        try:
            write_boxplots(runs, Path(args.out))
        except ImportError:
            log.error("svg output needs matplotlib (pip install 'artifact[plot]')")
            return EXIT_EMPTY
        return EXIT_OK
    report = aggregate(runs, min_instances=args.min_instances)
    text = report_markdown(report) if args.format == "md" else report_csv(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK if report.tasks else EXIT_EMPTY


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metatasks", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default="INFO",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="fetch metatasks from OpenML")
    src = b.add_mutually_exclusive_group(required=True)
    src.add_argument("--task-id", type=int, nargs="+")
    src.add_argument("--suite-id")
    src.add_argument("--from-spec", help="rebuild the tasks listed in a benchmark_spec.json")
    b.add_argument("--metric", default="area_under_roc_curve")
    b.add_argument("--top-n", type=int, default=50)
    b.add_argument("--out", required=True)
    b.add_argument("--offline", action="store_true", help="serve from the cache only")
    b.add_argument("--cache-dir", help="overrides ASSEMBLED_CACHE_DIR")
    b.add_argument("--base-url")
    b.add_argument("--max-parallel", type=int)
    b.set_defaults(func=cmd_build)

    c = sub.add_parser("curate", help="filter base models and metatasks into a benchmark")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--gap", type=float, default=0.05)
    c.add_argument("--min-base-models", type=int, default=10)
    c.add_argument("--drop-worse-than-random", action=argparse.BooleanOptionalAction, default=True)
    c.add_argument("--drop-corrupted", action=argparse.BooleanOptionalAction, default=True)
    c.set_defaults(func=cmd_curate)

    s = sub.add_parser("simulate", help="evaluate ensemble techniques on a benchmark")
    s.add_argument("--benchmark", required=True)
    s.add_argument("--techniques", type=parse_techniques, default=list(ALL_TECHNIQUES),
                   help="comma-separated: " + ",".join(t.value for t in ALL_TECHNIQUES))
    s.add_argument("--seed", type=int, help="default: the benchmark spec's seed (0)")
    s.add_argument("--split-ratio", type=float, help="default: the benchmark spec's ratio (0.5)")
    s.add_argument("--out", default="results.csv")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="closed-gap tables from a results CSV")
    r.add_argument("--results", required=True)
    r.add_argument("--min-instances", type=int, default=1900)
    r.add_argument("--format", choices=["md", "csv", "svg"], default="md")
    r.add_argument("--out", help="output file (default: stdout for md/csv)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"{parser.prog} {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

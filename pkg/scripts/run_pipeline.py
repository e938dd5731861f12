"""Run build -> curate -> simulate -> report in one go.

    # the offline fixture suite
    python3 scripts/run_pipeline.py --suite-id 99999 --offline \
        --cache-dir tests/fixtures/openml_cache --work runs/fixtures

    # a live OpenML suite (OpenML-CC18 is 99)
    python3 scripts/run_pipeline.py --suite-id 99 --work runs/cc18 --workers 4

Outputs under --work: built/, benchmark/, results.csv, report.md, report.csv
and (with matplotlib installed) boxplots.svg.
"""
import argparse
import sys
from pathlib import Path

from metatasks.cli import EXIT_OK, main as cli


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--suite-id")
    src.add_argument("--task-id", nargs="+")
    p.add_argument("--work", type=Path, required=True)
    p.add_argument("--cache-dir")
    p.add_argument("--offline", action="store_true")
    p.add_argument("--top-n", default="50")
    p.add_argument("--techniques", default="all")
    p.add_argument("--seed", default="0")
    p.add_argument("--workers", default="1")
    p.add_argument("--svg", action="store_true", help="also write fold-score boxplots")
    args = p.parse_args(argv)

    work = args.work
    source = ["--suite-id", args.suite_id] if args.suite_id else ["--task-id", *args.task_id]
    build = ["build", *source, "--top-n", args.top_n, "--out", str(work / "built")]
    if args.cache_dir:
        build += ["--cache-dir", args.cache_dir]
    if args.offline:
        build.append("--offline")
    results = str(work / "results.csv")
    steps = [
        build,
        ["curate", "--in", str(work / "built"), "--out", str(work / "benchmark")],
        ["simulate", "--benchmark", str(work / "benchmark"), "--techniques", args.techniques,
         "--seed", args.seed, "--workers", args.workers, "--out", results],
        ["report", "--results", results, "--out", str(work / "report.md")],
        ["report", "--results", results, "--format", "csv", "--out", str(work / "report.csv")],
    ]
    if args.svg:
        steps.append(["report", "--results", results, "--format", "svg",
                      "--out", str(work / "boxplots.svg")])
    for step in steps:
        code = cli(step)
        if code != EXIT_OK:
            print(f"step {step[0]!r} exited with {code}", file=sys.stderr)
            return code
    sys.stdout.write((work / "report.md").read_text())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

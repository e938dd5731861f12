"""Write the synthetic OpenML response cache used by the offline tests.

    python3 scripts/make_fixtures.py [--out tests/fixtures/openml_cache]

The cache holds three small classification tasks (binary with every
prediction-file quirk, three-class with categorical features, and one whose
base models are interchangeable) plus a suite listing them.
"""
import argparse
import shutil
from pathlib import Path

from metatasks.synthetic import FIXTURE_SUITE_ID, default_fixture_tasks, synthetic_responses, write_cache

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "openml_cache"


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = p.parse_args(argv)
    tasks = default_fixture_tasks()
    responses = synthetic_responses(tasks, suites={FIXTURE_SUITE_ID: [t.task_id for t in tasks]})
    if args.out.exists():
        shutil.rmtree(args.out)
    write_cache(responses, args.out)
    print(f"wrote {len(responses)} responses to {args.out}")


if __name__ == "__main__":
    main()

"""Run the acceptance criteria outside pytest and print one line per criterion.

    python3 scripts/run_acceptance.py [C1 C3 ...]
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

import test_acceptance as acc  # noqa: E402


def main(argv):
    wanted = set(argv) or {c[0] for c in acc.CRITERIA}
    outcomes = [acc._run(*c) for c in acc.CRITERIA if c[0] in wanted]
    for out in outcomes:
        print(out.line, flush=True)
    return 0 if all(o.passed for o in outcomes) else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))

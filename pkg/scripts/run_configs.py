"""Run every shipped config through the matching CLI command.

The command is taken from the config file name (``*_scaling.yaml`` runs
``scaling`` and so on); outputs go to ``output_dir`` of each config unless
``--out`` gives a common root.

    python3 scripts/run_configs.py [--out DIR] [--threads N]
"""

import argparse
import sys
from pathlib import Path

from rigidlab.cli import COMMANDS, main as cli_main

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default=None)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    worst = 0
    for path in sorted((ROOT / "configs").glob("*.yaml")):
        command = path.stem.rsplit("_", 1)[-1]
        if command not in COMMANDS:
            print(f"skip {path.name}: no command named {command!r}")
            continue
        argv = [command, "--config", str(path), "--threads", str(args.threads)]
        if args.out:
            argv += ["--out", str(Path(args.out) / path.stem)]
        code = cli_main(argv)
        print(f"{path.name:<24} {command:<10} exit {code}", flush=True)
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())

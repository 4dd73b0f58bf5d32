"""Selection and prediction results for the simulated examples over several seeds.

    python scripts/run_examples.py --example 2 --seeds 0 1 2 --out results/example2.json
"""

import argparse
import json
import logging
from pathlib import Path

from vbprune.experiments import CONFIG_DIR, run_many


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--example", type=int, choices=(1, 2, 3))
    ap.add_argument("--config", help="configuration file (default: configs/example<N>.cfg)")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", help="write the JSON summary here as well as to stdout")
    args = ap.parse_args()
    if args.config is None and args.example is None:
        ap.error("give --example or --config")
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    config = args.config or CONFIG_DIR / f"example{args.example}.cfg"
    summary = run_many(config, args.seeds)
    text = json.dumps(summary, indent=2)
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")


if __name__ == "__main__":
    main()

"""Per-category share of expert activations for a trained checkpoint.

    python3 scripts/expert_histogram.py runs/desk/model.ckpt

Prints one row per (category, layer) with the fraction routed to each
expert, then the check that every row sums to one.
"""

import argparse
from pathlib import Path

from geotrack.checkpoint import load_model
from geotrack.evaluation import expert_stats
from geotrack.synthdata import make_desk_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("ckpt", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model = load_model(args.ckpt)
    hist = expert_stats(model, make_desk_dataset(args.seed).test)
    worst = 0.0
    for category, layers in hist.items():
        for layer, fracs in layers.items():
            worst = max(worst, abs(sum(fracs) - 1.0))
            bars = " ".join(f"{f:5.3f}" for f in fracs)
            print(f"{category:<10} layer {layer}: {bars}")
    print(f"max |row sum - 1| = {worst:.2e}")


if __name__ == "__main__":
    main()

"""Tunable parameter counts by component for the desk and large presets."""

import argparse

from geotrack.config import run_config_from_dict
from geotrack.learning import closed_form_tunable, count_tunable
from geotrack.model import TrackerModel

PUBLISHED_LARGE = 5.30e6  # published count for the full-size tracker


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--build", action="store_true", help="also instantiate each model and count its tensors")
    args = ap.parse_args()

    for preset in ("desk", "large"):
        cfg = run_config_from_dict({"preset": preset}).model
        parts = closed_form_tunable(cfg)
        print(f"{preset}: L={cfg.num_layers} d={cfg.dim} r={cfg.adapter_rank} M={cfg.num_experts} K={cfg.top_k}")
        for name, value in parts.items():
            print(f"  {name:<16}{value:>12,}")
        if args.build:
            print(f"  {'built model':<16}{count_tunable(TrackerModel(cfg)):>12,}")
    print(f"published count for the full-size tracker: {PUBLISHED_LARGE / 1e6:.2f}M")


if __name__ == "__main__":
    main()

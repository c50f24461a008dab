"""Component toggles on the desk dataset, one training run per row.

    python3 scripts/ablation.py --steps 2000 --rows full head_only no_beta

Each row switches components off relative to the default config.  Prints
a Markdown table of held-out Success and Precision.
"""

import argparse
from dataclasses import replace

from geotrack.config import ModelConfig, TrainConfig
from geotrack.evaluation import evaluate, evaluate_baseline
from geotrack.learning import count_tunable, train
from geotrack.model import TrackerModel
from geotrack.synthdata import make_desk_dataset

ROWS = {
    "full": {},
    "head_only": {"use_adapters": False, "use_moge": False, "use_temporal_token": False, "mask_mode": "fixed"},
    "no_moge": {"use_moge": False},
    "no_adapters": {"use_adapters": False},
    "no_temporal": {"use_temporal_token": False},
    "no_beta": {"mask_mode": "fixed"},
    "learnable_mask": {"mask_mode": "fully_learnable"},
    "moge_all_layers": {"moge_layers": "all"},
    "first_template": {"template_mode": "first"},
    "full_finetune": {"full_finetune": True},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", nargs="+", default=["full", "head_only", "no_moge", "no_temporal", "no_beta"],
                    choices=sorted(ROWS))
    ap.add_argument("--steps", type=int, default=TrainConfig().steps)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ds = make_desk_dataset(args.seed)
    print(f"static baseline: {evaluate_baseline(ds.test, 'static').success():.2f}")
    print("| row | tunable | Success | Precision |")
    print("|---|---:|---:|---:|")
    for name in args.rows:
        cfg = replace(ModelConfig(), **ROWS[name])
        model = TrackerModel(cfg)
        train(ds.train, model, TrainConfig(steps=args.steps))
        report = evaluate(model, ds.test)
        print(f"| {name} | {count_tunable(model):,} | {report.success():.2f} | {report.precision():.2f} |",
              flush=True)


if __name__ == "__main__":
    main()

"""Train the default desk model, evaluate it next to the two baselines.

    python3 scripts/desk_experiment.py --out runs/desk

Writes the checkpoint, the loss CSV, the evaluation report and a short
summary.json under ``--out``.
"""

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np

from geotrack.checkpoint import save_checkpoint
from geotrack.config import load_run_config, RunConfig
from geotrack.evaluation import evaluate, evaluate_baseline
from geotrack.learning import smoothed, train
from geotrack.model import TrackerModel
from geotrack.synthdata import make_desk_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    ap.add_argument("--config", type=Path, help="run config JSON (defaults when omitted)")
    ap.add_argument("--seed", type=int, default=0, help="dataset seed")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    run = load_run_config(args.config) if args.config else RunConfig()
    ds = make_desk_dataset(args.seed)
    model = TrackerModel(run.model)
    start = time.perf_counter()
    result = train(ds.train, model, run.train)
    train_s = time.perf_counter() - start
    report = evaluate(model, ds.test, with_experts=bool(model.moge))

    args.out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, args.out / "model.ckpt")
    (args.out / "loss.csv").write_text("\n".join(result.csv_lines()) + "\n")
    (args.out / "report.json").write_text(report.to_json())

    losses = [row[1] for row in result.log]
    summary = {
        "success": report.success(),
        "precision": report.precision(),
        "per_category": {c: report.success(c) for c in report.categories()},
        "static": evaluate_baseline(ds.test, "static").success(),
        "constant_velocity": evaluate_baseline(ds.test, "constant_velocity").success(),
        "initial_loss": float(np.mean(losses[:10])) if losses else None,
        "final_loss": smoothed(losses, 50) if losses else None,
        "train_seconds": round(train_s, 1),
    }
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()

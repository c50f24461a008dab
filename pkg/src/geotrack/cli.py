"""Command-line entry point.

Exit codes: 0 ok, 2 I/O, 3 config, 4 checkpoint.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_run_config
from .errors import CheckpointMismatchError, ConfigError, FormatError

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_CHECKPOINT = 0, 2, 3, 4

SYNTH_PRESETS = {
    "desk": {"n_train": 64, "n_test": 16, "length": 10},
    "tiny": {"n_train": 2, "n_test": 1, "length": 4},
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geotrack", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write the synthetic desk dataset")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--preset", choices=sorted(SYNTH_PRESETS), default="desk")

    t = sub.add_parser("train", help="train on DIR/train and write a checkpoint")
    t.add_argument("--data", required=True, type=Path)
    t.add_argument("--config", type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--log", type=Path, help="loss CSV (default: OUT with .loss.csv suffix)")

    e = sub.add_parser("eval", help="track DIR/<split> and write a JSON report")
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--ckpt", type=Path)
    e.add_argument("--config", type=Path)
    e.add_argument("--report", required=True, type=Path)
    e.add_argument("--split", default="test")
    e.add_argument("--oracle", action="store_true", help="ground-truth localizer (harness check)")
    e.add_argument("--baseline", choices=["static", "constant_velocity"])

    x = sub.add_parser("experts", help="per-category expert activation histogram as CSV")
    x.add_argument("--data", required=True, type=Path)
    x.add_argument("--ckpt", required=True, type=Path)
    x.add_argument("--config", type=Path)
    x.add_argument("--out", required=True, type=Path)
    x.add_argument("--split", default="test")
    return p


def _config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return load_run_config(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {path}: {exc.strerror}") from None
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"config error: {exc}") from None


def _read(root: Path, split: str):
    from .synthdata import read_split

    try:
        seqs = read_split(root, split)
    except FormatError as exc:
        raise CliError(EXIT_IO, f"data error: {exc}") from None
    if not seqs:
        raise CliError(EXIT_IO, f"no sequences under {root / split}")
    return seqs


def _model(ckpt, config_path):
    from .checkpoint import config_from_checkpoint, load_model

    cfg = _config(config_path).model if config_path is not None else None
    try:
        if cfg is None:
            cfg = config_from_checkpoint(ckpt)
        return load_model(ckpt, cfg)
    except FormatError as exc:
        raise CliError(EXIT_CHECKPOINT if Path(ckpt).exists() else EXIT_IO, f"checkpoint error: {exc}") from None
    except CheckpointMismatchError as exc:
        raise CliError(EXIT_CHECKPOINT, f"checkpoint mismatch: {exc}") from None
    except ConfigError as exc:
        raise CliError(EXIT_CHECKPOINT, f"checkpoint config error: {exc}") from None


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc.strerror}") from None


def cmd_synth(args) -> None:
    from .synthdata import make_desk_dataset, write_dataset

    ds = make_desk_dataset(args.seed, **SYNTH_PRESETS[args.preset])
    try:
        write_dataset(ds, args.out)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write dataset to {args.out}: {exc.strerror}") from None
    print(f"train {len(ds.train)} test {len(ds.test)} total {len(ds.train) + len(ds.test)}")


def cmd_train(args) -> None:
    from .checkpoint import save_checkpoint
    from .learning import train
    from .model import TrackerModel

    run = _config(args.config)
    seqs = _read(args.data, "train")
    model = TrackerModel(run.model)
    try:
        result = train(seqs, model, run.train)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"config error: {exc}") from None
    try:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, args.out)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {exc.strerror}") from None
    log_path = args.log or args.out.with_name(args.out.name + ".loss.csv")
    _write(log_path, "\n".join(result.csv_lines()) + "\n")
    last = result.log[-1][1] if result.log else float("nan")
    print(f"steps {len(result.log)} final loss {last:.6g} -> {args.out}")


def cmd_eval(args) -> None:
    from .evaluation import evaluate, evaluate_baseline

    seqs = _read(args.data, args.split)
    if args.baseline:
        report = evaluate_baseline(seqs, args.baseline)
    elif args.oracle:
        def oracle(seq):
            boxes = [f.box for f in seq.frames]
            return lambda i, prev: boxes[i - 1]

        model = _model(args.ckpt, args.config) if args.ckpt else None
        report = evaluate(model, seqs, oracle)
    else:
        if args.ckpt is None:
            raise CliError(EXIT_CONFIG, "eval needs --ckpt unless --oracle or --baseline is given")
        model = _model(args.ckpt, args.config)
        report = evaluate(model, seqs, with_experts=bool(model.moge))
    _write(args.report, report.to_json())
    print(f"success {report.success():.2f} precision {report.precision():.2f}")


def cmd_experts(args) -> None:
    from .evaluation import expert_stats, histogram_to_csv

    seqs = _read(args.data, args.split)
    model = _model(args.ckpt, args.config)
    if not model.moge:
        raise CliError(EXIT_CONFIG, "model has no geometry-expert layer")
    _write(args.out, histogram_to_csv(expert_stats(model, seqs)))
    print(f"wrote {args.out}")


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "experts": cmd_experts}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except CliError as exc:
        print(f"geotrack {args.command}: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

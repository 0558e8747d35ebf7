"""Command-line surface: train, eval, sweep, gradcheck, report.

Exit codes are fixed for scripting: 0 success, 1 I/O failure,
2 configuration problem, 3 training divergence, 4 checkpoint problem,
5 gradient-check failure. The CARL_LAB_THREADS environment variable caps
BLAS threads and must be applied before numpy loads, so heavyweight
imports happen inside main().
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_CHECKPOINT = 4
EXIT_GRADCHECK = 5

# Fixed seed for synthetic dataset synthesis: the dataset is a deterministic
# function of the [data] section, shared by every --seed of a sweep cell.
DATA_SEED = 9431


def _apply_thread_cap() -> None:
    cap = os.environ.get("CARL_LAB_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carl-lab",
        description="Prototype-assignment representation learning at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training job")
    p_train.add_argument("config", help="run configuration file")
    p_train.add_argument("--out", default="run", help="output directory")
    p_train.add_argument("--seed", type=int, default=0)

    p_eval = sub.add_parser("eval", help="linear probe on a checkpoint")
    p_eval.add_argument("checkpoint", help="checkpoint file from train")
    p_eval.add_argument("--config", default=None, help="config describing the dataset")
    p_eval.add_argument("--seeds", type=int, default=None, help="number of probe runs")
    p_eval.add_argument("--cifar-dir", default=None, help="override CIFAR directory")
    p_eval.add_argument("--out", default=None, help="JSONL file for probe rows")

    p_sweep = sub.add_parser("sweep", help="cross-product of config values x seeds")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--vary", required=True,
                         help="key=v1,v2,... (key may be section.key or 'schedule' with a:b values)")
    p_sweep.add_argument("--seeds", type=int, default=3)
    p_sweep.add_argument("--out", default="sweep", help="output directory")

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of all losses")
    p_grad.add_argument("--trials", type=int, default=20)
    p_grad.add_argument("--seed", type=int, default=0)

    p_report = sub.add_parser("report", help="render figures for a run or sweep directory")
    p_report.add_argument("path", help="directory containing metrics.csv or summary.csv")
    p_report.add_argument("--out", default=None, help="directory for the figures")
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    handler = {
        "train": cmd_train,
        "eval": cmd_eval,
        "sweep": cmd_sweep,
        "gradcheck": cmd_gradcheck,
        "report": cmd_report,
    }[args.command]
    return handler(args)


# ---------------------------------------------------------------------------
# shared helpers (import package modules lazily, after the thread cap)
# ---------------------------------------------------------------------------

def _build_dataset(config, split: str = "train"):
    """Dataset described by the [data] section; CIFAR honors the official split."""
    from . import data as data_mod

    section = config.values["data"]
    if section["kind"] == "gaussian_mixture":
        return data_mod.generate_gaussian_mixture(
            num_classes=section["num_classes"], per_class=section["per_class"],
            dim=section["dim"], separation=section["separation"], seed=DATA_SEED)
    if section["kind"] == "cifar10":
        directory = Path(section["cifar_dir"])
        pattern = "data_batch_*.bin" if split == "train" else "test_batch.bin"
        try:
            return data_mod.load_cifar10_binary(directory, pattern=pattern)
        except data_mod.FormatError:
            # fall back to every record file present
            return data_mod.load_cifar10_binary(directory)
    from .errors import ConfigError

    raise ConfigError(f"unknown data kind {section['kind']!r}")


def _train_to_dir(config, seed: int, out_dir: Path):
    """Run training per config, writing metrics/checkpoint/snapshot to out_dir."""
    from . import data as data_mod
    from .runconfig import save_config, to_train_config
    from .trainer import MetricsRecord, checkpoint_save, train_run

    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = _build_dataset(config)
    train_config = to_train_config(config, seed=seed)
    if config.values["data"]["kind"] == "cifar10":
        mean, std = data_mod.channel_stats(dataset)
        train_config.augmentation.channel_mean = mean
        train_config.augmentation.channel_std = std

    csv_path = out_dir / "metrics.csv"
    jsonl_path = out_dir / "metrics.jsonl"
    records = []
    with csv_path.open("w") as csv_fh, jsonl_path.open("w") as jsonl_fh:
        csv_fh.write(",".join(MetricsRecord.CSV_FIELDS) + "\n")

        def on_epoch(record):
            records.append(record)
            csv_fh.write(record.csv_row() + "\n")
            jsonl_fh.write(json.dumps(record.to_dict()) + "\n")

        state, _ = train_run(train_config, dataset, epoch_callback=on_epoch)

    checkpoint_save(state, out_dir / "checkpoint.bin")
    save_config(config, out_dir / "config.resolved.cfg")
    return state, records, dataset


def _probe_checkpoint(state, config, dataset, seed: int, checkpoint_id: str = "",
                      eval_dataset=None):
    """Probe on one dataset (seeded 80/20) or across an official train/test split."""
    from .evaluation import extract_features, train_linear_probe

    eval_cfg = config.values["eval"]
    features = extract_features(state.encoder, dataset)
    eval_features = eval_labels = None
    if eval_dataset is not None:
        eval_features = extract_features(state.encoder, eval_dataset)
        eval_labels = eval_dataset.labels
    return train_linear_probe(
        features, dataset.labels,
        epochs=eval_cfg["probe_epochs"], lr=eval_cfg["probe_lr"],
        seed=seed, batch_size=eval_cfg["probe_batch_size"],
        test_fraction=eval_cfg["test_fraction"],
        eval_features=eval_features, eval_labels=eval_labels,
        dataset_name=dataset.name, encoder_checkpoint=checkpoint_id)


def _file_id(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .errors import ConfigError, ContractError, DivergedError
    from .runconfig import load_config

    try:
        config = load_config(args.config)
        _train_to_dir(config, args.seed, Path(args.out))
    except (ConfigError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergedError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def cmd_eval(args) -> int:
    import numpy as np

    from .errors import ConfigError, FormatError
    from .runconfig import default_config, load_config
    from .trainer import checkpoint_load

    checkpoint_path = Path(args.checkpoint)
    try:
        state = checkpoint_load(checkpoint_path)
    except (FormatError, OSError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT

    try:
        config = load_config(args.config) if args.config else default_config()
        if args.cifar_dir:
            config.values["data"]["kind"] = "cifar10"
            config.values["data"]["cifar_dir"] = args.cifar_dir
        dataset = _build_dataset(config, split="train")
        eval_dataset = None
        if config.values["data"]["kind"] == "cifar10":
            eval_dataset = _build_dataset(config, split="eval")
    except (ConfigError, FormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    seeds = args.seeds if args.seeds is not None else config.values["eval"]["probe_seeds"]
    checkpoint_id = _file_id(checkpoint_path)
    results = [_probe_checkpoint(state, config, dataset, seed=s,
                                 checkpoint_id=checkpoint_id, eval_dataset=eval_dataset)
               for s in range(seeds)]
    scores = np.array([r.top1_accuracy for r in results])
    print(f"top1 {scores.mean():.6f} {scores.std():.6f}")

    jsonl_path = Path(args.out) if args.out else checkpoint_path.parent / "eval.jsonl"
    with jsonl_path.open("a") as fh:
        for seed, result in zip(range(seeds), results):
            fh.write(json.dumps({
                "checkpoint": checkpoint_id,
                "dataset": result.dataset,
                "probe_seed": seed,
                "probe_epochs": result.probe_epochs,
                "top1_accuracy": result.top1_accuracy,
                "per_class_accuracy": result.per_class_accuracy,
            }) + "\n")
    return EXIT_OK


def _parse_sweep_values(key: str, raw_values: str):
    """Split --vary values; `schedule` takes a:b pairs (end:start)."""
    values = [v for v in raw_values.split(",") if v != ""]
    if key == "schedule":
        pairs = []
        for value in values:
            a, _, b = value.partition(":")
            pairs.append((float(a), float(b)))
        return pairs
    return values


def cmd_sweep(args) -> int:
    import copy

    import numpy as np

    from .errors import CarlLabError, ConfigError
    from .runconfig import load_config, resolve_sweep_key

    try:
        base = load_config(args.config)
        key_raw, _, raw_values = args.vary.partition("=")
        section, key = resolve_sweep_key(key_raw.strip())
        values = _parse_sweep_values(key, raw_values)
        if not values:
            raise ConfigError(f"--vary {key_raw}: no values given")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    summary_rows = []
    for value in values:
        config = copy.deepcopy(base)
        if key == "schedule":
            config.values["objective"]["lambda_end"] = value[0]
            config.values["objective"]["lambda_start"] = value[1]
            cell_name = f"schedule={value[0]:g}:{value[1]:g}"
            cell_label = f"{value[0]:g}:{value[1]:g}"
        else:
            try:
                config.set(section, key, value)
            except ConfigError as exc:
                print(f"config error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
            cell_name = f"{key}={value}"
            cell_label = str(value)

        accuracies, perplexities = [], []
        for seed in range(args.seeds):
            cell_dir = out_root / cell_name / f"seed{seed}"
            try:
                state, records, dataset = _train_to_dir(config, seed, cell_dir)
            except CarlLabError as exc:
                print(f"{cell_name} seed {seed} failed: {exc}", file=sys.stderr)
                return EXIT_DIVERGED
            probe = _probe_checkpoint(state, config, dataset, seed=seed)
            accuracies.append(probe.top1_accuracy)
            perplexities.append(records[-1].perplexity)
            print(f"{cell_name} seed={seed} top1={probe.top1_accuracy:.4f} "
                  f"perplexity={records[-1].perplexity:.2f}")
        summary_rows.append({
            "key": key, "value": cell_label, "seeds": args.seeds,
            "top1_mean": float(np.mean(accuracies)),
            "top1_std": float(np.std(accuracies)),
            "perplexity_mean": float(np.mean(perplexities)),
            "perplexity_std": float(np.std(perplexities)),
        })

    with (out_root / "summary.csv").open("w") as fh:
        fh.write("key,value,seeds,top1_mean,top1_std,perplexity_mean,perplexity_std\n")
        for row in summary_rows:
            fh.write(f"{row['key']},{row['value']},{row['seeds']},"
                     f"{row['top1_mean']!r},{row['top1_std']!r},"
                     f"{row['perplexity_mean']!r},{row['perplexity_std']!r}\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_suite, worst_result

    if args.trials < 1:
        print("gradcheck needs --trials >= 1", file=sys.stderr)
        return EXIT_CONFIG
    results = run_suite(trials=args.trials, seed=args.seed)
    by_name: dict[str, float] = {}
    for result in results:
        by_name[result.name] = max(by_name.get(result.name, 0.0), result.relative_error)
    for name, err in sorted(by_name.items()):
        print(f"{name}: worst relative error {err:.3e}")
    worst = worst_result(results)
    print(f"worst overall: {worst.name} {worst.relative_error:.3e} "
          f"(B,K,d)={worst.dims} tolerance {TOLERANCE:g}")
    if worst.relative_error >= TOLERANCE:
        failing = sorted({r.name for r in results if not r.passed})
        print(f"FAILED compositions: {', '.join(failing)}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import render_path

    path = Path(args.path)
    if not path.is_dir():
        print(f"not a directory: {path}", file=sys.stderr)
        return EXIT_CONFIG
    written = render_path(path, args.out)
    if not written:
        print(f"nothing to render in {path} (no metrics.csv or summary.csv)",
              file=sys.stderr)
        return EXIT_CONFIG
    for figure in written:
        print(f"wrote {figure}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

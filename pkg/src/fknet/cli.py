"""Command-line surface: train, retrain, eval, features, inspect, validate-data.

Configuration is flags-first with an optional key=value config file; flags
win.  All randomness flows from --seed, and --threads caps BLAS parallelism
so runs are reproducible for a fixed seed and thread count.  The default data
root comes from $FK_DATA_DIR.
"""

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .augment import plan_for
from .data import load_dataset, validate_stats
from .errors import ConfigError, FkError
from .trainer import (
    RunConfig,
    dataset_channel_means,
    predict_scores,
    prepare_eval_batch,
    run,
    top_k_accuracy,
    write_metrics_csv,
)
from .optim import SgdConfig

DATASETS = ("mnist", "cifar10", "cifar100")

# config-file casts for every overridable key
_CASTS = {
    "dataset": str,
    "data_dir": str,
    "out_checkpoint": str,
    "metrics_csv": str,
    "pretrained": str,
    "checkpoint": str,
    "out": str,
    "split": str,
    "crops": str,
    "profile": str,
    "epochs": int,
    "seed": int,
    "threads": int,
    "batch_size": int,
    "eval_every": int,
    "limit_train": int,
    "limit_test": int,
    "lr": float,
    "momentum": float,
    "weight_decay": float,
    "no_wall_times": lambda v: v.lower() in ("1", "true", "yes"),
    "train_mirror": lambda v: v.lower() in ("1", "true", "yes"),
}


def _add_common(sp, with_data=True):
    sp.add_argument("--config", help="key=value config file; explicit flags override it")
    sp.add_argument("--threads", type=int, help="cap BLAS threads (default: library choice)")
    if with_data:
        sp.add_argument("--dataset", choices=DATASETS, help="dataset name")
        sp.add_argument("--data-dir", dest="data_dir",
                        help="dataset root directory (default: $FK_DATA_DIR)")
        sp.add_argument("--limit-train", dest="limit_train", type=int,
                        help="use only the first N training images")
        sp.add_argument("--limit-test", dest="limit_test", type=int,
                        help="use only the first N test images")


def _add_train_common(sp):
    sp.add_argument("--out-checkpoint", dest="out_checkpoint", help="where to write the FKCK file")
    sp.add_argument("--metrics-csv", dest="metrics_csv", help="where to write per-epoch metrics")
    sp.add_argument("--epochs", type=int, help="training epochs (default 30)")
    sp.add_argument("--seed", type=int, help="master seed for all randomness (default 0)")
    sp.add_argument("--batch-size", dest="batch_size", type=int, help="mini-batch size (default 80)")
    sp.add_argument("--lr", type=float, help="base learning rate (default per profile)")
    sp.add_argument("--momentum", type=float, help="momentum (default 0.9)")
    sp.add_argument("--weight-decay", dest="weight_decay", type=float,
                    help="weight decay (default 0.0005)")
    sp.add_argument("--eval-every", dest="eval_every", type=int,
                    help="evaluate and record metrics every N epochs (default 1)")
    sp.add_argument("--train-mirror", dest="train_mirror", action="store_true", default=None,
                    help="also mirror training crops horizontally (off by default)")
    sp.add_argument("--no-wall-times", dest="no_wall_times", action="store_true", default=None,
                    help="write 0.0 wall_seconds so repeated runs emit identical CSVs")


def build_parser():
    p = argparse.ArgumentParser(
        prog="fknet",
        description="Small CNN training and transfer-learning engine with "
                    "frozen feature extractors.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the full network from scratch")
    _add_common(t)
    _add_train_common(t)
    t.add_argument("--profile", choices=("desk", "reference"),
                   help="network size profile (default desk)")

    r = sub.add_parser("retrain", help="freeze pretrained conv features, retrain the classifier head")
    _add_common(r)
    _add_train_common(r)
    r.add_argument("--pretrained", help="FKCK checkpoint supplying the frozen conv stack")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a test split")
    _add_common(e)
    e.add_argument("--checkpoint", help="FKCK checkpoint to evaluate")
    e.add_argument("--crops", choices=("center", "multi"),
                   help="center crop or averaged multi-crop protocol (default center)")

    f = sub.add_parser("features", help="export frozen-extractor feature vectors")
    _add_common(f)
    f.add_argument("--checkpoint", help="FKCK checkpoint to load")
    f.add_argument("--split", choices=("train", "test"), help="split to featurize (default test)")
    f.add_argument("--out", help="output .npz path (arrays: features, labels)")

    i = sub.add_parser("inspect", help="list the entries of a checkpoint")
    i.add_argument("checkpoint", help="FKCK checkpoint path")
    i.add_argument("--config", help=argparse.SUPPRESS)

    v = sub.add_parser("validate-data", help="check a dataset against its published statistics")
    _add_common(v)
    return p


def _read_config(path):
    conf = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in _CASTS:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        conf[key] = _CASTS[key](value.strip())
    return conf


def _merge_config(args):
    if getattr(args, "config", None):
        for key, value in _read_config(args.config).items():
            if getattr(args, key, None) is None and hasattr(args, key):
                setattr(args, key, value)
    return args


def _data_dir(args):
    d = args.data_dir or os.environ.get("FK_DATA_DIR")
    if not d:
        raise ConfigError("no data directory: pass --data-dir or set FK_DATA_DIR")
    if not Path(d).is_dir():
        raise ConfigError(f"data directory not found: {d}")
    return d


def _require(args, *keys):
    for key in keys:
        if getattr(args, key, None) is None:
            raise ConfigError(f"missing required option --{key.replace('_', '-')}")


def _load_ds(args):
    _require(args, "dataset")
    return load_dataset(args.dataset, _data_dir(args), args.limit_train, args.limit_test)


def _sgd_for(profile, epochs, args):
    base_lr = args.lr if args.lr is not None else (0.001 if profile == "reference" else 0.01)
    momentum = args.momentum if args.momentum is not None else 0.9
    decay = args.weight_decay if args.weight_decay is not None else 0.0005
    batch = args.batch_size if args.batch_size is not None else 80
    if profile == "reference":
        total = max(30, epochs)
        schedule = ((20, base_lr / 10.0),)
    else:
        total = epochs
        drop = max(1, math.ceil(2 * epochs / 3))
        schedule = ((drop, base_lr / 10.0),)
    return SgdConfig(
        base_lr=base_lr, momentum=momentum, weight_decay=decay, batch_size=batch,
        total_epochs=total, schedule=schedule,
    )


def _run_common(args, mode, profile, pretrained=None):
    ds = _load_ds(args)
    plan = plan_for(args.dataset, profile)
    epochs = args.epochs if args.epochs is not None else 30
    cfg = RunConfig(
        mode=mode,
        dataset=args.dataset,
        epochs=epochs,
        sgd=_sgd_for(profile, epochs, args),
        crop_plan=plan,
        seed=args.seed if args.seed is not None else 0,
        pretrained_path=pretrained,
        eval_every=args.eval_every if args.eval_every is not None else 1,
        profile=profile,
        init="gaussian" if profile == "reference" else "he",
        train_mirror=bool(args.train_mirror),
        out_checkpoint=args.out_checkpoint,
        record_wall=not args.no_wall_times,
    )
    _, metrics = run(cfg, ds, log=lambda msg: print(msg, file=sys.stderr))
    if args.metrics_csv:
        write_metrics_csv(metrics, args.metrics_csv)
    return 0


def _cmd_train(args):
    profile = args.profile if args.profile is not None else "desk"
    return _run_common(args, "full", profile)


def _cmd_retrain(args):
    _require(args, "pretrained")
    spec = ckpt_io.parse_architecture_tag(ckpt_io.load(args.pretrained).architecture_tag)
    profile = "reference" if spec.input_shape[1] == 227 else "desk"
    return _run_common(args, "retrain", profile, pretrained=args.pretrained)


def _infer_plan(args, spec):
    profile = "reference" if spec.input_shape[1] == 227 else "desk"
    plan = plan_for(args.dataset, profile)
    if plan.target_size != spec.input_shape[1]:
        raise ConfigError(
            f"checkpoint input {spec.input_shape} incompatible with {args.dataset} "
            f"{profile} pipeline (target {plan.target_size})"
        )
    return plan


def _cmd_eval(args):
    _require(args, "checkpoint")
    net = ckpt_io.network_from_checkpoint(ckpt_io.load(args.checkpoint))
    ds = _load_ds(args)
    plan = _infer_plan(args, net.spec)
    crops = args.crops if args.crops is not None else "center"
    scores, labels = predict_scores(net, ds, "test", plan, crops=crops)
    print(f"top1={top_k_accuracy(scores, labels, 1):.6f}")
    if ds.num_classes >= 5:
        print(f"top5={top_k_accuracy(scores, labels, 5):.6f}")
    return 0


def _cmd_features(args):
    _require(args, "checkpoint", "out")
    net = ckpt_io.network_from_checkpoint(ckpt_io.load(args.checkpoint))
    ds = _load_ds(args)
    plan = _infer_plan(args, net.spec)
    split = args.split if args.split is not None else "test"
    mean = dataset_channel_means(ds)
    net.mode = "eval"
    samples = getattr(ds, split)
    feats = []
    labels = []
    for start in range(0, len(samples), 100):
        chunk = samples[start : start + 100]
        batch = prepare_eval_batch([s.image for s in chunk], plan, mean)
        feats.append(net.extract_features(batch))
        labels.extend(s.label for s in chunk)
    features = np.concatenate(feats) if feats else np.zeros((0, 0), dtype=np.float32)
    np.savez(args.out, features=features, labels=np.array(labels, dtype=np.int64))
    print(f"wrote {features.shape[0]} feature rows of width {features.shape[1]} to {args.out}")
    return 0


def _cmd_inspect(args):
    ckpt = ckpt_io.load(args.checkpoint)
    print(f"architecture: {ckpt.architecture_tag}")
    print(f"epoch: {ckpt.epoch}")
    print(f"{'name':<16} {'shape':<20} {'min':>12} {'max':>12} {'mean':>12}")
    for name, value in ckpt.entries.items():
        shape = "x".join(str(e) for e in value.shape)
        print(
            f"{name:<16} {shape:<20} {value.min():>12.5g} {value.max():>12.5g} "
            f"{value.mean():>12.5g}"
        )
    return 0


def _cmd_validate_data(args):
    ds = _load_ds(args)
    report = validate_stats(ds)
    print(report)
    return 0 if report.passed else 1


_HANDLERS = {
    "train": _cmd_train,
    "retrain": _cmd_retrain,
    "eval": _cmd_eval,
    "features": _cmd_features,
    "inspect": _cmd_inspect,
    "validate-data": _cmd_validate_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = _merge_config(parser.parse_args(argv))
    handler = _HANDLERS[args.command]
    try:
        threads = getattr(args, "threads", None)
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                return handler(args)
        return handler(args)
    except (FkError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()

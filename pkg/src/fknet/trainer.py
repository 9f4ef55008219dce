"""Epoch orchestration for full training and frozen-extractor retraining,
plus the center-crop and multi-crop evaluation protocols."""

import csv
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import checkpoint as ckpt_io
from .augment import (
    CropPlan,
    center_crop,
    channel_means,
    gray_to_rgb,
    hflip,
    mean_subtract,
    random_train_crop,
    resize_bilinear,
    test_crops,
)
from .data import Dataset, batches
from .errors import ConfigError
from .layers import softmax, softmax_xent_batch
from .network import (
    Network,
    build_desk_net,
    build_reference_net,
    parse_architecture_tag,
    with_num_classes,
)
from .optim import SgdConfig, lr_at_epoch, sgd_step, zero_grads
from .tensor import Tensor


@dataclass
class RunConfig:
    mode: str  # "full" | "retrain"
    dataset: str
    epochs: int = 30
    sgd: SgdConfig = field(default_factory=SgdConfig)
    crop_plan: CropPlan = field(default_factory=lambda: CropPlan(256, 227))
    seed: int = 0
    pretrained_path: Optional[str] = None
    eval_every: int = 1
    profile: str = "desk"
    init: str = "he"
    train_mirror: bool = False  # train-time mirroring is off by default
    out_checkpoint: Optional[str] = None
    record_wall: bool = True  # False writes 0.0 wall times for reproducible CSVs
    eval_limit: Optional[int] = None  # cap test images per evaluation pass


@dataclass
class EpochMetrics:
    epoch: int
    mode: str
    train_loss: float
    center_crop_accuracy: float
    wall_seconds: float


def _stream(seed, *key):
    """Independent deterministic generator for (seed, purpose, epoch...)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


_INIT, _HEAD, _SHUFFLE, _AUGMENT, _DROPOUT = 1, 2, 3, 4, 5


def _to_source(img, plan: CropPlan):
    """Replicate grayscale to RGB and resize onto the plan's source square."""
    if img.shape[0] == 1:
        img = gray_to_rgb(img)
    if img.shape[1] != plan.source_size or img.shape[2] != plan.source_size:
        img = resize_bilinear(img, plan.source_size, plan.source_size)
    return img


def prepare_train_batch(images, plan, mean, rng, mirror=False):
    """Per-sample train pipeline: to-source, random crop, mean subtract."""
    out = []
    for img in images:
        img = _to_source(img, plan)
        img = random_train_crop(img, plan, rng)
        if mirror and rng.random() < 0.5:
            img = hflip(img)
        out.append(mean_subtract(img, mean))
    return np.stack(out)


def prepare_eval_batch(images, plan, mean):
    """Deterministic center-crop pipeline."""
    return np.stack(
        [mean_subtract(center_crop(_to_source(img, plan), plan), mean) for img in images]
    )


def dataset_channel_means(ds: Dataset):
    """Per-channel training-split mean in the network's 3-channel space."""
    mean = channel_means(ds.train)
    if mean.shape[0] == 1:
        mean = np.repeat(mean, 3)
    return mean


def build_network_for(cfg: RunConfig, num_classes: int) -> Network:
    plan = cfg.crop_plan
    if cfg.profile == "reference":
        spec = build_reference_net(num_classes)
        if plan.target_size != 227:
            raise ConfigError(f"reference profile needs 227 crops, got {plan.target_size}")
    elif cfg.profile == "desk":
        spec = build_desk_net((3, plan.target_size, plan.target_size), num_classes)
    else:
        raise ConfigError(f"unknown profile '{cfg.profile}'")
    return Network(spec, _stream(cfg.seed, _INIT), init=cfg.init)


def run(cfg: RunConfig, ds: Dataset, log=None):
    """Train per the config and return one metrics row per evaluated epoch.

    Fully deterministic for a fixed seed and thread count: every random
    stream is derived from cfg.seed, and evaluation never consumes rng.
    """
    if cfg.mode not in ("full", "retrain"):
        raise ConfigError(f"unknown mode '{cfg.mode}'")
    if cfg.mode == "retrain" and not cfg.pretrained_path:
        raise ConfigError("retrain mode requires pretrained_path")
    if cfg.epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {cfg.epochs}")
    if cfg.epochs > cfg.sgd.total_epochs:
        raise ConfigError(
            f"epochs {cfg.epochs} exceed schedule's total_epochs {cfg.sgd.total_epochs}"
        )
    if cfg.eval_every < 1:
        raise ConfigError(f"eval_every must be >= 1, got {cfg.eval_every}")
    if cfg.seed < 0:
        raise ConfigError(f"seed must be >= 0, got {cfg.seed}")
    if not ds.train:
        raise ConfigError("training split is empty")

    if cfg.mode == "retrain":
        ck = ckpt_io.load(cfg.pretrained_path)
        spec = with_num_classes(
            parse_architecture_tag(ck.architecture_tag), ds.num_classes
        )
        if spec.input_shape[1] != cfg.crop_plan.target_size:
            raise ConfigError(
                f"checkpoint input {spec.input_shape} does not match crop target "
                f"{cfg.crop_plan.target_size}"
            )
        net = Network(spec, _stream(cfg.seed, _INIT), init=cfg.init)
        ckpt_io.apply_features(
            net, ck, _stream(cfg.seed, _HEAD), source=str(cfg.pretrained_path)
        )
    else:
        net = build_network_for(cfg, ds.num_classes)

    plan = cfg.crop_plan
    mean = dataset_channel_means(ds)
    params = net.parameters()
    metrics = []
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        lr = lr_at_epoch(cfg.sgd, epoch)
        aug_rng = _stream(cfg.seed, _AUGMENT, epoch)
        drop_rng = _stream(cfg.seed, _DROPOUT, epoch)
        net.mode = "train"
        total_loss = 0.0
        total_n = 0
        for images, labels in batches(
            ds, "train", cfg.sgd.batch_size, shuffle=True,
            seed=np.random.SeedSequence([cfg.seed, _SHUFFLE, epoch]),
        ):
            batch = prepare_train_batch(images, plan, mean, aug_rng, cfg.train_mirror)
            logits = net.forward(batch, rng=drop_rng)
            loss, _, grad = softmax_xent_batch(logits, labels)
            zero_grads(params)
            net.backward(grad)
            sgd_step(params, cfg.sgd, lr)
            total_loss += loss * len(labels)
            total_n += len(labels)
        train_loss = total_loss / total_n
        if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            acc = evaluate_center(net, ds, "test", plan, mean=mean, limit=cfg.eval_limit)
            wall = time.perf_counter() - start if cfg.record_wall else 0.0
            metrics.append(EpochMetrics(epoch, cfg.mode, train_loss, acc, wall))
            if cfg.out_checkpoint:
                ckpt_io.save(net, cfg.out_checkpoint, epoch + 1)
            if log:
                log(
                    f"epoch {epoch + 1}/{cfg.epochs} lr={lr:g} "
                    f"loss={train_loss:.4f} acc={acc:.4f} ({wall:.1f}s)"
                )
    return net, metrics


def _eval_samples(ds, split, limit):
    samples = getattr(ds, split)
    return samples if limit is None else samples[: int(limit)]


def predict_scores(net: Network, ds: Dataset, split, plan, mean=None, crops="center",
                   batch_size=100, limit=None):
    """Per-image class scores under the chosen protocol plus true labels.

    center: softmax of the center-crop logits.  multi: mean softmax over the
    plan's deterministic crop set (10 mirrored, 5 unmirrored).
    """
    if mean is None:
        mean = dataset_channel_means(ds)
    samples = _eval_samples(ds, split, limit)
    prev_mode = net.mode
    net.mode = "eval"
    rows = []
    labels = []
    try:
        for start in range(0, len(samples), batch_size):
            chunk = samples[start : start + batch_size]
            labels.extend(s.label for s in chunk)
            if crops == "center":
                batch = prepare_eval_batch([s.image for s in chunk], plan, mean)
                rows.append(softmax(net.forward(batch)))
            elif crops == "multi":
                stacked = []
                n_crops = None
                for s in chunk:
                    cs = test_crops(_to_source(s.image, plan), plan)
                    n_crops = len(cs)
                    stacked.extend(mean_subtract(c, mean) for c in cs)
                probs = softmax(net.forward(np.stack(stacked)))
                rows.append(probs.reshape(len(chunk), n_crops, -1).mean(axis=1))
            else:
                raise ConfigError(f"unknown crop protocol '{crops}'")
    finally:
        net.mode = prev_mode
    return np.concatenate(rows), np.array(labels, dtype=np.int64)


def evaluate_center(net, ds, split, plan, mean=None, limit=None):
    """Accuracy of argmax predictions on deterministic center crops."""
    scores, labels = predict_scores(net, ds, split, plan, mean, "center", limit=limit)
    return top_k_accuracy(scores, labels, 1)


def evaluate_multicrop(net, ds, split, plan, mean=None, limit=None):
    """Accuracy of argmax over crop-averaged softmax outputs."""
    scores, labels = predict_scores(net, ds, split, plan, mean, "multi", limit=limit)
    return top_k_accuracy(scores, labels, 1)


def top_k_accuracy(score_rows, labels, k: int) -> float:
    """Fraction of rows whose label is among the k best-scoring classes;
    ties admit lower class indices first."""
    score_rows = np.asarray(score_rows)
    labels = np.asarray(labels)
    n = score_rows.shape[1]
    if not 1 <= k <= n:
        raise ConfigError(f"k={k} outside [1, {n}]")
    # stable sort on negated scores: descending value, ascending index on ties
    top = np.argsort(-score_rows, axis=1, kind="stable")[:, :k]
    hits = (top == labels[:, None]).any(axis=1)
    return float(np.mean(hits)) if len(labels) else 0.0


def write_metrics_csv(metrics, path):
    """CSV with one row per metrics record; floats use 9 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mode", "train_loss", "center_crop_accuracy", "wall_seconds"])
        for m in metrics:
            writer.writerow(
                [m.epoch, m.mode, f"{m.train_loss:.9g}", f"{m.center_crop_accuracy:.9g}",
                 f"{m.wall_seconds:.9g}"]
            )


def epochs_to_threshold(metrics, threshold: float):
    """First epoch whose evaluated accuracy reaches the threshold, or None;
    the CSV-side readout for comparing full training against retraining."""
    for m in metrics:
        if m.center_crop_accuracy >= threshold:
            return m.epoch
    return None

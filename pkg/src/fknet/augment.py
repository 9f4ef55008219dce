"""Preprocessing pipeline primitives: channel replication, bilinear resize,
random training crops, and the deterministic multi-crop evaluation set."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import DTYPE, Tensor, crop, hflip


@dataclass(frozen=True)
class CropPlan:
    """Square source size images are brought to, the crop size the network
    consumes, and whether evaluation adds mirrored crops."""

    source_size: int
    target_size: int
    mirror_test: bool = True

    def __post_init__(self):
        if self.target_size < 1 or self.source_size < self.target_size:
            raise ConfigError(
                f"need 1 <= target {self.target_size} <= source {self.source_size}"
            )


def plan_for(dataset: str, profile: str) -> CropPlan:
    """Standard crop plan per dataset and profile.

    The reference profile upsamples everything to 256 and crops 227; the desk
    profile crops natively (32 -> 28 for CIFAR) and leaves 28x28 grayscale
    sources uncropped.  Mirrored test crops are skipped for digit data.
    """
    mirror = dataset != "mnist"
    if profile == "reference":
        return CropPlan(256, 227, mirror)
    if profile == "desk":
        source = 28 if dataset == "mnist" else 32
        return CropPlan(source, 28, mirror)
    raise ConfigError(f"unknown profile '{profile}'")


def gray_to_rgb(img: Tensor) -> Tensor:
    """Replicate a [1,h,w] grayscale channel three times."""
    if img.ndim != 3 or img.shape[0] != 1:
        raise ShapeError(f"expected [1,h,w], got {img.shape}")
    return np.ascontiguousarray(np.repeat(img, 3, axis=0))


def _axis_weights(n_in: int, n_out: int):
    # sample centers at (i + 0.5) * scale - 0.5, clamped to the source edges
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img: Tensor, oh: int, ow: int) -> Tensor:
    """Separable bilinear resize of [c,h,w] with edge clamping."""
    if img.ndim != 3:
        raise ShapeError(f"expected [c,h,w], got {img.shape}")
    if oh < 1 or ow < 1:
        raise ShapeError(f"bad output size {oh}x{ow}")
    y_lo, y_hi, fy = _axis_weights(img.shape[1], oh)
    x_lo, x_hi, fx = _axis_weights(img.shape[2], ow)
    rows = img[:, y_lo, :] * (1.0 - fy)[None, :, None] + img[:, y_hi, :] * fy[None, :, None]
    out = rows[:, :, x_lo] * (1.0 - fx) + rows[:, :, x_hi] * fx
    return np.ascontiguousarray(out.astype(img.dtype, copy=False))


def random_train_crop(img: Tensor, plan: CropPlan, rng) -> Tensor:
    """Uniform random target-size crop: (S-T+1)^2 equally likely positions."""
    s, t = plan.source_size, plan.target_size
    if img.ndim != 3 or img.shape[1] != s or img.shape[2] != s:
        raise ShapeError(f"expected [c,{s},{s}] source image, got {img.shape}")
    top, left = rng.integers(0, s - t + 1, size=2)
    return crop(img, int(top), int(left), t, t)


def test_crops(img: Tensor, plan: CropPlan):
    """Deterministic evaluation crops: four corners then center, plus the
    horizontal mirror of each when the plan asks for it (10 total, else 5)."""
    s, t = plan.source_size, plan.target_size
    if img.ndim != 3 or img.shape[1] != s or img.shape[2] != s:
        raise ShapeError(f"expected [c,{s},{s}] source image, got {img.shape}")
    m = s - t
    offsets = [(0, 0), (0, m), (m, 0), (m, m), (m // 2, m // 2)]
    crops = [crop(img, top, left, t, t) for top, left in offsets]
    if plan.mirror_test:
        crops += [hflip(c) for c in crops]
    return crops


def center_crop(img: Tensor, plan: CropPlan) -> Tensor:
    m = plan.source_size - plan.target_size
    return crop(img, m // 2, m // 2, plan.target_size, plan.target_size)


def mean_subtract(img: Tensor, mean) -> Tensor:
    """Subtract a per-channel mean (computed once from the training split)."""
    mean = np.asarray(mean, dtype=img.dtype)
    if mean.ndim != 1 or mean.shape[0] != img.shape[0]:
        raise ShapeError(f"mean length {mean.shape} does not match channels {img.shape[0]}")
    return img - mean[:, None, None]


def channel_means(samples) -> np.ndarray:
    """Per-channel mean over a list of samples, in float64 for stability."""
    total = None
    count = 0
    for s in samples:
        sums = s.image.astype(np.float64).sum(axis=(1, 2))
        total = sums if total is None else total + sums
        count += s.image.shape[1] * s.image.shape[2]
    if total is None:
        raise ConfigError("cannot take channel means of an empty split")
    return (total / count).astype(DTYPE)

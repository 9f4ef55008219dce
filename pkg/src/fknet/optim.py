"""SGD with momentum, weight decay, and a piecewise-constant rate schedule."""

from dataclasses import dataclass

from .errors import ConfigError, RangeError, StateError


@dataclass(frozen=True)
class SgdConfig:
    """Training hyperparameters.

    The default schedule holds the base rate for 20 epochs and then divides
    it by ten for the remainder of a 30-epoch run.  ``schedule`` entries are
    (first-epoch, lr) pairs with strictly increasing thresholds.
    """

    base_lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 80
    total_epochs: int = 30
    schedule: tuple = ((20, 0.0001),)
    decay_in_gradient: bool = False  # alternative placement: decay added to g

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0,1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_epochs < 1:
            raise ConfigError(f"total_epochs must be >= 1, got {self.total_epochs}")
        thresholds = [t for t, _ in self.schedule]
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ConfigError(f"schedule thresholds must strictly increase: {thresholds}")


def lr_at_epoch(cfg: SgdConfig, epoch: int) -> float:
    """Piecewise-constant learning rate for the given epoch."""
    if not 0 <= epoch < cfg.total_epochs:
        raise RangeError(f"epoch {epoch} outside [0, {cfg.total_epochs})")
    lr = cfg.base_lr
    for threshold, rate in cfg.schedule:
        if epoch >= threshold:
            lr = rate
    return lr


def sgd_step(params, cfg: SgdConfig, lr: float):
    """One momentum update per unfrozen parameter:

        v <- mu*v - lr*lambda*w - lr*g ;  w <- w + v

    Gradients are expected to hold the mean over the current mini-batch and
    are not zeroed here.  Frozen parameters are skipped entirely.
    """
    for p in params:
        if p.frozen:
            continue
        if p.grad.shape != p.value.shape:
            raise StateError(f"parameter '{p.name}' grad/value shapes differ")
        g = p.grad
        if cfg.decay_in_gradient and cfg.weight_decay:
            g = g + cfg.weight_decay * p.value
            p.momentum *= cfg.momentum
            p.momentum -= lr * g
        else:
            p.momentum *= cfg.momentum
            if cfg.weight_decay:
                p.momentum -= (lr * cfg.weight_decay) * p.value
            p.momentum -= lr * g
        p.value += p.momentum


def zero_grads(params):
    """Reset every gradient buffer to zero; values and momentum untouched."""
    for p in params:
        p.grad[...] = 0

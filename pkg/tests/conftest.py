"""Shared fixtures: dataset directories and a pretrained desk checkpoint.

If FK_DATA_DIR points at the official MNIST/CIFAR binary files they are used
directly; otherwise full-size synthetic replicas in the exact same formats
are generated once per session (see synth.py).
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import synth  # noqa: E402


def _official_files_present(root):
    root = Path(root)
    return (
        (root / "train-images-idx3-ubyte").exists()
        or (root / "train-images-idx3-ubyte.gz").exists()
    ) and (
        (root / "cifar-10-batches-bin").is_dir() or (root / "data_batch_1.bin").exists()
    )


@pytest.fixture(scope="session")
def data_root(tmp_path_factory):
    """Directory holding all three datasets at official sizes."""
    env = os.environ.get("FK_DATA_DIR")
    if env and _official_files_present(env):
        print(f"\n[data] using official dataset files from {env}")
        return Path(env)
    root = tmp_path_factory.mktemp("fkdata")
    print(f"\n[data] official files not found; writing synthetic replicas to {root}")
    synth.write_all(root)
    return root


@pytest.fixture(scope="session")
def small_data_root(tmp_path_factory):
    """Miniature synthetic datasets for fast CLI-level tests."""
    root = tmp_path_factory.mktemp("fkdata_small")
    synth.write_all(
        root,
        sizes={"mnist": (400, 120), "cifar10": (600, 200), "cifar100": (1000, 200)},
        seed=9,
    )
    return root


@pytest.fixture(scope="session")
def pretrained_cifar10(data_root, tmp_path_factory):
    """Desk-profile network fully trained on CIFAR-10 for 2 epochs, saved as
    an FKCK checkpoint; shared by the freeze/transfer acceptance tests."""
    from fknet.augment import plan_for
    from fknet.data import load_dataset
    from fknet.optim import SgdConfig
    from fknet.trainer import RunConfig, run

    path = tmp_path_factory.mktemp("pretrain") / "cifar10_desk.fkck"
    ds = load_dataset("cifar10", data_root, limit_train=20000, limit_test=2000)
    cfg = RunConfig(
        mode="full",
        dataset="cifar10",
        epochs=2,
        sgd=SgdConfig(base_lr=0.01, total_epochs=2, schedule=()),
        crop_plan=plan_for("cifar10", "desk"),
        seed=11,
        out_checkpoint=str(path),
        record_wall=False,
    )
    net, metrics = run(cfg, ds)
    print(f"\n[pretrain] cifar10 desk 2-epoch accuracy: {metrics[-1].center_crop_accuracy:.4f}")
    return path

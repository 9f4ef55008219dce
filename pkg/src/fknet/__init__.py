"""fknet: a small CNN training and transfer-learning engine.

Train compact convolutional networks from scratch, persist them as FKCK
checkpoints, and reuse their frozen convolution stacks as feature extractors
while retraining only the classifier head.
"""

from .augment import CropPlan, plan_for
from .checkpoint import load, load_features_into, network_from_checkpoint, restore, save
from .data import Dataset, Sample, batches, load_dataset, validate_stats
from .errors import (
    CheckpointMismatchError,
    ConfigError,
    DataConsistencyError,
    FkError,
    FormatError,
    RangeError,
    ShapeError,
    StateError,
)
from .layers import ConvConfig, DropoutState, LrnConfig, Parameter
from .network import (
    Network,
    NetworkSpec,
    architecture_tag,
    build_desk_net,
    build_reference_net,
    parse_architecture_tag,
    shape_trace,
)
from .optim import SgdConfig, lr_at_epoch, sgd_step, zero_grads
from .tensor import Tensor, argmax_last, crop, hflip, matmul, new_filled
from .trainer import (
    EpochMetrics,
    RunConfig,
    epochs_to_threshold,
    evaluate_center,
    evaluate_multicrop,
    run,
    top_k_accuracy,
    write_metrics_csv,
)

__version__ = "0.1.0"

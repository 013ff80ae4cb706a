"""Spatiotemporal 3D residual networks for sperm motility classification.

Everything is built on numpy: a reverse-mode autodiff engine, 3D conv/pool/
batch-norm primitives (compiled kernels with a pure-numpy fallback), three
residual architectures, an Adam + one-cycle training loop, a netpbm frame
pipeline with clinical-CSV fusion, and a portable checkpoint format.
"""

from .blocks import STAGE_CHANNELS
from .checkpoint import load_checkpoint, read_meta, save_checkpoint
from .data import (
    FEATURE_COLUMNS,
    MANIFEST_COLUMNS,
    derive_label,
    load_clip,
    load_manifest,
    load_tabular,
    split_dataset,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DecodeError,
    DegenerateBatchError,
    DegenerateClassError,
    DegenerateFeatureError,
    GeometryError,
    GraphError,
    InconsistentFramesError,
    InsufficientFramesError,
    LabelError,
    Motility3dError,
    NumericsError,
    SchemaError,
    TabularParseError,
)
from .gradcheck import grad_check, run_suite
from .kernels import BACKEND
from .models import ARCH_SPECS, CLASS_NAMES, Model, build_model, shape_chain, softmax
from .ops import (
    BatchNormState,
    add,
    avgpool3d,
    batchnorm3d,
    concat,
    conv3d,
    linear,
    maxpool3d,
    mul,
    relu,
    reshape,
    tensor_sum,
    weighted_cross_entropy,
)
from .optim import (
    AdamState,
    OneCycleConfig,
    adam_step,
    class_weights,
    clip_gradients,
    one_cycle_lr,
)
from .tensor import Tensor, backward, is_grad_enabled, no_grad, zero_grads
from .train import TrainConfig, evaluate_checkpoint, load_train_config, train

__version__ = "0.1.0"

__all__ = [
    "ARCH_SPECS",
    "BACKEND",
    "AdamState",
    "BatchNormState",
    "CLASS_NAMES",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DecodeError",
    "DegenerateBatchError",
    "DegenerateClassError",
    "DegenerateFeatureError",
    "FEATURE_COLUMNS",
    "GeometryError",
    "GraphError",
    "InconsistentFramesError",
    "InsufficientFramesError",
    "LabelError",
    "MANIFEST_COLUMNS",
    "Model",
    "Motility3dError",
    "NumericsError",
    "OneCycleConfig",
    "STAGE_CHANNELS",
    "SchemaError",
    "TabularParseError",
    "Tensor",
    "TrainConfig",
    "add",
    "adam_step",
    "avgpool3d",
    "backward",
    "batchnorm3d",
    "build_model",
    "class_weights",
    "clip_gradients",
    "concat",
    "conv3d",
    "derive_label",
    "evaluate_checkpoint",
    "grad_check",
    "is_grad_enabled",
    "linear",
    "load_checkpoint",
    "load_clip",
    "load_manifest",
    "load_tabular",
    "load_train_config",
    "maxpool3d",
    "mul",
    "no_grad",
    "one_cycle_lr",
    "read_meta",
    "relu",
    "reshape",
    "run_suite",
    "save_checkpoint",
    "shape_chain",
    "softmax",
    "split_dataset",
    "tensor_sum",
    "train",
    "weighted_cross_entropy",
    "zero_grads",
]

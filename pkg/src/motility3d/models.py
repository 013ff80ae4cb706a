"""The three supported architectures and their forward passes.

All share the same trunk: prep block -> 4 residual stages -> global average
pool -> 512 features. resnet18_3d classifies straight from those features
(linear 512->3); the tabular variants concatenate a 19-feature clinical
vector (512+19=531), pass a 531->84 hidden layer with relu, then 84->3.

Builders are deterministic: identical (arch, seed, dtype) yields
bit-identical parameters. Parameter names are canonical and stable, e.g.
``layer2.0.conv1.weight``.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .blocks import (
    PrepParams,
    StageSpec,
    he_normal,
    make_stage,
    prep_block,
    stage_forward,
)
from .errors import ConfigError, GeometryError
from .tensor import Tensor, no_grad

CLASS_NAMES = ("progressive", "non_progressive", "immotile")

POOLED_FEATURES = 512


@dataclass(frozen=True)
class ArchSpec:
    arch_id: str
    stage_counts: tuple
    uses_tabular: bool
    tabular_width: int = 19
    fusion_hidden: int = 84
    num_classes: int = 3


ARCH_SPECS = {
    "resnet18_3d": ArchSpec("resnet18_3d", (2, 2, 2, 2), False),
    "resnet18_3d_tab": ArchSpec("resnet18_3d_tab", (2, 2, 2, 2), True),
    "resnet34_3d_tab": ArchSpec("resnet34_3d_tab", (3, 4, 6, 3), True),
}


class LinearParams:
    __slots__ = ("weight", "bias")

    def __init__(self, weight, bias):
        self.weight = weight
        self.bias = bias

    @classmethod
    def create(cls, rng, out_features, in_features, dtype):
        w = he_normal(rng, (out_features, in_features), in_features, dtype)
        b = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)
        return cls(w, b)

    def named_parameters(self, prefix):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


def stage_specs(spec):
    c1, c2, c3, c4 = spec.stage_counts
    return (
        StageSpec(c1, 64, downsample=False),
        StageSpec(c2, 128, downsample=True),
        StageSpec(c3, 256, downsample=True),
        StageSpec(c4, 512, downsample=True),
    )


class Model:
    """A built architecture: parameter containers plus the forward pass."""

    def __init__(self, spec, prep, stages, head, dtype):
        self.spec = spec
        self.prep = prep
        self.stages = stages
        self.head = head
        self.dtype = np.dtype(dtype)

    # -- parameter enumeration ------------------------------------------

    def named_parameters(self):
        yield from self.prep.named_parameters("prep")
        for i, units in enumerate(self.stages, start=1):
            for j, unit in enumerate(units):
                yield from unit.named_parameters(f"layer{i}.{j}")
        for name, params in self.head:
            yield from params.named_parameters(name)

    def named_buffers(self):
        yield from self.prep.named_buffers("prep")
        for i, units in enumerate(self.stages, start=1):
            for j, unit in enumerate(units):
                yield from unit.named_buffers(f"layer{i}.{j}")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def param_count(self):
        return sum(t.size for _, t in self.named_parameters())

    # -- forward ---------------------------------------------------------

    def _check_inputs(self, clip, tabular):
        if clip.ndim != 5:
            raise GeometryError(f"clip input must have 5 axes (N,1,T,H,W), got {clip.shape}")
        if self.spec.uses_tabular and tabular is None:
            raise ConfigError(f"{self.spec.arch_id} requires a tabular input")
        if not self.spec.uses_tabular and tabular is not None:
            raise ConfigError(f"{self.spec.arch_id} does not accept a tabular input")
        if tabular is not None:
            expect = (clip.shape[0], self.spec.tabular_width)
            if tabular.shape != expect:
                raise GeometryError(
                    f"tabular input must have shape {expect}, got {tabular.shape}"
                )

    def forward(self, clip, tabular=None, training=False):
        """Compute logits of shape (N, 3)."""
        self._check_inputs(clip, tabular)
        h = prep_block(clip, self.prep, training)
        for units in self.stages:
            h = stage_forward(h, units, training)
        h = ops.avgpool3d(h)
        h = ops.reshape(h, (h.shape[0], h.shape[1]))
        if self.spec.uses_tabular:
            (_, fc1), (_, fc2) = self.head
            z = ops.concat(h, tabular)
            z = ops.relu(ops.linear(z, fc1.weight, fc1.bias))
            return ops.linear(z, fc2.weight, fc2.bias)
        (_, fc) = self.head[0]
        return ops.linear(h, fc.weight, fc.bias)

    def predict(self, clip, tabular=None):
        """Inference: (class indices, softmax probabilities); ties break low."""
        with no_grad():
            logits = self.forward(clip, tabular, training=False)
        probs = softmax(logits.data)
        return probs.argmax(axis=1), probs


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def build_model(arch_id, seed, dtype=np.float32):
    """Deterministically initialize one of the three architectures."""
    try:
        spec = ARCH_SPECS[arch_id]
    except KeyError:
        raise ConfigError(
            f"unknown architecture {arch_id!r}; expected one of {sorted(ARCH_SPECS)}"
        ) from None
    rng = np.random.default_rng(seed)
    prep = PrepParams.create(rng, dtype)
    stages = []
    ch = 64
    for sspec in stage_specs(spec):
        stages.append(make_stage(sspec, ch, rng, dtype))
        ch = sspec.out_channels
    if spec.uses_tabular:
        head = [
            ("fc1", LinearParams.create(
                rng, spec.fusion_hidden, POOLED_FEATURES + spec.tabular_width, dtype)),
            ("fc2", LinearParams.create(rng, spec.num_classes, spec.fusion_hidden, dtype)),
        ]
    else:
        head = [("fc", LinearParams.create(rng, spec.num_classes, POOLED_FEATURES, dtype))]
    return Model(spec, prep, stages, head, dtype)


def _pool_extent(e):
    return (e + 2 - 3) // 2 + 1


def shape_chain(arch_id, input_shape=(1, 1, 50, 480, 640)):
    """Arithmetic dry run of the activation shapes, no tensors allocated.

    Returns an ordered list of (label, (C, T, H, W)) through the trunk; the
    last trunk entry is the pre-pool activation.
    """
    spec = ARCH_SPECS[arch_id] if isinstance(arch_id, str) else arch_id
    _, c, t, h, w = input_shape
    if c != 1:
        raise GeometryError(f"canonical input must have 1 channel, got {c}")
    chain = []
    # Prep: 7x7x7 conv stride (1,2,2) pad 3, then 3x3x3 max pool stride 2 pad 1.
    t2, h2, w2 = t, (h + 6 - 7) // 2 + 1, (w + 6 - 7) // 2 + 1
    chain.append(("prep.conv", (64, t2, h2, w2)))
    t2, h2, w2 = _pool_extent(t2), _pool_extent(h2), _pool_extent(w2)
    chain.append(("prep.pool", (64, t2, h2, w2)))
    for i, sspec in enumerate(stage_specs(spec), start=1):
        if sspec.downsample:
            t2, h2, w2 = _pool_extent(t2), _pool_extent(h2), _pool_extent(w2)
        chain.append((f"layer{i}", (sspec.out_channels, t2, h2, w2)))
    return chain

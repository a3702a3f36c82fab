"""The quality network: multi-scale patch feature extractor, a pair of
cross-patch mixing encoders, and a two-layer regressor head.

One architecture serves both roles in the distillation pipeline: the
full-reference teacher and the non-aligned-reference student are two
parameter sets of identical shape built from one ``ArchConfig``.

Layout conventions
------------------
Patches enter as ``[m, 3, p, p]`` (optionally with a leading batch axis).
The extractor taps four convolutional stages at strides 2/4/8/16, projects
each tap to ``proj_channels`` with a 1x1 convolution, pools onto an
``s x s`` grid and concatenates channel-wise, giving ``[m, C, s, s]`` with
``C = 4 * proj_channels``.  Inside the encoders each patch is one token
and the ``C * s * s`` grid values form its feature vector, so mixer blocks
operate on ``[m, D]`` with ``D = C * s * s``; token mixing runs across the
m patches on the transposed layout, channel mixing across D.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DistillationError, ShapeError

DIFF_INPUT_MODES = ("concat_lq_hq_diff", "diff_only", "concat_lq_hq")

_STAGES = 4  # fixed backbone depth; strides 2, 4, 8, 16

# images are stored in [0, 1]; the networks consume them centered
NETWORK_INPUT_OFFSET = 0.5


def to_network_input(patches: np.ndarray) -> np.ndarray:
    """Center [0, 1] image patches for the convolutional stages."""
    return patches - NETWORK_INPUT_OFFSET


@dataclass(frozen=True)
class ArchConfig:
    """Hyperparameters that fully determine the parameter name set."""

    patch_count: int = 5
    patch_size: int = 32
    backbone_channels: tuple = (16, 32, 64, 64)
    proj_channels: int = 16
    pooled_size: int = 4
    token_expansion: float = 2.0
    channel_expansion: float = 2.0
    depth_lq: int = 2
    depth_diff: int = 4
    diff_input_mode: str = "concat_lq_hq_diff"
    with_reference: bool = True

    def __post_init__(self):
        if self.patch_count < 1:
            raise ConfigError(f"patch_count must be >= 1, got {self.patch_count}")
        if self.patch_size < 8:
            raise ConfigError(f"patch_size must be >= 8, got {self.patch_size}")
        if self.patch_size < 2 ** _STAGES:
            raise ConfigError(
                f"patch_size {self.patch_size} too small for {_STAGES} stride-2 backbone stages")
        if len(self.backbone_channels) != _STAGES or any(c < 1 for c in self.backbone_channels):
            raise ConfigError(
                f"backbone_channels needs {_STAGES} positive entries, got {self.backbone_channels}")
        if self.proj_channels < 1 or self.pooled_size < 1:
            raise ConfigError("proj_channels and pooled_size must be positive")
        if self.depth_lq < 1 or self.depth_diff < self.depth_lq:
            raise ConfigError(
                f"need depth_diff >= depth_lq >= 1, got {self.depth_diff}/{self.depth_lq}")
        if self.token_expansion <= 0 or self.channel_expansion <= 0:
            raise ConfigError("expansion factors must be positive")
        if self.diff_input_mode not in DIFF_INPUT_MODES:
            raise ConfigError(
                f"diff_input_mode {self.diff_input_mode!r} not in {DIFF_INPUT_MODES}")
        object.__setattr__(self, "backbone_channels", tuple(int(c) for c in self.backbone_channels))

    @property
    def encoder_channels(self) -> int:
        return 4 * self.proj_channels

    @property
    def token_dim(self) -> int:
        return self.encoder_channels * self.pooled_size ** 2

    @property
    def vector_dim(self) -> int:
        return self.encoder_channels

    @property
    def regressor_in(self) -> int:
        return 2 * self.vector_dim if self.with_reference else self.vector_dim

    @property
    def token_hidden(self) -> int:
        return max(1, round(self.token_expansion * self.patch_count))

    @property
    def channel_hidden(self) -> int:
        return max(1, round(self.channel_expansion * self.token_dim))

    @property
    def fuse_width(self) -> int:
        return {"concat_lq_hq_diff": 3, "concat_lq_hq": 2, "diff_only": 0}[self.diff_input_mode]


class ModelParams:
    """Ordered name -> Tensor map for one network (teacher or student).

    Names encode module membership; everything under ``encoder_diff.`` is
    the distillation surface.  Two instances built from the same config
    always share name set and shapes.
    """

    def __init__(self, tensors: "OrderedDict[str, Tensor]"):
        self._tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self):
        return list(self._tensors.keys())

    def items(self):
        return self._tensors.items()

    def values(self):
        return self._tensors.values()

    def count_values(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def checksum(self) -> int:
        import zlib
        crc = 0
        for name, t in self._tensors.items():
            crc = zlib.crc32(name.encode(), crc)
            crc = zlib.crc32(np.ascontiguousarray(t.data).tobytes(), crc)
        return crc

    def set_requires_grad(self, flag: bool) -> None:
        for t in self._tensors.values():
            t.requires_grad = flag
            if not flag:
                t.grad = None

    def copy(self) -> "ModelParams":
        out = OrderedDict()
        for name, t in self._tensors.items():
            c = Tensor(t.data.copy(), requires_grad=t.requires_grad)
            out[name] = c
        return ModelParams(out)


def parameter_shapes(config: ArchConfig) -> "OrderedDict[str, tuple]":
    """Name -> (shape, init_kind) table; the single source of truth for the
    parameter set, shared by init, checkpoint validation and tests."""
    shapes = OrderedDict()

    def lin(prefix, fan_in, fan_out):
        shapes[f"{prefix}.weight"] = ((fan_in, fan_out), "weight")
        shapes[f"{prefix}.bias"] = ((fan_out,), "bias")

    def norm(prefix, dim):
        shapes[f"{prefix}.gamma"] = ((dim,), "gamma")
        shapes[f"{prefix}.beta"] = ((dim,), "beta")

    in_ch = 3
    for i, ch in enumerate(config.backbone_channels, start=1):
        shapes[f"backbone.stage{i}.conv.weight"] = ((ch, in_ch, 3, 3), "weight")
        shapes[f"backbone.stage{i}.conv.bias"] = ((ch,), "bias")
        shapes[f"backbone.stage{i}.proj.weight"] = ((config.proj_channels, ch, 1, 1), "weight")
        shapes[f"backbone.stage{i}.proj.bias"] = ((config.proj_channels,), "bias")
        in_ch = ch

    m, D = config.patch_count, config.token_dim
    th, dh = config.token_hidden, config.channel_hidden

    def encoder(prefix, depth):
        for j in range(depth):
            norm(f"{prefix}.block{j}.token_norm", D)
            lin(f"{prefix}.block{j}.token_fc1", m, th)
            lin(f"{prefix}.block{j}.token_fc2", th, m)
            norm(f"{prefix}.block{j}.channel_norm", D)
            lin(f"{prefix}.block{j}.channel_fc1", D, dh)
            lin(f"{prefix}.block{j}.channel_fc2", dh, D)
        norm(f"{prefix}.head_norm", D)

    encoder("encoder_lq", config.depth_lq)
    if config.with_reference:
        if config.fuse_width:
            C = config.encoder_channels
            lin("encoder_diff.fuse", config.fuse_width * C, C)
        encoder("encoder_diff", config.depth_diff)

    lin("regressor.fc1", config.regressor_in, config.vector_dim)
    lin("regressor.fc2", config.vector_dim, 1)
    return shapes


def _fan_in(shape, kind) -> int:
    if kind != "weight":
        return 0
    if len(shape) == 4:      # conv kernel [Cout, Cin, kH, kW]
        return shape[1] * shape[2] * shape[3]
    return shape[0]          # linear [in, out]


def init_params(config: ArchConfig, seed: int) -> ModelParams:
    """Deterministic initialization: fan-in-scaled uniform weights, zero
    biases, identity norm affine.

    The uniform bound sqrt(6 / fan_in) keeps activation variance roughly
    constant through the ReLU stages, which matters here because the
    backbone trains from scratch: smaller scales starve the deep taps of
    both signal and gradient.
    """
    rng = np.random.default_rng(seed)
    tensors = OrderedDict()
    for name, (shape, kind) in parameter_shapes(config).items():
        if kind == "weight":
            bound = np.sqrt(6.0 / _fan_in(shape, kind))
            data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        elif kind == "gamma":
            data = np.ones(shape, dtype=np.float32)
        else:
            data = np.zeros(shape, dtype=np.float32)
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelParams(tensors)


@dataclass
class ForwardTrace:
    """Output of one forward pass: per-item scores plus the ordered
    post-block activations of the difference-aware encoder (the
    distillation interface)."""

    score: Tensor
    features: List[Tensor]


# ---------------------------------------------------------------------------
# forward graph
# ---------------------------------------------------------------------------

def extract_multiscale_features(patches: Tensor, params: ModelParams,
                                config: ArchConfig) -> Tensor:
    """[N, 3, p, p] -> [N, C, s, s]: four stride-2 stages, per-stage 1x1
    projection, pooling to the common grid, channel-wise concatenation.

    A stage map smaller than the grid (small patches) is nearest-upsampled
    before pooling so every stage lands on the same s x s layout.
    """
    s = config.pooled_size
    x = patches
    pooled = []
    for i in range(1, _STAGES + 1):
        x = ad.relu(ad.conv2d(x, params[f"backbone.stage{i}.conv.weight"],
                              params[f"backbone.stage{i}.conv.bias"],
                              stride=2, padding=1))
        tap = ad.conv2d(x, params[f"backbone.stage{i}.proj.weight"],
                        params[f"backbone.stage{i}.proj.bias"])
        h = tap.shape[2]
        if h < s:
            tap = ad.upsample_nearest2d(tap, -(-s // h))
        pooled.append(ad.adaptive_avg_pool2d(tap, (s, s)))
    return ad.concat(pooled, axis=1)


def _linear(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{prefix}.weight"]), params[f"{prefix}.bias"])


def _norm(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    return ad.layer_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"])


def mixer_block(f: Tensor, params: ModelParams, prefix: str) -> Tensor:
    """One residual mixing block on ``[..., m, D]`` features.

    Token mixing (norm -> linear -> gelu -> linear across the m patches, on
    the transposed layout) followed by channel mixing across D.  With all
    MLP weights zero both sublayers vanish and the block is the identity.
    """
    t = ad.transpose_last2(_norm(f, params, f"{prefix}.token_norm"))
    t = _linear(t, params, f"{prefix}.token_fc1")
    t = _linear(ad.gelu(t), params, f"{prefix}.token_fc2")
    f = ad.add(f, ad.transpose_last2(t))

    c = _norm(f, params, f"{prefix}.channel_norm")
    c = _linear(c, params, f"{prefix}.channel_fc1")
    c = _linear(ad.gelu(c), params, f"{prefix}.channel_fc2")
    return ad.add(f, c)


def _pool_to_vector(f: Tensor, params: ModelParams, prefix: str,
                    config: ArchConfig) -> Tensor:
    """Final layer norm, then mean over the patch and spatial axes -> [.., C]."""
    h = _norm(f, params, f"{prefix}.head_norm")
    grid = h.shape[:-1] + (config.encoder_channels, config.pooled_size ** 2)
    h = ad.reshape(h, grid)
    return ad.mean_axes(h, (-3, -1))


def encode_lq(f: Tensor, params: ModelParams, config: ArchConfig) -> Tensor:
    """Self-perception path: depth_lq mixer blocks, norm, global pooling."""
    for j in range(config.depth_lq):
        f = mixer_block(f, params, f"encoder_lq.block{j}")
    return _pool_to_vector(f, params, "encoder_lq", config)


def fuse_reference(f_lq: Tensor, f_hq: Tensor, params: ModelParams,
                   config: ArchConfig) -> Tensor:
    """Combine the two feature paths into the difference-encoder input."""
    if f_lq.shape != f_hq.shape:
        raise DistillationError(
            f"feature path shapes differ: {f_lq.shape} vs {f_hq.shape}")
    if config.diff_input_mode == "diff_only":
        return ad.sub(f_lq, f_hq)
    lead = f_lq.shape[:-1]
    grid = lead + (config.encoder_channels, config.pooled_size ** 2)
    parts = [ad.reshape(f_lq, grid), ad.reshape(f_hq, grid)]
    if config.diff_input_mode == "concat_lq_hq_diff":
        parts.append(ad.reshape(ad.sub(f_lq, f_hq), grid))
    x = ad.concat(parts, axis=-2)                     # channel-wise
    x = ad.transpose_last2(x)                         # [.., m, ss, kC]
    x = _linear(x, params, "encoder_diff.fuse")       # 1x1 projection back to C
    x = ad.transpose_last2(x)
    return ad.reshape(x, lead + (config.token_dim,))


def encode_diff(f_lq: Tensor, f_hq: Tensor, params: ModelParams,
                config: ArchConfig):
    """Difference-aware path; returns the pooled vector and the ordered
    post-block activations used for distillation."""
    x = fuse_reference(f_lq, f_hq, params, config)
    features = []
    for j in range(config.depth_diff):
        x = mixer_block(x, params, f"encoder_diff.block{j}")
        features.append(x)
    return _pool_to_vector(x, params, "encoder_diff", config), features


def _check_patches(p: Tensor, config: ArchConfig, name: str) -> bool:
    """Validate [m,3,p,p] or [b,m,3,p,p]; returns True when batched."""
    want = (config.patch_count, 3, config.patch_size, config.patch_size)
    if p.shape == want:
        return False
    if len(p.shape) == 5 and p.shape[1:] == want:
        return True
    raise ShapeError(f"{name} patches {p.shape} incompatible with "
                     f"{(('b',) + want)} for this config")


def forward(p_lq: Tensor, p_hq: Optional[Tensor], params: ModelParams,
            config: ArchConfig) -> ForwardTrace:
    """Score one patch set (or a batch of them) against its reference set.

    ``p_hq`` may be omitted only for a no-reference configuration, where
    the difference path is absent and the regressor sees the single
    self-perception vector.
    """
    batched = _check_patches(p_lq, config, "lq")
    if config.with_reference:
        if p_hq is None:
            raise ValueError("reference patches required: this model is not "
                             "a no-reference configuration")
        if _check_patches(p_hq, config, "reference") != batched:
            raise ShapeError("lq and reference patch sets disagree on batching")
    elif p_hq is not None:
        raise ValueError("reference patches supplied to a no-reference model")

    m, p = config.patch_count, config.patch_size
    b = p_lq.shape[0] if batched else 1

    def features(patches):
        flat = ad.reshape(patches, (b * m, 3, p, p))
        f = extract_multiscale_features(flat, params, config)
        return ad.reshape(f, (b, m, config.token_dim))

    f_lq = features(p_lq)
    vec_lq = encode_lq(f_lq, params, config)

    if config.with_reference:
        f_hq = features(p_hq)
        vec_diff, trace = encode_diff(f_lq, f_hq, params, config)
        vec = ad.concat([vec_lq, vec_diff], axis=-1)
    else:
        trace = []
        vec = vec_lq

    h = ad.relu(_linear(vec, params, "regressor.fc1"))
    score = _linear(h, params, "regressor.fc2")       # [b, 1]
    score = ad.reshape(score, (b,) if batched else ())
    return ForwardTrace(score=score, features=trace)

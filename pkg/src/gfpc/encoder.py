"""Small ConvNet encoder plus a two-layer projection head.

The encoder is a ladder of stages; each stage opens with a stride-2 3x3
convolution and may add further stride-1 blocks, all followed by ReLU. The
input image and every stage output are standardized to zero mean and unit
variance per sample. Without that, inputs sharing a strong common
component (images are all-positive and background-dominated) map to nearly
one direction within a few layers, and contrastive training stalls; the
per-sample rescaling keeps representations of different inputs
distinguishable at depth. A global average pool turns the final feature
map into the feature vector z. The head maps z through linear-ReLU-linear
and L2-normalizes the result.

Parameters live in a flat name->array dict so the momentum pairing,
checkpointing, and optimizers can treat them uniformly. Names:

    enc.s{stage}.b{block}.w / .b      conv kernels and biases
    head.fc1.w / .b, head.fc2.w / .b  projection head
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from . import kernels
from .autodiff import standardize_array
from .errors import (ConfigError, ContractError, DegenerateSampleError,
                     DimensionError)


@dataclass(frozen=True)
class EncoderConfig:
    widths: tuple = (16, 32, 64, 128)
    blocks_per_stage: int = 1
    in_channels: int = 3
    zdim: int = 128
    head_hidden: int = 128
    head_dim: int = 32

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths:
            raise ConfigError("need at least one stage width")
        dims = self.widths + (self.blocks_per_stage, self.in_channels,
                              self.zdim, self.head_hidden, self.head_dim)
        if any(d < 1 for d in dims):
            raise ConfigError(f"all dimensions must be positive: {self}")
        if self.zdim != self.widths[-1]:
            raise ConfigError(
                f"zdim ({self.zdim}) must equal the last stage width "
                f"({self.widths[-1]}) because z is the pooled final map"
            )
        if self.head_dim >= self.zdim:
            raise ConfigError(
                f"head output dim ({self.head_dim}) must be strictly "
                f"smaller than zdim ({self.zdim})"
            )

    @property
    def min_input(self):
        """Smallest spatial extent the stage ladder can downsample."""
        return 2 ** len(self.widths)

    def digest(self):
        text = (f"widths={','.join(map(str, self.widths))};"
                f"blocks={self.blocks_per_stage};in={self.in_channels};"
                f"zdim={self.zdim};hh={self.head_hidden};hd={self.head_dim}")
        return hashlib.sha256(text.encode()).hexdigest()[:16]


BIAS_INIT = 0.01


def init_params(config, seed, dtype=np.float32, with_head=True):
    """He-normal weights (std = sqrt(2/fan_in)), biases at a small positive
    constant. The offset keeps relu units live at the start and guarantees
    the projection is never exactly zero for a fully dead feature vector.
    Draw order is fixed so a given seed always produces the same
    parameters."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)
    params = {}

    def he(shape, fan_in):
        std = np.sqrt(2.0 / fan_in)
        return (rng.standard_normal(shape) * std).astype(dtype)

    def bias(n):
        return np.full(n, BIAS_INIT, dtype=dtype)

    cin = config.in_channels
    for si, width in enumerate(config.widths):
        for bi in range(config.blocks_per_stage):
            params[f"enc.s{si}.b{bi}.w"] = he((width, cin, 3, 3), cin * 9)
            params[f"enc.s{si}.b{bi}.b"] = bias(width)
            cin = width
    if with_head:
        params["head.fc1.w"] = he((config.head_hidden, config.zdim),
                                  config.zdim)
        params["head.fc1.b"] = bias(config.head_hidden)
        params["head.fc2.w"] = he((config.head_dim, config.head_hidden),
                                  config.head_hidden)
        params["head.fc2.b"] = bias(config.head_dim)
    return params


class Encoder:
    """Immutable-by-convention bundle of config + parameters. Training
    replaces the params dict wholesale instead of mutating arrays."""

    def __init__(self, config, params):
        self.config = config
        self.params = params
        _validate_shapes(config, params)

    @classmethod
    def build(cls, config, seed, dtype=np.float32):
        return cls(config, init_params(config, seed, dtype))

    def copy(self):
        return Encoder(self.config,
                       {k: v.copy() for k, v in self.params.items()})

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def param_count(self):
        return sum(v.size for v in self.params.values())

    # -- recorded (differentiable) paths --------------------------------

    def _node(self, tape, name):
        node = tape.get_param(name)
        if node is None:
            return tape.param(name, self.params[name])
        if node.data is not self.params[name]:
            raise ContractError(
                f"parameter {name!r} changed while the tape was live"
            )
        return node

    def feature_map(self, tape, image):
        """Run the conv ladder; returns the pre-pool feature map node."""
        self._check_image(image)
        x = tape.standardize(tape.const(image))
        for si in range(len(self.config.widths)):
            for bi in range(self.config.blocks_per_stage):
                w = self._node(tape, f"enc.s{si}.b{bi}.w")
                b = self._node(tape, f"enc.s{si}.b{bi}.b")
                stride = 2 if bi == 0 else 1
                x = tape.relu(tape.bias_add(
                    tape.conv2d(x, w, stride=stride, padding=1), b))
            x = tape.standardize(x)
        return x

    def encode(self, tape, image):
        """Feature vector z (length zdim) of one [3,h,w] image."""
        return tape.global_avg_pool(self.feature_map(tape, image))

    def project(self, tape, z):
        """Unit-norm head output h for a feature node z."""
        y = tape.relu(tape.bias_add(
            tape.linear(z, self._node(tape, "head.fc1.w")),
            self._node(tape, "head.fc1.b")))
        pre = tape.bias_add(tape.linear(y, self._node(tape, "head.fc2.w")),
                            self._node(tape, "head.fc2.b"))
        if not np.any(pre.data):
            raise DegenerateSampleError(
                "projection is exactly zero; cannot normalize"
            )
        return tape.l2_normalize(pre)

    # -- inference paths (no tape, no gradients) -------------------------

    def encode_infer(self, image):
        self._check_image(image)
        x = standardize_array(image)
        for si in range(len(self.config.widths)):
            for bi in range(self.config.blocks_per_stage):
                w = self.params[f"enc.s{si}.b{bi}.w"]
                b = self.params[f"enc.s{si}.b{bi}.b"]
                stride = 2 if bi == 0 else 1
                x = kernels.conv2d(x, w, stride=stride, padding=1)
                x = np.maximum(x + b[:, None, None], 0)
            x = standardize_array(x)
        return x.mean(axis=(1, 2))

    def project_infer(self, z):
        p = self.params
        y = np.maximum(p["head.fc1.w"] @ z + p["head.fc1.b"], 0)
        pre = p["head.fc2.w"] @ y + p["head.fc2.b"]
        if not np.any(pre):
            raise DegenerateSampleError(
                "projection is exactly zero; cannot normalize"
            )
        norm = float(np.sqrt(np.dot(pre, pre)))
        return pre / max(norm, 1e-12)

    def _check_image(self, image):
        if image.ndim != 3 or image.shape[0] != self.config.in_channels:
            raise DimensionError(
                f"expected [{self.config.in_channels},h,w] image, "
                f"got shape {image.shape}"
            )
        if min(image.shape[1:]) < self.config.min_input:
            raise DimensionError(
                f"image {image.shape[1]}x{image.shape[2]} too small for "
                f"{len(self.config.widths)} stride-2 stages "
                f"(needs >= {self.config.min_input})"
            )
        if image.dtype != self.dtype:
            raise ContractError(
                f"image dtype {image.dtype} != parameter dtype {self.dtype}"
            )


def _validate_shapes(config, params):
    cin = config.in_channels
    for si, width in enumerate(config.widths):
        for bi in range(config.blocks_per_stage):
            wname = f"enc.s{si}.b{bi}.w"
            if wname not in params:
                raise ContractError(f"missing parameter {wname!r}")
            got = params[wname].shape
            if got != (width, cin, 3, 3):
                raise DimensionError(
                    f"{wname} has shape {got}, expected "
                    f"{(width, cin, 3, 3)}"
                )
            cin = width
    if "head.fc1.w" in params:
        pairs = (("head.fc1.w", (config.head_hidden, config.zdim)),
                 ("head.fc2.w", (config.head_dim, config.head_hidden)))
        for name, want in pairs:
            got = params[name].shape
            if got != want:
                raise DimensionError(
                    f"{name} has shape {got}, expected {want}"
                )

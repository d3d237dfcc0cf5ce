"""Depth estimation on top of the contrastive encoder.

DepthNet = the conv encoder ladder (optionally initialized from a
pretraining checkpoint) + a light decoder: one (bilinear 2x upsample ->
3x3 conv -> ReLU) stage per encoder stage except the last, then a 3x3 conv
to one channel with softplus. The net therefore predicts at exactly half
the input resolution, in meters, always positive.

Fine-tuning is Adam on a masked mean-absolute-error against metric depth,
over a seeded subset of the labeled data.
"""

from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from . import kernels
from .autodiff import Tape, standardize_array, upsample_matrix
from .data import subset_indices
from .encoder import BIAS_INIT, Encoder, EncoderConfig, init_params
from .errors import (CheckpointError, ConfigError, ContractError,
                     DegenerateSampleError, DimensionError, InputError)
from .metrics import EvalProtocol, aggregate, evaluate_pair
from .optim import Adam
from .util import parallel_map


@dataclass(frozen=True)
class FinetuneConfig:
    lr: float = 1e-4
    batch_size: int = 4
    epochs: int = 20
    fraction: float = 1.0
    seed: int = 0
    init: str = "random"      # "random" or a checkpoint path
    dtype: str = "float32"

    def __post_init__(self):
        if not 0 < self.fraction <= 1:
            raise ConfigError(
                f"label fraction must be in (0, 1], got {self.fraction}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32/float64, got {self.dtype}")


def _decoder_plan(config):
    """(in_channels, out_channels) per upsample stage, then the final conv
    input width."""
    rev = list(config.widths)[::-1]
    stages = [(rev[i], rev[i + 1]) for i in range(len(rev) - 1)]
    return stages, rev[-1]


class DepthNet:
    """Encoder ladder + decoder in one flat parameter dict (enc.*, dec.*)."""

    def __init__(self, config, params):
        self.config = config
        self.params = params
        self._check_decoder_shapes()

    @classmethod
    def build(cls, config, seed, dtype=np.float32, encoder_params=None):
        """Fresh net. The decoder draws from its own seeded stream, so for a
        fixed seed it is identical whether the encoder is random or loaded
        from a checkpoint."""
        dtype = np.dtype(dtype)
        if encoder_params is None:
            params = init_params(config, seed, dtype, with_head=False)
        else:
            params = {}
            for name, arr in encoder_params.items():
                if name.startswith("enc."):
                    params[name] = np.asarray(arr, dtype=dtype)
            if not params:
                raise CheckpointError(
                    "no encoder parameters (enc.*) in the given archive"
                )
        rng = np.random.default_rng([seed, 1])

        def he(shape, fan_in):
            std = np.sqrt(2.0 / fan_in)
            return (rng.standard_normal(shape) * std).astype(dtype)

        stages, last = _decoder_plan(config)
        for i, (cin, cout) in enumerate(stages):
            params[f"dec.u{i}.w"] = he((cout, cin, 3, 3), cin * 9)
            params[f"dec.u{i}.b"] = np.full(cout, BIAS_INIT, dtype=dtype)
        params["dec.out.w"] = he((1, last, 3, 3), last * 9)
        params["dec.out.b"] = np.full(1, BIAS_INIT, dtype=dtype)
        return cls(config, params)

    @property
    def dtype(self):
        return self.params["dec.out.w"].dtype

    def _encoder_view(self):
        enc = {k: v for k, v in self.params.items() if k.startswith("enc.")}
        return Encoder(self.config, enc)

    def _check_decoder_shapes(self):
        self._encoder_view()  # validates enc.* as a side effect
        stages, last = _decoder_plan(self.config)
        for i, (cin, cout) in enumerate(stages):
            name = f"dec.u{i}.w"
            if name not in self.params:
                raise ContractError(f"missing parameter {name!r}")
            got = self.params[name].shape
            if got != (cout, cin, 3, 3):
                raise DimensionError(
                    f"{name} has shape {got}, expected {(cout, cin, 3, 3)}"
                )
        got = self.params["dec.out.w"].shape
        if got != (1, last, 3, 3):
            raise DimensionError(
                f"dec.out.w has shape {got}, expected {(1, last, 3, 3)}"
            )

    def _check_dims(self, image):
        stride = 2 ** len(self.config.widths)
        if image.shape[1] % stride or image.shape[2] % stride:
            raise DimensionError(
                f"input {image.shape[1]}x{image.shape[2]} not divisible by "
                f"the total encoder stride {stride}"
            )

    # -- recorded path ---------------------------------------------------

    def forward(self, tape, image):
        """Record prediction of one [3,h,w] image; returns an (h/2, w/2)
        node of strictly positive depths."""
        self._check_dims(image)
        x = self._record_ladder(tape, image)
        h2, w2 = image.shape[1] // 2, image.shape[2] // 2
        return tape.reshape(x, (h2, w2))

    def _record_ladder(self, tape, image):
        enc = self._encoder_view()
        x = enc.feature_map(tape, image)
        stages, _ = _decoder_plan(self.config)
        for i in range(len(stages)):
            w = self._node(tape, f"dec.u{i}.w")
            b = self._node(tape, f"dec.u{i}.b")
            x = tape.relu(tape.bias_add(
                tape.conv2d(tape.upsample2(x), w, stride=1, padding=1), b))
        w = self._node(tape, "dec.out.w")
        b = self._node(tape, "dec.out.b")
        return tape.softplus(tape.bias_add(
            tape.conv2d(x, w, stride=1, padding=1), b))

    def _node(self, tape, name):
        node = tape.get_param(name)
        if node is None:
            return tape.param(name, self.params[name])
        if node.data is not self.params[name]:
            raise ContractError(
                f"parameter {name!r} changed while the tape was live"
            )
        return node

    # -- inference path --------------------------------------------------

    def predict(self, image):
        """Depth map (h/2, w/2) of one [3,h,w] image, no gradients."""
        self._check_dims(image)
        if image.dtype != self.dtype:
            raise ContractError(
                f"image dtype {image.dtype} != parameter dtype {self.dtype}"
            )
        x = standardize_array(image)
        for si in range(len(self.config.widths)):
            for bi in range(self.config.blocks_per_stage):
                w = self.params[f"enc.s{si}.b{bi}.w"]
                b = self.params[f"enc.s{si}.b{bi}.b"]
                x = kernels.conv2d(x, w, stride=2 if bi == 0 else 1,
                                   padding=1)
                x = np.maximum(x + b[:, None, None], 0)
            x = standardize_array(x)
        stages, _ = _decoder_plan(self.config)
        for i in range(len(stages)):
            uh = upsample_matrix(x.shape[1], x.dtype)
            uw = upsample_matrix(x.shape[2], x.dtype)
            x = np.matmul(np.matmul(uh, x), uw.T)
            x = kernels.conv2d(x, self.params[f"dec.u{i}.w"], 1, 1)
            x = np.maximum(x + self.params[f"dec.u{i}.b"][:, None, None], 0)
        x = kernels.conv2d(x, self.params["dec.out.w"], 1, 1)
        x = x + self.params["dec.out.b"][:, None, None]
        x = np.logaddexp(x.dtype.type(0), x)
        return x[0]


def predict_depth(net, rgb):
    """Depth map for an [h,w,3] image in [0,1]."""
    chw = np.ascontiguousarray(np.asarray(rgb).transpose(2, 0, 1),
                               dtype=net.dtype)
    return net.predict(chw)


def depth_loss(pred, target, mask):
    """Masked mean absolute error as a plain float (no gradients).

    The differentiable twin is Tape.masked_l1; both implement
    sum(mask * |pred - target|) / sum(mask).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.shape != np.shape(mask):
        raise DimensionError(
            f"shape mismatch: pred {pred.shape}, target {target.shape}, "
            f"mask {np.shape(mask)}"
        )
    m = (np.asarray(mask) > 0).astype(np.float64)
    total = m.sum()
    if total == 0:
        raise DegenerateSampleError("mask selects no pixels")
    return float(np.sum(np.abs(pred - target) * m) / total)


def build_finetuned_init(config, encoder_config, dtype):
    """Starting DepthNet per config.init ("random" or a checkpoint path)."""
    if config.init == "random":
        return DepthNet.build(encoder_config, config.seed, dtype)
    params, _ = ckpt.load_checkpoint(config.init,
                                     expect_digest=encoder_config.digest())
    return DepthNet.build(encoder_config, config.seed, dtype,
                          encoder_params=params)


def finetune(samples, config, encoder_config=EncoderConfig(), *,
             log_stream=None, progress=None):
    """Train a DepthNet on a seeded subset of labeled samples.

    samples: sequence of DepthSample. Returns (net, per_epoch_losses).
    Writes ``epoch,loss`` CSV rows to log_stream if given.
    """
    n = len(samples)
    if n == 0:
        raise InputError("labeled dataset is empty")
    if config.fraction * n < 1:
        raise InputError(
            f"fraction {config.fraction} of {n} samples selects less than "
            "one sample"
        )
    dtype = np.dtype(config.dtype)
    indices = subset_indices(n, config.fraction, config.seed)
    subset = [samples[i] for i in indices]
    net = build_finetuned_init(config, encoder_config, dtype)
    opt = Adam(lr=config.lr)
    rng = np.random.default_rng([config.seed, 2])

    if log_stream is not None:
        log_stream.write("epoch,loss\n")
    epoch_losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(subset))
        losses = []
        for start in range(0, len(subset), config.batch_size):
            batch = [subset[i] for i in order[start:start + config.batch_size]]
            tape = Tape(dtype)
            terms = []
            for s in batch:
                chw = np.ascontiguousarray(s.rgb.transpose(2, 0, 1),
                                           dtype=dtype)
                pred = net.forward(tape, chw)
                terms.append(tape.masked_l1(
                    pred, np.asarray(s.depth, dtype=dtype), s.mask))
            loss = tape.mean_scalars(terms)
            grads = tape.backward(loss)
            net.params = opt.step(net.params, grads)
            losses.append(float(loss.data))
        mean = float(np.mean(losses)) if losses else 0.0
        epoch_losses.append(mean)
        if log_stream is not None:
            log_stream.write(f"{epoch + 1},{mean:.6f}\n")
        if progress is not None:
            progress(epoch + 1, config.epochs, mean)
    return net, epoch_losses


def evaluate_model(net, samples, protocol=EvalProtocol(), threads=1):
    """Evaluate predictions over labeled samples. Returns (pooled report,
    per-sample reports)."""
    if len(samples) == 0:
        raise InputError("evaluation dataset is empty")

    def one(sample):
        pred = predict_depth(net, sample.rgb)
        return evaluate_pair(pred, sample.depth, protocol, valid=sample.mask)

    reports = parallel_map(one, samples, threads)
    return aggregate(reports), reports

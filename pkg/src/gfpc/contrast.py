"""Momentum-contrast pretraining.

Two structurally identical encoders: the query side sees RGB images and is
trained by backprop; the key side sees the images' gradient fields and only
ever moves by an exponential moving average toward the query side. Projected
key vectors accumulate in a FIFO queue that supplies the negatives for a
softmax cross-entropy over scaled dot products (one positive, queue-many
negatives).

Step order inside pretrain_step, fixed on purpose: fields, forward both
sides, loss, update query, momentum-update key, enqueue the fresh keys.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .encoder import Encoder, EncoderConfig
from .errors import (ConfigError, ContractError, DimensionError, InputError,
                     PairingError)
from .gradfield import CannyParams, gradient_field
from .optim import SGDMomentum
from .util import parallel_map


@dataclass
class ContrastConfig:
    tau: float = 0.07
    momentum: float = 0.999
    queue_size: int = 16384
    batch_size: int = 64
    lr: float = 0.015
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 1
    max_steps: int = 0        # 0 means no cap
    seed: int = 0
    flip: bool = False        # horizontal flip before field computation
    dtype: str = "float32"

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not 0 <= self.momentum <= 1:
            raise ConfigError(
                f"momentum must be in [0, 1], got {self.momentum}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.queue_size < self.batch_size:
            raise ConfigError(
                f"queue size ({self.queue_size}) must be >= batch size "
                f"({self.batch_size})"
            )
        if self.epochs < 0 or self.max_steps < 0:
            raise ConfigError("epochs and max_steps must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32/float64, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


class KeyQueue:
    """Fixed-capacity FIFO of unit vectors, stored in a ring buffer."""

    def __init__(self, capacity, dim, dtype=np.float32):
        if capacity < 1 or dim < 1:
            raise ConfigError(
                f"capacity and dim must be positive, got {capacity}, {dim}"
            )
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._buf = np.zeros((self.capacity, self.dim), dtype=dtype)
        self._len = 0
        self._head = 0  # index of the oldest vector

    def __len__(self):
        return self._len

    def push(self, vec):
        vec = np.asarray(vec)
        if vec.shape != (self.dim,):
            raise DimensionError(
                f"queue holds vectors of dim {self.dim}, got shape {vec.shape}"
            )
        norm = float(np.sqrt(np.dot(vec, vec)))
        if abs(norm - 1.0) > 1e-5:
            raise ContractError(
                f"queue vectors must be unit norm within 1e-5, got {norm}"
            )
        tail = (self._head + self._len) % self.capacity
        self._buf[tail] = vec
        if self._len < self.capacity:
            self._len += 1
        else:
            self._head = (self._head + 1) % self.capacity
        return self

    def push_many(self, vecs):
        for v in vecs:
            self.push(v)
        return self

    def vectors(self):
        """Contents oldest-first, as a fresh [len, dim] array."""
        idx = (self._head + np.arange(self._len)) % self.capacity
        return self._buf[idx].copy()


class EncoderPair:
    """Query encoder (backprop-trained) and key encoder (EMA-trained)."""

    def __init__(self, query, key):
        if query.config != key.config:
            raise PairingError("query and key configs differ")
        self.query = query
        self.key = key

    @property
    def config(self):
        return self.query.config


def init_pair(encoder_config, seed, dtype=np.float32):
    query = Encoder.build(encoder_config, seed, dtype)
    return EncoderPair(query, query.copy())


def momentum_update(pair, m):
    """key <- m*key + (1-m)*query, elementwise over all parameters."""
    if not 0 <= m <= 1:
        raise ConfigError(f"momentum must be in [0, 1], got {m}")
    q, k = pair.query.params, pair.key.params
    if q.keys() != k.keys():
        raise PairingError(
            "query/key parameter names differ: "
            f"{sorted(q.keys() ^ k.keys())}"
        )
    for name, theta_q in q.items():
        theta_k = k[name]
        if theta_k.shape != theta_q.shape:
            raise PairingError(
                f"shape mismatch for {name!r}: {theta_k.shape} vs "
                f"{theta_q.shape}"
            )
        # endpoints are identities, not arithmetic: m=1 must not even
        # touch the key values and m=0 must copy the query bit for bit
        if m == 1:
            continue
        if m == 0:
            k[name] = theta_q.copy()
            continue
        dt = theta_k.dtype.type
        k[name] = dt(m) * theta_k + dt(1 - m) * theta_q


def info_nce(tape, h_q, h_k_pos, negatives, tau):
    """Contrastive loss node for one query.

    h_q is a recorded node; h_k_pos and the negatives are plain arrays (the
    key path is gradient-free by construction). negatives may be a KeyQueue,
    an [n, dim] array, or None/empty, in which case the loss is the
    degenerate one-way softmax (exactly 0).
    """
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    if isinstance(negatives, KeyQueue):
        negatives = negatives.vectors()
    pos = np.asarray(h_k_pos, dtype=tape.dtype).reshape(-1)
    if pos.shape != h_q.shape:
        raise DimensionError(
            f"positive key has shape {pos.shape}, query {h_q.shape}"
        )
    if negatives is None or len(negatives) == 0:
        keys = pos[None, :]
    else:
        negatives = np.asarray(negatives, dtype=tape.dtype)
        if negatives.ndim != 2 or negatives.shape[1] != pos.shape[0]:
            raise DimensionError(
                f"negatives have shape {negatives.shape}, expected "
                f"[n, {pos.shape[0]}]"
            )
        keys = np.concatenate([pos[None, :], negatives], axis=0)
    logits = tape.matvec(tape.const(keys), h_q)
    return tape.softmax_cross_entropy(tape.scale(logits, 1.0 / tau), 0)


def batch_fields(images, canny, flip_flags=None, threads=1):
    """Gradient fields for a batch of [h,w,3] images, optionally flipped
    left-right before the field is computed."""
    jobs = []
    for i, img in enumerate(images):
        if flip_flags is not None and flip_flags[i]:
            img = img[:, ::-1, :]
        jobs.append(img)
    return parallel_map(lambda im: gradient_field(im, canny), jobs, threads)


def pretrain_step(pair, queue, images, canny, config, opt, *,
                  fields=None, flip_flags=None):
    """One training step over a batch of [h,w,3] RGB arrays in [0,1].

    ``fields`` may carry precomputed gradient fields for the batch (matching
    flip_flags); pass None to compute them here. Returns the scalar loss.
    """
    if len(images) < 1:
        raise InputError("batch must contain at least one image")
    dtype = config.np_dtype
    if fields is None:
        fields = batch_fields(images, canny, flip_flags)
    if len(fields) != len(images):
        raise ContractError(
            f"{len(fields)} fields for {len(images)} images"
        )

    negatives = queue.vectors()
    tape = Tape(dtype)
    losses = []
    fresh_keys = []
    for i, img in enumerate(images):
        if flip_flags is not None and flip_flags[i]:
            img = img[:, ::-1, :]
        q_in = np.ascontiguousarray(img.transpose(2, 0, 1), dtype=dtype)
        k_in = np.ascontiguousarray(
            np.broadcast_to(fields[i], (3,) + fields[i].shape), dtype=dtype)
        h_q = pair.query.project(tape, pair.query.encode(tape, q_in))
        z_k = pair.key.encode_infer(k_in)
        h_k = pair.key.project_infer(z_k)
        losses.append(info_nce(tape, h_q, h_k, negatives, config.tau))
        fresh_keys.append(h_k)
    loss = tape.mean_scalars(losses)
    grads = tape.backward(loss)
    pair.query.params = opt.step(pair.query.params, grads)
    momentum_update(pair, config.momentum)
    queue.push_many(fresh_keys)
    return float(loss.data)


def pretrain(images, config, encoder_config=EncoderConfig(),
             canny=CannyParams(), *, log_stream=None, threads=1,
             progress=None):
    """Full pretraining loop over in-memory images.

    images: sequence of [h,w,3] float arrays in [0,1]. Returns (pair,
    losses). Writes ``step,loss`` CSV rows to log_stream if given; calls
    progress(step, total, loss) after each step if given.
    """
    n = len(images)
    if n == 0:
        raise InputError("pretraining dataset is empty")
    if n < config.batch_size:
        raise InputError(
            f"dataset ({n} images) smaller than batch size "
            f"({config.batch_size})"
        )
    dtype = config.np_dtype
    pair = init_pair(encoder_config, config.seed, dtype)
    queue = KeyQueue(config.queue_size, encoder_config.head_dim, dtype)
    opt = SGDMomentum(config.lr, config.sgd_momentum, config.weight_decay)
    rng = np.random.default_rng(config.seed)

    # Fields are a pure function of the image; cache them per index unless
    # flipping makes the key input sample-dependent.
    cache = None
    if not config.flip:
        cache = parallel_map(lambda im: gradient_field(im, canny),
                             list(images), threads)

    steps_per_epoch = n // config.batch_size
    total = config.epochs * steps_per_epoch
    if config.max_steps:
        total = min(total, config.max_steps)
    if log_stream is not None:
        log_stream.write("step,loss\n")
    losses = []
    step = 0
    done = False
    for _ in range(config.epochs):
        if done:
            break
        order = rng.permutation(n)
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            batch = [images[i] for i in idx]
            if config.flip:
                flips = rng.random(len(idx)) < 0.5
                fields = None
            else:
                flips = None
                fields = [cache[i] for i in idx]
            loss = pretrain_step(pair, queue, batch, canny, config, opt,
                                 fields=fields, flip_flags=flips)
            losses.append(loss)
            step += 1
            if log_stream is not None:
                log_stream.write(f"{step},{loss:.6f}\n")
            if progress is not None:
                progress(step, total, loss)
            if config.max_steps and step >= config.max_steps:
                done = True
                break
    return pair, losses


def resolve_config_lines(*configs):
    """Human-readable resolved settings, one per line, for run logs."""
    lines = []
    for src in configs:
        name = type(src).__name__
        for key, val in sorted(vars(src).items()):
            lines.append(f"{name}.{key} = {val}")
    return lines

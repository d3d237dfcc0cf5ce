"""Flat key-value run configuration.

Files hold one ``key = value`` pair per line; ``#`` starts a comment. Every
command reads the same schema, layering file values over documented defaults
and ``--set key=value`` overrides over both. Unknown keys are rejected with
the offending line.

Keys:

    tau, momentum, queue_size, batch_size, lr, sgd_momentum, weight_decay,
    epochs, max_steps, seed, flip, dtype          pretraining
    canny.low, canny.high, canny.sigma, canny.kernel
    encoder.widths, encoder.blocks, encoder.zdim  (zdim 0 = last width)
    head.hidden, head.dim
    finetune.lr, finetune.batch_size, finetune.epochs
    synth.height, synth.width, synth.min_boxes, synth.max_boxes,
    synth.min_depth, synth.max_depth, synth.noise, synth.tint_low
    eval.crop (none|auto|r0,r1,c0,c1), eval.max_depth (none|meters),
    eval.min_depth, eval.per_image
"""

from .contrast import ContrastConfig
from .data import SyntheticSceneParams
from .depth import FinetuneConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .gradfield import CannyParams
from .metrics import EvalProtocol


def _parse_bool(raw):
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_ints(raw):
    return tuple(int(p) for p in raw.split(",") if p.strip())


def _parse_optional_float(raw):
    low = raw.strip().lower()
    if low in ("none", "off"):
        return None
    return float(raw)


def _parse_crop(raw):
    low = raw.strip().lower()
    if low in ("none", "off"):
        return None
    if low == "auto":
        return "auto"
    rect = _parse_ints(raw)
    if len(rect) != 4:
        raise ValueError(f"crop wants 4 ints or none/auto, got {raw!r}")
    return rect


_PARSERS = {
    "float": float,
    "int": int,
    "bool": _parse_bool,
    "str": str.strip,
    "ints": _parse_ints,
    "float?": _parse_optional_float,
    "crop": _parse_crop,
}

SCHEMA = {
    "tau": ("float", 0.07),
    "momentum": ("float", 0.999),
    "queue_size": ("int", 16384),
    "batch_size": ("int", 64),
    "lr": ("float", 0.015),
    "sgd_momentum": ("float", 0.9),
    "weight_decay": ("float", 1e-4),
    "epochs": ("int", 1),
    "max_steps": ("int", 0),
    "seed": ("int", 0),
    "flip": ("bool", False),
    "dtype": ("str", "float32"),
    "canny.low": ("float", 0.1),
    "canny.high": ("float", 0.2),
    "canny.sigma": ("float", 1.4),
    "canny.kernel": ("int", 5),
    "encoder.widths": ("ints", (16, 32, 64, 128)),
    "encoder.blocks": ("int", 1),
    "encoder.zdim": ("int", 0),
    "head.hidden": ("int", 128),
    "head.dim": ("int", 32),
    "finetune.lr": ("float", 1e-4),
    "finetune.batch_size": ("int", 4),
    "finetune.epochs": ("int", 20),
    "synth.height": ("int", 64),
    "synth.width": ("int", 64),
    "synth.min_boxes": ("int", 3),
    "synth.max_boxes": ("int", 7),
    "synth.min_depth": ("float", 2.0),
    "synth.max_depth": ("float", 12.0),
    "synth.noise": ("float", 0.03),
    "synth.tint_low": ("float", 0.25),
    "eval.crop": ("crop", None),
    "eval.max_depth": ("float?", None),
    "eval.min_depth": ("float", 1e-3),
    "eval.per_image": ("bool", False),
}


class RunConfig:
    """Defaults, then file values, then explicit overrides."""

    def __init__(self, values=None):
        self.values = {k: d for k, (_, d) in SCHEMA.items()}
        if values:
            self.values.update(values)

    def __getitem__(self, key):
        return self.values[key]

    def set_pair(self, key, raw, where="override"):
        if key not in SCHEMA:
            raise ConfigError(f"{where}: unknown key {key!r}")
        kind = SCHEMA[key][0]
        try:
            self.values[key] = _PARSERS[kind](raw)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key}: {exc}") from exc
        return self

    def lines(self):
        return [f"{k} = {_fmt(self.values[k])}" for k in sorted(self.values)]

    # -- object builders ------------------------------------------------

    def contrast(self):
        return ContrastConfig(
            tau=self["tau"], momentum=self["momentum"],
            queue_size=self["queue_size"], batch_size=self["batch_size"],
            lr=self["lr"], sgd_momentum=self["sgd_momentum"],
            weight_decay=self["weight_decay"], epochs=self["epochs"],
            max_steps=self["max_steps"], seed=self["seed"],
            flip=self["flip"], dtype=self["dtype"],
        )

    def encoder(self):
        widths = self["encoder.widths"]
        zdim = self["encoder.zdim"] or (widths[-1] if widths else 0)
        return EncoderConfig(
            widths=widths, blocks_per_stage=self["encoder.blocks"],
            zdim=zdim, head_hidden=self["head.hidden"],
            head_dim=self["head.dim"],
        )

    def canny(self):
        return CannyParams(
            sigma=self["canny.sigma"], kernel_size=self["canny.kernel"],
            low=self["canny.low"], high=self["canny.high"],
        )

    def finetune(self, **overrides):
        base = dict(
            lr=self["finetune.lr"], batch_size=self["finetune.batch_size"],
            epochs=self["finetune.epochs"], seed=self["seed"],
            dtype=self["dtype"],
        )
        base.update(overrides)
        return FinetuneConfig(**base)

    def synth(self, seed=None):
        return SyntheticSceneParams(
            height=self["synth.height"], width=self["synth.width"],
            min_boxes=self["synth.min_boxes"], max_boxes=self["synth.max_boxes"],
            min_depth=self["synth.min_depth"], max_depth=self["synth.max_depth"],
            noise=self["synth.noise"], tint_low=self["synth.tint_low"],
            seed=self["seed"] if seed is None else seed,
        )

    def protocol(self):
        return EvalProtocol(
            crop=self["eval.crop"], max_depth=self["eval.max_depth"],
            min_depth=self["eval.min_depth"],
        )


def _fmt(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def parse_config_text(text, source="<config>", base=None):
    cfg = RunConfig() if base is None else base
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(
                f"{source} line {lineno}: expected 'key = value', got {line!r}"
            )
        key, raw = body.split("=", 1)
        cfg.set_pair(key.strip(), raw.strip(), f"{source} line {lineno}")
    return cfg


def apply_file(cfg, path):
    """Layer another key-value file (e.g. an eval protocol) onto cfg."""
    with open(path) as f:
        return parse_config_text(f.read(), source=str(path), base=cfg)


def load_config(path=None, overrides=()):
    """RunConfig from an optional file plus ``key=value`` override strings."""
    if path is None:
        cfg = RunConfig()
    else:
        with open(path) as f:
            cfg = parse_config_text(f.read(), source=str(path))
    for pair in overrides:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value: {pair!r}")
        key, raw = pair.split("=", 1)
        cfg.set_pair(key.strip(), raw.strip())
    return cfg

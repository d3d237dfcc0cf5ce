"""Contrastive pretraining on edge-weighted gradient fields, plus a small
monocular depth pipeline built on the same hand-rolled numeric stack.

Subpackage map:

- ``kernels``    convolution forward/backward (compiled core or numpy fallback)
- ``autodiff``   tape-based reverse-mode differentiation over ~20 primitives
- ``optim``      SGD with momentum, Adam
- ``gradfield``  grayscale / blur / Sobel / thinning / hysteresis / field
- ``encoder``    ConvNet encoder and projection head
- ``contrast``   key queue, momentum pairs, InfoNCE, pretraining loop
- ``depth``      decoder, depth net, fine-tuning loop
- ``metrics``    depth error metrics and evaluation protocol
- ``data``       manifests, PNG I/O, synthetic scene generator
- ``cli``        the ``gfpc`` command line front end
"""

__version__ = "0.1.0"

from .errors import (
    GfpcError,
    BoundsError,
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DegenerateSampleError,
    DigestMismatchError,
    DimensionError,
    EvaluationError,
    InputError,
    PairingError,
    UsageError,
)

__all__ = [
    "GfpcError",
    "BoundsError",
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DegenerateSampleError",
    "DigestMismatchError",
    "DimensionError",
    "EvaluationError",
    "InputError",
    "PairingError",
    "UsageError",
    "__version__",
]

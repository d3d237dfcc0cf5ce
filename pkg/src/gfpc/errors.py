"""Exception hierarchy. Everything raised on purpose derives from GfpcError
so the CLI can map failures to a single exit code."""


class GfpcError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(GfpcError):
    """Array shape incompatible with the requested operation."""


class ContractError(GfpcError):
    """An API precondition was violated (dtype, scalar-ness, op misuse)."""


class ConfigError(GfpcError):
    """Bad configuration value or unknown configuration key."""


class InputError(GfpcError):
    """Unusable input at the task level (empty dataset, bad fraction, ...)."""


class DataError(GfpcError):
    """Malformed dataset on disk: manifest rows, missing files, bad PNGs."""


class CheckpointError(GfpcError):
    """Unreadable or corrupt parameter archive."""


class DigestMismatchError(CheckpointError):
    """Archive was written under a different architecture configuration."""

    def __init__(self, expected, found):
        super().__init__(
            f"configuration digest mismatch: archive has {found!r}, "
            f"expected {expected!r}"
        )
        self.expected = expected
        self.found = found


class PairingError(GfpcError):
    """Query/key parameter sets disagree (names or shapes)."""


class DegenerateSampleError(GfpcError):
    """A sample carries no usable signal (for example an all-invalid mask)."""


class EvaluationError(GfpcError):
    """No pixels left to evaluate after masking and cropping."""


class BoundsError(GfpcError):
    """Crop rectangle falls outside the image."""


class UsageError(GfpcError):
    """Command line was malformed."""

"""Edge-weighted gradient fields.

Pipeline: grayscale -> Gaussian blur -> Sobel -> magnitude -> thinning along
the quantized gradient direction -> double-threshold hysteresis -> binary
mask. The field is the masked magnitude rescaled so its maximum is 1.

Thresholds are fractions of the image's maximum gradient magnitude, so
multiplying all intensities by a positive constant changes neither the mask
nor (up to rounding) the field. All math runs in float64 on plain arrays;
every function here is pure and thread-safe.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DimensionError

# Cross-correlation taps: SOBEL_U responds to intensity increasing along
# columns (the u axis), SOBEL_V along rows.
SOBEL_U = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_V = SOBEL_U.T.copy()

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class CannyParams:
    sigma: float = 1.4
    kernel_size: int = 5
    low: float = 0.1
    high: float = 0.2

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ConfigError(
                f"kernel size must be odd and >= 3, got {self.kernel_size}"
            )
        if not 0 < self.low < self.high:
            raise ConfigError(
                f"need 0 < low < high, got low={self.low} high={self.high}"
            )


class GradientPair(NamedTuple):
    gu: np.ndarray  # response along columns
    gv: np.ndarray  # response along rows


def to_grayscale(rgb):
    """Rec.601 luma of an [h,w,3] image with values in [0,1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DimensionError(
            f"expected [h,w,3] image, got shape {rgb.shape}"
        )
    r, g, b = LUMA_WEIGHTS
    return rgb[:, :, 0] * r + rgb[:, :, 1] * g + rgb[:, :, 2] * b


def gaussian_kernel(sigma, size):
    """Normalized 1-D Gaussian taps, length ``size`` (odd)."""
    if size % 2 == 0:
        raise ConfigError(f"kernel size must be odd, got {size}")
    if sigma <= 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _correlate_axis(img, taps, axis):
    # Separable correlation with replicated edges; taps applied in index
    # order so the accumulation order is fixed.
    r = len(taps) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    p = np.pad(img, pad, mode="edge")
    n = img.shape[axis]
    out = np.zeros_like(img)
    for t in range(len(taps)):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(t, t + n)
        out += taps[t] * p[tuple(sl)]
    return out


def gaussian_blur(img, params=CannyParams()):
    img = _check_gray(img)
    taps = gaussian_kernel(params.sigma, params.kernel_size)
    return _correlate_axis(_correlate_axis(img, taps, 0), taps, 1)


_DIFF_TAPS = (-1.0, 0.0, 1.0)
_SMOOTH_TAPS = (1.0, 2.0, 1.0)


def sobel(img):
    """3x3 Sobel responses with replicated edges. Needs at least 3x3.

    Computed separably (central difference, then [1,2,1] smoothing), which
    matches the dense kernels in SOBEL_U/SOBEL_V and guarantees exact-zero
    response on constant images: the difference pass cancels identical
    neighbors bit-exactly before anything is accumulated.
    """
    img = _check_gray(img)
    if min(img.shape) < 3:
        raise DimensionError(
            f"image {img.shape} smaller than the 3x3 Sobel kernel"
        )
    gu = _correlate_axis(_correlate_axis(img, _DIFF_TAPS, 1), _SMOOTH_TAPS, 0)
    gv = _correlate_axis(_correlate_axis(img, _DIFF_TAPS, 0), _SMOOTH_TAPS, 1)
    return GradientPair(gu, gv)


def grad_magnitude(pair):
    gu, gv = pair
    if gu.shape != gv.shape:
        raise DimensionError(
            f"gradient component shapes differ: {gu.shape} vs {gv.shape}"
        )
    return np.hypot(gu, gv)


# Neighbor offsets per direction bin, as (row, col). Bin k covers gradient
# angles around k*45 degrees.
_BIN_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1))


def direction_bins(pair):
    """Quantize gradient direction into 4 bins (0/45/90/135 degrees)."""
    angle = np.mod(np.arctan2(pair.gv, pair.gu), np.pi)
    return (((angle + np.pi / 8) // (np.pi / 4)).astype(np.int8)) % 4


def nms_mask(mag, pair):
    """Thin ridges of ``mag`` along the quantized gradient direction.

    A pixel survives iff its magnitude is strictly greater than the
    preceding neighbor and at least the following neighbor along the
    direction axis; on an exact two-pixel tie the earlier pixel (smaller
    row, then column) is the one kept, so ridges thin to one pixel
    deterministically.
    """
    if mag.shape != pair.gu.shape:
        raise DimensionError(
            f"magnitude shape {mag.shape} != gradient shape {pair.gu.shape}"
        )
    h, w = mag.shape
    padded = np.zeros((h + 2, w + 2), dtype=mag.dtype)
    padded[1:-1, 1:-1] = mag

    def shifted(dr, dc):
        return padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]

    bins = direction_bins(pair)
    keep = np.zeros((h, w), dtype=bool)
    for b, (dr, dc) in enumerate(_BIN_OFFSETS):
        sel = bins == b
        keep |= sel & (mag > shifted(-dr, -dc)) & (mag >= shifted(dr, dc))
    return keep


def _dilate8(mask):
    h, w = mask.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask
    out = mask.copy()
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr or dc:
                out |= padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
    return out


def hysteresis(strong, candidate):
    """Grow the strong set through 8-connected candidate pixels."""
    if strong.shape != candidate.shape:
        raise DimensionError(
            f"mask shapes differ: {strong.shape} vs {candidate.shape}"
        )
    out = strong & candidate
    while True:
        grown = _dilate8(out) & candidate
        if grown.sum() == out.sum():
            return out
        out = grown


def _canny_stages(gray, params):
    blurred = gaussian_blur(gray, params)
    pair = sobel(blurred)
    mag = grad_magnitude(pair)
    peak = mag.max()
    if peak <= 0:
        return mag, np.zeros(mag.shape, dtype=bool)
    keep = nms_mask(mag, pair)
    candidate = keep & (mag >= params.low * peak)
    strong = keep & (mag >= params.high * peak)
    return mag, hysteresis(strong, candidate)


def canny_mask(gray, params=CannyParams()):
    """Binary edge mask of a grayscale image."""
    gray = _check_gray(gray)
    _, mask = _canny_stages(gray, params)
    return mask


def gradient_field(rgb, params=CannyParams()):
    """Edge-masked gradient magnitude of an RGB image, rescaled to max 1.

    Returns a float64 [h,w] array. Pixels off the edge mask are exactly 0;
    if the mask is empty (featureless image) the whole field is 0, otherwise
    the maximum is exactly 1.
    """
    gray = to_grayscale(rgb)
    mag, mask = _canny_stages(gray, params)
    field = np.where(mask, mag, 0.0)
    peak = field.max()
    if peak > 0:
        field /= peak
    return field


def field_to_u8(field):
    """Quantize a [0,1] field to the 8-bit PNG convention round(255*G)."""
    return np.rint(np.clip(field, 0.0, 1.0) * 255.0).astype(np.uint8)


def _check_gray(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"expected [h,w] image, got shape {img.shape}")
    if img.size == 0:
        raise DimensionError("empty image")
    return img

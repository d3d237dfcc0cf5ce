"""Datasets on disk and in memory.

On-disk layout of a dataset root:

    root/manifest.csv     columns: rgb[,depth], paths relative to root
    root/rgb/*.png        8-bit RGB
    root/depth/*.png      16-bit grayscale, millimeters, 0 = missing

Depth may be stored at full RGB resolution (it is area-averaged over valid
pixels down to half resolution at load time) or directly at half
resolution. The synthetic generator writes this exact layout, so every
pipeline stage runs identically on generated and hand-made data.
"""

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, InputError


class DepthSample(NamedTuple):
    rgb: np.ndarray    # [h, w, 3] float32 in [0, 1]
    depth: np.ndarray  # [h/2, w/2] float32 meters, 0 where invalid
    mask: np.ndarray   # [h/2, w/2] bool


@dataclass(frozen=True)
class ManifestEntry:
    rgb: Path
    depth: Optional[Path]


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    split: str
    entries: tuple

    def __len__(self):
        return len(self.entries)


def load_manifest(root, split="train", labeled=True):
    """Read and validate root/manifest.csv; entries come back sorted by
    their rgb path string."""
    root = Path(root)
    path = root / "manifest.csv"
    if not path.is_file():
        raise DataError(f"no manifest.csv under {root}")
    if split not in ("train", "test"):
        raise ConfigError(f"split must be train or test, got {split!r}")
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "rgb" not in reader.fieldnames:
            raise DataError(f"{path}: header must contain an rgb column")
        has_depth = "depth" in reader.fieldnames
        for lineno, row in enumerate(reader, start=2):
            rgb_rel = (row.get("rgb") or "").strip()
            if not rgb_rel:
                raise DataError(f"{path} row {lineno}: empty rgb path")
            depth_rel = (row.get("depth") or "").strip() if has_depth else ""
            rows.append((lineno, rgb_rel, depth_rel))
    rows.sort(key=lambda r: r[1])
    entries = []
    for lineno, rgb_rel, depth_rel in rows:
        rgb = root / rgb_rel
        if not rgb.is_file():
            raise DataError(f"{path} row {lineno}: missing file {rgb}")
        depth = None
        if depth_rel:
            depth = root / depth_rel
            if not depth.is_file():
                raise DataError(f"{path} row {lineno}: missing file {depth}")
        elif labeled:
            raise DataError(
                f"{path} row {lineno}: no depth path in a labeled split"
            )
        entries.append(ManifestEntry(rgb, depth))
    return DatasetManifest(root, split, tuple(entries))


# -- PNG + raw-field I/O -------------------------------------------------

def load_rgb(path):
    """8-bit RGB PNG -> [h,w,3] float32 in [0,1]."""
    with Image.open(path) as img:
        if img.mode != "RGB":
            raise DataError(
                f"{path}: expected 8-bit RGB, got mode {img.mode!r}"
            )
        arr = np.asarray(img, dtype=np.uint8)
    return arr.astype(np.float32) / np.float32(255)


def write_rgb_png(path, rgb):
    """[h,w,3] floats in [0,1] -> 8-bit RGB PNG (values round(255*x))."""
    arr = np.rint(np.clip(np.asarray(rgb), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_depth_raw(path):
    """16-bit grayscale PNG -> uint16 array of millimeters."""
    with Image.open(path) as img:
        if img.mode not in ("I;16", "I"):
            raise DataError(
                f"{path}: expected 16-bit grayscale depth, got mode "
                f"{img.mode!r}"
            )
        arr = np.asarray(img)
    if arr.dtype != np.uint16:
        if arr.min() < 0 or arr.max() > 65535:
            raise DataError(f"{path}: depth values outside the 16-bit range")
        arr = arr.astype(np.uint16)
    return arr


def write_depth_png(path, meters):
    """[h,w] depth in meters -> 16-bit millimeter PNG. Values above 65.535 m
    do not fit and raise; use a scale flag at load time for such data."""
    mm = np.rint(np.asarray(meters, dtype=np.float64) * 1000.0)
    if mm.min() < 0 or mm.max() > 65535:
        raise DataError(
            f"depth range [{mm.min()/1000}, {mm.max()/1000}] m does not fit "
            "16-bit millimeters"
        )
    Image.fromarray(mm.astype(np.uint16)).save(path, format="PNG")


def write_gray_png(path, values_u8):
    Image.fromarray(np.asarray(values_u8, dtype=np.uint8), mode="L").save(
        path, format="PNG")


def write_raw_field(path, field):
    """Row-major float32 dump with an 8-byte header (u32 height, u32 width,
    little-endian)."""
    field = np.asarray(field, dtype="<f4")
    if field.ndim != 2:
        raise DataError(f"raw fields are 2-D, got shape {field.shape}")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", field.shape[0], field.shape[1]))
        f.write(field.tobytes())


def read_raw_field(path):
    with open(path, "rb") as f:
        head = f.read(8)
        if len(head) < 8:
            raise DataError(f"{path}: truncated header")
        h, w = struct.unpack("<II", head)
        data = f.read()
    if len(data) != 4 * h * w:
        raise DataError(
            f"{path}: expected {4 * h * w} payload bytes, found {len(data)}"
        )
    return np.frombuffer(data, dtype="<f4").reshape(h, w).copy()


# -- sample assembly -----------------------------------------------------

def halve_depth(depth_m, mask):
    """Area-average valid pixels into 2x2 blocks. Blocks with no valid
    pixel come out 0 with mask 0."""
    h, w = depth_m.shape
    if h % 2 or w % 2:
        raise DataError(f"full-resolution depth must have even dims, got {h}x{w}")
    d = depth_m.astype(np.float64).reshape(h // 2, 2, w // 2, 2)
    m = mask.reshape(h // 2, 2, w // 2, 2)
    counts = m.sum(axis=(1, 3))
    sums = (d * m).sum(axis=(1, 3))
    out = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    return out.astype(np.float32), counts > 0


def load_sample(entry, depth_scale=1.0):
    """ManifestEntry -> DepthSample. depth_scale multiplies the decoded
    meters (e.g. 2.0 for datasets stored at half-millimeter precision)."""
    if entry.depth is None:
        raise DataError(f"{entry.rgb}: entry has no depth path")
    rgb = load_rgb(entry.rgb)
    raw = load_depth_raw(entry.depth)
    h, w = rgb.shape[:2]
    mask_full = raw > 0
    meters = raw.astype(np.float32) * np.float32(depth_scale / 1000.0)
    if raw.shape == (h, w):
        depth, mask = halve_depth(meters, mask_full)
    elif raw.shape == (h // 2, w // 2):
        depth = np.where(mask_full, meters, np.float32(0))
        mask = mask_full
    else:
        raise DataError(
            f"{entry.depth}: depth {raw.shape} is neither full nor half of "
            f"rgb {(h, w)}"
        )
    return DepthSample(rgb, depth, mask)


def load_samples(manifest, depth_scale=1.0, threads=1):
    from .util import parallel_map
    return parallel_map(lambda e: load_sample(e, depth_scale),
                        manifest.entries, threads)


def load_images(manifest, threads=1):
    """Just the RGB arrays, for unlabeled pretraining."""
    from .util import parallel_map
    return parallel_map(lambda e: load_rgb(e.rgb), manifest.entries, threads)


# -- deterministic subsets ----------------------------------------------

def subset_indices(n, fraction, seed):
    """First ceil(fraction*n) indices of a seeded shuffle, sorted. Subsets
    are nested: a smaller fraction at the same seed is a prefix of a larger
    one's selection."""
    if n < 1:
        raise InputError("cannot sample a subset of an empty dataset")
    if not 0 < fraction <= 1:
        raise InputError(f"fraction must be in (0, 1], got {fraction}")
    count = math.ceil(fraction * n)
    perm = np.random.default_rng(seed).permutation(n)
    return sorted(int(i) for i in perm[:count])


def sample_subset(manifest, fraction, seed):
    idx = subset_indices(len(manifest.entries), fraction, seed)
    return DatasetManifest(manifest.root, manifest.split,
                           tuple(manifest.entries[i] for i in idx))


# -- synthetic scenes ----------------------------------------------------

@dataclass(frozen=True)
class SyntheticSceneParams:
    """Outlined fronto-parallel boxes over a background plane at max_depth.

    The only depth cue is geometric: a box's apparent size shrinks with its
    distance, so depth must be read from outline extent. Brightness is
    deliberately uninformative, every surface drawing an independent
    per-channel tint from [tint_low, 1]; each box face gets a one-pixel
    darkened rim so its silhouette survives even a near-matching tint."""

    height: int = 64
    width: int = 64
    min_boxes: int = 3
    max_boxes: int = 7
    min_depth: float = 2.0
    max_depth: float = 12.0
    noise: float = 0.03
    tint_low: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ConfigError(f"scene size too small: {self.height}x{self.width}")
        if not 0 < self.min_depth < self.max_depth:
            raise ConfigError(
                f"need 0 < min depth < max depth, got {self.min_depth}, "
                f"{self.max_depth}"
            )
        if not 1 <= self.min_boxes <= self.max_boxes:
            raise ConfigError(
                f"bad box count range [{self.min_boxes}, {self.max_boxes}]"
            )
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")
        if not 0 < self.tint_low <= 1:
            raise ConfigError(f"tint_low must be in (0, 1], got {self.tint_low}")


def render_scene(rng, params):
    """One scene. Returns (rgb float64 [h,w,3] in [0,1], depth float64 [h,w]
    meters). Painter's order: farther boxes first, so nearer boxes overwrite
    both color and depth."""
    h, w = params.height, params.width
    bg_tint = rng.uniform(params.tint_low, 1.0, size=3)
    k = int(rng.integers(params.min_boxes, params.max_boxes + 1))
    # Pinhole-style size cue: a box of roughly unit physical extent at
    # distance d spans proj/d pixels, so nearer boxes are visibly larger.
    proj = 0.62 * min(h, w) * params.min_depth
    boxes = []
    for _ in range(k):
        d = float(rng.uniform(params.min_depth, params.max_depth))
        bh = int(np.clip(round(rng.uniform(0.7, 1.3) * proj / d), 3, int(0.8 * h)))
        bw = int(np.clip(round(rng.uniform(0.7, 1.3) * proj / d), 3, int(0.8 * w)))
        r0 = int(rng.integers(0, h - bh + 1))
        c0 = int(rng.integers(0, w - bw + 1))
        tint = rng.uniform(params.tint_low, 1.0, size=3)
        boxes.append((d, r0, c0, bh, bw, tint))
    rgb = np.empty((h, w, 3))
    depth = np.empty((h, w))
    rgb[:] = bg_tint
    depth[:] = params.max_depth
    # Painter's order, farthest first, so nearer faces overwrite.
    for d, r0, c0, bh, bw, tint in sorted(boxes, key=lambda b: -b[0]):
        face = rgb[r0:r0 + bh, c0:c0 + bw]
        face[:] = tint
        face[0, :] = face[-1, :] = tint * 0.35
        face[:, 0] = face[:, -1] = tint * 0.35
        depth[r0:r0 + bh, c0:c0 + bw] = d
    if params.noise:
        rgb = rgb + rng.normal(0.0, params.noise, size=(h, w, 3))
    return np.clip(rgb, 0.0, 1.0), depth


def generate_synthetic(params, out_dir, count):
    """Materialize ``count`` scenes under out_dir in the standard layout.
    Byte-identical across runs for identical params and count."""
    if count < 1:
        raise InputError(f"count must be >= 1, got {count}")
    out = Path(out_dir)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(params.seed)
    rows = []
    for i in range(count):
        rgb, depth = render_scene(rng, params)
        rgb_rel = f"rgb/scene_{i:04d}.png"
        depth_rel = f"depth/scene_{i:04d}.png"
        write_rgb_png(out / rgb_rel, rgb)
        write_depth_png(out / depth_rel, depth)
        rows.append((rgb_rel, depth_rel))
    with open(out / "manifest.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["rgb", "depth"])
        writer.writerows(rows)
    return out

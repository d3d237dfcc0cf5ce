"""Flat binary archive of named float32 parameter arrays.

Layout, all integers little-endian:

    magic   b"GFPC1"
    dlen    u8            length of the config digest string
    digest  dlen ascii bytes
    count   u32           number of entries
    entry   nlen u16, name utf-8, rank u8, dims u32 * rank, data f32

Entries are written sorted by name, so archives of equal content are
byte-identical. Arrays round-trip bitwise when they are float32; other
dtypes are cast to float32 on save.
"""

import struct

import numpy as np

from .errors import CheckpointError, DigestMismatchError

MAGIC = b"GFPC1"


def save_checkpoint(path, params, digest):
    digest = str(digest)
    raw = digest.encode("ascii")
    if len(raw) > 255:
        raise CheckpointError("config digest longer than 255 bytes")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", len(raw)))
        f.write(raw)
        f.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            # asarray, not ascontiguousarray: the latter promotes 0-d arrays
            # to 1-d and would change the rank on round-trip
            arr = np.asarray(params[name], dtype=np.float32)
            if not arr.flags.c_contiguous:
                arr = np.ascontiguousarray(arr)
            nraw = name.encode("utf-8")
            f.write(struct.pack("<H", len(nraw)))
            f.write(nraw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4", copy=False).tobytes())


def load_checkpoint(path, expect_digest=None):
    """Read an archive; returns (params, digest). Raises CheckpointError on
    malformed input, DigestMismatchError when expect_digest is given and
    does not match."""
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError(
                f"truncated archive: ran out of bytes reading {what}"
            )
        piece = blob[off:off + n]
        off += n
        return piece

    if take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a parameter archive")
    (dlen,) = struct.unpack("<B", take(1, "digest length"))
    try:
        digest = take(dlen, "digest").decode("ascii")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{path}: unreadable digest") from exc
    if expect_digest is not None and digest != str(expect_digest):
        raise DigestMismatchError(str(expect_digest), digest)
    (count,) = struct.unpack("<I", take(4, "entry count"))
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{path}: undecodable entry name") from exc
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        n = 1
        for d in dims:
            n *= d
        data = np.frombuffer(take(4 * n, f"data of {name!r}"), dtype="<f4")
        params[name] = data.reshape(dims).astype(np.float32, copy=True)
    if off != len(blob):
        raise CheckpointError(
            f"{path}: {len(blob) - off} trailing bytes after last entry"
        )
    return params, digest


def peek_digest(path):
    """Digest string of an archive without loading the arrays."""
    with open(path, "rb") as f:
        head = f.read(len(MAGIC) + 1)
        if len(head) < len(MAGIC) + 1 or head[:len(MAGIC)] != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a parameter archive")
        dlen = head[-1]
        raw = f.read(dlen)
    if len(raw) < dlen:
        raise CheckpointError(f"{path}: truncated digest")
    try:
        return raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{path}: unreadable digest") from exc

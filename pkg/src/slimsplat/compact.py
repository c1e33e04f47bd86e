"""Compact 16-bit scene format (`.tgs`).

Layout: a fixed header (magic, version, count, per-bucket counts and byte
offsets), four buckets of Gaussians grouped by their maximum retained SH band
(0..3), and a trailing CRC32. Every float is little-endian half precision;
a bucket stores contiguous per-attribute arrays and only as many higher-band
coefficients as its band needs (0/9/24/45 values).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .cloud import GaussianCloud
from .errors import FormatError
from .masking import strip_sh_bands

MAGIC = b"TGSC"
VERSION = 1
# per-Gaussian half-float counts shared by every bucket: xyz, log scales,
# quaternion, opacity logit, diffuse SH
BASE_FIELDS = 3 + 3 + 4 + 1 + 3
REST_COEFFS = {0: 0, 1: 3, 2: 8, 3: 15}  # per channel: bands up to b
HEADER = struct.Struct("<4sIIIIII4Q")  # magic, version, N, bucket counts, offsets


@dataclass
class CompactStats:
    count: int
    bucket_counts: tuple
    payload_bytes: int
    file_bytes: int


def payload_bytes(bucket_counts) -> int:
    """Closed-form payload size for a bucket histogram."""
    total = 0
    for band, n in enumerate(bucket_counts):
        total += n * (BASE_FIELDS + 3 * REST_COEFFS[band]) * 2
    return total


def _bucket_payload(cloud: GaussianCloud, rows: np.ndarray, band: int) -> bytes:
    sub = cloud.take(rows) if rows.size else GaussianCloud.zeros(0)
    k = REST_COEFFS[band]
    arrays = [
        sub.positions,
        sub.log_scales,
        sub.rotations,
        sub.opacity_logits,
        sub.sh_dc,
        sub.sh_rest[:, :k, :],
    ]
    return b"".join(np.ascontiguousarray(a, dtype="<f2").tobytes() for a in arrays)


def save_compact(cloud: GaussianCloud, path, eps_sh: float = 0.1) -> CompactStats:
    """Strip masked SH bands, bucket by max retained band, write half floats."""
    stripped, bands = strip_sh_bands(cloud, eps_sh)
    n = len(stripped)
    buckets = [np.flatnonzero(bands == b) for b in range(4)]
    payloads = [_bucket_payload(stripped, rows, b) for b, rows in enumerate(buckets)]

    offsets = []
    pos = 0
    for p in payloads:
        offsets.append(pos)
        pos += len(p)
    header = HEADER.pack(
        MAGIC, VERSION, n, *(len(rows) for rows in buckets), *offsets
    )
    body = header + b"".join(payloads)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(body + struct.pack("<I", crc))
    return CompactStats(
        count=n,
        bucket_counts=tuple(len(rows) for rows in buckets),
        payload_bytes=pos,
        file_bytes=len(body) + 4,
    )


def _parse_bucket(buf: bytes, count: int, band: int) -> GaussianCloud:
    k = REST_COEFFS[band]
    cloud = GaussianCloud.zeros(count)
    pos = 0

    def pull(shape):
        nonlocal pos
        size = int(np.prod(shape)) * 2
        arr = np.frombuffer(buf[pos : pos + size], dtype="<f2").astype(np.float64).reshape(shape)
        pos += size
        return arr

    cloud.positions = pull((count, 3))
    cloud.log_scales = pull((count, 3))
    rot = pull((count, 4))
    norms = np.linalg.norm(rot, axis=1, keepdims=True)
    cloud.rotations = rot / np.maximum(norms, 1e-12)  # half precision breaks unit norm
    cloud.opacity_logits = pull((count,))
    cloud.sh_dc = pull((count, 3))
    if k:
        cloud.sh_rest[:, :k, :] = pull((count, k, 3))
    return cloud


def load_compact(path) -> tuple[GaussianCloud, CompactStats]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < HEADER.size + 4:
        raise FormatError(f"{path}: truncated compact scene file")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise FormatError(f"{path}: checksum failure")
    magic, version, n, c0, c1, c2, c3, o0, o1, o2, o3 = HEADER.unpack(body[: HEADER.size])
    if magic != MAGIC:
        raise FormatError(f"{path}: not a compact scene file")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    counts = (c0, c1, c2, c3)
    if sum(counts) != n:
        raise FormatError(f"{path}: bucket counts do not sum to the Gaussian count")
    expected = HEADER.size + payload_bytes(counts)
    if len(body) != expected:
        raise FormatError(f"{path}: payload size mismatch")

    offsets = (o0, o1, o2, o3)
    parts = []
    for band in range(4):
        start = HEADER.size + offsets[band]
        size = counts[band] * (BASE_FIELDS + 3 * REST_COEFFS[band]) * 2
        parts.append(_parse_bucket(body[start : start + size], counts[band], band))
    cloud = parts[0]
    for p in parts[1:]:
        cloud = cloud.concat(p)
    stats = CompactStats(
        count=n,
        bucket_counts=counts,
        payload_bytes=payload_bytes(counts),
        file_bytes=len(raw),
    )
    return cloud, stats

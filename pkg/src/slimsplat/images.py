"""Image I/O and resampling helpers for training targets and CLI output."""

from __future__ import annotations

import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d

from .errors import ContractViolationError, FormatError


def to_uint8(img: np.ndarray) -> np.ndarray:
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    """Write an RGB float image in [0, 1] as PNG or PPM based on extension."""
    path = str(path)
    data = to_uint8(np.asarray(img))
    if data.ndim == 2:
        data = np.repeat(data[:, :, None], 3, axis=2)
    if path.endswith(".ppm"):
        h, w, _ = data.shape
        with open(path, "wb") as f:
            f.write(f"P6\n{w} {h}\n255\n".encode())
            f.write(data.tobytes())
    elif path.endswith(".png"):
        Image.fromarray(data, mode="RGB").save(path)
    else:
        raise FormatError(f"unsupported image extension on {path!r} (use .png or .ppm)")


def read_image(path) -> np.ndarray:
    """Read an image file to an RGB float array in [0, 1]."""
    path = str(path)
    if path.endswith(".ppm"):
        with open(path, "rb") as f:
            magic = f.readline().strip()
            if magic != b"P6":
                raise FormatError(f"{path}: not a binary PPM")
            dims = f.readline().split()
            maxval = int(f.readline())
            w, h = int(dims[0]), int(dims[1])
            data = np.frombuffer(f.read(w * h * 3), dtype=np.uint8).reshape(h, w, 3)
        return data.astype(np.float64) / maxval
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def _area_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Interval-overlap weights mapping n_in samples down to n_out."""
    edges = np.arange(n_out + 1, dtype=np.float64) * (n_in / n_out)
    starts = np.floor(edges[:-1]).astype(np.int64)
    ends = np.ceil(edges[1:]).astype(np.int64)
    return edges, starts, np.minimum(ends, n_in)


def area_resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Box-average (area) downsampling with exact fractional-pixel coverage.

    Requires height <= H and width <= W; equal sizes pass the image through.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if height > h or width > w:
        raise ContractViolationError("area_resize only downsamples")
    if height == h and width == w:
        return img.copy()

    def resample_axis(data, n_out):
        n_in = data.shape[0]
        scale = n_in / n_out
        edges, starts, ends = _area_weights(n_in, n_out)
        out = np.zeros((n_out,) + data.shape[1:])
        for i in range(n_out):
            lo, hi = edges[i], edges[i + 1]
            acc = 0.0
            for j in range(starts[i], ends[i]):
                cover = min(j + 1.0, hi) - max(float(j), lo)
                if cover > 0:
                    acc = acc + data[j] * cover
            out[i] = acc / scale
        return out

    out = resample_axis(img, height)
    out = np.swapaxes(resample_axis(np.swapaxes(out, 0, 1), width), 0, 1)
    return out


def gaussian_blur(img: np.ndarray, size: int, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with an explicit odd kernel, reflecting edges."""
    if size <= 1 or sigma <= 0:
        return np.asarray(img, dtype=np.float64).copy()
    if size % 2 == 0:
        raise ContractViolationError("blur kernel size must be odd")
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    taps = np.exp(-0.5 * (x / sigma) ** 2)
    taps /= taps.sum()
    out = np.asarray(img, dtype=np.float64)
    out = correlate1d(out, taps, axis=0, mode="reflect")
    out = correlate1d(out, taps, axis=1, mode="reflect")
    return out

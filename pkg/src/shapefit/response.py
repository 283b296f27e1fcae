"""Response-map stacks: ideal rendering, peak decoding, patch extraction.

A stack holds one non-negative single-channel likelihood map per landmark,
all on the same H x W pixel grid. Map values are indexed ``maps[i, y, x]``
while landmark coordinates stay in (x, y) order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ZeroEvidenceError
from .shapes import as_points
from .textio import atomic_write_bytes

STACK_MAGIC = b"RSPM"
STACK_VERSION = 1


@dataclass(frozen=True)
class ResponseStack:
    maps: np.ndarray  # (n, H, W) float64, non-negative

    def __post_init__(self):
        arr = np.asarray(self.maps, dtype=float)
        if arr.ndim != 3:
            raise ValueError(f"expected (n, H, W) maps, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("response maps contain non-finite values")
        if np.any(arr < 0):
            raise ValueError("response maps contain negative values")
        object.__setattr__(self, "maps", arr)

    @property
    def n_maps(self) -> int:
        return self.maps.shape[0]

    @property
    def height(self) -> int:
        return self.maps.shape[1]

    @property
    def width(self) -> int:
        return self.maps.shape[2]


def render_ideal_map(
    truth: np.ndarray,
    index: int,
    height: int,
    width: int,
    sigma: float,
    visible: bool = True,
) -> np.ndarray:
    """Render one landmark's ideal response: an isotropic Gaussian density
    centered on the true location. Invisible landmarks render all zeros.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not visible:
        return np.zeros((height, width))
    pts = as_points(truth, min_points=1)
    cx, cy = pts[index]
    xs = np.arange(width) - cx
    ys = np.arange(height) - cy
    gx = np.exp(-(xs**2) / (2 * sigma**2))
    gy = np.exp(-(ys**2) / (2 * sigma**2))
    return np.outer(gy, gx) / (2 * np.pi * sigma**2)


def render_ideal_stack(
    truth: np.ndarray,
    height: int,
    width: int,
    sigma: float,
    visible: np.ndarray | None = None,
) -> ResponseStack:
    pts = as_points(truth)
    n = pts.shape[0]
    if visible is None:
        visible = np.ones(n, dtype=bool)
    maps = np.stack(
        [render_ideal_map(pts, i, height, width, sigma, bool(visible[i])) for i in range(n)]
    )
    return ResponseStack(maps)


def peak_location(values: np.ndarray) -> tuple[np.ndarray, bool]:
    """Locate the maximum of one map in (x, y) pixel coordinates.

    Ties break to the first occurrence in row-major scan order. An all-zero
    map yields the map center together with ``has_evidence=False``.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2:
        raise ValueError("expected a single 2D map")
    if float(arr.max(initial=0.0)) <= 0.0:
        h, w = arr.shape
        return np.array([w // 2, h // 2]), False
    row, col = np.unravel_index(int(np.argmax(arr)), arr.shape)
    return np.array([col, row]), True


def _round_half_away(value: float) -> int:
    return int(np.sign(value) * np.floor(abs(value) + 0.5))


@dataclass(frozen=True)
class PatchResponse:
    """One landmark's square window of response values.

    ``values[dy, dx]`` covers absolute pixel (center + (dx, dy) - size // 2);
    cells outside the source map are exactly zero.
    """

    index: int
    center: np.ndarray  # (2,) int, (x, y)
    size: int
    values: np.ndarray  # (size, size) float64

    def __post_init__(self):
        if self.size < 3 or self.size % 2 == 0:
            raise ValueError(f"patch size must be odd and >= 3, got {self.size}")
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.size, self.size):
            raise ValueError("patch values must be (size, size)")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=int))
        object.__setattr__(self, "values", vals)

    @property
    def total_mass(self) -> float:
        return float(self.values.sum())

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    @property
    def omega(self) -> np.ndarray:
        """Absolute (x, y) coordinates of every cell, row-major, shape (size^2, 2)."""
        half = self.size // 2
        xs = np.arange(self.center[0] - half, self.center[0] + half + 1)
        ys = np.arange(self.center[1] - half, self.center[1] + half + 1)
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()]).astype(float)


def extract_patch(stack: ResponseStack, index: int, center, size: int) -> PatchResponse:
    """Copy a zero-padded square window of one map around ``center``.

    Non-integer centers are rounded half away from zero before windowing.
    """
    if size < 3 or size % 2 == 0:
        raise ValueError(f"patch size must be odd and >= 3, got {size}")
    c = np.asarray(center, dtype=float).ravel()
    if c.shape != (2,) or not np.all(np.isfinite(c)):
        raise ValueError("center must be a finite (x, y) pair")
    cx, cy = _round_half_away(c[0]), _round_half_away(c[1])
    half = size // 2
    values = np.zeros((size, size))
    src = stack.maps[index]
    x0, x1 = cx - half, cx + half + 1
    y0, y1 = cy - half, cy + half + 1
    sx0, sx1 = max(x0, 0), min(x1, stack.width)
    sy0, sy1 = max(y0, 0), min(y1, stack.height)
    if sx0 < sx1 and sy0 < sy1:
        values[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = src[sy0:sy1, sx0:sx1]
    return PatchResponse(index, np.array([cx, cy]), size, values)


def normalize_patch(patch: PatchResponse) -> PatchResponse:
    """Scale patch values to unit total mass."""
    total = patch.total_mass
    if total <= 0.0:
        raise ZeroEvidenceError(f"patch for landmark {patch.index} has no mass")
    return PatchResponse(patch.index, patch.center, patch.size, patch.values / total)


# -- binary stack file -------------------------------------------------------
#
# magic 'RSPM', u32 version=1, u32 n, u32 H, u32 W (little-endian), then
# n*H*W float32 values, map-major then row-major.


def save_stack(stack: ResponseStack, path) -> None:
    header = STACK_MAGIC + struct.pack(
        "<IIII", STACK_VERSION, stack.n_maps, stack.height, stack.width
    )
    body = stack.maps.astype("<f4").tobytes(order="C")
    atomic_write_bytes(path, header + body)


def load_stack(path) -> ResponseStack:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 20 or data[:4] != STACK_MAGIC:
        raise FormatError(f"stack file {path}: bad magic bytes")
    version, n, height, width = struct.unpack("<IIII", data[4:20])
    if version != STACK_VERSION:
        raise FormatError(f"stack file {path}: unsupported version {version}")
    expected = 20 + 4 * n * height * width
    if len(data) != expected:
        raise FormatError(f"stack file {path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data[20:], dtype="<f4").astype(float).reshape(n, height, width)
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise FormatError(f"stack file {path}: invalid response values")
    return ResponseStack(values)

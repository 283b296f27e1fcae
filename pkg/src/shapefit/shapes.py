"""Landmark shapes, similarity transforms, and generalized Procrustes alignment.

A shape is an (n, 2) float64 array of landmark coordinates in image pixels,
rows ordered (x, y). The equivalent flat form interleaves coordinates as
(x1, y1, ..., xn, yn); ``ravel``/``reshape`` convert between the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateShapeError, FormatError
from .textio import atomic_write_text


def as_points(obj, min_points: int = 3) -> np.ndarray:
    """Validate and return a shape as an (n, 2) float64 array.

    Accepts (n, 2) arrays or flat interleaved vectors of even length.
    """
    arr = np.asarray(obj, dtype=float)
    if arr.ndim == 1:
        if arr.size % 2 != 0:
            raise ValueError(f"flat shape vector has odd length {arr.size}")
        arr = arr.reshape(-1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected (n, 2) coordinates, got shape {arr.shape}")
    if arr.shape[0] < min_points:
        raise ValueError(f"shape needs at least {min_points} landmarks, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("shape contains non-finite coordinates")
    return arr


def to_vector(points: np.ndarray) -> np.ndarray:
    """Flatten (n, 2) points to the interleaved (2n,) vector."""
    return np.asarray(points, dtype=float).ravel()


def from_vector(vec: np.ndarray) -> np.ndarray:
    return np.asarray(vec, dtype=float).reshape(-1, 2)


def rot90_vector(vec: np.ndarray) -> np.ndarray:
    """Rotate every landmark of a flat shape vector by 90 degrees: (x, y) -> (-y, x)."""
    pts = from_vector(vec)
    return np.column_stack([-pts[:, 1], pts[:, 0]]).ravel()


@dataclass(frozen=True)
class SimilarityTransform:
    """Scaled rotation plus translation: x -> scale * R(angle) @ x + t."""

    scale: float
    angle: float
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        if not all(math.isfinite(v) for v in (self.angle, self.tx, self.ty)):
            raise ValueError("transform parameters must be finite")

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    def inverse(self) -> "SimilarityTransform":
        inv_scale = 1.0 / self.scale
        c, s = math.cos(-self.angle), math.sin(-self.angle)
        tx = -inv_scale * (c * self.tx - s * self.ty)
        ty = -inv_scale * (s * self.tx + c * self.ty)
        return SimilarityTransform(inv_scale, -self.angle, tx, ty)


def apply_similarity(transform: SimilarityTransform, points: np.ndarray) -> np.ndarray:
    """Map every landmark through ``scale * R @ x + t``."""
    pts = as_points(points, min_points=1)
    return pts @ (transform.scale * transform.rotation).T + transform.translation


def optimal_similarity(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity registration of ``src`` onto ``dst``.

    Minimizes the sum of squared landmark distances over scale, rotation,
    and translation. Reflections are excluded: the returned rotation always
    has determinant +1.
    """
    src = as_points(src, min_points=2)
    dst = as_points(dst, min_points=2)
    if src.shape != dst.shape:
        raise ValueError(f"landmark counts differ: {src.shape[0]} vs {dst.shape[0]}")

    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    src_c = src - mu_src
    dst_c = dst - mu_dst

    var_src = float(np.sum(src_c**2))
    if var_src <= 0.0:
        raise DegenerateShapeError("source shape has all landmarks coincident")

    cov = dst_c.T @ src_c
    u, sing, vt = np.linalg.svd(cov)
    d = np.ones(2)
    if np.linalg.det(u @ vt) < 0:
        d[-1] = -1.0
    rotation = u @ np.diag(d) @ vt
    scale = float(np.sum(sing * d)) / var_src
    if scale <= 0.0:
        # Happens only for adversarial targets; fall back to a tiny positive
        # scale so the transform stays a valid similarity.
        scale = np.finfo(float).tiny

    angle = math.atan2(rotation[1, 0], rotation[0, 0])
    translation = mu_dst - scale * (rotation @ mu_src)
    return SimilarityTransform(scale, angle, float(translation[0]), float(translation[1]))


def _normalize_mean(points: np.ndarray) -> np.ndarray:
    centered = points - points.mean(axis=0)
    norm = float(np.linalg.norm(centered))
    if norm <= 0.0:
        raise DegenerateShapeError("mean shape collapsed during alignment")
    return centered / norm


def procrustes_align(
    shapes: list[np.ndarray], max_iters: int = 100, tol: float = 1e-10
) -> tuple[list[np.ndarray], np.ndarray]:
    """Generalized Procrustes alignment of a set of shapes.

    Returns the aligned shapes and their mean. The mean is centered at the
    origin with unit Frobenius norm; each aligned shape is the similarity-
    optimal registration of its input onto that mean. Iteration stops when
    the mean changes by less than ``tol`` (L2) or after ``max_iters`` rounds.
    """
    if len(shapes) < 2:
        raise ValueError("alignment needs at least two shapes")
    pts = [as_points(s) for s in shapes]
    n = pts[0].shape[0]
    for k, p in enumerate(pts):
        if p.shape[0] != n:
            raise ValueError(f"shape {k} has {p.shape[0]} landmarks, expected {n}")
        if float(np.sum((p - p.mean(axis=0)) ** 2)) <= 0.0:
            raise DegenerateShapeError(f"shape {k} has all landmarks coincident")

    mean = _normalize_mean(pts[0])
    aligned = pts
    for _ in range(max_iters):
        aligned = [apply_similarity(optimal_similarity(p, mean), p) for p in pts]
        new_mean = _normalize_mean(np.mean(aligned, axis=0))
        change = float(np.linalg.norm(new_mean - mean))
        mean = new_mean
        if change < tol:
            break
    # Final pass so every output is optimal against the final mean.
    aligned = [apply_similarity(optimal_similarity(p, mean), p) for p in pts]
    return aligned, mean


# -- pts text format ---------------------------------------------------------
#
# n_points: <n>
# {
# <x> <y>        (n lines)
# }


def format_pts(points: np.ndarray) -> str:
    pts = as_points(points)
    lines = [f"n_points: {pts.shape[0]}", "{"]
    lines += [f"{format(x, '.17g')} {format(y, '.17g')}" for x, y in pts]
    lines.append("}")
    return "\n".join(lines) + "\n"


def parse_pts(text: str) -> np.ndarray:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if len(lines) < 4 or not lines[0].startswith("n_points:"):
        raise FormatError("pts: missing 'n_points:' header")
    try:
        n = int(lines[0].split(":", 1)[1])
    except ValueError as exc:
        raise FormatError("pts: malformed point count") from exc
    if lines[1] != "{" or lines[-1] != "}":
        raise FormatError("pts: missing braces around point block")
    body = lines[2:-1]
    if len(body) != n:
        raise FormatError(f"pts: expected {n} points, found {len(body)}")
    coords = []
    for ln in body:
        fields = ln.split()
        if len(fields) != 2:
            raise FormatError(f"pts: malformed coordinate line {ln!r}")
        try:
            coords.append((float(fields[0]), float(fields[1])))
        except ValueError as exc:
            raise FormatError(f"pts: malformed coordinate line {ln!r}") from exc
    pts = np.array(coords, dtype=float)
    if not np.all(np.isfinite(pts)):
        raise FormatError("pts: non-finite coordinates")
    if n < 3:
        raise FormatError("pts: a shape needs at least 3 landmarks")
    return pts


def write_pts(path, points: np.ndarray) -> None:
    atomic_write_text(path, format_pts(points))


def read_pts(path) -> np.ndarray:
    with open(path) as fh:
        return parse_pts(fh.read())

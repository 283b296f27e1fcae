"""Point distribution model: training, shape generation, projection, prior.

The model lives in a canonical frame (mean centered at the origin with unit
Frobenius norm). Its combined basis stacks four orthonormalized similarity
directions (scaling, in-plane rotation, x/y translation of the mean) in
front of the PCA deformation components, so a full shape is

    shape_vector = mean_vector + basis @ params

with ``params = (p1*, p2*, p3*, p4*, q1, ..., qm)``. Because a 2D scaled
rotation is a linear combination of the identity and the 90-degree rotation,
any similarity transform of the mean is represented exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .shapes import as_points, from_vector, procrustes_align, rot90_vector, to_vector
from .textio import atomic_write_text, dumps_document, loads_document

MODEL_FORMAT = "pdm-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class PointDistributionModel:
    """Trained linear shape model.

    mean_vector: (2n,) canonical mean shape, interleaved coordinates.
    similarity_bases: (2n, 4) orthonormal columns spanning global similarity.
    components: (2n, m) orthonormal PCA columns, orthogonal to the similarity
        subspace.
    eigenvalues: (m,) positive deformation variances, descending.
    """

    mean_vector: np.ndarray
    similarity_bases: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    basis: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.asarray(self.mean_vector, dtype=float)
        sim = np.asarray(self.similarity_bases, dtype=float)
        comp = np.asarray(self.components, dtype=float).reshape(mean.size, -1)
        eigs = np.asarray(self.eigenvalues, dtype=float).ravel()
        object.__setattr__(self, "mean_vector", mean)
        object.__setattr__(self, "similarity_bases", sim)
        object.__setattr__(self, "components", comp)
        object.__setattr__(self, "eigenvalues", eigs)
        object.__setattr__(self, "basis", np.hstack([sim, comp]))
        self._validate()

    def _validate(self):
        two_n = self.mean_vector.size
        if two_n % 2 or two_n < 6:
            raise ValueError("mean shape must hold at least 3 landmarks")
        if self.similarity_bases.shape != (two_n, 4):
            raise ValueError("similarity basis must be (2n, 4)")
        m = self.components.shape[1]
        if m > two_n - 4:
            raise ValueError(f"too many components: {m} > {two_n - 4}")
        if self.eigenvalues.shape != (m,):
            raise ValueError("eigenvalue count must match component count")
        if m and (np.any(self.eigenvalues <= 0) or np.any(np.diff(self.eigenvalues) > 0)):
            raise ValueError("eigenvalues must be positive and sorted descending")
        gram = self.basis.T @ self.basis
        if not np.allclose(gram, np.eye(4 + m), atol=1e-8):
            raise ValueError("combined basis is not orthonormal")

    @property
    def n_points(self) -> int:
        return self.mean_vector.size // 2

    @property
    def n_modes(self) -> int:
        return self.components.shape[1]

    @property
    def n_params(self) -> int:
        return 4 + self.n_modes

    @property
    def mean_points(self) -> np.ndarray:
        return from_vector(self.mean_vector)


def _orthonormal_similarity_basis(mean_vector: np.ndarray) -> np.ndarray:
    """Gram-Schmidt the raw similarity directions built from the mean shape."""
    n = mean_vector.size // 2
    ex = np.tile([1.0, 0.0], n)
    ey = np.tile([0.0, 1.0], n)
    raw = [mean_vector.copy(), rot90_vector(mean_vector), ex, ey]
    basis = []
    for vec in raw:
        for b in basis:
            vec = vec - (b @ vec) * b
        norm = np.linalg.norm(vec)
        if norm <= 1e-12:
            raise ValueError("degenerate mean shape: similarity basis collapsed")
        basis.append(vec / norm)
    return np.column_stack(basis)


def train_pdm_with_spectrum(
    shapes: list[np.ndarray],
    variance_retained: float = 0.95,
    n_components: int | None = None,
    max_iters: int = 100,
    tol: float = 1e-10,
) -> tuple[PointDistributionModel, np.ndarray]:
    """Train a PDM and also return the full residual variance spectrum.

    Shapes are Procrustes-aligned into the canonical frame, the similarity
    subspace is projected out, and PCA runs on the residuals. The smallest
    component count capturing at least ``variance_retained`` of the residual
    variance is kept, unless ``n_components`` overrides the choice. Either
    way the count is capped at the numerical rank of the data.
    """
    if not 0 < variance_retained <= 1:
        raise ValueError("variance_retained must lie in (0, 1]")
    aligned, mean_pts = procrustes_align(shapes, max_iters=max_iters, tol=tol)
    if n_components is not None and len(shapes) < n_components + 1:
        raise ValueError("need at least n_components + 1 training shapes")

    mean_vec = to_vector(mean_pts)
    sim_basis = _orthonormal_similarity_basis(mean_vec)

    data = np.stack([to_vector(p) for p in aligned]) - mean_vec
    residuals = data - (data @ sim_basis) @ sim_basis.T

    # SVD of centered residuals; eigenvalues use the unbiased covariance.
    centered = residuals - residuals.mean(axis=0)
    _, sing, vt = np.linalg.svd(centered, full_matrices=False)
    eigs = sing**2 / max(len(shapes) - 1, 1)

    scale = max(float(eigs[0]), 1.0) if eigs.size else 1.0
    rank_mask = eigs > scale * 1e-12
    eigs = eigs[rank_mask]
    modes = vt[rank_mask]

    max_m = min(len(eigs), mean_vec.size - 4)
    if n_components is not None:
        m = min(n_components, max_m)
    elif max_m == 0:
        m = 0
    else:
        fractions = np.cumsum(eigs[:max_m]) / np.sum(eigs)
        m = int(np.searchsorted(fractions, variance_retained - 1e-12) + 1)
        m = min(m, max_m)

    components = modes[:m].T if m else np.zeros((mean_vec.size, 0))
    model = PointDistributionModel(mean_vec, sim_basis, components, eigs[:m])
    return model, eigs


def train_pdm(
    shapes: list[np.ndarray],
    variance_retained: float = 0.95,
    n_components: int | None = None,
    max_iters: int = 100,
    tol: float = 1e-10,
) -> PointDistributionModel:
    """Train a PDM from raw training shapes. See ``train_pdm_with_spectrum``."""
    model, _ = train_pdm_with_spectrum(shapes, variance_retained, n_components, max_iters, tol)
    return model


def generate_shape(model: PointDistributionModel, params: np.ndarray) -> np.ndarray:
    """Instantiate the shape ``mean + basis @ params`` as (n, 2) points."""
    p = np.asarray(params, dtype=float).ravel()
    if p.size != model.n_params:
        raise ValueError(f"expected {model.n_params} parameters, got {p.size}")
    return from_vector(model.mean_vector + model.basis @ p)


def project_shape(model: PointDistributionModel, points: np.ndarray) -> np.ndarray:
    """Least-squares parameters for a shape: ``basis.T @ (shape - mean)``."""
    pts = as_points(points)
    if pts.shape[0] != model.n_points:
        raise ValueError(f"expected {model.n_points} landmarks, got {pts.shape[0]}")
    return model.basis.T @ (to_vector(pts) - model.mean_vector)


def prior_penalty(model: PointDistributionModel, params: np.ndarray) -> float:
    """Mahalanobis energy of the non-rigid parameters, ``sum(q_j^2 / lambda_j)``.

    The four similarity coefficients carry a non-informative prior and
    contribute nothing.
    """
    p = np.asarray(params, dtype=float).ravel()
    if p.size != model.n_params:
        raise ValueError(f"expected {model.n_params} parameters, got {p.size}")
    q = p[4:]
    if q.size == 0:
        return 0.0
    return float(np.sum(q**2 / model.eigenvalues))


def inverse_prior_diag(model: PointDistributionModel, prior_scale: float = 1.0) -> np.ndarray:
    """Diagonal of the inverse prior covariance over all parameters.

    Zero entries for the four similarity coefficients (pseudo-inverse
    convention: an unpenalized direction inverts to zero). ``prior_scale``
    multiplies the eigenvalues, letting callers restate the deformation
    variances at a different working scale; ``inf`` disables the prior.
    """
    inv = np.zeros(model.n_params)
    if model.n_modes and np.isfinite(prior_scale):
        inv[4:] = 1.0 / (prior_scale * model.eigenvalues)
    return inv


# -- model file --------------------------------------------------------------


def save_model(model: PointDistributionModel, path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "n": model.n_points,
        "m": model.n_modes,
        "mean_shape": model.mean_vector.tolist(),
        "similarity_bases": model.similarity_bases.tolist(),
        "components": model.components.tolist(),
        "eigenvalues": model.eigenvalues.tolist(),
    }
    atomic_write_text(path, dumps_document(doc))


def load_model(path) -> PointDistributionModel:
    try:
        with open(path) as fh:
            doc = loads_document(fh.read())
    except ValueError as exc:
        raise FormatError(f"model file {path}: not a structured document") from exc
    if doc.get("format") != MODEL_FORMAT:
        raise FormatError(f"model file {path}: unrecognized format field")
    if doc.get("version") != MODEL_VERSION:
        raise FormatError(f"model file {path}: unsupported version {doc.get('version')!r}")
    try:
        n = int(doc["n"])
        m = int(doc["m"])
        mean = np.array(doc["mean_shape"], dtype=float)
        sim = np.array(doc["similarity_bases"], dtype=float).reshape(2 * n, 4)
        comp = np.array(doc["components"], dtype=float).reshape(2 * n, m)
        eigs = np.array(doc["eigenvalues"], dtype=float).reshape(m)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"model file {path}: malformed contents") from exc
    if mean.size != 2 * n:
        raise FormatError(f"model file {path}: mean shape length mismatch")
    try:
        return PointDistributionModel(mean, sim, comp, eigs)
    except ValueError as exc:
        raise FormatError(f"model file {path}: invalid model: {exc}") from exc

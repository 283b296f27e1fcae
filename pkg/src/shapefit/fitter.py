"""Shape fitting on response stacks: estimate, correct, tune.

The pipeline decodes a coarse shape from per-landmark response peaks,
regularizes it with a confidence-weighted model projection, then refines it
with a weighted regularized mean-shift: each iteration extracts shape-indexed
patches, turns them into per-landmark confidences and posterior-mean move
vectors, and solves a prior-damped Gauss-Newton step for the model
parameters. The combined model basis is the constant Jacobian throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InitDegenerateError, ZeroEvidenceError
from .pdm import PointDistributionModel, generate_shape, inverse_prior_diag, prior_penalty
from .response import PatchResponse, ResponseStack, extract_patch, normalize_patch, peak_location
from .shapes import as_points, format_pts, parse_pts, to_vector
from .textio import atomic_write_text, dumps_document, loads_document

RESULT_FORMAT = "fit-result"
RESULT_VERSION = 1


@dataclass(frozen=True)
class FitConfig:
    """Tuning-loop configuration.

    ``sigmoid_gain`` and ``sigmoid_bias`` are the two empirical constants of
    the confidence score; they are calibrated to the response scale of the
    detector producing the maps. ``scale_prior`` restates the canonical-frame
    deformation variances at the working image scale (squared similarity
    scale of the current estimate) so the prior stays commensurate with the
    pixel-space residuals.
    """

    max_iterations: int = 5
    patch_sizes: tuple[int, ...] = (31, 25, 19, 13, 9)
    rho: float = 5.0
    gamma: float = 25.0
    sigmoid_gain: float = 0.25
    sigmoid_bias: float = 25.0
    weight_floor: float = 1e-3
    weight_ceiling: float = 1.0 - 1e-6
    converge_tol: float = 0.05
    occlusion_threshold: float = 0.5
    uniform_weights: bool = False
    scale_prior: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if len(self.patch_sizes) != self.max_iterations:
            raise ValueError("patch_sizes must list one odd size per iteration")
        for a, b in zip(self.patch_sizes, self.patch_sizes[1:]):
            if b > a:
                raise ValueError("patch sizes must be non-increasing")
        if any(s < 3 or s % 2 == 0 for s in self.patch_sizes):
            raise ValueError("patch sizes must be odd and >= 3")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not 0 <= self.weight_floor < self.weight_ceiling <= 1:
            raise ValueError("require 0 <= weight_floor < weight_ceiling <= 1")


@dataclass(frozen=True)
class FitIteration:
    shape: np.ndarray
    delta_norm: float
    surrogate: float


@dataclass(frozen=True)
class FitResult:
    shape: np.ndarray
    params: np.ndarray
    weights: np.ndarray
    occluded: np.ndarray
    trace: tuple[FitIteration, ...] = field(default_factory=tuple)


def _sigmoid(x: float) -> float:
    # tanh form is overflow-safe for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def confidence_weight(patch: PatchResponse, cfg: FitConfig) -> float:
    """Per-landmark confidence from raw patch mass and spatial dispersion.

    The score is ``sigmoid(gain * mass / dispersion + bias)`` clamped to the
    configured bounds, where dispersion is the trace of the coordinate
    covariance weighted by the normalized patch. Zero-mass patches score the
    floor; single-point support (zero dispersion) scores the ceiling.
    """
    mass = patch.total_mass
    if mass <= 0.0:
        return cfg.weight_floor
    pi = patch.flat / mass
    coords = patch.omega
    mu = pi @ coords
    dispersion = float(pi @ np.sum((coords - mu) ** 2, axis=1))
    if dispersion <= 0.0:
        return cfg.weight_ceiling
    score = _sigmoid(cfg.sigmoid_gain * mass / dispersion + cfg.sigmoid_bias)
    return float(np.clip(score, cfg.weight_floor, cfg.weight_ceiling))


def _expand_weights(weights: np.ndarray) -> np.ndarray:
    """Per-landmark weights to the 2n diagonal (each weight twice)."""
    return np.repeat(np.asarray(weights, dtype=float), 2)


def robust_initialize(
    model: PointDistributionModel,
    coarse: np.ndarray,
    weights: np.ndarray,
    cfg: FitConfig,
    prior_scale: float = 1.0,
) -> np.ndarray:
    """Confidence-weighted regularized projection of a coarse shape.

    Solves ``(gamma * inv_prior + S.T W S) p = S.T W (coarse - mean)`` where
    W holds each landmark's weight twice on the diagonal. Unreliable
    landmarks are down-weighted instead of discarded, so outliers cannot
    drag the initialization.
    """
    pts = as_points(coarse)
    if pts.shape[0] != model.n_points:
        raise ValueError(f"expected {model.n_points} landmarks, got {pts.shape[0]}")
    w = np.asarray(weights, dtype=float).ravel()
    if w.shape != (model.n_points,):
        raise ValueError("need one weight per landmark")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    if np.count_nonzero(w > 0) < 3:
        raise InitDegenerateError("fewer than 3 landmarks carry positive weight")

    w2 = _expand_weights(w)
    basis = model.basis
    system = (basis.T * w2) @ basis
    system += np.diag(cfg.gamma * inverse_prior_diag(model, prior_scale))
    rhs = basis.T @ (w2 * (to_vector(pts) - model.mean_vector))
    try:
        return np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise InitDegenerateError("initialization system is singular") from exc


def estep_posterior(patch: PatchResponse, x_current: np.ndarray, rho_i: float) -> np.ndarray:
    """Posterior over patch candidates given the current landmark position.

    Each candidate's normalized response is multiplied by an isotropic
    Gaussian kernel of variance ``rho_i`` centered on ``x_current``; the
    result is renormalized. Computed in log space so tiny ``rho_i`` cannot
    underflow every term.
    """
    if rho_i <= 0:
        raise ValueError("rho_i must be positive")
    x = np.asarray(x_current, dtype=float).ravel()
    pi = patch.flat
    mass = float(pi.sum())
    if mass <= 0.0:
        raise ZeroEvidenceError(f"patch for landmark {patch.index} has no mass")
    pi = pi / mass
    sq = np.sum((patch.omega - x) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        log_w = np.log(pi) - sq / (2.0 * rho_i)
    peak = log_w.max()
    if not np.isfinite(peak):
        warnings.warn("posterior kernel underflow; using the response alone", RuntimeWarning)
        return pi
    w = np.exp(log_w - peak)
    return w / w.sum()


def mean_shift_vector(patch: PatchResponse, x_current: np.ndarray, rho_i: float) -> np.ndarray:
    """Displacement from the current position to the posterior-mean candidate.

    A zero-evidence patch contributes no displacement.
    """
    x = np.asarray(x_current, dtype=float).ravel()
    if patch.total_mass <= 0.0:
        return np.zeros(2)
    posterior = estep_posterior(patch, x, rho_i)
    return posterior @ patch.omega - x


def update_params(
    model: PointDistributionModel,
    params: np.ndarray,
    v: np.ndarray,
    weights_diag: np.ndarray,
    rho: float,
    prior_scale: float = 1.0,
) -> np.ndarray:
    """One prior-damped Gauss-Newton step on the model parameters.

    delta = -(rho^2 inv_prior + S.T W S)^-1 (rho^2 inv_prior p - S.T W v)
    """
    p = np.asarray(params, dtype=float).ravel()
    if p.size != model.n_params:
        raise ValueError(f"expected {model.n_params} parameters, got {p.size}")
    move = np.asarray(v, dtype=float).ravel()
    if move.size != 2 * model.n_points or not np.all(np.isfinite(move)):
        raise ValueError("move vector must be finite with one entry per coordinate")
    w2 = np.asarray(weights_diag, dtype=float).ravel()
    if w2.size != 2 * model.n_points:
        raise ValueError("weight diagonal must have one entry per coordinate")
    if rho <= 0:
        raise ValueError("rho must be positive")

    inv_prior = inverse_prior_diag(model, prior_scale)
    basis = model.basis
    system = (basis.T * w2) @ basis + np.diag(rho**2 * inv_prior)
    grad = rho**2 * inv_prior * p - basis.T @ (w2 * move)
    delta = -np.linalg.solve(system, grad)
    return p + delta


def evaluate_q_surrogate(
    model: PointDistributionModel,
    params: np.ndarray,
    patches: list[PatchResponse],
    centers: np.ndarray,
    weights: np.ndarray,
    rho: float,
) -> float:
    """Majorizer of the negative log-posterior at ``params``.

    Combines the non-rigid prior energy with the confidence-weighted expected
    squared distance to each landmark's candidates, using posterior weights
    frozen at ``centers``. Diagnostic only: the tuning step should not
    increase it on quadratic-exact instances.
    """
    shape = generate_shape(model, params)
    centers = as_points(centers)
    w = np.asarray(weights, dtype=float).ravel()
    total = prior_penalty(model, params)
    for i, patch in enumerate(patches):
        if patch.total_mass <= 0.0:
            continue
        rho_i = rho**2 / w[i]
        posterior = estep_posterior(patch, centers[i], rho_i)
        sq = np.sum((patch.omega - shape[i]) ** 2, axis=1)
        total += w[i] * float(posterior @ sq) / rho**2
    return float(total)


def _estimate_scale_sq(points: np.ndarray, weights: np.ndarray) -> float:
    """Squared similarity scale of a shape relative to the unit-norm frame."""
    w = np.asarray(weights, dtype=float)
    wsum = float(w.sum())
    if wsum <= 0.0:
        return 1.0
    centroid = (w[:, None] * points).sum(axis=0) / wsum
    spread = float((w * np.sum((points - centroid) ** 2, axis=1)).sum() / wsum)
    return max(spread * points.shape[0], 1e-12)


def _params_scale_sq(params: np.ndarray) -> float:
    # basis column 0 is the mean direction, column 1 its 90-degree rotation
    return max(float((1.0 + params[0]) ** 2 + params[1] ** 2), 1e-12)


def fit(model: PointDistributionModel, stack: ResponseStack, cfg: FitConfig) -> FitResult:
    """Run the full estimate / correct / tune pipeline on one stack."""
    if stack.n_maps != model.n_points:
        raise ValueError(f"stack has {stack.n_maps} maps, model expects {model.n_points}")
    n = model.n_points
    center = np.array([stack.width / 2.0, stack.height / 2.0])

    # Degenerate input: no evidence anywhere. Park the mean shape at the
    # canvas center and flag every landmark.
    if float(stack.maps.max(initial=0.0)) <= 0.0:
        translation = np.tile(center, n)
        params = model.basis.T @ translation
        shape = generate_shape(model, params)
        weights = np.full(n, cfg.weight_floor)
        return FitResult(shape, params, weights, np.ones(n, dtype=bool))

    # Estimation: decode peaks into a coarse shape.
    coarse = np.zeros((n, 2))
    for i in range(n):
        xy, _ = peak_location(stack.maps[i])
        coarse[i] = xy

    def landmark_weight(points: np.ndarray, size: int) -> np.ndarray:
        if cfg.uniform_weights:
            return np.ones(n)
        out = np.empty(n)
        for i in range(n):
            out[i] = confidence_weight(extract_patch(stack, i, points[i], size), cfg)
        return out

    weights = landmark_weight(coarse, cfg.patch_sizes[0])

    # Correction: confidence-weighted regularized projection.
    prior_scale = _estimate_scale_sq(coarse, weights) if cfg.scale_prior else 1.0
    params = robust_initialize(model, coarse, weights, cfg, prior_scale)
    shape = generate_shape(model, params)

    # Tuning: weighted regularized mean-shift.
    trace = []
    for k in range(cfg.max_iterations):
        size = cfg.patch_sizes[k]
        patches = [extract_patch(stack, i, shape[i], size) for i in range(n)]
        weights = np.empty(n)
        moves = np.zeros((n, 2))
        norm_patches: list[PatchResponse] = []
        for i, patch in enumerate(patches):
            has_mass = patch.total_mass > 0.0
            if cfg.uniform_weights:
                weights[i] = 1.0
            else:
                weights[i] = confidence_weight(patch, cfg) if has_mass else cfg.weight_floor
            if has_mass:
                norm = normalize_patch(patch)
                norm_patches.append(norm)
                moves[i] = mean_shift_vector(norm, shape[i], cfg.rho**2 / weights[i])
            else:
                norm_patches.append(patch)

        prior_scale = _params_scale_sq(params) if cfg.scale_prior else 1.0
        new_params = update_params(
            model, params, moves.ravel(), _expand_weights(weights), cfg.rho, prior_scale
        )
        new_shape = generate_shape(model, new_params)
        surrogate = evaluate_q_surrogate(model, new_params, norm_patches, shape, weights, cfg.rho)
        step = float(np.linalg.norm(new_params - params))
        mean_move = float(np.mean(np.linalg.norm(new_shape - shape, axis=1)))
        params, shape = new_params, new_shape
        trace.append(FitIteration(shape.copy(), step, surrogate))
        if mean_move < cfg.converge_tol:
            break

    occluded = weights < cfg.occlusion_threshold
    return FitResult(shape, params, weights, occluded, tuple(trace))


# -- result document ---------------------------------------------------------


def save_result(result: FitResult, path, include_trace: bool = True) -> None:
    doc = {
        "format": RESULT_FORMAT,
        "version": RESULT_VERSION,
        "shape_pts": format_pts(result.shape),
        "params": result.params.tolist(),
        "weights": result.weights.tolist(),
        "occluded": [bool(f) for f in result.occluded],
        "trace": [
            {
                "shape": to_vector(it.shape).tolist(),
                "delta_norm": it.delta_norm,
                "surrogate": it.surrogate,
            }
            for it in result.trace
        ]
        if include_trace
        else [],
    }
    atomic_write_text(path, dumps_document(doc))


def load_result(path) -> FitResult:
    try:
        with open(path) as fh:
            doc = loads_document(fh.read())
    except ValueError as exc:
        raise FormatError(f"result file {path}: not a structured document") from exc
    if doc.get("format") != RESULT_FORMAT:
        raise FormatError(f"result file {path}: unrecognized format field")
    if doc.get("version") != RESULT_VERSION:
        raise FormatError(f"result file {path}: unsupported version {doc.get('version')!r}")
    try:
        shape = parse_pts(doc["shape_pts"])
        params = np.array(doc["params"], dtype=float)
        weights = np.array(doc["weights"], dtype=float)
        occluded = np.array(doc["occluded"], dtype=bool)
        trace = tuple(
            FitIteration(
                np.array(rec["shape"], dtype=float).reshape(-1, 2),
                float(rec["delta_norm"]),
                float(rec["surrogate"]),
            )
            for rec in doc.get("trace", [])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"result file {path}: malformed contents") from exc
    return FitResult(shape, params, weights, occluded, trace)

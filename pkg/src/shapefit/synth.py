"""Synthetic scenario generation: training corpora and response stacks with
known ground truth.

Scenarios pose a model-consistent shape on a canvas, render ideal Gaussian
response maps for it, then degrade them with additive uniform noise and by
zeroing a chosen fraction of maps. Everything is a pure function of its
configuration, seed included, so repeated runs are bit-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeFitError
from .pdm import PointDistributionModel, generate_shape
from .response import ResponseStack, render_ideal_map, load_stack, save_stack
from .shapes import read_pts, rot90_vector, to_vector, write_pts
from .textio import atomic_write_text

META_FORMAT = "scenario-meta"
META_VERSION = 1


def base_face_points(scale: float = 1.0) -> np.ndarray:
    """A 68-landmark face-like polygon: jaw arc, brows, nose, eyes, lips."""

    def arc(cx, cy, rx, ry, a0, a1, count, flip_y=False):
        t = np.linspace(a0, a1, count)
        ys = cy + ry * np.sin(t)
        return np.column_stack([cx + rx * np.cos(t), -ys if flip_y else ys])

    jaw = arc(0.0, 0.25, 0.55, 0.75, math.pi, 2 * math.pi, 17)
    brow_l = arc(-0.28, 0.38, 0.16, 0.05, math.pi * 0.85, math.pi * 0.15, 5)
    brow_r = arc(0.28, 0.38, 0.16, 0.05, math.pi * 0.85, math.pi * 0.15, 5)
    bridge = np.column_stack([np.full(4, 0.0), np.linspace(0.30, 0.02, 4)])
    nose_base = np.column_stack([np.linspace(-0.10, 0.10, 5), [0.0, -0.03, -0.05, -0.03, 0.0]])
    eye_l = arc(-0.28, 0.24, 0.10, 0.05, 0.0, 2 * math.pi * 5 / 6, 6)
    eye_r = arc(0.28, 0.24, 0.10, 0.05, 0.0, 2 * math.pi * 5 / 6, 6)
    lip_outer = arc(0.0, -0.28, 0.22, 0.10, 0.0, 2 * math.pi * 11 / 12, 12)
    lip_inner = arc(0.0, -0.28, 0.13, 0.04, 0.0, 2 * math.pi * 7 / 8, 8)
    pts = np.vstack([jaw, brow_l, brow_r, bridge, nose_base, eye_l, eye_r, lip_outer, lip_inner])
    return pts * scale


@dataclass(frozen=True)
class GeneratorSpec:
    """Ground-truth shape generator: canonical base plus linear modes.

    ``mode_variances`` are expressed in the canonical (unit-norm) frame.
    """

    n_points: int = 68
    n_modes: int = 10
    leading_variance: float = 5e-6
    decay: float = 0.9
    scale_range: tuple[float, float] = (280.0, 360.0)
    rotation_range: tuple[float, float] = (-0.25, 0.25)
    translation_range: tuple[float, float] = (-15.0, 15.0)
    seed: int = 0

    @property
    def mode_variances(self) -> np.ndarray:
        return self.leading_variance * self.decay ** np.arange(self.n_modes)


@dataclass(frozen=True)
class TrainingRecord:
    """What the generator actually emitted, for spectrum-recovery checks."""

    base_vector: np.ndarray  # canonical frame
    modes: np.ndarray  # (2n, n_modes), orthonormal, similarity-orthogonal
    mode_variances: np.ndarray  # empirical variances of the drawn coefficients


def _canonical_base(spec: GeneratorSpec) -> np.ndarray:
    if spec.n_points == 68:
        pts = base_face_points()
    else:
        t = np.linspace(0.0, 2 * math.pi, spec.n_points, endpoint=False)
        pts = np.column_stack([np.cos(t), 0.8 * np.sin(t)])
    pts = pts - pts.mean(axis=0)
    return to_vector(pts) / np.linalg.norm(pts)


def _similarity_subspace(base_vec: np.ndarray) -> np.ndarray:
    n = base_vec.size // 2
    ex = np.tile([1.0, 0.0], n)
    ey = np.tile([0.0, 1.0], n)
    raw = np.column_stack([base_vec, rot90_vector(base_vec), ex, ey])
    q, _ = np.linalg.qr(raw)
    return q


def generator_modes(spec: GeneratorSpec) -> tuple[np.ndarray, np.ndarray]:
    """Canonical base vector and orthonormal deformation modes."""
    base_vec = _canonical_base(spec)
    sim = _similarity_subspace(base_vec)
    rng = np.random.default_rng(spec.seed + 7919)
    raw = rng.standard_normal((base_vec.size, spec.n_modes))
    raw -= sim @ (sim.T @ raw)
    q, _ = np.linalg.qr(raw)
    return base_vec, q[:, : spec.n_modes]


def make_training_shapes(spec: GeneratorSpec, count: int) -> tuple[list[np.ndarray], TrainingRecord]:
    """Sample training shapes: base + linear modes + similarity jitter.

    Mode coefficients are uniform with the requested per-mode variances;
    the record carries their empirical variances as the reference spectrum.
    """
    if count < 10:
        raise ValueError("need at least 10 training shapes")
    base_vec, modes = generator_modes(spec)
    rng = np.random.default_rng(spec.seed)
    half_width = np.sqrt(3.0 * spec.mode_variances)
    coeffs = rng.uniform(-half_width, half_width, size=(count, spec.n_modes))
    if spec.n_modes and count > spec.n_modes:
        # Exactly decorrelate the columns and pin their empirical variances,
        # so the emitted spectrum is the reference spectrum by construction
        # rather than a noisy sample of it.
        coeffs -= coeffs.mean(axis=0)
        u, _, _ = np.linalg.svd(coeffs, full_matrices=False)
        coeffs = u * np.sqrt((count - 1) * spec.mode_variances)

    shapes = []
    for k in range(count):
        vec = base_vec + modes @ coeffs[k]
        pts = vec.reshape(-1, 2)
        scale = rng.uniform(*spec.scale_range)
        angle = rng.uniform(*spec.rotation_range)
        shift = rng.uniform(*spec.translation_range, size=2)
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        shapes.append(scale * pts @ rot.T + shift)

    empirical = coeffs.var(axis=0, ddof=1) if count > 1 else np.zeros(spec.n_modes)
    return shapes, TrainingRecord(base_vec, modes, empirical)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    height: int = 256
    width: int = 256
    sigma: float = 6.0
    noise_amplitude: float = 0.0
    occluded_fraction: float = 0.0
    mode_scale: float = 2.0
    scale_range: tuple[float, float] = (280.0, 360.0)
    rotation_range: tuple[float, float] = (-0.25, 0.25)
    translation_range: tuple[float, float] = (-15.0, 15.0)
    margin: float = 4.0
    max_retries: int = 50

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        for name in ("noise_amplitude", "occluded_fraction"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class Scenario:
    truth: np.ndarray
    truth_params: np.ndarray
    stack: ResponseStack
    occluded: np.ndarray
    pose: dict = field(default_factory=dict)


def _draw_params(model: PointDistributionModel, cfg: ScenarioConfig, rng) -> tuple[np.ndarray, dict]:
    scale = rng.uniform(*cfg.scale_range)
    angle = rng.uniform(*cfg.rotation_range)
    center = np.array([cfg.width / 2.0, cfg.height / 2.0])
    shift = center + rng.uniform(*cfg.translation_range, size=2)
    bound = cfg.mode_scale * np.sqrt(model.eigenvalues) if model.n_modes else np.zeros(0)
    q = rng.uniform(-bound, bound) if model.n_modes else np.zeros(0)

    # Rigid pose of the mean expressed exactly in the similarity basis;
    # deformation modes ride along at pose scale in the canvas frame.
    n = model.n_points
    params = np.zeros(model.n_params)
    params[0] = scale * math.cos(angle) - 1.0
    params[1] = scale * math.sin(angle)
    params[2] = shift[0] * math.sqrt(n)
    params[3] = shift[1] * math.sqrt(n)
    params[4:] = scale * q
    pose = {"scale": scale, "angle": angle, "tx": float(shift[0]), "ty": float(shift[1])}
    return params, pose


def sample_scenario(model: PointDistributionModel, cfg: ScenarioConfig) -> Scenario:
    """Draw a posed in-span truth shape and render its degraded stack."""
    rng = np.random.default_rng(cfg.seed)
    n = model.n_points

    truth = None
    pose: dict = {}
    params = None
    for _ in range(cfg.max_retries):
        params, pose = _draw_params(model, cfg, rng)
        candidate = generate_shape(model, params)
        if (
            candidate[:, 0].min() >= cfg.margin
            and candidate[:, 1].min() >= cfg.margin
            and candidate[:, 0].max() <= cfg.width - cfg.margin
            and candidate[:, 1].max() <= cfg.height - cfg.margin
        ):
            truth = candidate
            break
    if truth is None:
        raise ShapeFitError("could not place a shape on the canvas; widen the pose ranges")

    n_occluded = int(round(cfg.occluded_fraction * n))
    occluded = np.zeros(n, dtype=bool)
    if n_occluded:
        occluded[rng.choice(n, size=n_occluded, replace=False)] = True

    maps = np.zeros((n, cfg.height, cfg.width))
    for i in range(n):
        if occluded[i]:
            continue
        ideal = render_ideal_map(truth, i, cfg.height, cfg.width, cfg.sigma)
        if cfg.noise_amplitude > 0:
            amp = cfg.noise_amplitude * ideal.max()
            ideal = np.maximum(ideal + rng.uniform(-amp, amp, size=ideal.shape), 0.0)
        maps[i] = ideal
    return Scenario(truth, params, ResponseStack(maps), occluded, pose)


# -- scenario directory ------------------------------------------------------


def save_scenario(scenario: Scenario, directory, cfg: ScenarioConfig | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_pts(directory / "truth.pts", scenario.truth)
    save_stack(scenario.stack, directory / "stack.rspm")
    meta = {
        "format": META_FORMAT,
        "version": META_VERSION,
        "seed": cfg.seed if cfg else None,
        "occluded": [int(i) for i in np.flatnonzero(scenario.occluded)],
        "pose": scenario.pose,
        "truth_params": scenario.truth_params.tolist(),
    }
    if cfg:
        meta["sigma"] = cfg.sigma
        meta["noise_amplitude"] = cfg.noise_amplitude
    atomic_write_text(directory / "meta.json", json.dumps(meta, indent=1, sort_keys=True) + "\n")


def load_scenario(directory) -> Scenario:
    directory = Path(directory)
    truth = read_pts(directory / "truth.pts")
    stack = load_stack(directory / "stack.rspm")
    try:
        with open(directory / "meta.json") as fh:
            meta = json.load(fh)
    except (OSError, ValueError) as exc:
        raise FormatError(f"scenario {directory}: unreadable meta.json") from exc
    if meta.get("format") != META_FORMAT or meta.get("version") != META_VERSION:
        raise FormatError(f"scenario {directory}: unsupported meta format")
    occluded = np.zeros(truth.shape[0], dtype=bool)
    occluded[np.array(meta.get("occluded", []), dtype=int)] = True
    params = np.array(meta.get("truth_params", []), dtype=float)
    return Scenario(truth, params, stack, occluded, meta.get("pose", {}))

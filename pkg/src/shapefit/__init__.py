"""Deformable landmark-shape fitting on per-landmark response maps."""

from .errors import (
    DegenerateShapeError,
    FormatError,
    InitDegenerateError,
    ShapeFitError,
    ZeroEvidenceError,
)
from .fitter import (
    FitConfig,
    FitResult,
    confidence_weight,
    estep_posterior,
    evaluate_q_surrogate,
    fit,
    mean_shift_vector,
    robust_initialize,
    update_params,
)
from .metrics import EvalReport, bbox_scale, build_report, ced_auc, group_distance, nme, occlusion_pr
from .pdm import (
    PointDistributionModel,
    generate_shape,
    load_model,
    prior_penalty,
    project_shape,
    save_model,
    train_pdm,
)
from .response import (
    PatchResponse,
    ResponseStack,
    extract_patch,
    load_stack,
    normalize_patch,
    peak_location,
    render_ideal_map,
    render_ideal_stack,
    save_stack,
)
from .shapes import (
    SimilarityTransform,
    apply_similarity,
    optimal_similarity,
    procrustes_align,
    read_pts,
    write_pts,
)
from .synth import (
    GeneratorSpec,
    Scenario,
    ScenarioConfig,
    make_training_shapes,
    sample_scenario,
)

__version__ = "0.1.0"

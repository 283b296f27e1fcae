"""Command-line front end: train-pdm, synth, fit, eval.

Exit codes: 2 malformed input file, 3 insufficient data, 4 landmark-count
mismatch, 5 degenerate initialization. Output files are written atomically;
stdout carries the human-readable summary and stderr the diagnostics.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import fitter, metrics, pdm, synth
from .errors import FormatError, InitDegenerateError, ShapeFitError
from .response import load_stack
from .shapes import read_pts
from .textio import atomic_write_text

EXIT_BAD_FORMAT = 2
EXIT_INSUFFICIENT_DATA = 3
EXIT_COUNT_MISMATCH = 4
EXIT_INIT_DEGENERATE = 5


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise click.BadParameter(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    raw = raw.strip()
    if "," in raw:
        return key, tuple(int(v) if v.strip().isdigit() else float(v) for v in raw.split(","))
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return key, lowered == "true"
    try:
        return key, int(raw)
    except ValueError:
        pass
    try:
        return key, float(raw)
    except ValueError:
        return key, raw


def _apply_overrides(config, overrides: tuple[str, ...]):
    values = {}
    valid = {f.name for f in dataclasses.fields(config)}
    for text in overrides:
        key, value = _parse_override(text)
        if key not in valid:
            raise click.BadParameter(f"unknown config key {key!r}; valid keys: {sorted(valid)}")
        values[key] = value
    try:
        return dataclasses.replace(config, **values)
    except (TypeError, ValueError) as exc:
        raise click.BadParameter(str(exc))


def _dump_config(config) -> None:
    click.echo(json.dumps(dataclasses.asdict(config), indent=1, sort_keys=True, default=list))


@click.group()
def main():
    """Deformable landmark-shape fitting on response maps."""


@main.command("train-pdm")
@click.argument("shape_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("out_model", type=click.Path(dir_okay=False))
@click.option("--variance-retained", type=float, default=0.95, show_default=True)
@click.option("--components", type=int, default=None, help="Override the retained mode count.")
def cmd_train_pdm(shape_dir, out_model, variance_retained, components):
    """Train a point distribution model from a directory of .pts files."""
    paths = sorted(Path(shape_dir).glob("*.pts"))
    if len(paths) < 2:
        _fail(EXIT_INSUFFICIENT_DATA, f"need at least 2 .pts files in {shape_dir}")
    shapes = []
    for path in paths:
        try:
            shapes.append(read_pts(path))
        except FormatError as exc:
            _fail(EXIT_BAD_FORMAT, str(exc))
    counts = {s.shape[0] for s in shapes}
    if len(counts) != 1:
        offender = next(p for p, s in zip(paths, shapes) if s.shape[0] != shapes[0].shape[0])
        _fail(EXIT_BAD_FORMAT, f"mixed landmark counts {sorted(counts)}; first offender {offender}")
    try:
        model, spectrum = pdm.train_pdm_with_spectrum(
            shapes, variance_retained=variance_retained, n_components=components
        )
    except ValueError as exc:
        _fail(EXIT_INSUFFICIENT_DATA, str(exc))
    pdm.save_model(model, out_model)
    total = float(np.sum(spectrum))
    fraction = float(np.sum(model.eigenvalues)) / total if total > 0 else 1.0
    click.echo(
        f"trained model: n={model.n_points} m={model.n_modes} "
        f"retained_fraction={fraction:.6f} -> {out_model}"
    )


@main.command("synth")
@click.argument("model_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--count", type=int, default=1, show_default=True)
@click.option("--set", "overrides", multiple=True, help="Scenario config override key=value.")
@click.option("--dump-config", is_flag=True, help="Print the effective configuration and exit.")
def cmd_synth(model_path, out_dir, seed, count, overrides, dump_config):
    """Generate ground-truth scenarios (truth.pts, stack.rspm, meta.json)."""
    base = _apply_overrides(synth.ScenarioConfig(seed=seed), overrides)
    if dump_config:
        _dump_config(base)
        return
    try:
        model = pdm.load_model(model_path)
    except FormatError as exc:
        _fail(EXIT_BAD_FORMAT, str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(count):
        cfg = dataclasses.replace(base, seed=seed + k)
        try:
            scenario = synth.sample_scenario(model, cfg)
        except ShapeFitError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        name = f"s{seed + k:05d}"
        synth.save_scenario(scenario, out / name, cfg)
        click.echo(f"wrote scenario {out / name}")


@main.command("fit")
@click.argument("model_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("stack_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_path", type=click.Path(dir_okay=False))
@click.option("--set", "overrides", multiple=True, help="Fit config override key=value.")
@click.option("--trace/--no-trace", default=True, show_default=True)
@click.option("--dump-config", is_flag=True, help="Print the effective configuration and exit.")
def cmd_fit(model_path, stack_path, out_path, overrides, trace, dump_config):
    """Fit a model to one response stack and write the result document."""
    cfg = _apply_overrides(fitter.FitConfig(), overrides)
    if dump_config:
        _dump_config(cfg)
        return
    try:
        model = pdm.load_model(model_path)
        stack = load_stack(stack_path)
    except FormatError as exc:
        _fail(EXIT_BAD_FORMAT, str(exc))
    if stack.n_maps != model.n_points:
        _fail(
            EXIT_COUNT_MISMATCH,
            f"model expects {model.n_points} landmarks, stack holds {stack.n_maps} maps",
        )
    try:
        result = fitter.fit(model, stack, cfg)
    except InitDegenerateError as exc:
        _fail(EXIT_INIT_DEGENERATE, str(exc))
    fitter.save_result(result, out_path, include_trace=trace)
    occluded = int(result.occluded.sum())
    click.echo(
        f"fit: {len(result.trace)} iterations, {occluded} landmarks flagged occluded "
        f"-> {out_path}"
    )


def _collect_truths(truth_dir: Path):
    """Scenario subdirectories (truth.pts + meta.json) or a flat set of .pts."""
    scenario_dirs = sorted(d for d in truth_dir.iterdir() if (d / "truth.pts").is_file())
    if scenario_dirs:
        entries = []
        for d in scenario_dirs:
            scenario = synth.load_scenario(d)
            entries.append((d.name, scenario.truth, scenario.occluded))
        return entries
    entries = []
    for path in sorted(truth_dir.glob("*.pts")):
        entries.append((path.stem, read_pts(path), None))
    return entries


def _load_prediction(pred_dir: Path, name: str):
    for candidate in (pred_dir / f"{name}.json", pred_dir / f"{name}.fit.json"):
        if candidate.is_file():
            result = fitter.load_result(candidate)
            return result.shape, result.weights
    pts = pred_dir / f"{name}.pts"
    if pts.is_file():
        return read_pts(pts), None
    raise FileNotFoundError(f"no prediction named {name} in {pred_dir}")


@main.command("eval")
@click.option("--pred", "pred_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--truth", "truth_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", "out_prefix", type=click.Path(), required=True,
              help="Output prefix; writes <prefix>.report.json, <prefix>.ced.tsv, <prefix>.ced.png")
@click.option("--normalizer", type=click.Choice(["bbox", "groups"]), default="bbox",
              show_default=True)
@click.option("--group-a", default=None, help="Comma-separated landmark indices (first group).")
@click.option("--group-b", default=None, help="Comma-separated landmark indices (second group).")
@click.option("--cutoff", type=float, default=0.08, show_default=True)
@click.option("--plot/--no-plot", default=True, show_default=True)
def cmd_eval(pred_dir, truth_dir, out_prefix, normalizer, group_a, group_b, cutoff, plot):
    """Score predictions against ground truth and emit a report with figures."""
    pred_dir = Path(pred_dir)
    truth_dir = Path(truth_dir)
    if normalizer == "groups" and not (group_a and group_b):
        raise click.BadParameter("--normalizer groups requires --group-a and --group-b")

    try:
        truths = _collect_truths(truth_dir)
    except FormatError as exc:
        _fail(EXIT_BAD_FORMAT, str(exc))
    if not truths:
        _fail(EXIT_INSUFFICIENT_DATA, f"no ground truth found in {truth_dir}")

    preds, weights, truth_shapes, masks, occl = [], [], [], [], []
    for name, truth, occluded in truths:
        try:
            shape, w = _load_prediction(pred_dir, name)
        except FileNotFoundError as exc:
            _fail(EXIT_INSUFFICIENT_DATA, str(exc))
        except FormatError as exc:
            _fail(EXIT_BAD_FORMAT, str(exc))
        if shape.shape[0] != truth.shape[0]:
            _fail(EXIT_COUNT_MISMATCH, f"{name}: prediction and truth landmark counts differ")
        preds.append(shape)
        truth_shapes.append(truth)
        masks.append(None if occluded is None else ~occluded)
        occl.append(occluded)
        weights.append(w)

    if normalizer == "bbox":
        norms = [metrics.bbox_scale(t) for t in truth_shapes]
    else:
        ga = [int(v) for v in group_a.split(",")]
        gb = [int(v) for v in group_b.split(",")]
        norms = [metrics.group_distance(t, ga, gb) for t in truth_shapes]

    have_weights = all(w is not None for w in weights)
    have_occlusion = all(o is not None for o in occl)
    report = metrics.build_report(
        preds,
        truth_shapes,
        norms,
        masks=masks,
        cutoff=cutoff,
        weights=weights if have_weights and have_occlusion else None,
        truth_occluded=occl if have_weights and have_occlusion else None,
    )

    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    metrics.save_report(report, Path(str(prefix) + ".report.json"))
    atomic_write_text(Path(str(prefix) + ".ced.tsv"), metrics.format_ced_table(report.ced))
    if plot:
        from .plotting import save_ced_figure

        save_ced_figure(report, Path(str(prefix) + ".ced.png"))
    click.echo(
        f"evaluated {len(preds)} images: mean NME {report.mean_nme:.6f}, "
        f"AUC {report.auc:.4f}, failure {report.failure_rate:.3f}"
    )
    if report.occlusion_recall is not None:
        click.echo(
            f"occlusion: precision {report.occlusion_precision:.3f} "
            f"recall {report.occlusion_recall:.3f} at threshold {report.occlusion_threshold:.4g}"
        )


if __name__ == "__main__":
    main()

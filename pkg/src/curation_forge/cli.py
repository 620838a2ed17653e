"""curation-forge command line: one subcommand per pipeline stage."""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import analysis, losses, pipeline
from .catalog import RATINGS_HEADER, read_catalog, read_features, read_ratings
from .errors import CurationError, StageError


def _emit(payload: dict, as_json: bool) -> None:
    if as_json:
        click.echo(json.dumps(payload, sort_keys=True))
    else:
        for key, value in payload.items():
            click.echo(f"{key}: {value}")


def _load_value_events(path: str) -> list[tuple[str, str, float]]:
    """Events for analysis: the ratings CSV (raw scores) or worker_id,image_id,value."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is not None and [h.strip() for h in header] == RATINGS_HEADER:
        return [
            (ev.worker_id, ev.image_id, float(ev.score))
            for ev in read_ratings(path)
            if not ev.is_test
        ]
    events = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)  # header
        for row in reader:
            if row:
                events.append((row[0], row[1], float(row[2])))
    return events


def _load_scores_csv(path: str) -> dict[str, float]:
    scores = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row:
                scores[row[0]] = float(row[1])
    return scores


def _load_vector(path: str) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8").replace(",", " ")
    return np.array([float(tok) for tok in text.split()])


@click.group()
def cli():
    """Batch toolkit for indicator-balanced, crowd-rated image datasets."""


# ---------------------------------------------------------------------------
# curation stages


@cli.command("indicators")
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True))
@click.option("--images", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path())
@click.option("--trim-z", type=float, default=None, help="z-score trim threshold (default: no trim)")
@click.option("--json", "as_json", is_flag=True)
def indicators_cmd(catalog_path, images, out, trim_z, as_json):
    """Compute per-image quality indicators, optionally z-score trimmed."""
    params = {"catalog": catalog_path, "images": images, "out": out}
    if trim_z is not None:
        params["trim_z"] = trim_z
    outputs, warnings = pipeline._stage_indicators(params, None, Path("."))
    _emit({"out": str(outputs[0]), "warnings": warnings}, as_json)


@cli.command("sample-tags")
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True))
@click.option("--quota", required=True, help="tag quota, or 'auto' to bisect for the target")
@click.option("--target", required=True, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
def sample_tags_cmd(catalog_path, quota, target, out, as_json):
    """Quota-based tag-coverage pre-sampling of a catalog."""
    quota_val = quota if quota == "auto" else int(quota)
    outputs, warnings = pipeline._stage_sample_tags(
        {"catalog": catalog_path, "quota": quota_val, "target": target, "out": out}, None, Path(".")
    )
    with open(outputs[0], "r", encoding="utf-8") as fh:
        plan = json.load(fh)
    _emit(
        {"out": str(outputs[0]), "quota": plan["quota"], "selected": len(plan["selected_ids"]), "warnings": warnings},
        as_json,
    )


@cli.command("crop")
@click.option("--images", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--faces", type=click.Path(exists=True), default=None, help="JSONL of face boxes per image id")
@click.option("--size", default="1024x768", show_default=True)
@click.option("--border", default=10, show_default=True, type=int)
@click.option("--weights", default="1,1,0.25", show_default=True, help="saliency,face,center weights")
@click.option("--out", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
def crop_cmd(images, faces, size, border, weights, out, as_json):
    """Selectively crop every image to the standard size."""
    params = {
        "images": images,
        "faces": faces,
        "size": size,
        "border": border,
        "weights": [float(v) for v in weights.split(",")],
        "out": out,
    }
    outputs, warnings = pipeline._stage_crop(params, None, Path("."))
    _emit({"cropped": len(outputs), "out": out, "warnings": warnings}, as_json)


@cli.command("features-check")
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--catalog", "catalog_path", type=click.Path(exists=True), default=None)
@click.option("--json", "as_json", is_flag=True)
def features_check_cmd(features_path, catalog_path, as_json):
    """Validate a feature file, optionally against a catalog's ids."""
    vectors = read_features(features_path)
    payload = {
        "count": len(vectors),
        "dim": vectors[0].dim if vectors else 0,
        "finite": bool(all(np.all(np.isfinite(v.values)) for v in vectors)),
    }
    if catalog_path:
        catalog_ids = {r.id for r in read_catalog(catalog_path)}
        unknown = [v.image_id for v in vectors if v.image_id not in catalog_ids]
        payload["unknown_ids"] = len(unknown)
        if unknown:
            raise CurationError(f"{len(unknown)} feature ids missing from catalog, e.g. {unknown[:3]}")
    _emit(payload, as_json)


@cli.command("sample-diverse")
@click.option("--indicators", "indicators_path", required=True, type=click.Path(exists=True))
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--k", default=200, show_default=True, type=int, help="content clusters")
@click.option("--bins", default=200, show_default=True, type=int, help="bins per scalar indicator")
@click.option("--target", required=True, type=int)
@click.option("--mode", type=click.Choice(["exact", "local_search"]), default="local_search", show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--out-clusters", type=click.Path(), default=None)
@click.option("--json", "as_json", is_flag=True)
def sample_diverse_cmd(indicators_path, features_path, k, bins, target, mode, seed, out, out_clusters, as_json):
    """Uniform-histogram diversity sampling over indicators + content."""
    params = {
        "indicators": indicators_path,
        "features": features_path,
        "k": k,
        "bins": bins,
        "target": target,
        "mode": mode,
        "seed": seed,
        "out": out,
        "out_clusters": out_clusters,
    }
    outputs, warnings = pipeline._stage_sample_diverse(params, seed, Path("."))
    with open(outputs[0], "r", encoding="utf-8") as fh:
        plan = json.load(fh)
    _emit({"out": out, "objective": plan["objective"], "selected": len(plan["selected_ids"]), "warnings": warnings}, as_json)


@cli.command("dedup")
@click.option("--indicators", "indicators_path", required=True, type=click.Path(exists=True))
@click.option("--clusters", required=True, type=click.Path(exists=True), help="JSON map image id -> cluster")
@click.option("--plan", type=click.Path(exists=True), default=None, help="restrict to a sampling plan's selection")
@click.option("--remove", required=True, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
def dedup_cmd(indicators_path, clusters, plan, remove, out, as_json):
    """Iteratively remove one member of the closest indicator-space pair."""
    params = {"indicators": indicators_path, "clusters": clusters, "plan": plan, "remove": remove, "out": out}
    outputs, warnings = pipeline._stage_dedup(params, None, Path("."))
    _emit({"out": str(outputs[0]), "removed": remove, "warnings": warnings}, as_json)


@cli.command("ratings")
@click.option("--events", required=True, type=click.Path(exists=True))
@click.option("--questions", type=click.Path(exists=True), default=None)
@click.option("--quiz-acc", default=0.7, show_default=True, type=float)
@click.option("--hidden-acc", default=0.7, show_default=True, type=float)
@click.option("--outlier-plcc", default=0.5, show_default=True, type=float)
@click.option("--lineclick", default=2.0, show_default=True, type=float)
@click.option("--out-mos", required=True, type=click.Path())
@click.option("--out-workers", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
def ratings_cmd(events, questions, quiz_acc, hidden_acc, outlier_plcc, lineclick, out_mos, out_workers, as_json):
    """Filter workers, rescale scores to [1,100], aggregate MOS."""
    params = {
        "events": events,
        "questions": questions,
        "quiz_acc": quiz_acc,
        "hidden_acc": hidden_acc,
        "outlier_plcc": outlier_plcc,
        "lineclick": lineclick,
        "out_mos": out_mos,
        "out_workers": out_workers,
    }
    outputs, warnings = pipeline._stage_ratings(params, None, Path("."))
    _emit({"out_mos": str(outputs[0]), "out_workers": str(outputs[1]), "warnings": warnings}, as_json)


@cli.command("mos")
@click.option("--events", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
def mos_cmd(events, out, as_json):
    """Normalize and aggregate already-filtered events into MOS records."""
    outputs, warnings = pipeline._stage_mos({"events": events, "out": out}, None, Path("."))
    _emit({"out": str(outputs[0]), "warnings": warnings}, as_json)


# ---------------------------------------------------------------------------
# analysis


@cli.group("analyze")
def analyze_grp():
    """Reliability and correlation analyses."""


def _write_json_out(out: str | None, payload: dict, as_json: bool):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
    _emit(payload if as_json or not out else {"out": out}, as_json)


def _plot_curve(path: str, xs, ys, xlabel: str, ylabel: str, hline: float | None = None):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, ys, marker="o")
    if hline is not None:
        ax.axhline(hline, color="red", linestyle="--")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


@analyze_grp.command("agreement")
@click.option("--events", required=True, type=click.Path(exists=True))
@click.option("--max-size", required=True, type=int)
@click.option("--repeats", default=200, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(), default=None)
@click.option("--plot", type=click.Path(), default=None)
@click.option("--json", "as_json", is_flag=True)
def agreement_cmd(events, max_size, repeats, seed, out, plot, as_json):
    """Inter-group SROCC versus group size."""
    curve = analysis.group_agreement_curve(_load_value_events(events), max_size, repeats, seed)
    payload = {
        "repeats": curve.repeats,
        "points": [
            {"group_size": p.group_size, "votes_per_image": p.votes_per_image, "mean_srocc": p.mean_srocc, "ci_half_width": p.ci_half_width}
            for p in curve.points
        ],
    }
    if plot:
        _plot_curve(plot, [p.votes_per_image for p in curve.points], [p.mean_srocc for p in curve.points], "votes per image", "mean SROCC")
        payload["plot"] = plot
    _write_json_out(out, payload, as_json)


@analyze_grp.command("rmse")
@click.option("--events", required=True, type=click.Path(exists=True))
@click.option("--reference", required=True, type=click.Path(exists=True), help="CSV image_id,value")
@click.option("--sizes", default="5,10,20,40", show_default=True)
@click.option("--repeats", default=200, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--without-replacement", is_flag=True)
@click.option("--out", type=click.Path(), default=None)
@click.option("--plot", type=click.Path(), default=None)
@click.option("--json", "as_json", is_flag=True)
def rmse_cmd(events, reference, sizes, repeats, seed, without_replacement, out, plot, as_json):
    """Bootstrap RMSE of subsampled MOS against a reference."""
    curve = analysis.bootstrap_rmse_vs_reference(
        _load_value_events(events),
        _load_scores_csv(reference),
        [int(s) for s in sizes.split(",")],
        repeats,
        seed,
        with_replacement=not without_replacement,
    )
    payload = {
        "points": [
            {"votes": p.votes, "mean_rmse": p.mean_rmse, "ci_low": p.ci_low, "ci_high": p.ci_high} for p in curve
        ]
    }
    if plot:
        _plot_curve(plot, [p.votes for p in curve], [p.mean_rmse for p in curve], "votes per image", "RMSE")
        payload["plot"] = plot
    _write_json_out(out, payload, as_json)


@analyze_grp.command("nmax")
@click.option("--events", required=True, type=click.Path(exists=True))
@click.option("--model-scores", required=True, type=click.Path(exists=True), help="CSV image_id,value")
@click.option("--repeats", default=200, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(), default=None)
@click.option("--plot", type=click.Path(), default=None)
@click.option("--json", "as_json", is_flag=True)
def nmax_cmd(events, model_scores, repeats, seed, out, plot, as_json):
    """Votes-per-image equivalence of a model's predictions."""
    result = analysis.nmax_equivalence(_load_value_events(events), _load_scores_csv(model_scores), repeats, seed)
    payload = {
        "n_max": result.n_max if result.n_max != float("inf") else "inf",
        "model_srocc": result.model_srocc,
        "curve": [
            {"group_size": p.group_size, "votes_per_image": p.votes_per_image, "mean_srocc": p.mean_srocc} for p in result.curve
        ],
    }
    if plot:
        _plot_curve(
            plot,
            [p.votes_per_image for p in result.curve],
            [p.mean_srocc for p in result.curve],
            "votes per image",
            "mean SROCC",
            hline=result.model_srocc,
        )
        payload["plot"] = plot
    _write_json_out(out, payload, as_json)


@analyze_grp.command("icc")
@click.option("--events", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None)
@click.option("--json", "as_json", is_flag=True)
def icc_cmd(events, out, as_json):
    """One-way random, single-measure intra-class correlation."""
    value = analysis.icc(_load_value_events(events))
    _write_json_out(out, {"icc": value}, as_json)


@analyze_grp.command("fit")
@click.option("--points", required=True, type=click.Path(exists=True), help="CSV size,srocc")
@click.option("--repeats", default=200, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(), default=None)
@click.option("--plot", type=click.Path(), default=None)
@click.option("--json", "as_json", is_flag=True)
def analyze_fit_cmd(points, repeats, seed, out, plot, as_json):
    """Fit the two-parameter saturating curve to (size, srocc) points."""
    pts = []
    with open(points, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row:
                pts.append((float(row[0]), float(row[1])))
    result = analysis.fit_extrapolation(pts, repeats=repeats, seed=seed)
    payload = {
        "a": result.a,
        "b": result.b,
        "residual": result.residual,
        "ci_a": list(result.ci_a),
        "ci_b": list(result.ci_b),
    }
    if plot:
        xs = np.linspace(min(p[0] for p in pts), max(p[0] for p in pts) * 1.5, 200)
        _plot_curve(plot, xs, result.predict(xs), "training size", "SROCC")
        payload["plot"] = plot
    _write_json_out(out, payload, as_json)


cli.add_command(analyze_fit_cmd, name="fit")


# ---------------------------------------------------------------------------
# losses


@cli.group("losses")
def losses_grp():
    """Evaluate the loss/metric family from the command line."""


@losses_grp.command("eval")
@click.option("--loss", required=True, type=click.Choice(["mae", "mse", "cross-entropy", "huber", "emd", "mos"]))
@click.option("--p", "p_path", required=True, type=click.Path(exists=True))
@click.option("--phat", "phat_path", type=click.Path(exists=True), default=None)
@click.option("--delta", default=losses.HUBER_DELTA_DEFAULT, show_default=True, type=float)
@click.option("--grad", is_flag=True, help="also print the gradient w.r.t. the prediction")
@click.option("--json", "as_json", is_flag=True)
def losses_eval_cmd(loss, p_path, phat_path, delta, grad, as_json):
    """Evaluate a loss on distributions (or scalars) read from CSV."""
    p = _load_vector(p_path)
    if loss == "mos":
        _emit({"loss": loss, "value": losses.mos_of_distribution(p)}, as_json)
        return
    if phat_path is None:
        raise click.UsageError("--phat is required for paired losses")
    ph = _load_vector(phat_path)
    payload: dict = {"loss": loss}
    if loss == "mae":
        payload["value"] = losses.mae(float(p[0]), float(ph[0]))
        if grad:
            payload["grad"] = losses.mae_grad(float(p[0]), float(ph[0]))
    elif loss == "mse":
        payload["value"] = losses.mse(float(p[0]), float(ph[0]))
        if grad:
            payload["grad"] = losses.mse_grad(float(p[0]), float(ph[0]))
    elif loss == "cross-entropy":
        payload["value"] = losses.cross_entropy(p, ph)
        if grad:
            payload["grad"] = losses.cross_entropy_grad(p, ph).tolist()
    elif loss == "huber":
        payload["value"] = losses.huber_distribution(p, ph, delta)
        if grad:
            payload["grad"] = losses.huber_distribution_grad(p, ph, delta).tolist()
    elif loss == "emd":
        payload["value"] = losses.emd(p, ph)
        if grad:
            payload["grad"] = losses.emd_grad(p, ph).tolist()
    _emit(payload, as_json)


# ---------------------------------------------------------------------------
# pipeline runner


@cli.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--manifests", type=click.Path(), default=None, help="directory for stage manifests")
@click.option("--json", "as_json", is_flag=True)
def run_cmd(config_path, manifests, as_json):
    """Run a declarative multi-stage pipeline from a TOML config."""
    config = pipeline.load_config(config_path)
    base = Path(config_path).parent
    manifest_dir = manifests or (base / "manifests")
    results = pipeline.run_pipeline(config, base_dir=base, manifest_dir=manifest_dir)
    payload = {
        "stages": [m.stage for m in results],
        "manifests": str(manifest_dir),
    }
    _emit(payload, as_json)


def main():
    try:
        cli(standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except StageError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    except CurationError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()

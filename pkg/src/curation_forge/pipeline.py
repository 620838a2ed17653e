"""Pipeline orchestration: declarative stage lists, manifests, determinism.

A run is a TOML document with a global seed and a ``[[stage]]`` table per
step. Stages execute in file order; every stage emits a manifest with
input/output content digests, parameters, warnings, and wall time, so a
multi-week curation run stays auditable and any stage can be reproduced
in isolation. All randomized stages consume explicit seeds; two runs of
the same config produce byte-identical outputs.
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np
from PIL import Image

from . import catalog as cat
from . import diversity, indicators, ratings, tag_sampler
from .errors import CurationError, StageError


@dataclass
class RunManifest:
    stage: str
    kind: str
    parameters: dict
    seed: int | None
    input_digests: dict[str, str]
    output_paths: list[str]
    output_digests: dict[str, str]
    warnings: list[str] = field(default_factory=list)
    wall_time_s: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "stage": self.stage,
            "kind": self.kind,
            "parameters": self.parameters,
            "seed": self.seed,
            "input_digests": self.input_digests,
            "output_paths": self.output_paths,
            "output_digests": self.output_digests,
            "warnings": self.warnings,
            "wall_time_s": self.wall_time_s,
        }


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_raster(path: Path) -> tuple[np.ndarray, int]:
    """Decode an image to an H x W x 3 raster in [0, 1] plus its byte size."""
    with Image.open(path) as img:
        raster = np.asarray(img.convert("RGB"), dtype=float) / 255.0
    return raster, path.stat().st_size


def _find_image(images_dir: Path, image_id: str) -> Path | None:
    hits = sorted(p for p in images_dir.glob(f"{image_id}.*") if p.is_file())
    return hits[0] if hits else None


# ---------------------------------------------------------------------------
# stage implementations


def _stage_indicators(params: dict, seed: int | None, base: Path) -> tuple[list[Path], list[str]]:
    images_dir = base / params["images"]
    out = base / params["out"]
    warnings: list[str] = []
    vectors = []
    for rec in cat.read_catalog(base / params["catalog"]):
        path = _find_image(images_dir, rec.id)
        if path is None:
            warnings.append(f"no image file for id {rec.id!r}; skipped")
            continue
        raster, byte_size = load_raster(path)
        quality = indicators.estimate_jpeg_quality(path.read_bytes())
        vectors.append(indicators.compute_indicators(rec.id, raster, byte_size, jpeg_quality=quality))
    trim_z = params.get("trim_z")
    if trim_z is not None and len(vectors) >= 2:
        vectors, stats = indicators.trim_by_zscore(vectors, float(trim_z))
        for dim in stats.skipped:
            warnings.append(f"dimension {dim!r} constant or absent; excluded from trimming")
    out.parent.mkdir(parents=True, exist_ok=True)
    indicators.write_indicators(out, vectors)
    return [out], warnings


def _stage_sample_tags(params: dict, seed: int | None, base: Path) -> tuple[list[Path], list[str]]:
    records = cat.read_catalog(base / params["catalog"])
    target = int(params["target"])
    quota = params["quota"]
    if isinstance(quota, str) and quota == "auto":
        quota = tag_sampler.find_quota(records, target)
    plan = tag_sampler.sample_by_tags(records, int(quota), target)
    out = base / params["out"]
    _dump_json(out, plan.to_json_dict())
    warnings = []
    if plan.untagged_count:
        warnings.append(f"{plan.untagged_count} untagged images can never be selected")
    return [out], warnings


def _stage_crop(params: dict, seed: int | None, base: Path) -> tuple[list[Path], list[str]]:
    from . import cropper

    images_dir = base / params["images"]
    out_dir = base / params["out"]
    out_dir.mkdir(parents=True, exist_ok=True)
    w, h = (int(v) for v in str(params.get("size", "1024x768")).split("x"))
    border = int(params.get("border", cropper.DEFAULT_BORDER))
    weights = tuple(params.get("weights", cropper.DEFAULT_WEIGHTS))
    faces: dict[str, list] = {}
    if params.get("faces"):
        with open(base / params["faces"], "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    faces[d["image_id"]] = [tuple(b) for b in d.get("boxes", [])]
    warnings, outputs = [], []
    for path in sorted(p for p in images_dir.iterdir() if p.is_file()):
        with Image.open(path) as img:
            img = img.convert("RGB")
            if img.width < w or img.height < h:
                warnings.append(f"{path.name}: smaller than crop {w}x{h}; skipped")
                continue
            scale = max(w / img.width, h / img.height)
            if scale < 1.0:
                new_size = (max(w, round(img.width * scale)), max(h, round(img.height * scale)))
                sx, sy = new_size[0] / img.width, new_size[1] / img.height
                img = img.resize(new_size, Image.LANCZOS)
            else:
                sx = sy = 1.0
            boxes = []
            for bx, by, bw, bh in faces.get(path.stem, []):
                bx, by = int(bx * sx), int(by * sy)
                bw = max(1, min(int(bw * sx), img.width - bx))
                bh = max(1, min(int(bh * sy), img.height - by))
                boxes.append((bx, by, bw, bh))
            raster = np.asarray(img, dtype=float) / 255.0
            win = cropper.selective_crop_box(raster, boxes, size=(w, h), border=border, weights=weights)
            out_path = out_dir / path.name
            img.crop((win.x, win.y, win.x + w, win.y + h)).save(out_path)
            outputs.append(out_path)
    return outputs, warnings


def _stage_sample_diverse(params: dict, seed: int | None, base: Path) -> tuple[list[Path], list[str]]:
    vectors = indicators.read_indicators(base / params["indicators"])
    features = {f.image_id: f for f in cat.read_features(base / params["features"])}
    missing = [v.image_id for v in vectors if v.image_id not in features]
    if missing:
        raise CurationError(f"features missing for {len(missing)} images, e.g. {missing[:3]}")
    feats = [features[v.image_id] for v in vectors]
    k = int(params.get("k", 200))
    n_bins = int(params.get("bins", 200))
    stage_seed = int(params.get("seed", seed if seed is not None else 0))
    codebook = diversity.fit_codebook(feats, k=k, seed=stage_seed)
    clusters = [diversity.assign(codebook, f) for f in feats]
    dims = diversity.usable_dims(vectors)
    bins = diversity.quantize_indicators(vectors, n_bins, dims=dims)
    plan = diversity.sample_uniform(
        [v.image_id for v in vectors],
        bins,
        clusters,
        n_bins=n_bins,
        n_clusters=k,
        target=int(params["target"]),
        mode=params.get("mode", "local_search"),
        seed=stage_seed,
        dim_names=dims,
    )
    out = base / params["out"]
    _dump_json(out, plan.to_json_dict())
    outputs = [out]
    if params.get("out_clusters"):
        cl_out = base / params["out_clusters"]
        _dump_json(cl_out, {v.image_id: int(c) for v, c in zip(vectors, clusters)})
        outputs.append(cl_out)
    warnings = []
    dropped = [d for d in indicators.SCALAR_DIMS if d not in dims]
    if dropped:
        warnings.append(f"dimensions not present on all images, excluded: {dropped}")
    return outputs, warnings


def _stage_dedup(params: dict, seed: int | None, base: Path) -> tuple[list[Path], list[str]]:
    vectors = indicators.read_indicators(base / params["indicators"])
    with open(base / params["clusters"], "r", encoding="utf-8") as fh:
        cluster_of = json.load(fh)
    if params.get("plan"):
        with open(base / params["plan"], "r", encoding="utf-8") as fh:
            subset = set(json.load(fh)["selected_ids"])
        vectors = [v for v in vectors if v.image_id in subset]
    clusters = [int(cluster_of[v.image_id]) for v in vectors]
    removed = diversity.dedup(vectors, int(params["remove"]), clusters=clusters)
    removed_set = set(removed)
    out = base / params["out"]
    _dump_json(
        out,
        {
            "removed": removed,
            "survivor_ids": [v.image_id for v in vectors if v.image_id not in removed_set],
        },
    )
    return [out], []


def _stage_ratings(params: dict, seed: int | None, base: Path) -> tuple[list[Path], list[str]]:
    events = cat.read_ratings(base / params["events"])
    questions: list[ratings.TestQuestion] = []
    if params.get("questions"):
        with open(base / params["questions"], "r", encoding="utf-8") as fh:
            for d in json.load(fh):
                questions.append(
                    ratings.TestQuestion(
                        image_id=d["image_id"],
                        expert_mos=float(d["expert_mos"]),
                        expert_sd=float(d["expert_sd"]),
                        allowed_answers=frozenset(int(a) for a in d["allowed_answers"]),
                    )
                )
    thr = ratings.FilterThresholds(
        quiz_accuracy=float(params.get("quiz_acc", ratings.QUIZ_ACCURACY_DEFAULT)),
        hidden_accuracy=float(params.get("hidden_acc", ratings.HIDDEN_ACCURACY_DEFAULT)),
        outlier_plcc=float(params.get("outlier_plcc", ratings.OUTLIER_PLCC_DEFAULT)),
        lineclick_ratio=float(params.get("lineclick", ratings.LINECLICK_RATIO_DEFAULT)),
    )
    stats, surviving = ratings.filter_workers(events, questions, thr)
    normalized = ratings.normalize_scores(surviving)
    records = ratings.compute_mos(normalized)
    out_mos = base / params["out_mos"]
    out_workers = base / params["out_workers"]
    ratings.write_mos_records(out_mos, records)
    ratings.write_worker_stats(out_workers, stats)
    return [out_mos, out_workers], []


def _stage_mos(params: dict, seed: int | None, base: Path) -> tuple[list[Path], list[str]]:
    events = cat.read_ratings(base / params["events"])
    normalized = ratings.normalize_scores([ev for ev in events if not ev.is_test])
    records = ratings.compute_mos(normalized)
    out = base / params["out"]
    ratings.write_mos_records(out, records)
    return [out], []


_STAGES: dict[str, tuple[Callable, tuple[str, ...], tuple[str, ...], tuple[str, ...]]] = {
    # kind: (runner, required params, input path params, output path params)
    "indicators": (_stage_indicators, ("catalog", "images", "out"), ("catalog",), ("out",)),
    "sample-tags": (_stage_sample_tags, ("catalog", "quota", "target", "out"), ("catalog",), ("out",)),
    "crop": (_stage_crop, ("images", "out"), (), ()),
    "sample-diverse": (
        _stage_sample_diverse,
        ("indicators", "features", "target", "out"),
        ("indicators", "features"),
        ("out", "out_clusters"),
    ),
    "dedup": (_stage_dedup, ("indicators", "clusters", "remove", "out"), ("indicators", "clusters", "plan"), ("out",)),
    "ratings": (_stage_ratings, ("events", "out_mos", "out_workers"), ("events", "questions"), ("out_mos", "out_workers")),
    "mos": (_stage_mos, ("events", "out"), ("events",), ("out",)),
}


def load_config(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def run_pipeline(config: dict, base_dir: str | Path = ".", manifest_dir: str | Path | None = None) -> list[RunManifest]:
    """Execute the configured stages in order, emitting one manifest each.

    Pre-flight validates every stage kind and every input path that is
    not produced by an earlier stage; nothing runs if validation fails.
    """
    base = Path(base_dir)
    stages = config.get("stage", [])
    global_seed = config.get("seed")

    produced: set[Path] = set()
    for idx, stage_cfg in enumerate(stages):
        kind = stage_cfg.get("kind")
        if kind not in _STAGES:
            raise CurationError(f"stage {idx}: unknown kind {kind!r}")
        _, required_keys, input_keys, output_keys = _STAGES[kind]
        missing = [key for key in required_keys if not stage_cfg.get(key)]
        if missing:
            raise CurationError(f"stage {idx} ({kind}): missing parameters {missing}")
        for key in input_keys:
            if key not in stage_cfg or not stage_cfg[key]:
                continue
            path = base / stage_cfg[key]
            if path not in produced and not path.exists():
                raise CurationError(f"stage {idx} ({kind}): input {str(path)!r} does not exist")
        for key in output_keys:
            if stage_cfg.get(key):
                produced.add(base / stage_cfg[key])
        if kind == "indicators" and not (base / stage_cfg["images"]).is_dir():
            raise CurationError(f"stage {idx} (indicators): images dir {stage_cfg['images']!r} does not exist")

    manifests: list[RunManifest] = []
    for idx, stage_cfg in enumerate(stages):
        kind = stage_cfg["kind"]
        name = stage_cfg.get("name", f"{idx:02d}-{kind}")
        runner, _, input_keys, _ = _STAGES[kind]
        seed = stage_cfg.get("seed", global_seed)
        inputs = {}
        for key in input_keys:
            if stage_cfg.get(key):
                path = base / stage_cfg[key]
                if path.is_file():
                    inputs[str(path)] = sha256_file(path)
        started = time.monotonic()
        try:
            outputs, warnings = runner(dict(stage_cfg), seed, base)
        except CurationError as exc:
            raise StageError(name, str(exc)) from exc
        except Exception as exc:  # decode errors, IO, etc.
            raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        manifest = RunManifest(
            stage=name,
            kind=kind,
            parameters={k: v for k, v in stage_cfg.items() if k not in ("kind", "name")},
            seed=seed,
            input_digests=inputs,
            output_paths=[str(p) for p in outputs],
            output_digests={str(p): sha256_file(p) for p in outputs if Path(p).is_file()},
            warnings=warnings,
            wall_time_s=time.monotonic() - started,
        )
        manifests.append(manifest)
        if manifest_dir is not None:
            _dump_json(Path(manifest_dir) / f"{name}.json", manifest.to_json_dict())
    return manifests

"""Pipeline orchestration, manifests, determinism, and CLI surfaces."""

import json
import subprocess
import sys

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from curation_forge.catalog import (
    FeatureVector,
    ImageRecord,
    RatingEvent,
    write_catalog,
    write_features,
)
from curation_forge.cli import cli
from curation_forge.errors import CurationError, StageError
from curation_forge.pipeline import load_config, run_pipeline, sha256_file

N_IMAGES = 20


def build_image_fixture(root, n_images=N_IMAGES, seed=99):
    """A small catalog of decodable JPEGs plus matching feature vectors."""
    rng = np.random.default_rng(seed)
    images_dir = root / "images"
    images_dir.mkdir(parents=True)
    records = []
    for i in range(n_images):
        ident = f"img{i:03d}"
        w, h = int(rng.integers(48, 96)), int(rng.integers(48, 96))
        base = rng.integers(0, 256, (h, w, 3)).astype(np.uint8)
        yy = np.linspace(0, 255 * (i + 1) / n_images, h)[:, None, None]
        pixels = np.clip(base * 0.5 + yy, 0, 255).astype(np.uint8)
        path = images_dir / f"{ident}.jpg"
        Image.fromarray(pixels).save(path, format="JPEG", quality=int(rng.integers(30, 96)))
        records.append(
            ImageRecord(id=ident, uri=path.name, width=w, height=h, byte_size=path.stat().st_size)
        )
    write_catalog(root / "catalog.jsonl", records)
    vectors = [FeatureVector(r.id, rng.normal(size=8).astype(np.float32)) for r in records]
    write_features(root / "features.bin", vectors)


PIPELINE_TOML = """
seed = 4242

[[stage]]
kind = "indicators"
catalog = "catalog.jsonl"
images = "images"
out = "out/indicators.jsonl"
trim_z = 3.0

[[stage]]
kind = "sample-diverse"
indicators = "out/indicators.jsonl"
features = "features.bin"
k = 3
bins = 4
target = 10
out = "out/plan.json"
out_clusters = "out/clusters.json"

[[stage]]
kind = "dedup"
indicators = "out/indicators.jsonl"
clusters = "out/clusters.json"
plan = "out/plan.json"
remove = 3
out = "out/dedup.json"
"""


class TestRunPipeline:
    def test_empty_stage_list(self, tmp_path):
        assert run_pipeline({"stage": []}, base_dir=tmp_path) == []

    def test_two_runs_are_byte_identical(self, tmp_path):
        build_image_fixture(tmp_path)
        (tmp_path / "pipeline.toml").write_text(PIPELINE_TOML)
        config = load_config(tmp_path / "pipeline.toml")
        outputs = [
            tmp_path / "out" / name
            for name in ("indicators.jsonl", "plan.json", "clusters.json", "dedup.json")
        ]
        run_pipeline(config, base_dir=tmp_path)
        first = {p.name: sha256_file(p) for p in outputs}
        run_pipeline(config, base_dir=tmp_path)
        second = {p.name: sha256_file(p) for p in outputs}
        assert first == second

        with open(tmp_path / "out" / "plan.json") as fh:
            plan = json.load(fh)
        assert len(plan["selected_ids"]) == 10
        with open(tmp_path / "out" / "dedup.json") as fh:
            dd = json.load(fh)
        assert len(dd["removed"]) == 3
        assert len(dd["survivor_ids"]) == 7

    def test_missing_input_fails_preflight(self, tmp_path):
        config = {
            "stage": [
                {"kind": "sample-tags", "catalog": "nope.jsonl", "quota": 3, "target": 1, "out": "p.json"}
            ]
        }
        with pytest.raises(CurationError, match="does not exist"):
            run_pipeline(config, base_dir=tmp_path)
        assert not (tmp_path / "p.json").exists()

    def test_later_stage_may_consume_earlier_output(self, tmp_path):
        build_image_fixture(tmp_path, n_images=6)
        config = {
            "seed": 1,
            "stage": [
                {"kind": "indicators", "catalog": "catalog.jsonl", "images": "images", "out": "ind.jsonl"},
                {
                    "kind": "sample-diverse",
                    "indicators": "ind.jsonl",
                    "features": "features.bin",
                    "k": 2,
                    "bins": 2,
                    "target": 4,
                    "out": "plan.json",
                    "out_clusters": "clusters.json",
                },
            ],
        }
        manifests = run_pipeline(config, base_dir=tmp_path, manifest_dir=tmp_path / "manifests")
        assert [m.kind for m in manifests] == ["indicators", "sample-diverse"]
        assert (tmp_path / "manifests" / "00-indicators.json").exists()
        assert all(m.output_digests for m in manifests)

    def test_unknown_stage_kind(self, tmp_path):
        with pytest.raises(CurationError, match="unknown kind"):
            run_pipeline({"stage": [{"kind": "frobnicate"}]}, base_dir=tmp_path)

    def test_missing_parameter_fails_preflight(self, tmp_path):
        config = {"stage": [{"kind": "mos", "events": "e.csv"}]}  # no out
        with pytest.raises(CurationError, match="missing parameters"):
            run_pipeline(config, base_dir=tmp_path)

    def test_crop_stage_keeps_face_and_skips_small(self, tmp_path):
        rng = np.random.default_rng(0)
        imgs = tmp_path / "imgs"
        imgs.mkdir()
        pixels = (rng.random((150, 200, 3)) * 40).astype(np.uint8)
        pixels[100:140, 150:190] = 230  # bright block aligned with the face box
        Image.fromarray(pixels).save(imgs / "face.png")
        Image.fromarray((rng.random((40, 40, 3)) * 255).astype(np.uint8)).save(imgs / "small.png")
        (tmp_path / "faces.jsonl").write_text(
            json.dumps({"image_id": "face", "boxes": [[150, 100, 40, 40]]}) + "\n"
        )
        config = {
            "stage": [
                {
                    "kind": "crop",
                    "images": "imgs",
                    "faces": "faces.jsonl",
                    "size": "96x72",
                    "border": 4,
                    "out": "cropped",
                }
            ]
        }
        [manifest] = run_pipeline(config, base_dir=tmp_path)
        assert any("small.png" in w for w in manifest.warnings)
        with Image.open(tmp_path / "cropped" / "face.png") as out:
            assert out.size == (96, 72)
            # the off-center face region survives the crop
            assert np.asarray(out).max() >= 220

    def test_stage_failure_names_stage(self, tmp_path):
        build_image_fixture(tmp_path, n_images=4)
        config = {
            "stage": [
                {
                    "kind": "sample-diverse",
                    "name": "diverse",
                    "indicators": "catalog.jsonl",  # wrong schema: fails inside the stage
                    "features": "features.bin",
                    "k": 2,
                    "bins": 2,
                    "target": 2,
                    "out": "plan.json",
                }
            ]
        }
        with pytest.raises(StageError, match="diverse"):
            run_pipeline(config, base_dir=tmp_path)


class TestCli:
    def test_indicators_and_sample_tags(self, tmp_path):
        build_image_fixture(tmp_path, n_images=8)
        runner = CliRunner()
        result = runner.invoke(
            cli,
            [
                "indicators",
                "--catalog", str(tmp_path / "catalog.jsonl"),
                "--images", str(tmp_path / "images"),
                "--out", str(tmp_path / "ind.jsonl"),
                "--trim-z", "3.0",
                "--json",
            ],
        )
        assert result.exit_code == 0, result.output
        assert (tmp_path / "ind.jsonl").exists()

    def test_losses_eval(self, tmp_path):
        (tmp_path / "p.csv").write_text("1,0,0,0,0\n")
        (tmp_path / "q.csv").write_text("0,1,0,0,0\n")
        runner = CliRunner()
        result = runner.invoke(
            cli,
            ["losses", "eval", "--loss", "emd", "--p", str(tmp_path / "p.csv"), "--phat", str(tmp_path / "q.csv"), "--json"],
        )
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output)
        assert payload["value"] == pytest.approx((1 / 5) ** 0.5)

    def test_analyze_fit_and_alias(self, tmp_path):
        lines = ["size,srocc"] + [f"{x},{1 - 1/(x**0.5 + 2):.6f}" for x in range(1000, 8000, 1000)]
        (tmp_path / "points.csv").write_text("\n".join(lines) + "\n")
        runner = CliRunner()
        for args in (["analyze", "fit"], ["fit"]):
            result = runner.invoke(
                cli,
                args + ["--points", str(tmp_path / "points.csv"), "--repeats", "0", "--json"],
            )
            assert result.exit_code == 0, result.output
            payload = json.loads(result.output)
            assert payload["a"] == pytest.approx(0.5, rel=0.05)

    def test_features_check(self, tmp_path):
        write_features(tmp_path / "f.bin", [FeatureVector("a", np.ones(4, np.float32))])
        runner = CliRunner()
        result = runner.invoke(cli, ["features-check", "--features", str(tmp_path / "f.bin"), "--json"])
        assert result.exit_code == 0
        assert json.loads(result.output) == {"count": 1, "dim": 4, "finite": True}

    def test_analyze_emits_plot_and_json(self, tmp_path):
        rows = ["worker_id,image_id,value"]
        rng = np.random.default_rng(2)
        for w in range(8):
            for i in range(6):
                rows.append(f"w{w},i{i},{10 * i + rng.normal():.4f}")
        (tmp_path / "events.csv").write_text("\n".join(rows) + "\n")
        runner = CliRunner()
        result = runner.invoke(
            cli,
            [
                "analyze", "agreement",
                "--events", str(tmp_path / "events.csv"),
                "--max-size", "2",
                "--repeats", "10",
                "--seed", "0",
                "--out", str(tmp_path / "curve.json"),
                "--plot", str(tmp_path / "curve.png"),
            ],
        )
        assert result.exit_code == 0, result.output
        assert (tmp_path / "curve.png").read_bytes().startswith(b"\x89PNG")
        with open(tmp_path / "curve.json") as fh:
            payload = json.load(fh)
        assert payload["points"]

    def test_mos_and_analyze_wrappers(self, tmp_path):
        rows = ["worker_id,image_id,value"]
        rng = np.random.default_rng(3)
        truth = {f"i{k}": 10.0 * k for k in range(8)}
        for w in range(10):
            for img, t in truth.items():
                rows.append(f"w{w},{img},{t + rng.normal(0, 4):.4f}")
        (tmp_path / "events.csv").write_text("\n".join(rows) + "\n")
        (tmp_path / "ref.csv").write_text(
            "image_id,value\n" + "\n".join(f"{img},{t}" for img, t in truth.items()) + "\n"
        )
        runner = CliRunner()
        result = runner.invoke(
            cli,
            ["analyze", "rmse", "--events", str(tmp_path / "events.csv"), "--reference", str(tmp_path / "ref.csv"),
             "--sizes", "2,5", "--repeats", "20", "--seed", "1", "--json"],
        )
        assert result.exit_code == 0, result.output
        points = json.loads(result.output)["points"]
        assert points[0]["mean_rmse"] > points[1]["mean_rmse"]

        result = runner.invoke(
            cli,
            ["analyze", "nmax", "--events", str(tmp_path / "events.csv"), "--model-scores", str(tmp_path / "ref.csv"),
             "--repeats", "10", "--seed", "1", "--json"],
        )
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["n_max"] == "inf"

        result = runner.invoke(
            cli, ["analyze", "icc", "--events", str(tmp_path / "events.csv"), "--json"]
        )
        assert result.exit_code == 0, result.output
        assert 0.0 < json.loads(result.output)["icc"] <= 1.0

        from curation_forge.catalog import write_ratings

        write_ratings(
            tmp_path / "raw.csv",
            [RatingEvent(f"w{w}", f"i{k}", 1 + (w + k) % 5) for w in range(4) for k in range(6)],
        )
        result = runner.invoke(
            cli, ["mos", "--events", str(tmp_path / "raw.csv"), "--out", str(tmp_path / "mos.csv"), "--json"]
        )
        assert result.exit_code == 0, result.output
        assert (tmp_path / "mos.csv").read_text().count("\n") == 7  # header + 6 images

    def test_ratings_cli(self, tmp_path, population):
        from curation_forge.catalog import write_ratings

        write_ratings(tmp_path / "events.csv", population.events)
        runner = CliRunner()
        result = runner.invoke(
            cli,
            [
                "ratings",
                "--events", str(tmp_path / "events.csv"),
                "--out-mos", str(tmp_path / "mos.csv"),
                "--out-workers", str(tmp_path / "workers.csv"),
            ],
        )
        assert result.exit_code == 0, result.output
        workers_text = (tmp_path / "workers.csv").read_text()
        assert "kept" in workers_text
        assert (tmp_path / "mos.csv").read_text().startswith("image_id,mos,vote_count,sd,n1,n2,n3,n4,n5")


class TestConsoleScript:
    def run_script(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "curation_forge.cli", *args],
            capture_output=True,
            text=True,
        )

    def test_help_exits_zero(self):
        proc = self.run_script("--help")
        assert proc.returncode == 0
        assert "indicators" in proc.stdout

    def test_validation_error_exits_two(self, tmp_path):
        bad = tmp_path / "config.toml"
        bad.write_text('[[stage]]\nkind = "sample-tags"\ncatalog = "missing.jsonl"\nquota = 1\ntarget = 1\nout = "x.json"\n')
        proc = self.run_script("run", "--config", str(bad))
        assert proc.returncode == 2
        assert "does not exist" in proc.stderr

    def test_stage_failure_exits_three(self, tmp_path):
        build_image_fixture(tmp_path, n_images=4)
        cfg = tmp_path / "config.toml"
        cfg.write_text(
            '[[stage]]\nkind = "sample-diverse"\nname = "boom"\nindicators = "catalog.jsonl"\n'
            'features = "features.bin"\nk = 2\nbins = 2\ntarget = 2\nout = "plan.json"\n'
        )
        proc = self.run_script("run", "--config", str(cfg))
        assert proc.returncode == 3
        assert "boom" in proc.stderr

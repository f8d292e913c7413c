"""End-to-end command line behavior on a miniature dataset."""

from __future__ import annotations

import json

import numpy as np
import pytest

from fieldgraph.cli import build_parser, main
from fieldgraph.gcn_core import load_checkpoint
from fieldgraph.graph_build import load_graph
from fieldgraph.train import read_history_jsonl


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> build-graph -> train on 6 tiny fields (4/1/1 split)."""
    root = tmp_path_factory.mktemp("cli")
    synth_dir = root / "data"
    graph_dir = root / "graphs"
    run_dir = root / "run"
    assert main(
        [
            "synth",
            "--out", str(synth_dir),
            "--n-fields", "6",
            "--width", "64",
            "--height", "64",
            "--split", "0.5", "0.25", "0.25",
            "--zero-dropout", "0.0",
            "--seed", "3",
        ]
    ) == 0
    assert main(
        [
            "build-graph",
            "--manifest", str(synth_dir / "manifest.json"),
            "--out", str(graph_dir),
            "--k", "16",
            "--nodes", "24",
            "--max-iter", "3",
        ]
    ) == 0
    assert main(
        [
            "train",
            "--manifest", str(graph_dir / "manifest.json"),
            "--out", str(run_dir),
            "--epochs", "3",
            "--batch-size", "2",
        ]
    ) == 0
    return synth_dir, graph_dir, run_dir


class TestParser:
    def test_defaults_frozen(self):
        parser = build_parser()
        pb = parser.parse_args(["build-graph", "--manifest", "m", "--out", "o"])
        assert (pb.k, pb.nodes, pb.compactness, pb.max_iter, pb.bins) == (
            400, 400, 30.0, 10, 8,
        )
        pt = parser.parse_args(["train", "--manifest", "m", "--out", "o"])
        assert (pt.batch_size, pt.epochs, pt.lr) == (32, 200, 1e-3)
        assert (pt.patience, pt.factor, pt.lr_min, pt.l2) == (10, 0.1, 1e-6, 0.01)
        pe = parser.parse_args(["evaluate", "--checkpoint", "c", "--manifest", "m"])
        assert (pe.split, pe.threshold) == ("test", 0.4)
        ps = parser.parse_args(["synth", "--out", "o"])
        assert (ps.n_fields, ps.width, ps.zero_dropout) == (317, 512, 0.1)
        assert ps.split == [0.7, 0.15, 0.15]
        pm = parser.parse_args(["benchmark"])
        assert (pm.nodes, pm.reps, pm.warmup, pm.dtype) == (400, 1000, 50, "float32")

    def test_no_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["transmogrify"])
        assert exc.value.code == 2


class TestSynthCommand:
    def test_outputs(self, workspace):
        synth_dir, _, _ = workspace
        doc = json.loads((synth_dir / "manifest.json").read_text())
        assert doc["kind"] == "synth" and doc["schema_version"] == 1
        assert len(doc["fields"]) == 6
        splits = [f["split"] for f in doc["fields"]]
        assert splits.count("train") == 4
        assert splits.count("val") == 1 and splits.count("test") == 1
        for f in doc["fields"]:
            assert (synth_dir / f["image"]).exists()
            assert (synth_dir / f["mask"]).exists()

    def test_deterministic(self, tmp_path):
        args = [
            "synth", "--n-fields", "2", "--width", "64", "--height", "64",
            "--split", "0.5", "0.5", "0.0", "--seed", "11",
        ]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        for name in ("manifest.json", "images/field_0000.png"):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes()


class TestBuildGraphCommand:
    def test_outputs(self, workspace):
        _, graph_dir, _ = workspace
        doc = json.loads((graph_dir / "manifest.json").read_text())
        assert doc["kind"] == "graphs" and doc["task"] == "classification"
        assert doc["nodes"] == 24
        for f in doc["fields"]:
            g = load_graph(graph_dir / f["graph"])
            assert g.n == 24 and g.n_real == f["n_real"]
            assert (graph_dir / f["superpixels"]).exists()

    def test_missing_manifest_fails(self, tmp_path):
        code = main(
            ["build-graph", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path)]
        )
        assert code == 1

    def test_wrong_kind_fails(self, workspace, tmp_path):
        _, graph_dir, _ = workspace
        code = main(
            [
                "build-graph",
                "--manifest", str(graph_dir / "manifest.json"),  # graphs, not synth
                "--out", str(tmp_path),
            ]
        )
        assert code == 1

    def test_parallel_jobs_match_serial(self, workspace, tmp_path):
        synth_dir, graph_dir, _ = workspace
        out = tmp_path / "par"
        assert main(
            [
                "build-graph",
                "--manifest", str(synth_dir / "manifest.json"),
                "--out", str(out),
                "--k", "16",
                "--nodes", "24",
                "--max-iter", "3",
                "--jobs", "2",
            ]
        ) == 0
        serial = json.loads((graph_dir / "manifest.json").read_text())
        parallel = json.loads((out / "manifest.json").read_text())
        for fs, fp in zip(serial["fields"], parallel["fields"]):
            assert fs["id"] == fp["id"] and fs["n_real"] == fp["n_real"]
            assert (out / fp["graph"]).read_bytes() == (
                graph_dir / fs["graph"]
            ).read_bytes()


class TestTrainCommand:
    def test_artifacts(self, workspace):
        _, _, run_dir = workspace
        final = load_checkpoint(run_dir / "checkpoint_final.json")
        best = load_checkpoint(run_dir / "checkpoint_best.json")
        assert final.widths == best.widths == (9, 32, 32, 32, 32, 32, 1)
        history = read_history_jsonl(run_dir / "history.jsonl")
        assert len(history.epochs) == 3
        assert 1 <= history.best_epoch <= 3


class TestEvaluateCommand:
    def test_report_row_and_json(self, workspace, tmp_path, capsys):
        _, graph_dir, run_dir = workspace
        out = tmp_path / "report.json"
        code = main(
            [
                "evaluate",
                "--checkpoint", str(run_dir / "checkpoint_best.json"),
                "--manifest", str(graph_dir / "manifest.json"),
                "--split", "test",
                "--pr-curve", "9",
                "--out", str(out),
            ]
        )
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("threshold")
        assert any(line.startswith("best_threshold") for line in lines)
        doc = json.loads(out.read_text())
        for key in ("dice_loss", "dice_loss_pooled", "precision", "recall", "f1", "iou"):
            assert key in doc
        assert len(doc["pr_curve"]["points"]) == 9

    def test_empty_split_fails(self, workspace):
        _, graph_dir, run_dir = workspace
        code = main(
            [
                "evaluate",
                "--checkpoint", str(run_dir / "checkpoint_best.json"),
                "--manifest", str(graph_dir / "manifest.json"),
                "--split", "holdout",
            ]
        )
        assert code == 1


class TestRenderCommand:
    def field_paths(self, synth_dir, graph_dir):
        doc = json.loads((graph_dir / "manifest.json").read_text())
        f = doc["fields"][0]
        return f["image"], graph_dir / f["superpixels"], graph_dir / f["graph"]

    def test_targets_overlay(self, workspace, tmp_path):
        synth_dir, graph_dir, _ = workspace
        image, sp, graph = self.field_paths(synth_dir, graph_dir)
        out = tmp_path / "overlay.png"
        code = main(
            [
                "render",
                "--image", image,
                "--superpixels", str(sp),
                "--graph", str(graph),
                "--values", "targets",
                "--out", str(out),
            ]
        )
        assert code == 0
        from fieldgraph.raster_io import load_image

        rendered = load_image(out)
        assert (rendered.width, rendered.height) == (64, 64)

    def test_predictions_need_checkpoint(self, workspace, tmp_path):
        synth_dir, graph_dir, _ = workspace
        image, sp, graph = self.field_paths(synth_dir, graph_dir)
        code = main(
            [
                "render",
                "--image", image,
                "--superpixels", str(sp),
                "--graph", str(graph),
                "--values", "predictions",
                "--out", str(tmp_path / "x.png"),
            ]
        )
        assert code == 1

    def test_predictions_with_checkpoint(self, workspace, tmp_path):
        synth_dir, graph_dir, run_dir = workspace
        image, sp, graph = self.field_paths(synth_dir, graph_dir)
        out = tmp_path / "pred.png"
        code = main(
            [
                "render",
                "--image", image,
                "--superpixels", str(sp),
                "--graph", str(graph),
                "--values", "predictions",
                "--checkpoint", str(run_dir / "checkpoint_best.json"),
                "--out", str(out),
            ]
        )
        assert code == 0 and out.exists()


class TestBenchmarkCommand:
    def test_reports_throughput(self, capsys, tmp_path):
        out = tmp_path / "bench.json"
        code = main(
            [
                "benchmark",
                "--nodes", "16",
                "--reps", "5",
                "--warmup", "1",
                "--out", str(out),
            ]
        )
        assert code == 0
        line = capsys.readouterr().out.strip()
        assert "graphs_per_sec=" in line and "dtype=float32" in line
        doc = json.loads(out.read_text())
        assert doc["reps"] == 5 and doc["nodes"] == 16
        assert doc["graphs_per_sec"] > 0

    def test_float64_variant(self, capsys):
        assert main(["benchmark", "--nodes", "8", "--reps", "2", "--warmup", "0",
                     "--dtype", "float64"]) == 0
        assert "dtype=float64" in capsys.readouterr().out


class TestLogging:
    def test_error_level_suppresses_info(self, tmp_path, monkeypatch, capfd):
        monkeypatch.setenv("FIELDGRAPH_LOG", "error")
        args = [
            "synth", "--out", str(tmp_path / "q"), "--n-fields", "2",
            "--width", "64", "--height", "64", "--split", "0.5", "0.5", "0.0",
        ]
        assert main(args) == 0
        assert "wrote" not in capfd.readouterr().err

    def test_info_level_reports_progress(self, tmp_path, monkeypatch, capfd):
        monkeypatch.delenv("FIELDGRAPH_LOG", raising=False)
        args = [
            "synth", "--out", str(tmp_path / "r"), "--n-fields", "2",
            "--width", "64", "--height", "64", "--split", "0.5", "0.5", "0.0",
        ]
        assert main(args) == 0
        assert "wrote 2 fields" in capfd.readouterr().err

import json

import numpy as np
import pytest

from saliencybench import generate_frames, read_map, read_tensor
from saliencybench.cli import main

BASE_CONFIG = {
    "seed": 42,
    "model": {
        "kind": "planted",
        "region": [22, 22, 40, 40],
        "input_shape": [84, 84, 4],
        "n_outputs": 5,
        "seed": 7,
        "gain": 20.0,
        "offset": 0.8,
    },
    "images": {"kind": "planted-rect", "params": {}, "seed": 3, "count": 4},
    "explainers": [
        {"variant": "occlusion", "name": "os-black", "patch": 7, "color": 0.0, "stride": 7},
        {"variant": "noise", "name": "ns-black", "radius": 5, "probe_stride": 12, "mode": "black"},
        {"variant": "rise", "name": "rise", "n": 60, "s": 8, "p": 0.9},
        {"variant": "lime", "name": "lime", "n_samples": 100, "top_k": 3},
    ],
}


def write_config(tmp_path, config, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return path


class TestExplainCommand:
    def test_grid_of_outputs(self, tmp_path):
        cfg = write_config(tmp_path, BASE_CONFIG)
        out = tmp_path / "out"
        assert main(["explain", "--config", str(cfg), "--out", str(out)]) == 0
        tensors = sorted(out.glob("saliency_*.sbt1"))
        tensors = [t for t in tensors if not t.name.endswith("_segmentation.sbt1")]
        pngs = sorted(out.glob("*.png"))
        assert len(tensors) == 4 * 4  # 4 explainers x 4 frames
        assert len(pngs) == 4 * 4
        summary = json.loads((out / "explain_summary.json").read_text())
        assert summary["seed"] == 42
        assert len(summary["outputs"]) == 16
        # LIME results additionally carry a structured record per image
        lime_records = sorted(out.glob("*_explanation.json"))
        assert len(lime_records) == 4

    def test_rerun_is_bit_identical(self, tmp_path):
        cfg = write_config(tmp_path, BASE_CONFIG)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["explain", "--config", str(cfg), "--out", str(out1)]) == 0
        assert main(["explain", "--config", str(cfg), "--out", str(out2)]) == 0
        for f1 in sorted(out1.glob("*.sbt1")):
            f2 = out2 / f1.name
            assert f1.read_bytes() == f2.read_bytes()

    def test_rerun_from_embedded_config(self, tmp_path):
        cfg = write_config(tmp_path, BASE_CONFIG)
        out1 = tmp_path / "o1"
        assert main(["explain", "--config", str(cfg), "--out", str(out1)]) == 0
        embedded = json.loads((out1 / "explain_summary.json").read_text())["config"]
        cfg2 = write_config(tmp_path, embedded, "embedded.json")
        out2 = tmp_path / "o2"
        assert main(["explain", "--config", str(cfg2), "--out", str(out2)]) == 0
        for f1 in sorted(out1.glob("*.sbt1")):
            assert f1.read_bytes() == (out2 / f1.name).read_bytes()

    def test_seed_override_changes_stochastic_maps(self, tmp_path):
        config = dict(BASE_CONFIG)
        config["explainers"] = [{"variant": "rise", "name": "rise", "n": 60, "s": 8, "p": 0.9}]
        config["images"] = {"kind": "planted-rect", "params": {}, "seed": 3, "count": 1}
        cfg = write_config(tmp_path, config)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["explain", "--config", str(cfg), "--out", str(out1)]) == 0
        assert main(["explain", "--config", str(cfg), "--out", str(out2), "--seed", "99"]) == 0
        a = read_map(out1 / "saliency_img000_rise.sbt1")
        b = read_map(out2 / "saliency_img000_rise.sbt1")
        assert not np.array_equal(a.values, b.values)

    def test_missing_model_file_exits_2(self, tmp_path, capsys):
        config = dict(BASE_CONFIG)
        config["model"] = {"kind": "file", "path": "nope.sbm1"}
        cfg = write_config(tmp_path, config)
        assert main(["explain", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "nope.sbm1" in capsys.readouterr().err

    def test_bad_explainer_variant_exits_2(self, tmp_path):
        config = dict(BASE_CONFIG)
        config["explainers"] = [{"variant": "gradcam"}]
        cfg = write_config(tmp_path, config)
        assert main(["explain", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_runtime_failure_exits_3(self, tmp_path):
        # config validates, but the images do not match the model input shape
        frames = generate_frames("noise", {"height": 10, "width": 10, "channels": 1}, 0, 1)
        from saliencybench import write_tensor

        img_path = tmp_path / "small.sbt1"
        write_tensor(frames[0], img_path)
        config = dict(BASE_CONFIG)
        config["images"] = {"kind": "files", "paths": ["small.sbt1"]}
        cfg = write_config(tmp_path, config)
        assert main(["explain", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


class TestInsertionCommand:
    def test_csv_row_count_and_auc_table(self, tmp_path):
        config = dict(BASE_CONFIG)
        config["explainers"] = [
            {"variant": "occlusion", "name": "os-black", "patch": 5, "color": 0.0, "stride": 5},
            {"variant": "occlusion", "name": "os-grey", "patch": 5, "color": 0.5, "stride": 5},
        ]
        config["images"] = {"kind": "planted-rect", "params": {}, "seed": 3, "count": 2}
        cfg = write_config(tmp_path, config)
        out = tmp_path / "out"
        assert main(["insertion", "--config", str(cfg), "--out", str(out)]) == 0
        summary = json.loads((out / "insertion_summary.json").read_text())
        assert set(summary["mean_auc"]) == {"os-black", "os-grey", "uniform-random"}
        lines = (out / "insertion_curves.csv").read_text().strip().splitlines()
        n_points = 84 + 1
        assert len(lines) == 1 + 3 * 2 * n_points  # header + explainers (+baseline) x images x points

    def test_informed_beats_random_baseline(self, tmp_path):
        config = dict(BASE_CONFIG)
        config["explainers"] = [
            {"variant": "occlusion", "name": "os-black", "patch": 5, "color": 0.0, "stride": 5}
        ]
        config["images"] = {"kind": "planted-rect", "params": {}, "seed": 3, "count": 3}
        cfg = write_config(tmp_path, config)
        out = tmp_path / "out"
        assert main(["insertion", "--config", str(cfg), "--out", str(out)]) == 0
        auc = json.loads((out / "insertion_summary.json").read_text())["mean_auc"]
        assert auc["os-black"] > auc["uniform-random"] + 0.1

    def test_grey_maze_black_beats_grey(self, tmp_path):
        config = dict(BASE_CONFIG)
        config["model"] = dict(config["model"], offset=0.15)
        config["images"] = {"kind": "grey-maze", "params": {}, "seed": 5, "count": 2}
        config["explainers"] = [
            {"variant": "occlusion", "name": "os-black", "patch": 5, "color": 0.0, "stride": 5},
            {"variant": "occlusion", "name": "os-grey", "patch": 5, "color": 0.5, "stride": 5},
        ]
        cfg = write_config(tmp_path, config)
        out = tmp_path / "out"
        assert main(["insertion", "--config", str(cfg), "--out", str(out)]) == 0
        auc = json.loads((out / "insertion_summary.json").read_text())["mean_auc"]
        assert auc["os-black"] > auc["os-grey"]


class TestSanityCommand:
    def test_row_shape_and_dummy_warning(self, tmp_path, capsys):
        config = dict(BASE_CONFIG)
        config["model"] = dict(config["model"], hidden_dims=[16, 12, 8])  # 4 layers
        config["explainers"] = [
            {"variant": "occlusion", "name": "os-black", "patch": 7, "color": 0.0, "stride": 7},
            {"variant": "dummy", "name": "input-copy"},
        ]
        config["images"] = {"kind": "planted-rect", "params": {}, "seed": 3, "count": 2}
        cfg = write_config(tmp_path, config)
        out = tmp_path / "out"
        assert main(["sanity", "--config", str(cfg), "--out", str(out)]) == 0
        summary = json.loads((out / "sanity_summary.json").read_text())
        assert set(summary["reports"]) == {"os-black", "input-copy"}
        assert [r["depth"] for r in summary["reports"]["os-black"]] == [1, 2, 3, 4]
        assert summary["warnings"] and "input-copy" in summary["warnings"][0]
        assert "FAILS the sanity check" in capsys.readouterr().err

    def test_csv_written(self, tmp_path):
        config = dict(BASE_CONFIG)
        config["explainers"] = [
            {"variant": "occlusion", "name": "os", "patch": 7, "color": 0.0, "stride": 7}
        ]
        config["images"] = {"kind": "planted-rect", "params": {}, "seed": 3, "count": 1}
        cfg = write_config(tmp_path, config)
        out = tmp_path / "out"
        assert main(["sanity", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "sanity_rows.csv").read_text().strip().splitlines()
        assert lines[0].startswith("explainer,depth,spearman")
        assert len(lines) == 1 + 3  # header + one row per parameterized layer


class TestBenchCommand:
    def test_report_structure(self, tmp_path):
        config = dict(BASE_CONFIG)
        config["explainers"] = [
            {"variant": "occlusion", "name": "os", "patch": 7, "color": 0.0, "stride": 7}
        ]
        config["images"] = {"kind": "planted-rect", "params": {}, "seed": 3, "count": 2}
        cfg = write_config(tmp_path, config)
        out = tmp_path / "out"
        assert main(["bench", "--config", str(cfg), "--out", str(out)]) == 0
        summary = json.loads((out / "bench_summary.json").read_text())
        stats = summary["timings"]["os"]
        assert stats["min_seconds"] <= stats["mean_seconds"] <= stats["max_seconds"]
        assert "platform" in summary["machine"]
        assert summary["config"]["explainers"][0]["patch"] == 7


class TestFramesCommand:
    def test_deterministic_outputs(self, tmp_path):
        config = {"seed": 1, "frames": {"kind": "grey-maze", "params": {}, "seed": 5, "count": 3}}
        cfg = write_config(tmp_path, config)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["frames", "--config", str(cfg), "--out", str(out1)]) == 0
        assert main(["frames", "--config", str(cfg), "--out", str(out2)]) == 0
        for f1 in sorted(out1.glob("*.sbt1")):
            assert f1.read_bytes() == (out2 / f1.name).read_bytes()

    def test_grey_maze_has_exact_greys(self, tmp_path):
        config = {"seed": 1, "frames": {"kind": "grey-maze", "params": {}, "seed": 5, "count": 1}}
        cfg = write_config(tmp_path, config)
        out = tmp_path / "out"
        assert main(["frames", "--config", str(cfg), "--out", str(out)]) == 0
        frame = read_tensor(next(out.glob("*.sbt1")))
        assert (frame.data == np.float32(0.5)).mean() >= 0.30

    def test_planted_rect_contrast(self, tmp_path):
        config = {"seed": 1, "frames": {"kind": "planted-rect", "params": {}, "seed": 2, "count": 1}}
        cfg = write_config(tmp_path, config)
        out = tmp_path / "out"
        assert main(["frames", "--config", str(cfg), "--out", str(out)]) == 0
        frame = read_tensor(next(out.glob("*.sbt1")))
        inside = frame.data[22:62, 22:62, :]
        outside_mask = np.ones((84, 84), dtype=bool)
        outside_mask[22:62, 22:62] = False
        assert inside.min() >= 0.8
        assert frame.data[outside_mask].max() <= 0.2

    def test_unknown_kind_exits_2(self, tmp_path):
        config = {"seed": 1, "frames": {"kind": "volcano", "params": {}, "seed": 5, "count": 1}}
        cfg = write_config(tmp_path, config)
        assert main(["frames", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_missing_section_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, {"seed": 1})
        assert main(["frames", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


class TestConfigValidation:
    def test_missing_config_file(self, capsys):
        assert main(["explain", "--config", "/nonexistent/cfg.json", "--out", "/tmp/x"]) == 2

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["explain", "--config", str(path), "--out", str(tmp_path / "o")]) == 2

    def test_duplicate_explainer_names(self, tmp_path):
        config = dict(BASE_CONFIG)
        config["explainers"] = [
            {"variant": "occlusion", "name": "same"},
            {"variant": "rise", "name": "same"},
        ]
        cfg = write_config(tmp_path, config)
        assert main(["explain", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_unknown_parameter_reports_field_path(self, tmp_path, capsys):
        config = dict(BASE_CONFIG)
        config["explainers"] = [{"variant": "occlusion", "patchh": 5}]
        cfg = write_config(tmp_path, config)
        assert main(["explain", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "explainers[0].patchh" in capsys.readouterr().err

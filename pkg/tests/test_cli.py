"""Command-line behavior: artifacts, exit codes, manifests, determinism."""

import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from spikeconv.cli import main

TINY = {
    "seed": 5,
    "dog": {"firing_threshold": 0.08},
    "dataset": {"kind": "synthetic", "train_per_class": 3, "test_per_class": 2, "classes": [0, 1, 2]},
    "layers": [
        {
            "kind": "conv",
            "maps": 4,
            "window": [5, 5],
            "threshold": 5.0,
            "stdp": {"a_plus": 0.02, "a_minus": 0.015, "max_iterations": 60},
        },
        {"kind": "pool", "window": [2, 2], "stride": 2},
        {
            "kind": "conv",
            "maps": 6,
            "window": [5, 5],
            "threshold": 6.0,
            "stdp": {"a_plus": 0.02, "a_minus": 0.015, "max_iterations": 60},
        },
        {"kind": "global_pool"},
    ],
    "classifier": {"epochs": 40},
}


@pytest.fixture(scope="session")
def tiny_config_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


@pytest.fixture(scope="session")
def trained_run(tiny_config_path, tmp_path_factory):
    """One CLI training run shared by the read-only command tests."""
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--config", str(tiny_config_path), "--out", str(out)])
    assert code == 0
    return out


def read_manifest(out_dir):
    return json.loads((out_dir / "manifest.json").read_text())


class TestTrain:
    def test_artifacts_present(self, trained_run):
        for name in ("model.bin", "manifest.json", "trajectories.json", "train_log.jsonl"):
            assert (trained_run / name).exists()

    def test_manifest_records_run(self, trained_run):
        m = read_manifest(trained_run)
        assert m["command"] == "train"
        assert m["exit_status"] == 0
        assert m["seed"] == 5
        assert m["elapsed_s"] >= 0

    def test_log_lines_are_json_with_sequence(self, trained_run):
        lines = (trained_run / "train_log.jsonl").read_text().splitlines()
        events = [json.loads(l) for l in lines]
        seqs = [e["seq"] for e in events]
        assert seqs == sorted(seqs)
        assert events[-1]["event"] == "classifier"

    def test_trajectories_per_conv_layer(self, trained_run):
        traj = json.loads((trained_run / "trajectories.json").read_text())
        assert [t["conv_index"] for t in traj] == [0, 1]
        assert all(len(t["values"]) > 0 for t in traj)

    def test_same_seed_identical_model_bytes(self, tiny_config_path, trained_run, tmp_path):
        code = main(["train", "--config", str(tiny_config_path), "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "model.bin").read_bytes() == (trained_run / "model.bin").read_bytes()

    def test_seed_override_changes_model(self, tiny_config_path, trained_run, tmp_path):
        code = main(
            ["train", "--config", str(tiny_config_path), "--out", str(tmp_path), "--seed", "99"]
        )
        assert code == 0
        assert read_manifest(tmp_path)["seed"] == 99
        assert (tmp_path / "model.bin").read_bytes() != (trained_run / "model.bin").read_bytes()

    def test_missing_dataset_names_path(self, tmp_path, capsys):
        cfg = dict(TINY, dataset={"kind": "idx", "path": str(tmp_path / "nowhere")})
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        code = main(["train", "--config", str(p), "--out", str(tmp_path / "out")])
        assert code == 2
        assert "nowhere" in capsys.readouterr().err
        assert read_manifest(tmp_path / "out")["exit_status"] == 2

    def test_bad_config_exits_one(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(dict(TINY, speed="fast")))
        code = main(["train", "--config", str(p), "--out", str(tmp_path / "out")])
        assert code == 1
        assert read_manifest(tmp_path / "out")["exit_status"] == 1


class TestEval:
    def test_report_written(self, trained_run, tmp_path, capsys):
        code = main(["eval", "--model", str(trained_run / "model.bin"), "--out", str(tmp_path)])
        assert code == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert 0.0 <= rep["accuracy"] <= 1.0
        conf = np.array(rep["confusion"])
        assert rep["accuracy"] == np.trace(conf) / conf.sum()
        assert rep["single_neuron"] is not None
        assert "accuracy" in capsys.readouterr().out

    def test_corrupted_model_exits_two(self, tmp_path):
        bad = tmp_path / "model.bin"
        bad.write_bytes(b"not a model at all")
        code = main(["eval", "--model", str(bad), "--out", str(tmp_path)])
        assert code == 2


class TestReconstruct:
    def test_one_image_per_map(self, trained_run, tmp_path):
        code = main(
            ["reconstruct", "--model", str(trained_run / "model.bin"), "--layer", "1", "--out", str(tmp_path)]
        )
        assert code == 0
        files = sorted(tmp_path.glob("layer1_map*.png"))
        assert len(files) == TINY["layers"][0]["maps"]

    def test_image_extent_is_receptive_field(self, trained_run, tmp_path):
        main(["reconstruct", "--model", str(trained_run / "model.bin"), "--layer", "1", "--out", str(tmp_path)])
        with Image.open(tmp_path / "layer1_map0.png") as im:
            # conv window 5 widened by the 7-wide input kernel: 5 + 7 - 1
            assert im.size == (11, 11)

        deeper = tmp_path / "deeper"
        main(["reconstruct", "--model", str(trained_run / "model.bin"), "--layer", "2", "--out", str(deeper)])
        with Image.open(deeper / "layer2_map0.png") as im:
            # 5 -> pool upsample 10 -> conv 14 -> input kernel 20
            assert im.size == (20, 20)

    def test_single_map_flag(self, trained_run, tmp_path):
        code = main(
            [
                "reconstruct", "--model", str(trained_run / "model.bin"),
                "--layer", "2", "--map", "3", "--out", str(tmp_path),
            ]
        )
        assert code == 0
        assert [p.name for p in tmp_path.glob("*.png")] == ["layer2_map3.png"]

    def test_invalid_layer_exits_one_with_manifest(self, trained_run, tmp_path):
        code = main(
            ["reconstruct", "--model", str(trained_run / "model.bin"), "--layer", "9", "--out", str(tmp_path)]
        )
        assert code == 1
        assert read_manifest(tmp_path)["exit_status"] == 1


class TestAblate:
    def test_report_and_indices_recorded(self, trained_run, tmp_path):
        code = main(
            [
                "ablate", "--model", str(trained_run / "model.bin"),
                "--layers", "0,1", "--out", str(tmp_path),
            ]
        )
        assert code == 0
        rec = json.loads((tmp_path / "ablation.json").read_text())
        assert rec["randomized_conv_indices"] == [0, 1]
        assert 0.0 <= rec["report"]["accuracy"] <= 1.0

    def test_bad_layer_list_exits_one(self, trained_run, tmp_path):
        code = main(
            ["ablate", "--model", str(trained_run / "model.bin"), "--layers", "a,b", "--out", str(tmp_path)]
        )
        assert code == 1


class TestNoiseSweep:
    def test_sweep_artifact(self, tiny_config_path, tmp_path):
        code = main(
            [
                "noise-sweep", "--config", str(tiny_config_path),
                "--alphas", "0.0,0.5", "--out", str(tmp_path),
            ]
        )
        assert code == 0
        points = json.loads((tmp_path / "sweep.json").read_text())
        assert [p["alpha"] for p in points] == [0.0, 0.5]


class TestStats:
    def test_summary_fields(self, trained_run, tmp_path, capsys):
        code = main(["stats", "--model", str(trained_run / "model.bin"), "--out", str(tmp_path)])
        assert code == 0
        stats = json.loads((tmp_path / "stats.json").read_text())
        assert stats["feature_dim"] == TINY["layers"][2]["maps"]
        assert stats["shape_chain"][0]["stage"] == "input"
        assert len(stats["layers"]) == 2
        assert "stage shapes" in capsys.readouterr().out


class TestEntryPoints:
    def test_usage_error_exits_one(self):
        assert main([]) == 1
        assert main(["train", "--nope"]) == 1

    def test_module_invocation(self, trained_run):
        proc = subprocess.run(
            [sys.executable, "-m", "spikeconv", "stats", "--model", str(trained_run / "model.bin"),
             "--out", str(trained_run / "stats_sub")],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "train accuracy" in proc.stdout

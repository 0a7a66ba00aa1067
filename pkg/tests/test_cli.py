"""Command-line interface: exit codes, JSON-line events and artifacts."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from facegan.cli import main
from facegan.data import save_image
from facegan.synthetic import Identity, render_crop


def events(output: str) -> list[dict]:
    return [json.loads(line) for line in output.strip().splitlines() if line.startswith("{")]


@pytest.fixture()
def runner():
    return CliRunner()


class TestHelp:
    def test_group_help(self, runner):
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for cmd in ("preprocess", "train-lt", "train-reenactor", "train-mixer",
                    "train-e2e", "reenact", "evaluate", "serve"):
            assert cmd in result.output


class TestExitCodes:
    def test_preprocess_without_inputs_is_config_error(self, runner, tmp_path):
        result = runner.invoke(main, ["preprocess", "--corpus", str(tmp_path / "c")])
        assert result.exit_code == 2
        assert events(result.output)[-1]["reason"] == "bad config"

    def test_bad_config_file(self, runner, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("- a list, not a mapping\n")
        result = runner.invoke(main, ["train-lt", "--synthetic-pairs", "4",
                                      "--steps", "1", "--bundle", str(tmp_path / "b"),
                                      "--config", str(cfg)])
        assert result.exit_code == 2

    def test_train_lt_without_data(self, runner, tmp_path):
        result = runner.invoke(main, ["train-lt", "--steps", "1",
                                      "--bundle", str(tmp_path / "b")])
        assert result.exit_code == 2


class TestPreprocess:
    def test_synthetic_corpus(self, runner, tmp_path):
        result = runner.invoke(main, ["preprocess", "--corpus", str(tmp_path / "c"),
                                      "--synthetic", "1", "--frames", "5",
                                      "--resolution", "64"])
        assert result.exit_code == 0, result.output
        done = [e for e in events(result.output) if e["event"] == "preprocess_done"]
        assert done and done[0]["kept"] > 0
        assert (tmp_path / "c" / "synthetic_000").exists()

    def test_video_directory_input(self, runner, tmp_path):
        from facegan.synthetic import synthetic_video
        vdir = tmp_path / "vid"
        for i, frame in enumerate(synthetic_video(identity_seed=1, n_frames=4)):
            save_image(vdir / f"{i:04d}.png", frame)
        result = runner.invoke(main, ["preprocess", "--corpus", str(tmp_path / "c"),
                                      "--video", str(vdir), "--resolution", "64"])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "c" / "vid").exists()


class TestTrainLt:
    def test_synthetic_pairs_run(self, runner, tmp_path):
        bundle = tmp_path / "b"
        result = runner.invoke(main, ["train-lt", "--synthetic-pairs", "10",
                                      "--steps", "3", "--bundle", str(bundle)])
        assert result.exit_code == 0, result.output
        done = [e for e in events(result.output) if e["event"] == "train_lt_done"]
        assert done and len(done[0]["hash"]) == 64
        manifest = json.loads((bundle / "bundle.json").read_text())
        assert manifest["checkpoints"]["transformer"] == "landmark_transformer_0000003.pt"
        assert (bundle / "history_lt.json").exists()
        assert (bundle / "history_lt.png").exists()


class TestInferenceCommands:
    def test_reenact_writes_image_and_sidecar(self, runner, bundle_dir, tmp_path):
        src, _, _ = render_crop(Identity.from_seed(0), np.zeros(17), np.zeros(3), size=64)
        drv, _, _ = render_crop(Identity.from_seed(1), np.full(17, 0.6), np.zeros(3), size=64)
        save_image(tmp_path / "src.png", src)
        save_image(tmp_path / "drv.png", drv)
        out = tmp_path / "out.png"
        result = runner.invoke(main, ["reenact", "--source", str(tmp_path / "src.png"),
                                      "--driving", str(tmp_path / "drv.png"),
                                      "--bundle", str(bundle_dir), "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert out.exists()
        sidecar = json.loads(out.with_suffix(".json").read_text())
        assert len(sidecar["motion"]["au"]) == 17

    def test_evaluate_self(self, runner, bundle_dir, corpus_root, tmp_path):
        out = tmp_path / "report"
        result = runner.invoke(main, ["evaluate", "--mode", "self", "--pairs", "3",
                                      "--bundle", str(bundle_dir),
                                      "--corpus", str(corpus_root), "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert (out / "report_self.csv").exists()
        assert (out / "report_self.json").exists()
        assert (out / "report_self.png").exists()
        done = [e for e in events(result.output) if e["event"] == "evaluate_done"]
        assert "MSE" in done[0]["aggregates"]

    def test_evaluate_cross(self, runner, bundle_dir, corpus_root, tmp_path):
        out = tmp_path / "report"
        result = runner.invoke(main, ["evaluate", "--mode", "cross", "--pairs", "3",
                                      "--bundle", str(bundle_dir),
                                      "--corpus", str(corpus_root), "--out", str(out)])
        assert result.exit_code == 0, result.output
        agg = [e for e in events(result.output) if e["event"] == "evaluate_done"][0]["aggregates"]
        assert set(agg) >= {"CSIM", "PSIM", "ED", "LSIM"}

"""Tests for cst_seld.cli module."""

import pandas as pd
import pytest

from cst_seld.cli import build_parser, main, with_overrides
from cst_seld.config import RunConfig
from cst_seld.objective import LABEL_COLUMNS, write_label_csv
from cst_seld.synth import SceneEvent, SyntheticScene, write_scene_csv


def labels(rows):
    return pd.DataFrame(rows, columns=LABEL_COLUMNS)


class TestParser:

    def test_commands(self):
        parser = build_parser()

        args = parser.parse_args(["train", "--preset", "micro", "--batch-size", "4"])
        assert (args.command, args.preset, args.batch_size) == ("train", "micro", 4)
        assert args.multiscale is None

        args = parser.parse_args(["infer", "--checkpoint", "c", "--out", "o", "a.wav", "b.wav"])
        assert args.audio == ["a.wav", "b.wav"]
        assert args.io is None

    def test_command_is_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_with_overrides(self):
        """Only non-None overrides replace stored values."""
        config = with_overrides(RunConfig(epochs=4), {"epochs": None, "ctai": True, "seed": 7})

        assert config.epochs == 4
        assert config.ctai is True
        assert config.seed == 7


class TestCommands:

    def test_synth_dataset(self, tmp_path):
        code = main(["synth", "--out", str(tmp_path), "--clips", "2", "--duration", "2"])

        assert code == 0
        assert sorted(p.name for p in tmp_path.iterdir()) == [
            "clip_000.csv",
            "clip_000.wav",
            "clip_001.csv",
            "clip_001.wav",
        ]

    def test_synth_scene_file(self, tmp_path):
        scene = SyntheticScene(1.0, [SceneEvent(2, 0.1, 0.5, azimuth_deg=45.0)])
        write_scene_csv(scene, tmp_path / "scene.csv")

        code = main(
            [
                "synth",
                "--out",
                str(tmp_path / "out"),
                "--scene",
                str(tmp_path / "scene.csv"),
                "--duration",
                "1",
                "--name",
                "one",
            ]
        )

        assert code == 0
        table = pd.read_csv(tmp_path / "out" / "one.csv")
        assert list(table["frame_index"]) == [1, 2, 3, 4]

    def test_features_are_cached(self, tmp_path):
        main(["synth", "--out", str(tmp_path), "--clips", "1", "--duration", "1"])

        assert main(["features", "--data-dir", str(tmp_path)]) == 0
        assert (tmp_path / "features" / "clip_000.manifest.txt").exists()

    def test_eval(self, tmp_path):
        ref = labels([[0, 0, 0, 10.0, 0.0], [1, 1, 0, -90.0, 20.0]])
        write_label_csv(ref, tmp_path / "ref.csv")
        write_label_csv(ref.iloc[:1], tmp_path / "pred.csv")

        code = main(
            [
                "eval",
                "--pred",
                str(tmp_path / "pred.csv"),
                "--ref",
                str(tmp_path / "ref.csv"),
                "--out",
                str(tmp_path / "report"),
            ]
        )

        assert code == 0
        metrics = pd.read_csv(tmp_path / "report" / "metrics.csv")
        assert metrics["f1_20"][0] == pytest.approx(0.5)
        assert "[class 1]" in (tmp_path / "report" / "metrics.txt").read_text()


class TestExitCodes:

    def test_data_error(self, tmp_path):
        write_label_csv(labels([[0, 0, 0, 0.0, 0.0]]), tmp_path / "ref.csv")
        args = ["eval", "--pred", str(tmp_path / "missing.csv"), "--ref", str(tmp_path / "ref.csv")]

        assert main(args + ["--out", str(tmp_path)]) == 3

    def test_configuration_error(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "none.conf")]) == 2

    def test_bad_configuration_value(self, tmp_path):
        (tmp_path / "run.conf").write_text("epochs = many\n")

        assert main(["train", "--config", str(tmp_path / "run.conf")]) == 2

    def test_no_training_data(self, tmp_path):
        (tmp_path / "empty").mkdir()

        assert main(["train", "--data-dir", str(tmp_path / "empty")]) == 3

    def test_undefined_metrics(self, tmp_path):
        write_label_csv(labels([]), tmp_path / "ref.csv")
        write_label_csv(labels([]), tmp_path / "pred.csv")
        args = ["eval", "--pred", str(tmp_path / "pred.csv"), "--ref", str(tmp_path / "ref.csv")]

        assert main(args + ["--out", str(tmp_path)]) == 3


@pytest.mark.slow
class TestPipeline:

    def test_train_infer_evaluate_analyze(self, tmp_path):
        """Synthesise, train a micro model for one step and run every consumer."""
        data = tmp_path / "data"
        ckpt = tmp_path / "ckpt"
        out = tmp_path / "out"
        assert main(["synth", "--out", str(data), "--clips", "2", "--seed", "3"]) == 0

        train = [
            "train",
            "--preset",
            "micro",
            "--epochs",
            "1",
            "--batch-size",
            "2",
            "--max-steps",
            "1",
            "--data-dir",
            str(data),
            "--checkpoint-dir",
            str(ckpt),
        ]
        assert main(train) == 0
        assert (ckpt / "final" / "manifest.txt").exists()
        assert len(pd.read_csv(ckpt / "loss_curve.csv")) == 1

        wav = str(data / "clip_000.wav")
        infer = ["infer", "--checkpoint", str(ckpt / "final"), "--out", str(out), wav]
        assert main(infer) == 0
        assert main(infer[:-1] + ["--ctai", "--acs-count", "4", "--io", wav]) == 0
        accdoa = pd.read_csv(out / "clip_000.accdoa.csv")
        assert len(accdoa) == 50 * 4 * 3
        assert "ctai_survivors" in (out / "clip_000.run.txt").read_text()

        pred, ref = str(out / "clip_000.csv"), str(data / "clip_000.csv")
        report = str(tmp_path / "report")
        assert main(["eval", "--pred", pred, "--ref", ref, "--classes", "4", "--out", report]) == 0

        analysis = [
            "analyze",
            "--checkpoint",
            str(ckpt / "final"),
            "--audio",
            wav,
            "--labels",
            ref,
            "--out",
            str(tmp_path / "analysis"),
        ]
        assert main(analysis) == 0
        assert (tmp_path / "analysis" / "similarity.csv").exists()

        finetune = [
            "finetune-vtm",
            "--checkpoint",
            str(ckpt / "final"),
            "--out",
            str(tmp_path / "vtm"),
            "--max-steps",
            "1",
            "--data-dir",
            str(data),
        ]
        assert main(finetune) == 0
        assert (tmp_path / "vtm" / "final" / "manifest.txt").exists()

import os

import numpy as np
import pytest

from app.core.evaluator import (
    METRIC_CSV_COLUMNS,
    SYNTHETIC_CAVEAT,
    evaluate,
    feature_to_u8,
    resolve_run_config,
)
from app.core.run_config import RunConfig
from app.core.synth import SynthConfig, synth_generate
from app.core.tensor import Tensor
from app.core.trainer import train
from app.exceptions.custom_exceptions import CheckpointError
from app.utils.file_manager import read_csv, read_gray_u8
from tests.conftest import write_toml


@pytest.fixture
def trained(tmp_path, tiny_config, synth_dataset):
    tiny_config.optim.steps = 1
    return train(tiny_config, synth_dataset, str(tmp_path / "run"))


class TestEvaluate:
    def test_scores_every_triple(self, tmp_path, tiny_config, synth_dataset, trained):
        out_dir = str(tmp_path / "eval")
        result = evaluate(tiny_config, trained.checkpoint_path, synth_dataset, out_dir)

        assert [row["id"] for row in result.rows] == ["train_0000", "train_0001", "train_0002", "train_0003"]
        assert result.mean.n_samples == 4
        assert result.synthetic
        assert result.to_dict()["caveat"] == SYNTHETIC_CAVEAT
        for row in result.rows:
            prediction = read_gray_u8(os.path.join(out_dir, "predictions", f"{row['id']}.png"))
            assert prediction.shape == (32, 32)
            assert 0.0 <= row["s_measure"] <= 1.0

        rows = read_csv(result.csv_path)
        assert list(rows[0]) == METRIC_CSV_COLUMNS
        assert [r["id"] for r in rows][-1] == "mean"
        assert [r["row"] for r in rows] == ["sample"] * 4 + ["summary"]
        assert float(rows[-1]["mae"]) == pytest.approx(np.mean([r["mae"] for r in result.rows]))

    def test_seen_and_unseen_buckets(self, tmp_path, tiny_config, synth_dataset, trained):
        test_manifest = synth_generate(
            SynthConfig(seed=8, n_samples=2, image_side=32, split="test", class_vocabulary=["blob", "star"]),
            str(tmp_path / "test"),
        )
        train_manifest = synth_generate(
            SynthConfig(seed=8, n_samples=1, image_side=32, class_vocabulary=["blob"]),
            str(tmp_path / "train"),
        )
        result = evaluate(tiny_config, trained.checkpoint_path, test_manifest, str(tmp_path / "eval"), train_manifest=train_manifest)
        assert set(result.buckets) == {"seen", "unseen"}
        assert result.buckets["seen"].n_samples == 1
        assert "seen" in result.table() and "unseen" in result.table()
        assert [r["id"] for r in read_csv(result.csv_path)][-3:] == ["mean", "seen", "unseen"]

    def test_multi_class_rows_are_keyed_by_label(self, tmp_path, tiny_config, trained):
        manifest = synth_generate(
            SynthConfig(seed=4, n_samples=1, image_side=32, multi_class_rate=1.0), str(tmp_path / "multi")
        )
        result = evaluate(tiny_config, trained.checkpoint_path, manifest, str(tmp_path / "eval"))
        assert len(result.rows) == 2
        assert all(row["id"].startswith("train_0000@") for row in result.rows)

    def test_feature_dumps(self, tmp_path, tiny_config, synth_dataset, trained):
        out_dir = tmp_path / "eval"
        evaluate(tiny_config, trained.checkpoint_path, synth_dataset, str(out_dir), features=True)
        dumped = sorted(os.listdir(out_dir / "features"))
        assert len(dumped) == 4 * 7
        assert "train_0000_r_cls.png" in dumped

    def test_checkpoint_must_match_the_model(self, tmp_path, tiny_config, synth_dataset, trained):
        tiny_config.encoder.backbone_channels = [8, 8, 16, 32]
        with pytest.raises(CheckpointError):
            evaluate(tiny_config, trained.checkpoint_path, synth_dataset, str(tmp_path / "eval"))


class TestResolveRunConfig:
    def test_prefers_explicit_file(self, tmp_path, tiny_config, trained):
        tiny_config.seed = 42
        path = write_toml(tmp_path / "explicit.toml", tiny_config)
        assert resolve_run_config(trained.checkpoint_path, path).seed == 42

    def test_uses_saved_training_config(self, tiny_config, trained):
        config = resolve_run_config(trained.checkpoint_path)
        assert config.encoder == tiny_config.encoder
        assert config.paths == {}

    def test_falls_back_to_defaults(self, tmp_path):
        assert resolve_run_config(str(tmp_path / "model.cgt")) == RunConfig()


class TestFeatureToU8:
    def test_min_max_scaled(self):
        feature = np.zeros((1, 2, 2, 3))
        feature[0, :, 0, 0] = -1.0
        feature[0, :, 1, 2] = 3.0
        out = feature_to_u8(Tensor(feature))
        assert out.dtype == np.uint8
        assert out[0, 0] == 0 and out[1, 2] == 255

    def test_constant_plane(self):
        np.testing.assert_array_equal(feature_to_u8(Tensor(np.full((1, 3, 2, 2), 0.3))), 0)

import os

import pytest

from app.core.run_config import EncoderConfig, ModelConfig, OptimConfig, RunConfig
from app.exceptions.custom_exceptions import ConfigError
from tests.conftest import write_toml


class TestRunConfig:
    def test_defaults_are_valid(self):
        RunConfig().validate()

    def test_round_trips_through_toml(self, tmp_path, tiny_config):
        path = write_toml(tmp_path / "run.toml", tiny_config)
        loaded = RunConfig.from_file(path)
        assert loaded.encoder == tiny_config.encoder
        assert loaded.model == tiny_config.model
        assert loaded.optim.steps == 3
        loaded.validate()

    def test_relative_paths_resolve_against_the_file(self, tmp_path):
        (tmp_path / "data").mkdir()
        path = tmp_path / "run.toml"
        path.write_text('[paths]\ntrain_manifest = "data"\n', encoding="utf-8")
        config = RunConfig.from_file(str(path))
        assert config.paths["train_manifest"] == os.path.join(str(tmp_path), "data")
        config.validate()

    def test_missing_path(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text('[paths]\ntrain_manifest = "absent.jsonl"\n', encoding="utf-8")
        config = RunConfig.from_file(str(path))
        with pytest.raises(ConfigError):
            config.validate()
        config.validate(check_paths=False)

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"decoder": {}})

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"model": {"depth": 3}})

    def test_invalid_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("seed = \n", encoding="utf-8")
        with pytest.raises(ConfigError):
            RunConfig.from_file(str(path))

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.from_file(str(tmp_path / "missing.toml"))

    def test_to_dict_feeds_from_dict(self, tiny_config):
        assert RunConfig.from_dict(tiny_config.to_dict()) == tiny_config


class TestSectionValidation:
    @pytest.mark.parametrize(
        "encoder",
        [
            EncoderConfig(prompt_side=40),
            EncoderConfig(detector_side=0),
            EncoderConfig(backbone_channels=[8, 8, 8]),
            EncoderConfig(visual_dim=7),
        ],
    )
    def test_encoder(self, encoder):
        with pytest.raises(ConfigError):
            encoder.validate()

    @pytest.mark.parametrize(
        "model",
        [
            ModelConfig(activation="swish"),
            ModelConfig(heads=5),
            ModelConfig(scm_groups=2),
            ModelConfig(head_upsample="nearest"),
            ModelConfig(logit_scale=0.0),
        ],
    )
    def test_model(self, model):
        with pytest.raises(ConfigError):
            model.validate(EncoderConfig())

    @pytest.mark.parametrize(
        "optim",
        [OptimConfig(lr=0.0), OptimConfig(batch_size=0), OptimConfig(epochs=0), OptimConfig(beta1=1.0)],
    )
    def test_optim(self, optim):
        with pytest.raises(ConfigError):
            optim.validate()

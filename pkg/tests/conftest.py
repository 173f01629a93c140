import os

import numpy as np
import pytest

from app.core.run_config import EncoderConfig, ModelConfig, OptimConfig, RunConfig
from app.core.synth import SynthConfig, synth_generate


@pytest.fixture
def rng():
    """Seeded generator for reproducible random inputs."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_encoder():
    """32x32 inputs, 8-wide prompt features, four small backbone levels."""
    return EncoderConfig(
        seed=7,
        text_dim=8,
        visual_dim=8,
        backbone_channels=[8, 8, 16, 16],
        prompt_side=32,
        detector_side=32,
    )


@pytest.fixture
def tiny_model():
    return ModelConfig(heads=2, activation="relu", scm_groups=4, zero_init_heads=True)


@pytest.fixture
def tiny_config(tiny_encoder, tiny_model):
    return RunConfig(
        encoder=tiny_encoder,
        model=tiny_model,
        optim=OptimConfig(lr=1e-3, batch_size=4, steps=3, hflip=True),
        seed=0,
    )


@pytest.fixture
def synth_dataset(tmp_path):
    """Four 32px synthetic samples; returns the manifest path."""
    cfg = SynthConfig(seed=3, n_samples=4, image_side=32, camouflage_strength=0.3)
    return synth_generate(cfg, str(tmp_path / "synth"))


@pytest.fixture
def isolated_cwd(tmp_path, monkeypatch):
    """Run in a scratch directory so log files and outputs stay out of the repo."""
    monkeypatch.chdir(tmp_path)
    return tmp_path


def write_toml(path, config: RunConfig) -> str:
    enc, model, optim = config.encoder, config.model, config.optim
    lines = [
        f"seed = {config.seed}",
        "[encoder]",
        f"seed = {enc.seed}",
        f"text_dim = {enc.text_dim}",
        f"visual_dim = {enc.visual_dim}",
        f"backbone_channels = {list(enc.backbone_channels)}",
        f"prompt_side = {enc.prompt_side}",
        f"detector_side = {enc.detector_side}",
        "[model]",
        f"heads = {model.heads}",
        f'activation = "{model.activation}"',
        f"zero_init_heads = {str(model.zero_init_heads).lower()}",
        f'head_upsample = "{model.head_upsample}"',
        f"logit_scale = {model.logit_scale}",
        "[optim]",
        f"lr = {optim.lr}",
        f"batch_size = {optim.batch_size}",
        f"steps = {optim.steps}",
    ]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return os.fspath(path)

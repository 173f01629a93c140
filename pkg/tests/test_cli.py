import json
import os

import pytest

from cli import main
from tests.conftest import write_toml


def _run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


@pytest.fixture
def workspace(isolated_cwd, capsys, tiny_config):
    """Synthetic train/test sets plus a tiny run config in a scratch directory."""
    tiny_config.optim.steps = 2
    config = write_toml(isolated_cwd / "tiny.toml", tiny_config)
    for split, classes in (("train", "blob,star"), ("test", "blob,ring")):
        code, _ = _run(
            capsys, "synth", "--out", split, "--n-samples", "2", "--side", "32", "--split", split, "--classes", classes, "--json"
        )
        assert code == 0
    return {
        "config": config,
        "train": str(isolated_cwd / "train" / "manifest.jsonl"),
        "test": str(isolated_cwd / "test" / "manifest.jsonl"),
    }


class TestSynth:
    def test_json_output(self, isolated_cwd, capsys):
        code, out = _run(capsys, "synth", "--out", "data", "--n-samples", "2", "--side", "32", "--json")
        assert code == 0
        payload = json.loads(out.out)
        assert payload["n_samples"] == 2
        assert os.path.isfile(payload["manifest"])
        assert os.path.isfile(isolated_cwd / "cgnet_desk.log")

    def test_invalid_strength(self, isolated_cwd, capsys):
        code, _ = _run(capsys, "synth", "--out", "data", "--strength", "2")
        assert code == 2


class TestTrainAndEval:
    def test_full_flow(self, workspace, capsys):
        code, out = _run(capsys, "train", "--config", workspace["config"], "--manifest", workspace["train"], "--out", "run", "--json")
        assert code == 0
        trained = json.loads(out.out)
        assert trained["steps"] == 2

        code, out = _run(
            capsys,
            "eval", "--checkpoint", trained["checkpoint"], "--manifest", workspace["test"],
            "--train-manifest", workspace["train"], "--out", "eval", "--json",
        )
        assert code == 0
        evaluated = json.loads(out.out)
        assert evaluated["synthetic"] is True
        assert set(evaluated["buckets"]) == {"seen", "unseen"}
        assert len(evaluated["samples"]) == 2

        code, out = _run(capsys, "hardsplit", "--metrics", evaluated["csv"], "--threshold", "0.0", "--json")
        assert code == 0
        assert sorted(json.loads(out.out)["normal"]) == ["test_0000", "test_0001"]

    def test_text_output(self, workspace, capsys):
        code, out = _run(capsys, "train", "--config", workspace["config"], "--manifest", workspace["train"], "--out", "run")
        assert code == 0
        assert "Checkpoint:" in out.out
        assert "step 0: total=" in out.out

    def test_missing_manifest(self, workspace, capsys):
        code, _ = _run(capsys, "train", "--config", workspace["config"], "--manifest", "absent.jsonl", "--out", "run")
        assert code == 2

    def test_bad_checkpoint(self, workspace, capsys, isolated_cwd):
        (isolated_cwd / "broken.cgt").write_bytes(b"nope")
        code, _ = _run(
            capsys, "eval", "--config", workspace["config"], "--checkpoint", "broken.cgt", "--manifest", workspace["test"]
        )
        assert code == 2


class TestSplit:
    def test_seen_unseen(self, workspace, capsys):
        code, out = _run(capsys, "split", "--train-manifest", workspace["train"], "--manifest", workspace["test"], "--json")
        assert code == 0
        report = json.loads(out.out)
        assert report["seen_classes"] == ["blob"]
        assert report["unseen_classes"] == ["ring"]
        assert report["unseen_samples"] == ["test_0001"]


class TestGradcheck:
    def test_clean_suite_exits_zero(self, isolated_cwd, capsys):
        code, out = _run(capsys, "gradcheck", "--skip-end-to-end", "--json")
        assert code == 0
        assert json.loads(out.out)["passed"] is True

    def test_corrupted_suite_exits_one(self, isolated_cwd, capsys):
        code, out = _run(capsys, "gradcheck", "--skip-end-to-end", "--corrupt-gradients", "--json")
        assert code == 1
        assert json.loads(out.out)["passed"] is False


class TestArguments:
    def test_help(self, isolated_cwd, capsys):
        assert _run(capsys, "--help")[0] == 0

    def test_unknown_command(self, isolated_cwd, capsys):
        assert _run(capsys, "fly")[0] == 2

    def test_missing_required(self, isolated_cwd, capsys):
        assert _run(capsys, "train")[0] == 2

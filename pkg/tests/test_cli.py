from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from guidedchat.cli import PRESETS, main
from guidedchat.model import save_checkpoint

from conftest import make_model

TINY_CONFIG = """\
[data]
dir = "{data}"

[model]
d = 32
n_layers = 1
n_heads = 2
ffn_width = 32
max_src_len = 128
max_tgt_len = 40
dropout = 0.0

[optimizer]
learning_rate = 1e-3
batch_size = 8
epochs = {epochs}

[run]
mode = "hard"
m = 3
delta = 0.2
out = "{out}"
seed = 1
"""


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, fixture_dir, runner):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "run.toml"
    cfg.write_text(TINY_CONFIG.format(data=fixture_dir, epochs=1, out=out / "train"))
    result = runner.invoke(main, ["train", "--config", str(cfg)])
    assert result.exit_code == 0, result.output
    return out / "train"


class TestPresets:
    def test_tuned_operating_points(self):
        assert PRESETS["durecdial"] == {"m": 4, "delta": 0.2, "max_tgt_len": 100}
        assert PRESETS["durecdial2"] == {"m": 3, "delta": 0.2, "max_tgt_len": 80}


class TestFixturesCommand:
    def test_writes_corpus(self, runner, tmp_path):
        result = runner.invoke(main, ["fixtures", "--out", str(tmp_path / "c"),
                                      "--seed", "3"])
        assert result.exit_code == 0, result.output
        for name in ("train.jsonl", "dev.jsonl", "test_id.jsonl", "test_ood.jsonl",
                     "inventory.json"):
            assert (tmp_path / "c" / name).exists()


class TestTrainCommand:
    def test_happy_path_writes_checkpoint(self, trained_dir):
        assert (trained_dir / "checkpoint" / "weights.bin").exists()
        assert (trained_dir / "train_log.jsonl").exists()
        assert (trained_dir / "dev_report.json").exists()

    def test_delta_out_of_range_names_field(self, runner, fixture_dir, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text(TINY_CONFIG.format(data=fixture_dir, epochs=0,
                                          out=tmp_path / "x"))
        result = runner.invoke(main, ["train", "--config", str(cfg),
                                      "--delta", "1.5"])
        assert result.exit_code != 0
        assert "delta" in result.output

    def test_unknown_run_key_rejected(self, runner, fixture_dir, tmp_path):
        cfg = tmp_path / "bad2.toml"
        cfg.write_text(TINY_CONFIG.format(data=fixture_dir, epochs=0,
                                          out=tmp_path / "x")
                       + "\nbogus_key = 1\n")
        result = runner.invoke(main, ["train", "--config", str(cfg)])
        assert result.exit_code != 0
        assert "bogus_key" in result.output

    def test_preset_applies_tuned_values(self, runner, fixture_dir, tmp_path):
        cfg = tmp_path / "preset.toml"
        cfg.write_text(
            "[data]\ndir = \"{}\"\n[model]\nd = 32\nn_layers = 1\nn_heads = 2\n"
            "[optimizer]\nepochs = 0\n[run]\npreset = \"durecdial2\"\n"
            "out = \"{}\"\n".format(fixture_dir, tmp_path / "p"))
        result = runner.invoke(main, ["train", "--config", str(cfg)])
        assert result.exit_code == 0, result.output
        saved = json.loads((tmp_path / "p" / "checkpoint" / "config.json").read_text())
        assert saved["model"]["max_tgt_len"] == 80


class TestEvaluateCommand:
    def test_hard_vs_soft_reports(self, runner, trained_dir, fixture_dir, tmp_path):
        outputs = {}
        for mode in ("hard", "soft"):
            out = tmp_path / f"report_{mode}.json"
            result = runner.invoke(main, [
                "evaluate", "--checkpoint", str(trained_dir / "checkpoint"),
                "--data", str(fixture_dir), "--split", "dev",
                "--mode", mode, "--out", str(out)])
            assert result.exit_code == 0, result.output
            outputs[mode] = json.loads(out.read_text())
            assert out.with_suffix(".txt").exists()
        assert outputs["hard"]["options"]["mode"] == "hard"
        assert outputs["soft"]["options"]["mode"] == "soft"
        assert outputs["hard"]["n_samples"] == outputs["soft"]["n_samples"]

    def test_ablation_flags_recorded(self, runner, trained_dir, fixture_dir, tmp_path):
        out = tmp_path / "ablate.json"
        result = runner.invoke(main, [
            "evaluate", "--checkpoint", str(trained_dir / "checkpoint"),
            "--data", str(fixture_dir), "--split", "dev",
            "--no-ikb", "--no-csm", "--out", str(out)])
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text())
        assert report["options"]["use_csm"] is False
        assert report["options"]["use_ikb"] is False

    def test_corrupted_ood_split_refused(self, runner, trained_dir, fixture_dir,
                                         tmp_path, dataset):
        import shutil

        from guidedchat.corpus import write_jsonl

        bad_dir = tmp_path / "bad_corpus"
        shutil.copytree(fixture_dir, bad_dir)
        write_jsonl(bad_dir / "test_ood.jsonl", dataset.test_ood + [dataset.train[0]])
        result = runner.invoke(main, [
            "evaluate", "--checkpoint", str(trained_dir / "checkpoint"),
            "--data", str(bad_dir), "--split", "test_ood"])
        assert result.exit_code != 0
        assert "OOD" in result.output

    def test_unknown_split_rejected(self, runner, trained_dir, fixture_dir):
        result = runner.invoke(main, [
            "evaluate", "--checkpoint", str(trained_dir / "checkpoint"),
            "--data", str(fixture_dir), "--split", "test"])
        assert result.exit_code != 0


class TestGenerateInspect:
    def test_generate_prints_text(self, runner, trained_dir, fixture_dir):
        result = runner.invoke(main, [
            "generate", "--checkpoint", str(trained_dir / "checkpoint"),
            "--data", str(fixture_dir), "--split", "dev", "--index", "0"])
        assert result.exit_code == 0, result.output

    def test_index_out_of_range(self, runner, trained_dir, fixture_dir):
        result = runner.invoke(main, [
            "generate", "--checkpoint", str(trained_dir / "checkpoint"),
            "--data", str(fixture_dir), "--split", "dev", "--index", "9999"])
        assert result.exit_code != 0
        assert "out of range" in result.output

    def test_inspect_emits_contract_json(self, runner, trained_dir, fixture_dir,
                                         dataset):
        result = runner.invoke(main, [
            "inspect", "--checkpoint", str(trained_dir / "checkpoint"),
            "--data", str(fixture_dir), "--split", "dev", "--index", "0",
            "--top-k", "10"])
        assert result.exit_code == 0, result.output
        dump = json.loads(result.output)
        assert len(dump["bias_top"]) == 10
        assert len(dump["keywords"]["type"]) == dataset.inventory.n_types
        probs = [e["prob"] for e in dump["bias_top"]]
        assert probs == sorted(probs, reverse=True)

    def test_inspect_no_csm_reports_uniform_bias(self, runner, trained_dir,
                                                 fixture_dir, vocab):
        result = runner.invoke(main, [
            "inspect", "--checkpoint", str(trained_dir / "checkpoint"),
            "--data", str(fixture_dir), "--split", "dev", "--index", "0",
            "--no-csm"])
        assert result.exit_code == 0, result.output
        dump = json.loads(result.output)
        probs = [e["prob"] for e in dump["bias_top"]]
        expected = None
        for p in probs:
            expected = expected if expected is not None else p
            assert p == pytest.approx(expected, abs=1e-9)


def test_self_round_trip_of_reports(runner, trained_dir, fixture_dir, tmp_path):
    out = tmp_path / "rt.json"
    result = runner.invoke(main, [
        "evaluate", "--checkpoint", str(trained_dir / "checkpoint"),
        "--data", str(fixture_dir), "--split", "dev", "--out", str(out)])
    assert result.exit_code == 0
    parsed = json.loads(out.read_text())
    assert {"ppl", "word_f1", "bleu1", "bleu2", "dist1", "dist2",
            "knowledge_f1", "failure", "options"} <= set(parsed)

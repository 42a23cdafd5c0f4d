"""Command-line pipeline: config handling, commands, and exit codes."""

import json

import numpy as np
import pytest

from ratext.cli import DEFAULT_CONFIG, main
from ratext.training import PRESETS, Hyperparams, hyperparams_hash

MICRO_SPEC = {
    "vocab_size": 60, "num_classes": 3, "keyphrases_per_class": 2,
    "keyphrase_len": [2, 3], "seq_len": [9, 12], "noise_rate": 0.3,
    "stray_rate": 0.15, "n_train": 48, "n_dev": 12, "n_test": 12, "seed": 5,
}


@pytest.fixture
def micro(tmp_path):
    config = {
        "out_dir": str(tmp_path / "run"),
        "data": {"dir": str(tmp_path / "data"), "spec": MICRO_SPEC},
        "model": {"embed_dim": 5, "hidden_dim": 5, "lm_embed_dim": 5,
                  "lm_hidden_dim": 5},
        "hyperparams": {"lambda_ib": 0.05, "lambda_g": 0.03, "lambda_mi": 0.01,
                        "lambda_lm": 0.01, "r_select": 0.3, "batch_size": 16,
                        "epochs": 2, "seed": 0},
        "lm": {"steps": 8},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return path, tmp_path


def run(*argv) -> int:
    return main(list(argv))


def test_pipeline_end_to_end(micro, capsys):
    config, tmp = micro
    assert run("gen-data", "--config", str(config)) == 0
    for name in ("train.jsonl", "dev.jsonl", "test.jsonl", "vocab.txt",
                 "config.resolved.json"):
        assert (tmp / "data" / name).exists()

    assert run("train", "--config", str(config)) == 0
    for name in ("model.ckpt", "lm.ckpt", "metrics.csv", "epochs.csv",
                 "config.resolved.json"):
        assert (tmp / "run" / name).exists()

    assert run("eval", "--config", str(config)) == 0
    report = json.loads((tmp / "run" / "report.json").read_text())
    assert 0.0 <= report["task"]["accuracy"] <= 1.0
    assert set(report["rationale"]) == {"precision", "recall", "f1", "selection_pct"}
    assert report["meta"]["split"] == "test"
    assert report["meta"]["n_instances"] == 12
    resolved = json.loads((tmp / "run" / "config.resolved.json").read_text())
    hp = Hyperparams(**resolved["hyperparams"])
    assert report["meta"]["hyperparams_hash"] == hyperparams_hash(hp)

    assert run("extract", "--config", str(config)) == 0
    lines = (tmp / "run" / "rationales_test.jsonl").read_text().splitlines()
    assert len(lines) == 12
    for line in lines:
        row = json.loads(line)
        assert set(row) == {"tokens", "mask", "pred", "sel_pct"}
        assert len(row["mask"]) == len(row["tokens"])
        assert set(row["mask"]) <= {0, 1}
        assert row["sel_pct"] == pytest.approx(sum(row["mask"]) / len(row["mask"]))
    out = capsys.readouterr().out
    assert "wrote" in out


def test_seed_flag_controls_data_and_training(micro):
    config, tmp = micro
    assert run("gen-data", "--config", str(config), "--seed", "21") == 0
    first = (tmp / "data" / "train.jsonl").read_bytes()
    resolved = json.loads((tmp / "data" / "config.resolved.json").read_text())
    assert resolved["hyperparams"]["seed"] == 21
    assert resolved["data"]["spec"]["seed"] == 21
    assert run("gen-data", "--config", str(config), "--seed", "21") == 0
    assert (tmp / "data" / "train.jsonl").read_bytes() == first
    assert run("gen-data", "--config", str(config), "--seed", "22") == 0
    assert (tmp / "data" / "train.jsonl").read_bytes() != first


def test_dotted_overrides_reach_the_resolved_config(micro):
    config, tmp = micro
    assert run("gen-data", "--config", str(config),
               "--set", "data.spec.n_train=32",
               "--set", "hyperparams.epochs=1") == 0
    resolved = json.loads((tmp / "data" / "config.resolved.json").read_text())
    assert resolved["data"]["spec"]["n_train"] == 32
    assert resolved["hyperparams"]["epochs"] == 1
    assert len((tmp / "data" / "train.jsonl").read_text().splitlines()) == 32


def test_presets_overwrite_hyperparams(micro):
    config, tmp = micro
    assert run("gen-data", "--config", str(config),
               "--preset", "legal-classification") == 0
    resolved = json.loads((tmp / "data" / "config.resolved.json").read_text())
    for key, value in PRESETS["legal-classification"].items():
        assert resolved["hyperparams"][key] == value


def test_unknown_config_key_exits_2(micro, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"niceties": True}))
    assert run("gen-data", "--config", str(bad)) == 2
    assert "code=2" in capsys.readouterr().err


def test_malformed_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert run("gen-data", "--config", str(bad)) == 2
    bad.write_text("[1, 2]")
    assert run("gen-data", "--config", str(bad)) == 2
    assert run("gen-data", "--config", str(tmp_path / "absent.json")) == 2
    err = capsys.readouterr().err
    assert err.count("code=2") == 3


def test_unknown_set_key_exits_2(micro, capsys):
    config, _ = micro
    assert run("gen-data", "--config", str(config),
               "--set", "hyperparams.warmup=5") == 2
    assert run("gen-data", "--config", str(config), "--set", "no-equals") == 2
    assert "code=2" in capsys.readouterr().err


def test_invalid_spec_value_exits_2(micro, capsys):
    config, _ = micro
    assert run("gen-data", "--config", str(config),
               "--set", "data.spec.noise_rate=7") == 2
    assert "code=2" in capsys.readouterr().err


def test_missing_data_exits_3(micro, capsys):
    config, _ = micro
    assert run("train", "--config", str(config)) == 3
    assert run("eval", "--config", str(config)) == 3
    assert "code=3" in capsys.readouterr().err


def test_checkpoint_corpus_mismatch_exits_3(micro, capsys):
    config, tmp = micro
    assert run("gen-data", "--config", str(config)) == 0
    assert run("train", "--config", str(config)) == 0
    assert run("gen-data", "--config", str(config),
               "--set", "data.spec.vocab_size=80") == 0
    assert run("eval", "--config", str(config)) == 3
    assert "code=3" in capsys.readouterr().err


def test_numeric_fault_exits_4(micro, capsys):
    config, _ = micro
    assert run("gen-data", "--config", str(config)) == 0
    with np.errstate(all="ignore"):
        code = run("train", "--config", str(config),
                   "--set", "hyperparams.lr=1e160")
    assert code == 4
    assert "code=4" in capsys.readouterr().err


def test_failed_verification_exits_5(micro, capsys):
    config, _ = micro
    assert run("gradcheck", "--config", str(config),
               "--set", "gradcheck.tolerance=1e-18") == 5
    out = capsys.readouterr()
    assert "code=5" in out.err


def test_default_config_is_self_consistent():
    hp = Hyperparams(**DEFAULT_CONFIG["hyperparams"])
    hp.validate()
    from ratext.data import SyntheticSpec
    raw = dict(DEFAULT_CONFIG["data"]["spec"])
    raw["keyphrase_len"] = tuple(raw["keyphrase_len"])
    raw["seq_len"] = tuple(raw["seq_len"])
    SyntheticSpec(**raw).validate()

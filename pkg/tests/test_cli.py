import json
from pathlib import Path

import pytest

from semimm.checkpoint import load_checkpoint
from semimm.cli import main
from semimm.config import (ExperimentConfig, config_hash,
                           resolve_gamma_scheduler)
from semimm.data import SplitManifest
from semimm.errors import ConfigError

from conftest import rewrite_config


def run(env, *argv):
    return main([argv[0], "--config", str(env["config"]), *argv[1:]])


def test_split_counts_and_reruns_identically(cli_env, capsys):
    assert run(cli_env, "split") == 0
    out = capsys.readouterr().out
    assert "val:       100" in out
    assert "labeled:   250" in out
    assert "unlabeled: 150" in out
    assert "test:      40" in out
    manifest_path = Path(cli_env["raw"]["paths"]["manifest"])
    first = manifest_path.read_bytes()
    assert run(cli_env, "split") == 0
    assert manifest_path.read_bytes() == first


def test_split_rejects_zero_ratio(cli_env, capsys):
    rewrite_config(cli_env, lambda raw: raw["split"].update(labeled_ratio=0.0))
    assert run(cli_env, "split") == 2
    assert "labeled_ratio" in capsys.readouterr().err


def test_unknown_config_key_rejected(cli_env, capsys):
    rewrite_config(cli_env, lambda raw: raw.update(bogus_key=1))
    assert run(cli_env, "split") == 2
    assert "bogus_key" in capsys.readouterr().err


def test_pretrain_requires_manifest(cli_env, capsys):
    assert run(cli_env, "pretrain") == 3
    assert "split.json" in capsys.readouterr().err


def test_pretrain_writes_checkpoint_and_curves(cli_env):
    run(cli_env, "split")
    assert run(cli_env, "pretrain") == 0
    ckpt_dir = Path(cli_env["raw"]["paths"]["checkpoint_dir"])
    tensors, meta = load_checkpoint(ckpt_dir / "stage1.ckpt")
    assert len(tensors) == 10
    assert meta["stage"] == "stage1"
    curve = (ckpt_dir / "loss_curve_stage1.csv").read_text().splitlines()
    assert curve[0] == "epoch,stage,loss,lr"
    assert len(curve) == 1 + 2 * 3  # two models x three epochs
    assert "stage1/ae_image" in curve[1]


def test_finetune_evaluate_predict_flow(cli_env, capsys):
    run(cli_env, "split")
    run(cli_env, "pretrain")
    assert run(cli_env, "finetune") == 0
    ckpt_dir = Path(cli_env["raw"]["paths"]["checkpoint_dir"])
    _, meta = load_checkpoint(ckpt_dir / "stage2.ckpt")
    assert meta["stage"] == "stage2"
    assert meta["trainable_parameters"] > 0
    assert (ckpt_dir / "val_metrics.csv").exists()

    assert run(cli_env, "evaluate", "--partition", "val") == 0
    assert run(cli_env, "evaluate", "--partition", "test") == 0
    reports_dir = Path(cli_env["raw"]["paths"]["report_dir"])
    val_report = json.loads((reports_dir / "report_val.json").read_text())
    test_report = json.loads((reports_dir / "report_test.json").read_text())
    assert val_report["partition"] == "val"
    assert test_report["partition"] == "test"
    assert val_report["sample_count"] == 100
    assert test_report["sample_count"] == 40

    capsys.readouterr()
    assert run(cli_env, "predict", "--partition", "val") == 0
    lines = (reports_dir / "predictions_val.jsonl").read_text().splitlines()
    assert len(lines) == 100
    row = json.loads(lines[0])
    assert set(row) == {"id", "probabilities", "decisions"}
    assert len(row["probabilities"]) == 4


def test_run_all_end_to_end_f1(cli_env):
    assert run(cli_env, "run-all") == 0
    reports_dir = Path(cli_env["raw"]["paths"]["report_dir"])
    val_report = json.loads((reports_dir / "report_val.json").read_text())
    assert val_report["weighted_f1"] > 0.95
    assert (reports_dir / "report_test.json").exists()


def test_run_all_reproducible(cli_env, tmp_path):
    def redirect(raw, sub):
        raw["paths"]["manifest"] = str(tmp_path / sub / "split.json")
        raw["paths"]["checkpoint_dir"] = str(tmp_path / sub / "ckpt")
        raw["paths"]["report_dir"] = str(tmp_path / sub / "reports")

    artifacts = {}
    for sub in ("one", "two"):
        rewrite_config(cli_env, lambda raw: redirect(raw, sub))
        assert run(cli_env, "run-all") == 0
        artifacts[sub] = {
            "manifest": (tmp_path / sub / "split.json").read_bytes(),
            "stage1": (tmp_path / sub / "ckpt" / "stage1.ckpt").read_bytes(),
            "stage2": (tmp_path / sub / "ckpt" / "stage2.ckpt").read_bytes(),
            "report": (tmp_path / sub / "reports" / "report_val.json").read_text(),
        }
    assert artifacts["one"] == artifacts["two"]


def test_snapshot_materializes_every_hyperparameter(cli_env):
    run(cli_env, "split")
    snapshot = json.loads(
        (Path(cli_env["raw"]["paths"]["checkpoint_dir"]) /
         "resolved_config.json").read_text())
    assert snapshot["split"]["original_training_size"] == 500
    s1, s2 = snapshot["stage1"], snapshot["stage2"]
    for key in ("epochs", "lr", "batch_size", "weight_decay", "prelu_init", "adam"):
        assert key in s1
    for key in ("epochs", "lr", "batch_size", "gamma_scheduler", "loss",
                "dropout_rate", "threshold", "proj_dim", "adam", "db_focal"):
        assert key in s2
    assert s2["db_focal"]["gamma"] == 2.0
    assert s1["adam"] == {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8}
    assert snapshot["constants"]["prng"] == "pcg64"
    assert config_hash(snapshot) == config_hash(snapshot)


def test_flag_overrides_beat_config(cli_env):
    run(cli_env, "split")
    manifest_path = Path(cli_env["raw"]["paths"]["manifest"])
    baseline = SplitManifest.load(manifest_path)
    assert run(cli_env, "split", "--seed", "77") == 0
    overridden = SplitManifest.load(manifest_path)
    assert overridden.seed == 77
    assert overridden.labeled_ids != baseline.labeled_ids


def test_set_override_dotted_path(cli_env):
    assert run(cli_env, "split", "--set", "split.val_count=60") == 0
    manifest = SplitManifest.load(Path(cli_env["raw"]["paths"]["manifest"]))
    assert len(manifest.val_ids) == 60


def test_save_best_checkpoint_flow(cli_env):
    rewrite_config(cli_env, lambda raw: raw["stage2"].update(save_best=True))
    run(cli_env, "split")
    run(cli_env, "pretrain")
    assert run(cli_env, "finetune") == 0
    ckpt_dir = Path(cli_env["raw"]["paths"]["checkpoint_dir"])
    assert (ckpt_dir / "stage2_best.ckpt").exists()
    _, meta = load_checkpoint(ckpt_dir / "stage2_best.ckpt")
    assert meta["selection"] == "best_on_validation"
    assert run(cli_env, "evaluate", "--partition", "val",
               "--checkpoint", "best") == 0


def test_evaluate_detects_broken_hash_chain(cli_env, capsys):
    run(cli_env, "run-all")
    ckpt_dir = Path(cli_env["raw"]["paths"]["checkpoint_dir"])
    raw = bytearray((ckpt_dir / "stage1.ckpt").read_bytes())
    raw[40] ^= 0xFF
    (ckpt_dir / "stage1.ckpt").write_bytes(bytes(raw))
    assert run(cli_env, "evaluate", "--partition", "val") == 3
    assert "chain" in capsys.readouterr().err


def test_evaluate_detects_wrong_manifest(cli_env, capsys):
    run(cli_env, "run-all")
    assert run(cli_env, "split", "--seed", "123") == 0  # replaces the manifest
    assert run(cli_env, "evaluate", "--partition", "val") == 3
    assert "different split" in capsys.readouterr().err


def test_gamma_scheduler_table_resolution():
    assert resolve_gamma_scheduler("mami", 0.05) == 0.93
    assert resolve_gamma_scheduler("mami", 0.10) == 0.90
    assert resolve_gamma_scheduler("mami", 0.30) == 0.85
    for ratio in (0.05, 0.10, 0.30, 0.17):
        assert resolve_gamma_scheduler("hateful_memes", ratio) == 0.96
    with pytest.raises(ConfigError):
        resolve_gamma_scheduler("mami", 0.17)
    with pytest.raises(ConfigError):
        resolve_gamma_scheduler("custom", 0.05)


def test_dataset_defaults_resolution():
    base = {
        "dataset_tag": "mami", "seed": 1,
        "paths": {"features": "f", "manifest": "m", "checkpoint_dir": "c"},
        "split": {"labeled_ratio": 0.05},
    }
    resolved = ExperimentConfig.from_dict(base).resolve(pool_size=10_000)
    assert resolved["stage2"]["loss"] == "db_focal"
    assert resolved["stage2"]["gamma_scheduler"] == 0.93
    assert resolved["stage1"]["weight_decay"] == 1e-4
    assert resolved["stage1"]["epochs"] == 200
    assert resolved["stage2"]["batch_size"] == 40

    base["dataset_tag"] = "hateful_memes"
    resolved = ExperimentConfig.from_dict(base).resolve(pool_size=10_000)
    assert resolved["stage2"]["loss"] == "bce"
    assert resolved["stage2"]["gamma_scheduler"] == 0.96
    assert resolved["stage1"]["weight_decay"] == 0.0

    base["dataset_tag"] = "custom"
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(base).resolve(pool_size=10)


@pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
def test_numerical_abort_exit_code(cli_env, capsys):
    run(cli_env, "split")
    # an absurd learning rate overflows float32 activations within a batch
    assert run(cli_env, "pretrain", "--set", "stage1.lr=1e30",
               "--set", "stage1.epochs=1") == 4
    err = capsys.readouterr().err
    assert "numerical abort" in err and "epoch 0" in err


def test_missing_config_file_is_config_error(tmp_path, capsys):
    assert main(["split", "--config", str(tmp_path / "none.json")]) == 2
    assert "none.json" in capsys.readouterr().err

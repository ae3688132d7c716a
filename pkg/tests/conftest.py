import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from semimm.data import write_features
from semimm.synthetic import separable


@pytest.fixture
def cli_env(tmp_path):
    """Self-contained experiment directory over a small separable dataset."""
    pool, names = separable(500, dim=16, num_classes=4, seed=21, id_prefix="pool")
    test, _ = separable(40, dim=16, num_classes=4, seed=22, id_prefix="test")
    features = tmp_path / "features.mmf1"
    write_features(pool + test, features)
    test_ids = tmp_path / "test_ids.json"
    test_ids.write_text(json.dumps([r.id for r in test]))

    config = {
        "dataset_tag": "custom",
        "seed": 9,
        "precision": "float32",
        "paths": {
            "features": str(features),
            "test_ids": str(test_ids),
            "manifest": str(tmp_path / "split.json"),
            "checkpoint_dir": str(tmp_path / "ckpt"),
            "report_dir": str(tmp_path / "reports"),
        },
        "split": {"labeled_ratio": 0.5, "val_count": 100},
        "stage1": {"epochs": 3, "lr": 1e-3, "batch_size": 50},
        "stage2": {"epochs": 40, "lr": 1e-3, "batch_size": 40,
                   "gamma_scheduler": 0.99, "loss": "bce", "proj_dim": 32},
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config, indent=2))
    return {"dir": tmp_path, "config": config_path, "raw": config,
            "features": features, "class_names": names}


def rewrite_config(env, mutate):
    raw = json.loads(Path(env["config"]).read_text())
    mutate(raw)
    env["config"].write_text(json.dumps(raw, indent=2))

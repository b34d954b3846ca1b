import json

import numpy as np
import pytest
import torch

from avsep.checkpoint import load_model
from avsep.errors import ConfigError
from avsep.separator import SeparationModel, SeparatorConfig
from avsep.training import PlateauScheduler, TrainConfig, train

from conftest import tiny_config


def test_scheduler_halves_exactly_once_on_three_epoch_plateau():
    sched = PlateauScheduler(halve_patience=3, stop_patience=5)
    assert sched.step(1.0) == (True, False, False)
    halves = [sched.step(1.0)[1] for _ in range(4)]
    assert halves == [False, False, True, False]


def test_scheduler_stops_after_five_epoch_plateau():
    sched = PlateauScheduler(halve_patience=3, stop_patience=5)
    sched.step(2.0)
    outcomes = [sched.step(2.0) for _ in range(5)]
    assert [o[2] for o in outcomes] == [False, False, False, False, True]


def test_scheduler_improvement_resets_counters():
    sched = PlateauScheduler(halve_patience=3, stop_patience=5)
    sched.step(1.0)
    sched.step(1.0)
    sched.step(1.0)
    improved, halve, stop = sched.step(0.5)  # strict improvement
    assert improved and not halve and not stop
    assert sched.stale_epochs == 0
    assert sched.best == 0.5
    # equality is NOT an improvement under the best-so-far rule
    assert sched.step(0.5) == (False, False, False)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(stop_patience=0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"lr": 1e-3, "unknown_knob": 5})
    cfg = TrainConfig.from_dict({"lr": 1e-3, "batch_size": 4})
    assert cfg.lr == 1e-3 and cfg.batch_size == 4
    assert cfg.lr_halve_patience == 3 and cfg.stop_patience == 5
    assert TrainConfig().lr == 1.5e-4


def _smoke_train_cfg(toy_corpus, tmp_path, **overrides):
    base = dict(train_manifest=str(toy_corpus.root / "manifest.jsonl"),
                lr=1e-3, batch_size=2, max_epochs=2, steps_per_epoch=2,
                seed=0, checkpoint_dir=str(tmp_path / "ckpt"),
                clip_seconds=0.5, n_speakers=2, cue_absence_prob=0.0,
                val_samples=2, num_threads=2)
    base.update(overrides)
    return TrainConfig(**base)


def _smoke_model_cfg():
    return tiny_config(kernel_size=32, chunk_len=100, dim=16, visual_dim=12, n_max=5)


def test_train_smoke_logs_and_checkpoints(toy_corpus, tmp_path):
    torch.manual_seed(0)
    model = SeparationModel(_smoke_model_cfg())
    cfg = _smoke_train_cfg(toy_corpus, tmp_path)
    result = train(model, cfg)
    assert result.epochs_run == 2
    # best-so-far sequence is monotone non-increasing
    hist = result.best_val_history
    assert all(b <= a for a, b in zip(hist, hist[1:]))
    rows = [json.loads(l) for l in open(result.log_path)]
    assert len(rows) == 2
    assert all({"epoch", "train_loss", "val_loss", "lr", "seed"} <= set(r) for r in rows)
    loaded = load_model(result.best_checkpoint)
    assert loaded.config.to_dict() == model.config.to_dict()


def test_train_is_deterministic_single_thread(toy_corpus, tmp_path):
    runs = []
    for tag in ("a", "b"):
        torch.manual_seed(0)
        model = SeparationModel(_smoke_model_cfg())
        cfg = _smoke_train_cfg(toy_corpus, tmp_path / tag, num_threads=1,
                               max_epochs=1)
        result = train(model, cfg)
        runs.append(json.loads(open(result.log_path).readline()))
    assert runs[0] == runs[1]


def test_resume_from_incompatible_checkpoint(toy_corpus, tmp_path, capsys):
    import json as _json
    from avsep.checkpoint import save_checkpoint
    from avsep.cli import main

    torch.manual_seed(1)
    other = SeparationModel(tiny_config(kernel_size=16, chunk_len=8, dim=8,
                                        visual_dim=12))
    ckpt = tmp_path / "other.ckpt"
    save_checkpoint(other, ckpt)
    config = {
        "separator": {"kernel_size": 32, "chunk_len": 100, "dim": 16, "heads": 2,
                      "content_layers": 1, "num_blocks": 1, "dropout": 0.0,
                      "visual_dim": 12, "n_max": 5},
        "train": {"train_manifest": str(toy_corpus.root / "manifest.jsonl"),
                  "batch_size": 1, "max_epochs": 1, "steps_per_epoch": 1,
                  "checkpoint_dir": str(tmp_path / "ckpt"), "clip_seconds": 0.5,
                  "n_speakers": 2, "val_samples": 1,
                  "resume_from": str(ckpt)},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(_json.dumps(config))
    assert main(["train", "--config", str(cfg_path)]) != 0
    assert "version error:" in capsys.readouterr().err

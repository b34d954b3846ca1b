"""Training loop: Adam, plateau-driven lr halving, early stop.

Validation loss is tracked best-so-far; the learning rate halves after
``lr_halve_patience`` epochs without strict improvement and training
stops after ``stop_patience``. The best checkpoint is kept alongside a
line-delimited JSON log of every epoch.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_weights, save_checkpoint
from .data import (CUE_ABSENCE_PROB, Manifest, MixtureSpec, batched_spec_stream,
                   render_mixture, sample_mixture_spec)
from .errors import ConfigError
from .losses import combined_loss
from .separator import SeparationModel, SeparatorConfig


@dataclass
class TrainConfig:
    train_manifest: str = "manifest.jsonl"
    val_manifest: str | None = None
    lr: float = 1.5e-4
    lr_halve_patience: int = 3
    stop_patience: int = 5
    batch_size: int = 2
    max_epochs: int = 20
    steps_per_epoch: int = 100
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    clip_seconds: float = 6.0
    fps: float = 25.0
    sample_rate: int = 16000
    n_speakers: int | None = None      # None -> dynamic 2:1:1:1 protocol
    cue_absence_prob: float = CUE_ABSENCE_PROB
    frame_mask_rate: float = 0.0
    val_samples: int = 16
    grad_clip: float | None = 5.0
    zero_mean_si_sdr: bool = False     # optional mean subtraction inside the loss
    num_threads: int | None = None     # set (e.g. 1) for bit-reproducible math
    resume_from: str | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr: must be > 0")
        for name in ("lr_halve_patience", "stop_patience", "batch_size",
                     "max_epochs", "steps_per_epoch", "val_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        if self.clip_seconds <= 0:
            raise ConfigError("clip_seconds: must be > 0")
        if not 0.0 <= self.cue_absence_prob <= 1.0:
            raise ConfigError("cue_absence_prob: must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict, where: str = "train") -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(f"{where}.{key}: unknown field")
        try:
            return cls(**raw)
        except ConfigError as exc:
            raise ConfigError(f"{where}.{exc}") from None
        except TypeError as exc:
            raise ConfigError(f"{where}: {exc}") from None


class PlateauScheduler:
    """Best-so-far plateau bookkeeping shared by the lr and stop rules."""

    def __init__(self, halve_patience: int, stop_patience: int):
        self.halve_patience = halve_patience
        self.stop_patience = stop_patience
        self.best = float("inf")
        self.stale_epochs = 0

    def step(self, value: float) -> tuple[bool, bool, bool]:
        """Feed one validation value; returns (improved, halve_now, stop_now)."""
        if value < self.best:
            self.best = value
            self.stale_epochs = 0
            return True, False, False
        self.stale_epochs += 1
        halve = self.stale_epochs % self.halve_patience == 0
        stop = self.stale_epochs >= self.stop_patience
        return False, halve, stop


def collate_batch(specs: list[MixtureSpec], manifest: Manifest, cfg: TrainConfig,
                  dtype=torch.float32):
    """Render one (N, P)-homogeneous bucket into batched tensors."""
    mixes, refs, visuals = [], [], []
    for spec in specs:
        mix, ref, vis = render_mixture(spec, manifest, clip_seconds=cfg.clip_seconds,
                                       fps=cfg.fps, sample_rate=cfg.sample_rate)
        mixes.append(mix.samples)
        refs.append(np.stack([r.samples for r in ref]))
        visuals.append(vis.data)
    n_visual = visuals[0].shape[0]
    mix_t = torch.as_tensor(np.stack(mixes), dtype=dtype)
    ref_t = torch.as_tensor(np.stack(refs), dtype=dtype)
    vis_t = torch.as_tensor(np.stack(visuals), dtype=dtype) if n_visual else None
    return mix_t, ref_t, vis_t, specs[0].n_speakers, n_visual


def batch_loss(model: SeparationModel, mix_t, ref_t, vis_t, n_speakers: int,
               n_visual: int, zero_mean: bool = False) -> torch.Tensor:
    est = model(mix_t, vis_t, n_speakers)  # [B, N, T]
    losses = [combined_loss(est[i], ref_t[i], n_visual, zero_mean=zero_mean).total
              for i in range(est.shape[0])]
    return sum(losses) / len(losses)


@dataclass
class TrainResult:
    best_val_loss: float
    epochs_run: int
    best_checkpoint: str
    log_path: str
    best_val_history: list


def train(model: SeparationModel, cfg: TrainConfig, log_fn=None) -> TrainResult:
    if cfg.num_threads is not None:
        torch.set_num_threads(cfg.num_threads)
    torch.manual_seed(cfg.seed)
    manifest = Manifest.load(cfg.train_manifest)
    if cfg.resume_from is not None:
        load_weights(model, cfg.resume_from)

    val_manifest = Manifest.load(cfg.val_manifest) if cfg.val_manifest else manifest
    val_rng = np.random.default_rng(cfg.seed + 1)
    val_specs = [sample_mixture_spec(val_manifest, val_rng, sample_id=f"val{i:05d}",
                                     n_speakers=cfg.n_speakers,
                                     cue_absence_prob=cfg.cue_absence_prob,
                                     frame_mask_rate=cfg.frame_mask_rate)
                 for i in range(cfg.val_samples)]

    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    best_path = ckpt_dir / "best.ckpt"
    log_path = ckpt_dir / "train_log.jsonl"

    optim = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = PlateauScheduler(cfg.lr_halve_patience, cfg.stop_patience)
    stream = batched_spec_stream(manifest, np.random.default_rng(cfg.seed),
                                 cfg.batch_size, n_speakers=cfg.n_speakers,
                                 cue_absence_prob=cfg.cue_absence_prob,
                                 frame_mask_rate=cfg.frame_mask_rate)
    best_history = []
    epochs_run = 0
    with open(log_path, "w") as log:
        for epoch in range(cfg.max_epochs):
            model.train()
            train_loss = 0.0
            for _ in range(cfg.steps_per_epoch):
                batch = collate_batch(next(stream), manifest, cfg)
                loss = batch_loss(model, *batch, zero_mean=cfg.zero_mean_si_sdr)
                optim.zero_grad()
                loss.backward()
                if cfg.grad_clip is not None:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optim.step()
                train_loss += float(loss.detach())
            train_loss /= cfg.steps_per_epoch
            val_loss = validation_loss(model, val_specs, val_manifest, cfg)
            improved, halve, stop = sched.step(val_loss)
            if improved:
                save_checkpoint(model, best_path,
                                meta={"epoch": epoch, "val_loss": val_loss, "seed": cfg.seed})
            if halve:
                for group in optim.param_groups:
                    group["lr"] *= 0.5
            best_history.append(sched.best)
            row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                   "best_val_loss": sched.best, "lr": optim.param_groups[0]["lr"],
                   "seed": cfg.seed}
            log.write(json.dumps(row, sort_keys=True) + "\n")
            log.flush()
            if log_fn is not None:
                log_fn(row)
            epochs_run = epoch + 1
            if stop:
                break
    return TrainResult(best_val_loss=sched.best, epochs_run=epochs_run,
                       best_checkpoint=str(best_path), log_path=str(log_path),
                       best_val_history=best_history)


def validation_loss(model: SeparationModel, specs: list[MixtureSpec],
                    manifest: Manifest, cfg: TrainConfig) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for spec in specs:
            mix_t, ref_t, vis_t, n, p = collate_batch([spec], manifest, cfg)
            total += float(batch_loss(model, mix_t, ref_t, vis_t, n, p,
                                      zero_mean=cfg.zero_mean_si_sdr))
    return total / len(specs)

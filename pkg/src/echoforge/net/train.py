"""Training loop: with-replacement channel sampling, plateau lr decay and
early stopping on validation MOS Pearson correlation."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import torch

from ..audio import read_wav, resample
from ..config import SCHEMA_VERSION, Config, FeatureConfig
from ..features import frame_count, log_mel, segment_count, segment_frames
from ..seeding import child_rng, derive_seed
from .checkpoint import Checkpoint
from .model import METRICS, MosraNet, Normalizer, loss, parameter_count, single_channel_config
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class SceneFeatures:
    """Log-mel frames ``[scenes, mics, bands, frames]`` and labels ``[scenes, mics, 5]``."""

    ids: list[str]
    mels: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, idx) -> "SceneFeatures":
        idx = list(idx)
        return SceneFeatures([self.ids[i] for i in idx], self.mels[idx], self.labels[idx])


def load_features(entries: list[dict], cfg: FeatureConfig | None = None) -> SceneFeatures:
    """Log-mel frames for every manifest entry (all scenes must share shape)."""
    cfg = cfg or FeatureConfig()
    if not entries:
        raise TrainingError("empty dataset")
    mels, labels = [], []
    for e in entries:
        chans = []
        for w in e["wavs"]:
            buf = read_wav(w)
            chans.append(resample(buf.samples, buf.sample_rate_hz, cfg.fs))
        mels.append(np.stack([log_mel(c, cfg) for c in chans]).astype(np.float32))
        labels.append([[lab[m] for m in METRICS] for lab in e["labels"]])
    if len({m.shape for m in mels}) != 1:
        raise TrainingError("all scenes must have the same channel count and duration")
    return SceneFeatures([e["id"] for e in entries], np.stack(mels), np.asarray(labels, dtype=np.float64))


@dataclass
class PlateauSchedule:
    """Decay lr by ``lr_factor`` after ``lr_patience`` epochs without a lower
    validation loss; stop after ``patience`` epochs without a higher score."""

    lr: float
    lr_patience: int = 15
    lr_factor: float = 10.0
    patience: int = 30
    best_loss: float = math.inf
    best_score: float = -math.inf
    loss_bad: int = 0
    score_bad: int = 0

    def step(self, val_loss: float, score: float) -> dict[str, bool]:
        if val_loss < self.best_loss:
            self.best_loss, self.loss_bad = val_loss, 0
        else:
            self.loss_bad += 1
        decayed = False
        if self.loss_bad >= self.lr_patience:
            self.lr /= self.lr_factor
            self.loss_bad = 0
            decayed = True
        improved = bool(np.isfinite(score) and score > self.best_score)
        if improved:
            self.best_score, self.score_bad = score, 0
        else:
            self.score_bad += 1
        return {"improved": improved, "lr_decayed": decayed, "stop": self.score_bad >= self.patience}


def sample_channels(rng: np.random.Generator, n_available: int, n_slots: int = 5) -> np.ndarray:
    """Device indices drawn with replacement."""
    return rng.integers(0, n_available, size=n_slots)


def _crop(n_frames: int, crop_s: float | None, fcfg: FeatureConfig) -> int | None:
    if crop_s is None:
        return None
    n_seg = segment_count(frame_count(int(round(crop_s * fcfg.fs)), fcfg), fcfg)
    if n_seg < 1:
        raise TrainingError("train.crop_s is shorter than one segment")
    return (n_seg - 1) * fcfg.segment_hop + fcfg.segment_frames if n_seg < segment_count(n_frames, fcfg) else None


def _batch(mels: list[np.ndarray], fcfg: FeatureConfig) -> torch.Tensor:
    return torch.from_numpy(np.stack([segment_frames(m, fcfg) for m in mels]))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    if a.size < 2 or np.std(a) == 0 or np.std(b) == 0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict[str, Any]] = field(default_factory=list)


@torch.no_grad()
def validate(model: MosraNet, data: SceneFeatures, norm: Normalizer, fcfg: FeatureConfig,
             batch_size: int = 32) -> tuple[float, float]:
    """Normalized validation loss and MOS Pearson (native units)."""
    model.eval()
    single = model.cfg.in_channels == 1
    n_mics = data.mels.shape[1]
    preds, targets = [], []
    for start in range(0, len(data), batch_size):
        mels = data.mels[start : start + batch_size]
        labels = data.labels[start : start + batch_size]
        if single:
            x = _batch([m[c : c + 1] for m in mels for c in range(n_mics)], fcfg)
            p = model(x)[:, :, 0].reshape(len(mels), n_mics, -1).permute(0, 2, 1)
        else:
            slots = [i % n_mics for i in range(model.cfg.in_channels)]
            p = model(_batch([m[slots] for m in mels], fcfg))[:, :, : n_mics]
        preds.append(p.double().numpy())
        targets.append(norm.normalize(labels.transpose(0, 2, 1), axis=1))
    pred = np.concatenate(preds)
    target = np.concatenate(targets)
    val_loss = float(loss(torch.from_numpy(pred), torch.from_numpy(target)))
    mos_p = norm.denormalize(pred, axis=1)[:, 0].ravel()
    mos_t = norm.denormalize(target, axis=1)[:, 0].ravel()
    return val_loss, _pearson(mos_p, mos_t)


def train(
    train_data: SceneFeatures,
    val_data: SceneFeatures | None,
    cfg: Config | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Fit a model; returns the best-Pearson checkpoint and the epoch history.

    ``cfg.train.mode`` selects the five-channel model ("multi") or the
    single-channel baseline ("single", one example per scene and device).
    """
    cfg = cfg or Config()
    tc, fcfg = cfg.train, cfg.features
    if len(train_data) == 0:
        raise TrainingError("empty dataset")
    if tc.mode not in ("multi", "single"):
        raise TrainingError(f"unknown train.mode {tc.mode!r}")
    if tc.channel_sampling not in ("replacement", "fixed"):
        raise TrainingError(f"unknown train.channel_sampling {tc.channel_sampling!r}")
    if val_data is None or len(val_data) == 0:
        log.warning("no validation scenes; validating on the training set")
        val_data = train_data

    torch.use_deterministic_algorithms(True)
    torch.manual_seed(derive_seed(tc.seed, "init") % 2**63)
    mcfg = single_channel_config(cfg.model) if tc.mode == "single" else cfg.model
    model = MosraNet(mcfg)
    params = [p for p in model.parameters()]
    norm = Normalizer.fit(train_data.labels)
    targets = norm.normalize(train_data.labels).astype(np.float32)  # [N, M, 5]
    n_scenes, n_mics = train_data.mels.shape[:2]
    n_frames = train_data.mels.shape[-1]
    crop = _crop(n_frames, tc.crop_s, fcfg)

    sched = PlateauSchedule(tc.lr, tc.lr_patience, tc.lr_factor, tc.patience)
    state = AdamState()
    history: list[dict[str, Any]] = []
    best_state = copy.deepcopy(model.state_dict())
    best_epoch = 0
    steps = 0

    for epoch in range(1, tc.epochs + 1):
        rng = child_rng(tc.seed, "epoch", epoch)
        if tc.mode == "single":
            examples = [(s, np.array([m])) for s in range(n_scenes) for m in range(n_mics)]
        elif tc.channel_sampling == "fixed":
            slots = np.arange(mcfg.in_channels) % n_mics
            examples = [(s, slots) for s in range(n_scenes)]
        else:
            examples = [(s, sample_channels(rng, n_mics, mcfg.in_channels)) for s in range(n_scenes)]
        order = rng.permutation(len(examples))
        model.train()
        step_losses = []
        for start in range(0, len(order), tc.batch_size):
            if tc.max_steps is not None and steps >= tc.max_steps:
                break
            batch = [examples[i] for i in order[start : start + tc.batch_size]]
            mels, ys = [], []
            for s, chans in batch:
                m = train_data.mels[s][chans]
                if crop is not None:
                    n_start = segment_count(n_frames, fcfg) - segment_count(crop, fcfg) + 1
                    off = int(rng.integers(n_start)) * fcfg.segment_hop
                    m = m[..., off : off + crop]
                mels.append(m)
                ys.append(targets[s][chans].T)
            x = _batch(mels, fcfg)
            y = torch.from_numpy(np.stack(ys))
            model.zero_grad(set_to_none=True)
            value = loss(model(x), y)
            if not torch.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, step {steps + 1}, lr {sched.lr:g}; "
                    f"last losses {step_losses[-5:]}"
                )
            value.backward()
            adam_step(params, [p.grad for p in params], state, sched.lr)
            steps += 1
            step_losses.append(value.item())

        lr_used = sched.lr
        val_loss, pearson = validate(model, val_data, norm, fcfg, tc.batch_size)
        events = sched.step(val_loss, pearson)
        if events["improved"]:
            best_state = copy.deepcopy(model.state_dict())
            best_epoch = epoch
        record = {
            "epoch": epoch,
            "steps": steps,
            "lr": lr_used,
            "train_loss": float(np.mean(step_losses)) if step_losses else float("nan"),
            "val_loss": val_loss,
            "val_mos_pearson": pearson,
            "step_losses": step_losses,
            **events,
        }
        history.append(record)
        log.info("epoch %d loss %.4f val %.4f r %.3f lr %g", epoch, record["train_loss"], val_loss, pearson, lr_used)
        if on_epoch:
            on_epoch(record)
        if events["stop"] or (tc.max_steps is not None and steps >= tc.max_steps):
            break

    model.load_state_dict(best_state)
    model.eval()
    meta = {
        "schema": SCHEMA_VERSION,
        "seed": tc.seed,
        "mode": tc.mode,
        "best_epoch": best_epoch,
        "parameter_count": parameter_count(model),
        "config": cfg.to_dict(),
        "history": [{k: v for k, v in h.items() if k != "step_losses"} for h in history],
    }
    return TrainResult(Checkpoint(model, norm, meta), history)

"""Slice datasets and the training loop.

Slices are min-max normalized per channel at dataset-construction time.
Slices whose brain-mask coverage falls below 1% are dropped. The train/val
split is by subject when at least two subjects are present, otherwise it
falls back to a slice-level split.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..errors import InsufficientData, ShapeError
from ..volume import SliceImage, Volume4D, normalize_slice
from .model import Autoencoder, ModelConfig, build_model
from .optim import Adam


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 32
    epochs: int = 200
    val_fraction: float = 0.15
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    seed: int = 0
    split_by: str = "subject"  # subject | slice

    def __post_init__(self):
        if self.lr <= 0:
            raise ShapeError("learning rate must be positive")
        if not 0 < self.val_fraction < 1:
            raise ShapeError("val_fraction must lie in (0, 1)")
        if self.split_by not in ("subject", "slice"):
            raise ShapeError(f"unknown split_by {self.split_by!r}")


@dataclass(frozen=True)
class SliceSample:
    data: np.ndarray  # (C, H, W), normalized to [0, 1]
    subject: str = "s0"


@dataclass
class Checkpoint:
    """Model at the minimum-validation-loss epoch plus the loss history."""

    model: Autoencoder
    history: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val_mse(self) -> float:
        return self.history[self.best_epoch][2]


MIN_MASK_FRACTION = 0.01


def _slice_to_sample(data_whc: np.ndarray, subject: str) -> SliceSample:
    normalized = normalize_slice(SliceImage(data_whc)).data
    return SliceSample(data=normalized.transpose(2, 0, 1), subject=subject)


def _mask_fraction(mask: Volume4D | None, z: int) -> float:
    if mask is None:
        return 1.0
    plane = mask.data[:, :, z, 0]
    return float(np.count_nonzero(plane)) / plane.size


def slices_per_volume(
    vol: Volume4D, mask: Volume4D | None = None, subject: str = "s0"
) -> list[SliceSample]:
    """One 1-channel sample per (volume index, z); low-coverage slices dropped."""
    samples = []
    for z in range(vol.dims[2]):
        if _mask_fraction(mask, z) < MIN_MASK_FRACTION:
            continue
        for v in range(vol.n_volumes):
            samples.append(_slice_to_sample(vol.data[:, :, z, v : v + 1], subject))
    return samples


def stacked_slices(
    vol: Volume4D, mask: Volume4D | None = None, subject: str = "s0"
) -> list[SliceSample]:
    """One multi-channel sample per z (all V values as channels)."""
    samples = []
    for z in range(vol.dims[2]):
        if _mask_fraction(mask, z) < MIN_MASK_FRACTION:
            continue
        samples.append(_slice_to_sample(vol.data[:, :, z, :], subject))
    return samples


def averaged_dwi_slices(
    dwi: Volume4D,
    n_average: int = 15,
    n_samples: int = 10,
    seed: int = 0,
    mask: Volume4D | None = None,
    subject: str = "s0",
) -> list[SliceSample]:
    """Training samples from averages of n randomly selected DWI volumes.

    Each draw averages ``n_average`` distinct volumes (all of them when fewer
    are available) and contributes one 1-channel sample per retained slice.
    """
    rng = np.random.default_rng(seed)
    n_avail = dwi.n_volumes
    take = min(n_average, n_avail)
    samples = []
    for _ in range(n_samples):
        chosen = rng.choice(n_avail, size=take, replace=False)
        avg = dwi.data[:, :, :, chosen].mean(axis=3)
        for z in range(dwi.dims[2]):
            if _mask_fraction(mask, z) < MIN_MASK_FRACTION:
                continue
            samples.append(_slice_to_sample(avg[:, :, z, None], subject))
    return samples


def fit_to_size(samples: list[SliceSample], size: int) -> list[SliceSample]:
    """Center-crop or zero-pad normalized samples to a square model grid."""
    out = []
    for s in samples:
        c, h, w = s.data.shape
        if (h, w) == (size, size):
            out.append(s)
            continue
        data = np.zeros((c, size, size))
        src_h0 = max(0, (h - size) // 2)
        src_w0 = max(0, (w - size) // 2)
        dst_h0 = max(0, (size - h) // 2)
        dst_w0 = max(0, (size - w) // 2)
        ch = min(h, size)
        cw = min(w, size)
        data[:, dst_h0 : dst_h0 + ch, dst_w0 : dst_w0 + cw] = s.data[
            :, src_h0 : src_h0 + ch, src_w0 : src_w0 + cw
        ]
        out.append(SliceSample(data=data, subject=s.subject))
    return out


def _split(dataset, cfg: TrainConfig, rng):
    n = len(dataset)
    subjects = sorted({s.subject for s in dataset})
    if cfg.split_by == "subject" and len(subjects) >= 2:
        order = list(rng.permutation(len(subjects)))
        target = cfg.val_fraction * n
        val_subjects = set()
        count = 0
        for idx in order:
            if count >= target and val_subjects:
                break
            if len(val_subjects) == len(subjects) - 1:
                break
            name = subjects[idx]
            val_subjects.add(name)
            count += sum(1 for s in dataset if s.subject == name)
        val_idx = [i for i, s in enumerate(dataset) if s.subject in val_subjects]
        train_idx = [i for i, s in enumerate(dataset) if s.subject not in val_subjects]
    else:
        perm = rng.permutation(n)
        n_val = max(1, int(round(cfg.val_fraction * n)))
        val_idx = list(perm[:n_val])
        train_idx = list(perm[n_val:])
    return train_idx, val_idx


def _eval_mse(model: Autoencoder, batch: np.ndarray) -> float:
    y, _ = model.forward(batch, train=False)
    d = y - batch
    return float(np.mean(d * d))


def train(
    dataset: list[SliceSample],
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    log_path=None,
) -> Checkpoint:
    """Train an autoencoder, returning the checkpoint with minimal val loss.

    Deterministic under (cfg.seed, model_cfg.seed): the split, the batch
    order, and the initialization are all driven by seeded generators.
    """
    if not dataset:
        raise InsufficientData("empty dataset")
    shapes = {s.data.shape for s in dataset}
    if len(shapes) != 1:
        raise ShapeError(f"inconsistent sample shapes: {sorted(shapes)}")

    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = _split(dataset, cfg, rng)
    if len(train_idx) < cfg.batch_size:
        raise InsufficientData(
            f"{len(train_idx)} training slices cannot fill a batch of {cfg.batch_size}"
        )

    stack = np.stack([s.data for s in dataset])
    train_data = stack[train_idx]
    val_data = stack[val_idx]

    model = build_model(model_cfg)
    opt = Adam(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    params = [arr for _, arr in model.parameters()]

    history = []
    best = None
    best_epoch = 0
    n_batches = len(train_idx) // cfg.batch_size
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_idx))
        epoch_losses = []
        for b in range(n_batches):
            batch = train_data[order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
            mse, grads = model.loss_and_grads(batch)
            opt.step(params, grads)
            epoch_losses.append(mse)
        train_mse = float(np.mean(epoch_losses))
        val_mse = _eval_mse(model, val_data)
        history.append((epoch, train_mse, val_mse))
        if best is None or val_mse < best[0]:
            best = (val_mse, model.state_snapshot())
            best_epoch = epoch

    model.load_snapshot(best[1])
    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_mse", "val_mse"])
            writer.writerows(history)
    return Checkpoint(model=model, history=history, best_epoch=best_epoch)


def sweep_latent_size(
    dataset,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    m_values=(16, 32, 64, 128),
) -> tuple[Checkpoint, dict[int, float]]:
    """Train once per candidate latent width, keep the best validation loss."""
    from dataclasses import replace

    results = {}
    best_ckpt = None
    for m in m_values:
        ckpt = train(dataset, cfg, replace(model_cfg, latent_maps=m))
        results[m] = ckpt.best_val_mse
        if best_ckpt is None or ckpt.best_val_mse < best_ckpt.best_val_mse:
            best_ckpt = ckpt
    return best_ckpt, results

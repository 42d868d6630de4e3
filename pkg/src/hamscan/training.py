"""Training loop, losses, metrics, and exact-resume checkpointing.

Determinism contract: with a fixed config and thread count, every epoch
is a pure function of (parameters, optimizer state, epoch index). The
global RNG is reseeded from (seed, epoch) at each epoch start and the
batch order is drawn from an independent generator keyed the same way,
so run-then-resume reproduces an uninterrupted run exactly. Checkpoints
carry model weights, Adam moments and step counters, all as f32 tensors.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import tensorio
from .data import gen_blobs, gen_textures
from .errors import InvalidConfig, InvalidTarget, MissingCheckpoint
from .net import ToyConfig, build_model, parameter_count

__all__ = [
    "dice_loss",
    "segmentation_loss",
    "classification_loss",
    "dice_score",
    "accuracy",
    "save_checkpoint",
    "load_checkpoint",
    "restore_training_state",
    "TrainSummary",
    "train",
    "METRICS_HEADER",
]

METRICS_HEADER = ["epoch", "split", "loss", "dice_or_acc", "lr", "wall_s"]

ETA_MIN = 1e-6


def cosine_lr(epoch: int, base: float, total_epochs: int, eta_min: float = ETA_MIN) -> float:
    """Closed-form cosine decay; a pure function of the epoch index, so an
    interrupted run resumes on the identical schedule."""
    return eta_min + 0.5 * (base - eta_min) * (1.0 + math.cos(math.pi * epoch / total_epochs))


def _check_binary_targets(logits: torch.Tensor, targets: torch.Tensor):
    if logits.shape != targets.shape:
        raise InvalidTarget(f"target shape {tuple(targets.shape)} != logits {tuple(logits.shape)}")
    bad = ((targets != 0) & (targets != 1)).any()
    if bool(bad):
        raise InvalidTarget("binary targets must be exactly 0 or 1")


def _check_class_targets(logits: torch.Tensor, targets: torch.Tensor, spatial: bool):
    expect = logits.shape[:1] + logits.shape[2:] if spatial else logits.shape[:1]
    if targets.shape != expect:
        raise InvalidTarget(f"target shape {tuple(targets.shape)} != expected {tuple(expect)}")
    if targets.dtype not in (torch.int64, torch.int32):
        raise InvalidTarget(f"class targets must be integer, got {targets.dtype}")
    k = logits.shape[1]
    if bool((targets < 0).any()) or bool((targets >= k).any()):
        raise InvalidTarget(f"class targets must lie in [0, {k})")


def dice_loss(logits: torch.Tensor, targets: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Soft Dice loss; binary when logits have one channel, else macro
    multiclass against integer targets."""
    if logits.shape[1] == 1:
        _check_binary_targets(logits, targets)
        p = torch.sigmoid(logits).flatten(1)
        t = targets.flatten(1)
        num = 2.0 * (p * t).sum(dim=1) + eps
        den = p.sum(dim=1) + t.sum(dim=1) + eps
        return (1.0 - num / den).mean()
    _check_class_targets(logits, targets, spatial=True)
    p = torch.softmax(logits, dim=1)
    t = F.one_hot(targets, num_classes=logits.shape[1]).movedim(-1, 1).to(p.dtype)
    num = 2.0 * (p * t).sum(dim=(2, 3)) + eps
    den = p.sum(dim=(2, 3)) + t.sum(dim=(2, 3)) + eps
    return (1.0 - num / den).mean()


def segmentation_loss(logits, targets, class_weights=None) -> torch.Tensor:
    """Dice + BCE for binary masks, Dice + (optionally weighted) CE otherwise."""
    if logits.shape[1] == 1:
        _check_binary_targets(logits, targets)
        return dice_loss(logits, targets) + F.binary_cross_entropy_with_logits(logits, targets)
    _check_class_targets(logits, targets, spatial=True)
    return dice_loss(logits, targets) + F.cross_entropy(logits, targets, weight=class_weights)


def classification_loss(logits, targets, class_weights=None) -> torch.Tensor:
    _check_class_targets(logits, targets, spatial=False)
    return F.cross_entropy(logits, targets, weight=class_weights)


def dice_score(logits: torch.Tensor, targets: torch.Tensor, eps: float = 1e-6) -> float:
    """Hard Dice at threshold 0.5 (binary heads only)."""
    _check_binary_targets(logits, targets)
    pred = (torch.sigmoid(logits) > 0.5).to(targets.dtype).flatten(1)
    t = targets.flatten(1)
    num = 2.0 * (pred * t).sum(dim=1) + eps
    den = pred.sum(dim=1) + t.sum(dim=1) + eps
    return float((num / den).mean())


def accuracy(logits: torch.Tensor, targets: torch.Tensor) -> float:
    _check_class_targets(logits, targets, spatial=False)
    return float((logits.argmax(dim=1) == targets).float().mean())


# -- checkpointing ------------------------------------------------------

def save_checkpoint(path, model, opt, epoch: int):
    """Write model weights + Adam moments + counters as one HVW1 file."""
    entries: dict[str, np.ndarray] = {}
    for name, t in model.state_dict().items():
        entries[f"model.{name}"] = t.detach().cpu().numpy().astype(np.float32)
    params = dict(model.named_parameters())
    for name, p in params.items():
        st = opt.state.get(p)
        if not st:
            continue
        entries[f"opt.{name}.exp_avg"] = st["exp_avg"].cpu().numpy().astype(np.float32)
        entries[f"opt.{name}.exp_avg_sq"] = st["exp_avg_sq"].cpu().numpy().astype(np.float32)
        entries[f"opt.{name}.step"] = np.asarray([float(st["step"])], dtype=np.float32)
    entries["meta.epoch"] = np.asarray([float(epoch)], dtype=np.float32)
    entries["meta.param_count"] = np.asarray([float(parameter_count(model))], dtype=np.float32)
    tensorio.write_checkpoint(path, entries)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise MissingCheckpoint(str(path))
    return tensorio.read_checkpoint(path)


def restore_training_state(model, opt, entries: dict[str, np.ndarray]) -> int:
    """Load weights and optimizer moments in place; returns epochs completed."""
    state = {
        name[len("model."):]: torch.from_numpy(arr.copy())
        for name, arr in entries.items()
        if name.startswith("model.")
    }
    model.load_state_dict(state)
    if opt is not None:
        for name, p in model.named_parameters():
            key = f"opt.{name}.exp_avg"
            if key not in entries:
                continue
            opt.state[p] = {
                "step": torch.tensor(float(entries[f"opt.{name}.step"][0])),
                "exp_avg": torch.from_numpy(entries[key].copy()),
                "exp_avg_sq": torch.from_numpy(entries[f"opt.{name}.exp_avg_sq"].copy()),
            }
    return int(entries["meta.epoch"][0])


def restore_model(model, entries: dict[str, np.ndarray]):
    restore_training_state(model, None, entries)


# -- training loop ------------------------------------------------------

@dataclass
class TrainSummary:
    epochs_run: int
    final_loss: float
    final_metric: float
    metric_name: str
    checkpoint_path: str
    metrics_path: str
    param_count: int


def _make_datasets(cfg: ToyConfig):
    if cfg.task == "segmentation":
        tr = gen_blobs(cfg.train_samples, cfg.input_size, seed=2 * cfg.seed + 1)
        va = gen_blobs(cfg.val_samples, cfg.input_size, seed=2 * cfg.seed + 2)
        return (tr.images, tr.masks), (va.images, va.masks)
    tr = gen_textures(cfg.train_samples, cfg.input_size, cfg.classes, seed=2 * cfg.seed + 1,
                      band_lo=cfg.texture_band_lo, band_hi=cfg.texture_band_hi)
    va = gen_textures(cfg.val_samples, cfg.input_size, cfg.classes, seed=2 * cfg.seed + 2,
                      band_lo=cfg.texture_band_lo, band_hi=cfg.texture_band_hi)
    return (tr.images, tr.labels), (va.images, va.labels)


def _class_weight_tensor(cfg: ToyConfig, labels: np.ndarray):
    if cfg.class_weights != "inverse":
        return None
    counts = np.bincount(labels, minlength=cfg.classes).astype(np.float64)
    if (counts == 0).any():
        raise InvalidConfig("inverse class weights need every class present in train set")
    w = counts.sum() / (cfg.classes * counts)
    return torch.from_numpy(w).float()


def _epoch_metric(cfg, logits, targets) -> float:
    if cfg.task == "segmentation":
        return dice_score(logits, targets)
    return accuracy(logits, targets)


def _eval_split(cfg, model, images, targets, loss_fn) -> tuple[float, float]:
    model.eval()
    losses, metrics, weights = [], [], []
    with torch.no_grad():
        for i in range(0, len(images), cfg.batch_size):
            xb = torch.from_numpy(images[i : i + cfg.batch_size])
            tb = torch.from_numpy(targets[i : i + cfg.batch_size])
            logits = model(xb)
            losses.append(float(loss_fn(logits, tb)))
            metrics.append(_epoch_metric(cfg, logits, tb))
            weights.append(len(xb))
    w = np.asarray(weights, dtype=np.float64)
    return float(np.average(losses, weights=w)), float(np.average(metrics, weights=w))


def train(
    cfg: ToyConfig,
    out_dir,
    resume=None,
    threads: int = 1,
    deterministic: bool = True,
    progress=None,
    stop_after: int | None = None,
) -> TrainSummary:
    """Run (or resume) training; writes metrics.csv, config.json and
    checkpoint.hvw under out_dir.

    resume: path to a checkpoint written by a previous run with the same
    config; training continues from the next epoch and, for a fixed
    thread count, matches the uninterrupted run exactly.

    stop_after: absolute epoch count at which to interrupt early (the
    schedule still targets cfg.epochs, so a later resume completes the
    identical trajectory).
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(max(1, threads))
    if deterministic:
        torch.use_deterministic_algorithms(True)

    (tr_x, tr_t), (va_x, va_t) = _make_datasets(cfg)
    class_w = _class_weight_tensor(cfg, tr_t) if cfg.task == "classification" else None
    if cfg.task == "segmentation":
        loss_fn = lambda lo, t: segmentation_loss(lo, t)  # noqa: E731
        metric_name = "dice"
    else:
        loss_fn = lambda lo, t: classification_loss(lo, t, class_w)  # noqa: E731
        metric_name = "acc"

    model = build_model(cfg)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)

    start_epoch = 0
    metrics_path = out_dir / "metrics.csv"
    if resume is not None:
        start_epoch = restore_training_state(model, opt, load_checkpoint(resume))
        if start_epoch >= cfg.epochs:
            raise InvalidConfig(
                f"checkpoint already at epoch {start_epoch} >= epochs={cfg.epochs}"
            )
    else:
        with open(metrics_path, "w", newline="") as fh:
            csv.writer(fh).writerow(METRICS_HEADER)
    with open(out_dir / "config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)

    ckpt_path = out_dir / "checkpoint.hvw"
    n_train = len(tr_x)
    final_loss = final_metric = float("nan")
    last_epoch = cfg.epochs if stop_after is None else min(stop_after, cfg.epochs)

    for epoch in range(start_epoch, last_epoch):
        t0 = time.perf_counter()
        # epoch is a pure function of (state, epoch index): reseed both
        # the torch RNG (dropout) and the batch-order generator from it
        torch.manual_seed(cfg.seed * 1_000_003 + epoch + 1)
        order = np.random.default_rng((cfg.seed, 977, epoch)).permutation(n_train)
        # the floor never raises the schedule above its base (lr=0 stays 0)
        lr_now = cosine_lr(epoch, cfg.lr, cfg.epochs, eta_min=min(ETA_MIN, cfg.lr))
        for g in opt.param_groups:
            g["lr"] = lr_now

        model.train()
        run_loss, run_metric, seen = 0.0, 0.0, 0
        for i in range(0, n_train - cfg.batch_size + 1, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            xb = torch.from_numpy(tr_x[idx])
            tb = torch.from_numpy(tr_t[idx])
            opt.zero_grad(set_to_none=True)
            logits = model(xb)
            loss = loss_fn(logits, tb)
            loss.backward()
            opt.step()
            with torch.no_grad():
                run_loss += float(loss) * len(idx)
                run_metric += _epoch_metric(cfg, logits, tb) * len(idx)
                seen += len(idx)

        va_loss, va_metric = _eval_split(cfg, model, va_x, va_t, loss_fn)
        wall = time.perf_counter() - t0
        with open(metrics_path, "a", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([epoch, "train", f"{run_loss / seen:.6f}",
                        f"{run_metric / seen:.6f}", f"{lr_now:.8g}", f"{wall:.3f}"])
            w.writerow([epoch, "val", f"{va_loss:.6f}", f"{va_metric:.6f}",
                        f"{lr_now:.8g}", f"{wall:.3f}"])
        save_checkpoint(ckpt_path, model, opt, epoch + 1)
        final_loss, final_metric = va_loss, va_metric
        if progress is not None:
            progress(f"epoch {epoch:3d}  loss {va_loss:.4f}  {metric_name} {va_metric:.4f}  "
                     f"lr {lr_now:.2e}  {wall:.1f}s")

    return TrainSummary(
        epochs_run=last_epoch - start_epoch,
        final_loss=final_loss,
        final_metric=final_metric,
        metric_name=metric_name,
        checkpoint_path=str(ckpt_path),
        metrics_path=str(metrics_path),
        param_count=parameter_count(model),
    )

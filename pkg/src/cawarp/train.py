"""Optimization loop, rendering and evaluation helpers shared by the CLI and tests."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Adam, save_module
from .config import RunConfig
from .errors import NumericError
from .losses import psnr, ssim
from .model import CawNet, ForwardOutputs, PreparedSample, compute_loss, prepare

log = logging.getLogger(__name__)

CSV_FIELDS = ("step", "recon", "ssim_loss", "weight_smooth", "total")


@dataclass
class TrainResult:
    net: CawNet
    history: list = field(default_factory=list)
    checkpoint: Path | None = None


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for row in rows:
            writer.writerow([row["step"]] + [repr(float(row[k])) for k in CSV_FIELDS[1:]])


def train(config: RunConfig, samples, out_dir=None, net: CawNet | None = None,
          channels: int | None = None, extractor=None) -> TrainResult:
    """Train on random patches of ``samples`` (rendered or prepared).

    Writes ``loss.csv`` and ``model.epw`` to ``out_dir`` when given.  A
    non-finite loss stops training, saves the last good parameters and raises
    :class:`NumericError`.
    """
    prepared = [s if isinstance(s, PreparedSample) else prepare(s, config) for s in samples]
    channels = channels or prepared[0].target.shape[0]
    rng = np.random.default_rng(config.train.seed)
    net = net or CawNet(config, channels, np.random.default_rng(config.train.seed))
    params = net.parameters()
    opt = Adam(params, lr=config.train.learning_rate)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.epw" if out is not None else None
    history = []
    B = config.data.batch_size
    size = min(config.data.patch_size, *prepared[0].shape)

    for step in range(config.train.steps):
        opt.lr = config.learning_rate_at(step)
        opt.zero_grad()
        sums = dict.fromkeys(CSV_FIELDS[1:], 0.0)
        snapshot = [p.data.copy() for p in params]
        for _ in range(B):
            sample = prepared[int(rng.integers(len(prepared)))].random_crop(size, rng)
            report = compute_loss(net(sample), sample, config, extractor)
            if not np.isfinite(report.total):
                if ckpt is not None:
                    for p, d in zip(params, snapshot):
                        p.data = d
                    save_module(ckpt, net)
                    if history:
                        _write_csv(out / "loss.csv", history)
                raise NumericError(f"non-finite loss at step {step}; last good parameters saved")
            (report.tensor * (1.0 / B)).backward()
            for k in sums:
                sums[k] += getattr(report, k) / B
        opt.step()
        history.append({"step": step, **sums})
        if step % 100 == 0:
            log.info("step %d total %.5f", step, sums["total"])
        if ckpt is not None and config.train.checkpoint_every and (step + 1) % config.train.checkpoint_every == 0:
            save_module(ckpt, net)
    if out is not None:
        save_module(ckpt, net)
        _write_csv(out / "loss.csv", history)
    return TrainResult(net, history, ckpt)


def render(net: CawNet, sample: PreparedSample) -> tuple[np.ndarray, ForwardOutputs]:
    """Run the network and return the final view clamped to [0, 1] with all intermediates."""
    out = net(sample)
    return np.clip(out.final.data, 0.0, 1.0), out


@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    per_view: list = field(default_factory=list)


def evaluate(net: CawNet, samples, config: RunConfig) -> MetricsReport:
    """Mean PSNR/SSIM over samples, each measured on pixels with valid neighbors in every source."""
    rows = []
    for s in samples:
        p = s if isinstance(s, PreparedSample) else prepare(s, config)
        image, _ = render(net, p)
        rows.append((psnr(image, p.target, p.valid_mask), ssim(image, p.target, p.valid_mask)))
    return MetricsReport(
        float(np.mean([r[0] for r in rows])),
        float(np.mean([r[1] for r in rows])),
        [{"psnr": a, "ssim": b} for a, b in rows],
    )

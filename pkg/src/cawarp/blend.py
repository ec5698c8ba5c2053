"""Occlusion-aware confidence prediction and per-pixel blending of warped views."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import MLP, Module, Tensor, concat, softmax, tsum
from .errors import ConfigurationError, DimensionError
from .imageio import write_pfm


@dataclass
class ConfidenceVolume:
    """``N x H x W`` confidences, non-negative and summing to one per pixel."""

    confidences: Tensor

    @property
    def num_sources(self) -> int:
        return self.confidences.shape[0]

    def dump(self, directory, prefix: str = "confidence") -> list:
        paths = []
        for s, plane in enumerate(self.confidences.data):
            p = Path(directory) / f"{prefix}_{s:02d}.pfm"
            write_pfm(p, plane)
            paths.append(p)
        return paths


class ConfidenceNet(Module):
    """Pixelwise MLP over the concatenated aggregated embeddings of all sources."""

    def __init__(self, num_sources: int, embedding_width: int, width: int, layers: int,
                 rng: np.random.Generator):
        self.num_sources = num_sources
        self.embedding_width = embedding_width
        self.mlp = MLP([num_sources * embedding_width] + [width] * (layers - 1) + [num_sources], rng)

    def forward(self, aggregated) -> ConfidenceVolume:
        if len(aggregated) != self.num_sources:
            raise ConfigurationError(
                f"confidence net configured for N={self.num_sources}, got {len(aggregated)} embeddings"
            )
        x = concat(list(aggregated), axis=0)
        _, H, W = x.shape
        logits = self.mlp(x.reshape(x.shape[0], H * W)).reshape((self.num_sources, H, W))
        return ConfidenceVolume(softmax(logits, axis=0))


def confidence_net_fb(net: ConfidenceNet, aggregated) -> ConfidenceVolume:
    return net(aggregated)


def blend(warped, conf: ConfidenceVolume | Tensor | np.ndarray) -> Tensor:
    """``sum_s conf[s] * warped[s]`` with per-pixel confidences broadcast over channels."""
    c = conf.confidences if isinstance(conf, ConfidenceVolume) else conf
    c = c if isinstance(c, Tensor) else Tensor(c)
    if len(warped) != c.shape[0]:
        raise DimensionError(f"{len(warped)} warped views but {c.shape[0]} confidence maps")
    views = [w if isinstance(w, Tensor) else Tensor(w) for w in warped]
    stacked = concat([v.reshape((1,) + v.shape) for v in views], axis=0)
    N, H, W = c.shape
    return tsum(stacked * c.reshape((N, 1, H, W)), axis=0)

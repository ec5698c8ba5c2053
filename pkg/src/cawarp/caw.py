"""Learned interpolation weights over epipolar neighborhoods and the weighted gather."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import MLP, Module, Tensor, masked_softmax, tsum
from .embedding import EmbeddingBundle, gather_tensor
from .errors import ContractError
from .geometry import NeighborhoodIndex
from .imageio import write_pfm


@dataclass
class WeightVolume:
    """Per-source weights over neighbors: ``M x H x W`` each.

    Invalid entries have weight exactly 0; pixels without any valid neighbor
    have an all-zero column and are reported by :attr:`supervisable`.
    """

    weights: Tensor
    logits: Tensor
    validity: np.ndarray

    @property
    def supervisable(self) -> np.ndarray:
        return self.validity.any(axis=0)

    def dump(self, directory, prefix: str = "weights") -> list:
        """Write each neighbor slice as ``{prefix}_{l:02d}.pfm``."""
        paths = []
        for l, plane in enumerate(self.weights.data):
            p = Path(directory) / f"{prefix}_{l:02d}.pfm"
            write_pfm(p, plane)
            paths.append(p)
        return paths


class WeightNet(Module):
    """Pixelwise MLP mapping an embedding vector to one logit."""

    def __init__(self, in_features: int, width: int, layers: int, rng: np.random.Generator):
        self.in_features = in_features
        self.mlp = MLP([in_features] + [width] * (layers - 1) + [1], rng)

    def forward(self, embedding: Tensor) -> Tensor:
        E, *grid = embedding.shape
        flat = embedding.reshape(E, -1)
        return self.mlp(flat).reshape(tuple(grid))


def predict_weights(net: WeightNet, bundle: EmbeddingBundle | Tensor, validity: np.ndarray) -> WeightVolume:
    """Apply ``net`` to every neighbor's embedding and normalize over the neighbor axis."""
    embedding = bundle.concatenated if isinstance(bundle, EmbeddingBundle) else bundle
    if embedding.shape[1:] != validity.shape:
        raise ContractError(f"embedding grid {embedding.shape[1:]} does not match neighborhood {validity.shape}")
    logits = net(embedding)
    return WeightVolume(masked_softmax(logits, validity, axis=0), logits, validity)


def _weights_tensor(weights) -> tuple[Tensor, np.ndarray | None]:
    if isinstance(weights, WeightVolume):
        return weights.weights, weights.validity
    return (weights if isinstance(weights, Tensor) else Tensor(weights)), None


def weighted_gather(field, neighborhood: NeighborhoodIndex, weights) -> Tensor:
    """``out[:, x_t] = sum_m weights[m, x_t] * field[:, x_s[m]]``; invalid neighbors contribute 0.

    ``field`` is ``C x Hs x Ws`` on the source grid; ``weights`` is a
    :class:`WeightVolume` or an ``M x H x W`` array/tensor.
    """
    field = field if isinstance(field, Tensor) else Tensor(field)
    w, validity = _weights_tensor(weights)
    if w.shape != neighborhood.valid.shape:
        raise ContractError(f"weights {w.shape} and neighborhood {neighborhood.valid.shape} are not aligned")
    if validity is not None and not np.array_equal(validity, neighborhood.valid):
        raise ContractError("weight volume validity differs from the neighborhood it is applied to")
    if tuple(field.shape[1:]) != tuple(neighborhood.source_shape):
        raise ContractError(f"field extents {field.shape[1:]} differ from source shape {neighborhood.source_shape}")
    gathered = gather_tensor(field, neighborhood)
    return tsum(gathered * w.reshape((1,) + w.shape), axis=1)


def aggregate_embedding(embedding: Tensor, weights) -> Tensor:
    """Weighted sum of per-neighbor embeddings: ``E x M x H x W -> E x H x W``."""
    w, _ = _weights_tensor(weights)
    return tsum(embedding * w.reshape((1,) + w.shape), axis=1)


@dataclass
class WarpResult:
    warped: Tensor
    aggregated: Tensor
    volume: WeightVolume


def content_aware_warp(net: WeightNet, source_image, neighborhood: NeighborhoodIndex,
                       embedding: EmbeddingBundle | Tensor) -> WarpResult:
    """One weight prediction shared by the image gather and the embedding aggregation."""
    volume = predict_weights(net, embedding, neighborhood.valid)
    E = embedding.concatenated if isinstance(embedding, EmbeddingBundle) else embedding
    warped = weighted_gather(source_image, neighborhood, volume)
    return WarpResult(warped, aggregate_embedding(E, volume), volume)


def bilinear_two_tap_weights(coords_x: np.ndarray, neighborhood: NeighborhoodIndex) -> np.ndarray:
    """Weights placing linear-kernel mass on the integer neighbors straddling ``coords_x``.

    Used to express classic horizontal bilinear warping as a weighted gather
    (``coords_x`` is the true sub-pixel source column per target pixel).
    """
    cx = neighborhood.coords[..., 0]
    w = np.clip(1.0 - np.abs(cx - coords_x[None]), 0.0, None) * neighborhood.valid
    return w

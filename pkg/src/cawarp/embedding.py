"""Correspondence and content codes fed to the interpolation-weight MLP.

Per (target pixel, neighbor) the embedding is laid out as::

    [ geo (2(N-1)) | spa (2) | ang (6) | ctt (C) | mean (C) | var (C) ]

Tensors are channel-first: a code field has shape ``channels x M x H x W``
where ``M`` indexes neighbors and ``H x W`` is the target grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Module, ResNet, Tensor, concat, take, tanh, tsum
from .errors import ConfigurationError, EmptyNeighborhoodError
from .geometry import NeighborhoodIndex, Pose6DoF, View, scale_lf_disparity, wrap_angle

GEO_PER_PARTNER = 2
SPA_DIM = 2
ANG_DIM = 6


def embedding_width(num_sources: int, ctt_channels: int) -> int:
    return GEO_PER_PARTNER * (num_sources - 1) + SPA_DIM + ANG_DIM + 3 * ctt_channels


def embedding_slices(num_sources: int, ctt_channels: int) -> dict:
    """Channel ranges of each code inside the concatenated embedding."""
    sizes = [
        ("geo", GEO_PER_PARTNER * (num_sources - 1)),
        ("spa", SPA_DIM),
        ("ang", ANG_DIM),
        ("ctt", ctt_channels),
        ("mean", ctt_channels),
        ("var", ctt_channels),
    ]
    out, start = {}, 0
    for name, n in sizes:
        out[name] = slice(start, start + n)
        start += n
    return out


@dataclass
class EmbeddingBundle:
    """Codes for every neighbor of every target pixel of one source view."""

    geo: np.ndarray
    spa: np.ndarray
    ang: np.ndarray
    ctt: Tensor
    global_mean: Tensor
    global_var: Tensor
    concatenated: Tensor


# -- geometric code -------------------------------------------------------------------


def geo_field(source: View, partner_ids, lf_scale=None) -> np.ndarray:
    """Stack of flows to each partner on the source grid (``2(N-1) x H x W``).

    With ``lf_scale`` (one factor per partner) flows are rescaled into
    source-to-target disparities and only the horizontal component is kept.
    """
    fields = []
    for j, pid in enumerate(partner_ids):
        if pid not in source.disparities:
            raise ConfigurationError(f"source view has no disparity map towards view {pid}")
        flow = source.disparities[pid]
        if lf_scale is not None:
            flow = np.stack([flow[0] * lf_scale[j], np.zeros_like(flow[1])])
        fields.append(flow)
    if not fields:
        H, W = source.shape
        return np.zeros((0, H, W))
    return np.concatenate(fields, axis=0)


def lf_scales(sample, k: int) -> list:
    """Per-partner factors turning source-to-partner flow into source-to-target flow."""
    sid = sample.source_ids[k]
    return [
        float(scale_lf_disparity(1.0, sid, sample.target_id, sample.positions, pid))
        for pid in sample.partner_ids(k)
    ]


def geo_code(source: View, x_s, partner_ids, lf_scale=None) -> np.ndarray:
    """Geometric code of one source pixel ``x_s = (x, y)``."""
    field = geo_field(source, partner_ids, lf_scale)
    return field[:, int(x_s[1]), int(x_s[0])]


def gather_field(field: np.ndarray, neighborhood: NeighborhoodIndex) -> np.ndarray:
    """Read a constant source-grid field at every neighbor; invalid entries read 0."""
    C = field.shape[0]
    vals = np.take(field.reshape(C, -1), neighborhood.flat_index, axis=1)
    return vals * neighborhood.valid


# -- spatial and angular codes ------------------------------------------------------------


def spa_code(x_t, x_s, extents) -> np.ndarray:
    """``(x_s - x_t) / (W, H)``."""
    W, H = extents
    return (np.asarray(x_s, dtype=np.float64) - np.asarray(x_t, dtype=np.float64)) / np.array([W, H], dtype=np.float64)


def spa_field(neighborhood: NeighborhoodIndex, origin=(0, 0)) -> np.ndarray:
    """Spatial code for all neighbors: ``2 x M x H x W`` (zero where invalid)."""
    M, H, W = neighborhood.valid.shape
    Hs, Ws = neighborhood.source_shape
    ys, xs = np.mgrid[origin[0] : origin[0] + H, origin[1] : origin[1] + W]
    dx = (neighborhood.coords[..., 0] - xs[None]) / Ws
    dy = (neighborhood.coords[..., 1] - ys[None]) / Hs
    return np.stack([dx, dy]) * neighborhood.valid


def ang_code(source_pose: Pose6DoF, target_pose: Pose6DoF) -> np.ndarray:
    """Difference of 6-DoF poses, angles wrapped to (-pi, pi]."""
    diff = source_pose.as_array() - target_pose.as_array()
    diff[3:] = wrap_angle(diff[3:])
    return diff


# -- content code ------------------------------------------------------------------------


class ContentNet(Module):
    """Residual CNN over ``[I_s, warped partners, flows]`` giving a per-pixel content field.

    Codes are squashed into (-1, 1) so they stay on the scale of the other
    embedding slots; unbounded codes saturate the confidence softmax.
    """

    def __init__(self, num_sources: int, channels: int, out_channels: int, width: int, blocks: int,
                 rng: np.random.Generator):
        self.num_sources = num_sources
        self.image_channels = channels
        self.in_channels = channels * num_sources + GEO_PER_PARTNER * (num_sources - 1)
        self.net = ResNet(self.in_channels, width, out_channels, blocks, rng)

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape[0] != self.in_channels:
            raise ConfigurationError(
                f"content net configured for N={self.num_sources} expects {self.in_channels} "
                f"input channels, got {x.shape[0]}"
            )
        return tanh(self.net(x))


def content_input(source: View, partners_warped, disparities) -> np.ndarray:
    """Channel stack ``[I_s, {I_hat_{s,i}}, {D_{s,i}}]`` for the content net."""
    parts = [source.image] + [np.asarray(p) for p in partners_warped] + [np.asarray(d) for d in disparities]
    return np.concatenate(parts, axis=0)


def content_net_fc(net: ContentNet, source: View, partners_warped, disparities) -> Tensor:
    return net(content_input(source, partners_warped, disparities))


def gather_tensor(field: Tensor, neighborhood: NeighborhoodIndex) -> Tensor:
    """Differentiable read of a ``C x Hs x Ws`` tensor at every neighbor -> ``C x M x H x W``."""
    C = field.shape[0]
    flat = field.reshape(C, -1)
    return take(flat, neighborhood.flat_index, axis=1) * Tensor(neighborhood.valid, dtype=field.dtype)


def global_stats(ctt: Tensor, valid: np.ndarray) -> tuple[Tensor, Tensor]:
    """Population mean/variance of neighbor content codes over valid neighbors.

    ``ctt`` is ``C x M x H x W``; outputs are ``C x 1 x H x W``.  Pixels with no
    valid neighbor get zeros.
    """
    counts = valid.sum(axis=0, keepdims=True)
    if ctt.shape[1] and not counts.any():
        raise EmptyNeighborhoodError("no target pixel has a valid neighbor")
    mask = Tensor(valid[None], dtype=ctt.dtype)
    inv = Tensor((1.0 / np.maximum(counts, 1))[None], dtype=ctt.dtype)
    mu = tsum(ctt * mask, axis=1, keepdims=True) * inv
    centered = (ctt - mu) * mask
    nu = tsum(centered * centered, axis=1, keepdims=True) * inv
    return mu, nu


def build_embedding(
    geo: np.ndarray,
    spa: np.ndarray,
    ang: np.ndarray,
    ctt: Tensor | None,
    valid: np.ndarray,
    ctt_channels: int,
    use_content: bool = True,
    use_global: bool = True,
    dtype=None,
) -> EmbeddingBundle:
    """Concatenate all codes into a ``E x M x H x W`` tensor.

    Disabled content/global codes are replaced by zeros so the layout is fixed.
    """
    M, H, W = valid.shape
    dtype = dtype or (ctt.dtype if ctt is not None else np.float32)
    ang_f = np.broadcast_to(ang.reshape(-1, 1, 1, 1), (ANG_DIM, M, H, W)) * valid
    zeros = Tensor(np.zeros((ctt_channels, M, H, W)), dtype=dtype)
    if use_content and ctt is not None:
        mu, nu = global_stats(ctt, valid)
        if use_global:
            mu_f = mu * Tensor(np.ones((1, M, 1, 1)), dtype=dtype)
            nu_f = nu * Tensor(np.ones((1, M, 1, 1)), dtype=dtype)
        else:
            mu_f = nu_f = zeros
        ctt_f = ctt
    else:
        mu = nu = Tensor(np.zeros((ctt_channels, 1, H, W)), dtype=dtype)
        ctt_f = mu_f = nu_f = zeros
    const = Tensor(np.concatenate([geo, spa, ang_f], axis=0), dtype=dtype)
    full = concat([const, ctt_f, mu_f, nu_f], axis=0)
    return EmbeddingBundle(geo, spa, ang_f, ctt_f, mu, nu, full)

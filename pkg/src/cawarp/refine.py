"""Feature-assisted refinement: PSV fusion, source encoding, feature-space warp, residual CNN."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Conv2d,
    Module,
    ResNet,
    Tensor,
    as_tensor,
    avg_pool2,
    broadcast_to,
    concat,
    leaky_relu,
    mean,
    pad2d,
    softmax,
    tsum,
    upsample2,
)
from .autodiff.nn import LEAKY_SLOPE
from .caw import WeightVolume, weighted_gather
from .errors import ConfigurationError, ContractError
from .geometry import NeighborhoodIndex
from .warp import PlaneSweepVolume


@dataclass
class FusedPsvFeature:
    feature: Tensor
    layer_weights: Tensor


@dataclass
class SourceFeatureMap:
    feature: Tensor


class PsvFusionNet(Module):
    """Three 3x3 convs mapping ``[intermediate, layer]`` to ``features + 1`` channels."""

    def __init__(self, channels: int, width: int, features: int, rng: np.random.Generator):
        self.features = features
        self.conv1 = Conv2d(2 * channels, width, rng)
        self.conv2 = Conv2d(width, width, rng)
        self.conv3 = Conv2d(width, features + 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = leaky_relu(self.conv1(x), LEAKY_SLOPE)
        h = leaky_relu(self.conv2(h), LEAKY_SLOPE)
        return self.conv3(h)


def psv_fuse_fv(net: PsvFusionNet, intermediate, psv: PlaneSweepVolume | np.ndarray,
                allow_single: bool = False) -> FusedPsvFeature:
    """Per-layer features weighted by a softmax over spatially averaged scores."""
    layers = psv.layers if isinstance(psv, PlaneSweepVolume) else psv
    D = layers.shape[0]
    if D < 2 and not (allow_single and D == 1):
        raise ConfigurationError(f"PSV fusion needs D >= 2 layers, got {D}")
    inter = as_tensor(intermediate)
    C, H, W = inter.shape
    repeated = broadcast_to(inter.reshape((1, C, H, W)), (D, C, H, W))
    x = concat([repeated, Tensor(layers, dtype=inter.dtype)], axis=1)
    out = net(x)
    F = net.features
    per_layer = out[:, :F]
    scores = mean(out[:, F], axis=(1, 2))
    w = softmax(scores, axis=0)
    fused = tsum(per_layer * w.reshape((D, 1, 1, 1)), axis=0)
    return FusedPsvFeature(fused, w)


class UNet(Module):
    """Two-scale encoder/decoder with one skip connection; odd extents are padded then cropped."""

    def __init__(self, in_channels: int, width: int, out_channels: int, rng: np.random.Generator):
        self.enc1a = Conv2d(in_channels, width, rng)
        self.enc1b = Conv2d(width, width, rng)
        self.enc2a = Conv2d(width, 2 * width, rng)
        self.enc2b = Conv2d(2 * width, 2 * width, rng)
        self.dec_a = Conv2d(3 * width, width, rng)
        self.dec_b = Conv2d(width, out_channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        H, W = x.shape[-2:]
        x = pad2d(x, H % 2, W % 2)
        act = lambda t: leaky_relu(t, LEAKY_SLOPE)  # noqa: E731
        e1 = act(self.enc1b(act(self.enc1a(x))))
        e2 = act(self.enc2b(act(self.enc2a(avg_pool2(e1)))))
        d = act(self.dec_a(concat([e1, upsample2(e2)], axis=-3)))
        out = self.dec_b(d)
        if out.shape[-2:] != (H, W):
            out = out[..., :H, :W]
        return out


def encode_fg(net: UNet, image) -> SourceFeatureMap:
    return SourceFeatureMap(net(image.image if hasattr(image, "image") else image))


def feature_space_warp(features, neighborhood: NeighborhoodIndex, weights: WeightVolume) -> Tensor:
    """Gather source features with the weight volume already predicted for the image warp."""
    if not isinstance(weights, WeightVolume):
        raise ContractError("feature warp must reuse the WeightVolume of the image-space warp")
    field = features.feature if isinstance(features, SourceFeatureMap) else features
    return weighted_gather(field, neighborhood, weights)


class RefineNet(Module):
    """Residual CNN predicting a correction added to the blended view."""

    def __init__(self, in_channels: int, width: int, out_channels: int, blocks: int,
                 rng: np.random.Generator):
        self.in_channels = in_channels
        self.net = ResNet(in_channels, width, out_channels, blocks, rng)

    def forward(self, intermediate: Tensor, fused, aligned) -> Tensor:
        x = concat([as_tensor(intermediate)] + list(fused) + list(aligned), axis=0)
        if x.shape[0] != self.in_channels:
            raise ConfigurationError(f"refinement expects {self.in_channels} channels, got {x.shape[0]}")
        return self.net(x) + intermediate


def refine_fr(net: RefineNet, intermediate, fused, aligned) -> Tensor:
    return net(intermediate, fused, aligned)

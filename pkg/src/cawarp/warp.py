"""Distance-weighted (bilinear) backward warping and plane-sweep volumes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, bilinear_sample
from .errors import ConfigurationError, DimensionError
from .geometry import Camera, View, correspondence_grid, inverse_depth_samples

__all__ = ["bilinear_sample", "backward_warp", "PlaneSweepVolume", "build_psv"]


def _pixel_coords(height: int, width: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width]
    return np.stack([xs, ys]).astype(np.float64)


def backward_warp(source, flow) -> tuple[Tensor, np.ndarray]:
    """``out(x) = source(x + flow(x))`` with bilinear sampling and zero fill.

    ``source`` is a :class:`View`, array or tensor (``C x H x W``); ``flow`` is
    ``2 x H x W``.  Returns the warped image and its validity mask.
    """
    image = source.image if isinstance(source, View) else source
    if not isinstance(image, Tensor):
        image = Tensor(image)
    flow = flow if isinstance(flow, Tensor) else Tensor(flow)
    if flow.shape[0] != 2 or flow.ndim != 3:
        raise DimensionError(f"flow must be 2 x H x W, got {flow.shape}")
    coords = flow + Tensor(_pixel_coords(*flow.shape[1:]), dtype=flow.dtype)
    return bilinear_sample(image, coords)


@dataclass
class PlaneSweepVolume:
    """``layers``: D x C x H x W, ``depths``: D (far to near), ``validity``: D x H x W."""

    layers: np.ndarray
    depths: np.ndarray
    validity: np.ndarray

    @property
    def num_layers(self) -> int:
        return self.layers.shape[0]

    def crop(self, top: int, left: int, height: int, width: int) -> "PlaneSweepVolume":
        return PlaneSweepVolume(
            self.layers[..., top : top + height, left : left + width],
            self.depths,
            self.validity[:, top : top + height, left : left + width],
        )


def build_psv(source: View, target_cam: Camera, depth_range, D: int, target_shape=None,
              origin=(0, 0), allow_single: bool = False) -> PlaneSweepVolume:
    """Warp ``source`` onto the target grid under ``D`` fronto-parallel depth hypotheses."""
    if D < 2 and not (allow_single and D == 1):
        raise ConfigurationError(f"plane-sweep volume needs D >= 2 layers, got {D}")
    target_shape = target_shape or source.shape
    depths = inverse_depth_samples(depth_range, D) if D > 1 else np.array([float(depth_range[0])])
    image = Tensor(source.image)
    layers, validity = [], []
    for d in depths:
        coords, front = correspondence_grid(target_cam, source.camera, target_shape, d, origin)
        sampled, valid = bilinear_sample(image, Tensor(coords, dtype=np.float64))
        layers.append(sampled.data)
        validity.append(valid & front)
    return PlaneSweepVolume(np.stack(layers), depths, np.stack(validity))

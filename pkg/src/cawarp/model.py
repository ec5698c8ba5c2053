"""End-to-end network: per-source content-aware warping, blending and refinement.

Geometry that does not depend on learned parameters (neighborhoods, codes,
plane-sweep volumes, content-net inputs) is computed once per sample by
:func:`prepare` and cropped for training patches.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Module, Tensor
from .blend import ConfidenceNet, ConfidenceVolume, blend
from .caw import WarpResult, WeightNet, content_aware_warp
from .config import RunConfig
from .embedding import (
    ContentNet,
    ang_code,
    build_embedding,
    content_input,
    embedding_width,
    gather_field,
    gather_tensor,
    geo_field,
    lf_scales,
    spa_field,
)
from .errors import ConfigurationError
from .geometry import NeighborhoodIndex, build_neighborhoods, pose_to_6dof
from .losses import SSIM_WINDOW, LossReport, perceptual_loss, recon_loss, ssim_loss, total_loss, weight_smoothness
from .refine import PsvFusionNet, RefineNet, UNet, feature_space_warp, psv_fuse_fv
from .scene import RenderedSample
from .warp import backward_warp, build_psv


@dataclass
class SourceInputs:
    """Parameter-free inputs of one source view, on the (possibly cropped) target grid."""

    image: np.ndarray
    neighborhood: NeighborhoodIndex
    geo: np.ndarray
    spa: np.ndarray
    ang: np.ndarray
    content_input: np.ndarray
    psv: np.ndarray

    def crop(self, top: int, left: int, height: int, width: int) -> "SourceInputs":
        sl = (Ellipsis, slice(top, top + height), slice(left, left + width))
        return replace(
            self,
            neighborhood=self.neighborhood.crop(top, left, height, width),
            geo=self.geo[sl],
            spa=self.spa[sl],
            psv=self.psv[sl],
        )


@dataclass
class PreparedSample:
    sources: list
    target: np.ndarray
    valid_mask: np.ndarray
    occlusion_masks: list = field(default_factory=list)
    origin: tuple = (0, 0)

    @property
    def shape(self) -> tuple:
        return self.target.shape[1:]

    def crop(self, top: int, left: int, height: int, width: int) -> "PreparedSample":
        sl = (slice(top, top + height), slice(left, left + width))
        return PreparedSample(
            [s.crop(top, left, height, width) for s in self.sources],
            self.target[(slice(None),) + sl],
            self.valid_mask[sl],
            [m[sl] for m in self.occlusion_masks],
            (self.origin[0] + top, self.origin[1] + left),
        )

    def random_crop(self, size: int, rng: np.random.Generator) -> "PreparedSample":
        H, W = self.shape
        if size > H or size > W:
            raise ConfigurationError(f"patch size {size} exceeds target resolution {H}x{W}")
        top = int(rng.integers(0, H - size + 1))
        left = int(rng.integers(0, W - size + 1))
        return self.crop(top, left, size, size)


def prepare(sample: RenderedSample, config: RunConfig) -> PreparedSample:
    """Precompute neighborhoods, geometric/spatial/angular codes and PSVs for a sample."""
    if sample.num_sources != config.data.num_sources:
        raise ConfigurationError(
            f"configuration expects N={config.data.num_sources} sources, sample has {sample.num_sources}"
        )
    M, D = config.model.neighborhood_size, config.model.psv_layers
    tgt = sample.target
    origin = sample.target_origin
    target_pose = pose_to_6dof(tgt.pose)
    sources = []
    for k, view in enumerate(sample.views):
        partners = sample.partner_ids(k)
        nb = build_neighborhoods(tgt.camera, view.camera, tgt.shape, view.shape,
                                 sample.depth_range, M, origin)
        scale = lf_scales(sample, k) if config.data.mode == "lf" else None
        geo = gather_field(geo_field(view, partners, scale), nb)
        spa = spa_field(nb, origin)
        ang = ang_code(pose_to_6dof(view.pose), target_pose)
        by_id = dict(zip(sample.source_ids, sample.views))
        warped = [backward_warp(by_id[p], view.disparities[p])[0].data for p in partners]
        flows = [view.disparities[p] for p in partners]
        psv = build_psv(view, tgt.camera, sample.depth_range, D, tgt.shape, origin)
        sources.append(SourceInputs(view.image, nb, geo, spa, ang,
                                    content_input(view, warped, flows), psv.layers))
    valid = np.logical_and.reduce([s.neighborhood.supervisable for s in sources])
    return PreparedSample(sources, tgt.image, valid, list(sample.occlusion_masks), origin)


@dataclass
class ForwardOutputs:
    final: Tensor
    intermediate: Tensor
    warps: list
    confidence: ConfidenceVolume
    fused: list
    aligned: list

    @property
    def warped(self) -> list:
        return [w.warped for w in self.warps]

    @property
    def volumes(self) -> list:
        return [w.volume for w in self.warps]


class CawNet(Module):
    """All learned components; components switched off by ablation flags are not built."""

    def __init__(self, config: RunConfig, channels: int = 3, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(config.train.seed)
        # one stream per component, so ablating one leaves the others' initial weights unchanged
        r_c, r_w, r_b, r_v, r_g, r_r = rng.spawn(6)
        m, ab = config.model, config.ablation
        N = config.data.num_sources
        self.config = config
        self.channels = channels
        E = embedding_width(N, m.ctt_channels)
        self.fc = None
        if ab.content_embedding:
            self.fc = ContentNet(N, channels, m.ctt_channels, m.fc_width, m.fc_blocks, r_c)
            # content codes start at zero: the initial network equals the content-free one
            self.fc.net.tail.weight.data[...] = 0
            self.fc.net.tail.bias.data[...] = 0
        self.fw = WeightNet(E, m.fw_width, m.fw_layers, r_w)
        self.fb = ConfidenceNet(N, E, m.fb_width, m.fb_layers, r_b)
        # blending starts uniform; a biased start lets the softmax saturate before occlusions are seen
        self.fb.mlp.layers[-1].weight.data[...] = 0
        self.fb.mlp.layers[-1].bias.data[...] = 0
        self.fv = PsvFusionNet(channels, m.fv_width, m.psv_features, r_v) if ab.psv_fusion else None
        self.fg = UNet(channels, m.fg_width, m.fg_channels, r_g) if ab.feature_warp else None
        refine_in = channels + N * (m.psv_features + m.fg_channels)
        self.fr = RefineNet(refine_in, m.fr_width, channels, m.fr_blocks, r_r)

    def forward(self, sample: PreparedSample) -> ForwardOutputs:
        m, ab = self.config.model, self.config.ablation
        H, W = sample.shape
        warps = []
        for src in sample.sources:
            ctt = None
            if self.fc is not None:
                ctt = gather_tensor(self.fc(src.content_input), src.neighborhood)
            bundle = build_embedding(src.geo, src.spa, src.ang, ctt, src.neighborhood.valid,
                                     m.ctt_channels, use_content=self.fc is not None,
                                     use_global=ab.global_embedding)
            warps.append(content_aware_warp(self.fw, src.image, src.neighborhood, bundle))
        conf = self.fb([w.aggregated for w in warps])
        intermediate = blend([w.warped for w in warps], conf)

        fused, aligned = [], []
        for src, w in zip(sample.sources, warps):
            if self.fv is not None:
                fused.append(psv_fuse_fv(self.fv, intermediate, src.psv).feature)
            else:
                fused.append(Tensor(np.zeros((m.psv_features, H, W))))
            if self.fg is not None:
                aligned.append(feature_space_warp(self.fg(src.image), src.neighborhood, w.volume))
            else:
                aligned.append(Tensor(np.zeros((m.fg_channels, H, W))))
        final = self.fr(intermediate, fused, aligned)
        return ForwardOutputs(final, intermediate, warps, conf, fused, aligned)


def compute_loss(out: ForwardOutputs, sample: PreparedSample, config: RunConfig,
                 extractor=None) -> LossReport:
    mask = sample.valid_mask
    recon = recon_loss(out.final, out.intermediate, out.warped, sample.target, mask)
    use_ssim = config.loss.ssim and min(sample.shape) >= SSIM_WINDOW
    ssim_l = ssim_loss(out.final, sample.target, mask) if use_ssim else 0.0
    lam = config.effective_lambda
    smooth = weight_smoothness(out.volumes)
    perceptual = perceptual_loss(extractor, out.final, sample.target)
    return total_loss((recon, perceptual, ssim_l, smooth), lam)


__all__ = [
    "CawNet",
    "ForwardOutputs",
    "PreparedSample",
    "SourceInputs",
    "WarpResult",
    "compute_loss",
    "prepare",
]

"""Finite-difference checks over every differentiable op and the end-to-end pipeline.

All checks run in float64 on tiny instances (8x8 target, N=2, M=8, D=4).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, default_dtype, gradcheck
from .blend import ConfidenceNet, blend
from .caw import WeightNet, WeightVolume, predict_weights, weighted_gather
from .config import RunConfig, desk_config
from .embedding import ContentNet, global_stats
from .geometry import NeighborhoodIndex
from .losses import recon_loss, ssim_loss, total_loss, weight_smoothness
from .model import CawNet, compute_loss, prepare
from .refine import PsvFusionNet, RefineNet, UNet, psv_fuse_fv
from .scene import lf_plane_scene, render

ELEMENTARY_TOL = 1e-4
PIPELINE_TOL = 1e-3


@dataclass
class GradCase:
    name: str
    build: Callable[[np.random.Generator], tuple]
    tolerance: float = ELEMENTARY_TOL
    max_probes: int | None = 24
    # leaky-ReLU and L1 kinks bias central differences that straddle them; small steps make that rare
    step: float = 1e-6


@dataclass
class GradResult:
    name: str
    error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tolerance)


def _t(rng, *shape, low=-1.0, high=1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _scalarize(rng, x: Tensor):
    """Contract an output with fixed random weights so every entry contributes."""
    w = Tensor(rng.standard_normal(x.shape))
    return lambda y: ad.tsum(y * w)


def _unary(op, low=-1.0, high=1.0):
    def build(rng):
        x = _t(rng, 3, 4, low=low, high=high)
        proj = _scalarize(rng, x)
        return (lambda: proj(op(x))), [x]

    return build


def _binary(op, low=0.5, high=1.5):
    def build(rng):
        a, b = _t(rng, 3, 4, low=low, high=high), _t(rng, 4, low=low, high=high)
        proj = _scalarize(rng, a)
        return (lambda: proj(op(a, b))), [a, b]

    return build


def _matmul(rng):
    a, b = _t(rng, 2, 3, 4), _t(rng, 4, 5)
    proj = _scalarize(rng, Tensor(np.zeros((2, 3, 5))))
    return (lambda: proj(ad.matmul(a, b))), [a, b]


def _reduce(kind):
    def build(rng):
        x = _t(rng, 3, 4, 5)
        proj = _scalarize(rng, Tensor(np.zeros((3, 5))))
        return (lambda: proj(ad.reduction(x, kind, axis=1))), [x]

    return build


def _shape_ops(rng):
    x, y = _t(rng, 2, 3, 4), _t(rng, 2, 1, 4)
    proj = _scalarize(rng, Tensor(np.zeros((3, 2, 6))))

    def fn():
        z = ad.concat([x, ad.broadcast_to(y, (2, 3, 4))], axis=2)[:, :, 1:7]
        z = ad.stack([z[0], z[1]], axis=0).reshape(2, 3, 6)
        return proj(ad.transpose(z, (1, 0, 2)))

    return fn, [x, y]


def _softmax(rng):
    x = _t(rng, 5, 6, low=-2, high=2)
    proj = _scalarize(rng, x)
    return (lambda: proj(ad.softmax(x, axis=0))), [x]


def _masked_softmax(rng):
    x = _t(rng, 5, 6, low=-2, high=2)
    mask = rng.random((5, 6)) < 0.6
    mask[0] = True
    proj = _scalarize(rng, x)
    return (lambda: proj(ad.masked_softmax(x, mask, axis=0))), [x]


def _conv(rng):
    x, w, b = _t(rng, 2, 3, 6, 5), _t(rng, 4, 3, 3, 3), _t(rng, 4)
    proj = _scalarize(rng, Tensor(np.zeros((2, 4, 6, 5))))
    return (lambda: proj(ad.conv2d(x, w, b))), [x, w, b]


def _take(rng):
    x = _t(rng, 3, 10)
    idx = rng.integers(0, 10, size=(4, 5))
    proj = _scalarize(rng, Tensor(np.zeros((3, 4, 5))))
    return (lambda: proj(ad.take(x, idx, axis=1))), [x]


def _bilinear(rng):
    img = _t(rng, 2, 6, 7)
    base = rng.uniform(-0.7, 6.7, size=(2, 5, 5))
    base[1] = rng.uniform(-0.7, 5.7, size=(5, 5))
    coords = Tensor(base + 0.0, requires_grad=True)
    proj = _scalarize(rng, Tensor(np.zeros((2, 5, 5))))
    return (lambda: proj(ad.bilinear_sample(img, coords)[0])), [img, coords]


def _pool_ops(rng):
    x = _t(rng, 2, 5, 7)
    proj = _scalarize(rng, Tensor(np.zeros((2, 6, 8))))
    return (lambda: proj(ad.upsample2(ad.avg_pool2(ad.pad2d(x, 1, 1))))), [x]


# -- model components ------------------------------------------------------------------


def _instance(config: RunConfig):
    spec = lf_plane_scene(resolution=(8, 8), disparities=(1, 2), views=3, seed=3, disparity_margin=1.0)
    return prepare(render(spec), config)


def _small_config() -> RunConfig:
    return desk_config().replace(
        data={"patch_size": 8},
        model={
            "neighborhood_size": 8,
            "psv_layers": 4,
            "ctt_channels": 4,
            "fc_width": 6,
            "fc_blocks": 1,
            "fw_width": 8,
            "fb_width": 8,
            "fv_width": 6,
            "psv_features": 5,
            "fg_width": 4,
            "fg_channels": 4,
            "fr_width": 6,
            "fr_blocks": 1,
        },
    )


def _content_net(rng):
    net = ContentNet(2, 3, 4, 6, 2, rng)
    x = _t(rng, 8, 8, 8, low=0, high=1)
    proj = _scalarize(rng, Tensor(np.zeros((4, 8, 8))))
    return (lambda: proj(net(x))), [x] + net.parameters()


def _global_stats(rng):
    ctt = _t(rng, 3, 5, 4, 4)
    valid = rng.random((5, 4, 4)) < 0.7
    valid[0] = True
    proj_m = _scalarize(rng, Tensor(np.zeros((3, 1, 4, 4))))
    proj_v = _scalarize(rng, Tensor(np.zeros((3, 1, 4, 4))))

    def fn():
        mu, nu = global_stats(ctt, valid)
        return proj_m(mu) + proj_v(nu)

    return fn, [ctt]


def _weights_and_gather(rng):
    net = WeightNet(7, 8, 4, rng)
    emb = _t(rng, 7, 4, 2, 2)
    valid = rng.random((4, 2, 2)) < 0.7
    valid[0] = True
    field = _t(rng, 3, 5, 6)
    coords = np.stack([rng.integers(0, 6, (4, 2, 2)), rng.integers(0, 5, (4, 2, 2))], axis=-1)
    nb = NeighborhoodIndex(coords, valid, (5, 6))
    proj = _scalarize(rng, Tensor(np.zeros((3, 2, 2))))

    def fn():
        vol = predict_weights(net, emb, valid)
        return proj(weighted_gather(field, nb, vol))

    return fn, [emb, field] + net.parameters()


def _confidence_blend(rng):
    net = ConfidenceNet(2, 5, 8, 3, rng)
    embs = [_t(rng, 5, 3, 4), _t(rng, 5, 3, 4)]
    views = [_t(rng, 3, 3, 4), _t(rng, 3, 3, 4)]
    proj = _scalarize(rng, Tensor(np.zeros((3, 3, 4))))
    return (lambda: proj(blend(views, net(embs)))), embs + views + net.parameters()


def _psv_fuse(rng):
    net = PsvFusionNet(3, 6, 5, rng)
    inter = _t(rng, 3, 8, 8, low=0, high=1)
    layers = rng.uniform(0, 1, (3, 3, 8, 8))
    proj = _scalarize(rng, Tensor(np.zeros((5, 8, 8))))
    return (lambda: proj(psv_fuse_fv(net, inter, layers).feature)), [inter] + net.parameters()


def _unet(rng):
    net = UNet(3, 4, 5, rng)
    x = _t(rng, 3, 8, 7, low=0, high=1)
    proj = _scalarize(rng, Tensor(np.zeros((5, 8, 7))))
    return (lambda: proj(net(x))), [x] + net.parameters()


def _refine(rng):
    net = RefineNet(3 + 4 + 2, 6, 3, 1, rng)
    inter = _t(rng, 3, 6, 6)
    fused, aligned = [_t(rng, 2, 6, 6), _t(rng, 2, 6, 6)], [_t(rng, 1, 6, 6), _t(rng, 1, 6, 6)]
    proj = _scalarize(rng, Tensor(np.zeros((3, 6, 6))))
    return (lambda: proj(net(inter, fused, aligned))), [inter] + fused + aligned + net.parameters()


def _losses(rng):
    final, inter = _t(rng, 3, 12, 12, low=0, high=1), _t(rng, 3, 12, 12, low=0, high=1)
    warped = [_t(rng, 3, 12, 12, low=0, high=1)]
    gt = rng.uniform(0, 1, (3, 12, 12))
    mask = rng.random((12, 12)) < 0.9
    logits = _t(rng, 4, 12, 12)
    valid = rng.random((4, 12, 12)) < 0.8
    valid[0] = True

    def fn():
        vol = WeightVolume(ad.masked_softmax(logits, valid, axis=0), logits, valid)
        parts = (recon_loss(final, inter, warped, gt, mask), None, ssim_loss(final, gt, mask),
                 weight_smoothness([vol]))
        return total_loss(parts, 0.5).tensor

    return fn, [final, inter, warped[0], logits]


def _fresh_pipeline(rng):
    config = _small_config()
    sample = _instance(config)
    net = CawNet(config, 3, rng)
    # zero-initialised output layers would block gradients to the layers behind them
    for layer in (net.fc.net.tail, net.fb.mlp.layers[-1]):
        layer.weight.data[...] = rng.uniform(-0.2, 0.2, layer.weight.shape)
        layer.bias.data[...] = rng.uniform(-0.2, 0.2, layer.bias.shape)
    return net, (lambda: compute_loss(net(sample), sample, config).tensor)


def _pipeline(rng):
    net, fn = _fresh_pipeline(rng)
    return fn, net.parameters()


def _pipeline_content(rng):
    net, fn = _fresh_pipeline(rng)
    return fn, net.fc.parameters()


CASES = [
    GradCase("add", _binary(ad.add)),
    GradCase("sub", _binary(ad.sub)),
    GradCase("mul", _binary(ad.mul)),
    GradCase("div", _binary(ad.div)),
    GradCase("neg", _unary(ad.neg)),
    GradCase("exp", _unary(ad.exp)),
    GradCase("log", _unary(ad.log, 0.5, 2.0)),
    GradCase("sqrt", _unary(ad.sqrt, 0.5, 2.0)),
    GradCase("power", _unary(lambda x: ad.power(x, 2.5), 0.5, 2.0)),
    GradCase("absolute", _unary(ad.absolute)),
    GradCase("relu", _unary(ad.relu)),
    GradCase("leaky_relu", _unary(ad.leaky_relu)),
    GradCase("tanh", _unary(ad.tanh)),
    GradCase("matmul", _matmul),
    GradCase("sum", _reduce("sum")),
    GradCase("mean", _reduce("mean")),
    GradCase("variance", _reduce("variance")),
    GradCase("shape_ops", _shape_ops),
    GradCase("softmax", _softmax),
    GradCase("masked_softmax", _masked_softmax),
    GradCase("conv2d", _conv),
    GradCase("take", _take),
    GradCase("bilinear_sample", _bilinear),
    GradCase("pad_pool_upsample", _pool_ops),
    GradCase("content_net", _content_net),
    GradCase("global_stats", _global_stats),
    GradCase("weights_gather", _weights_and_gather),
    GradCase("confidence_blend", _confidence_blend),
    GradCase("psv_fuse", _psv_fuse),
    GradCase("unet", _unet),
    GradCase("refine", _refine),
    GradCase("losses", _losses, PIPELINE_TOL),
    GradCase("pipeline", _pipeline, PIPELINE_TOL, max_probes=12, step=1e-7),
    GradCase("pipeline_content", _pipeline_content, PIPELINE_TOL, max_probes=12, step=1e-7),
]


def run_suite(cases=None, seed: int = 0) -> list:
    """Run every case in float64 and return one :class:`GradResult` per case."""
    results = []
    with default_dtype(np.float64):
        for case in cases if cases is not None else CASES:
            rng = np.random.default_rng(seed)
            start = time.perf_counter()
            fn, inputs = case.build(rng)
            err = gradcheck(fn, inputs, h=case.step, max_probes=case.max_probes, rng=rng)
            results.append(GradResult(case.name, err, case.tolerance, time.perf_counter() - start))
    return results


def format_table(results) -> str:
    lines = [f"{'check':<20} {'rel err':>10} {'tol':>8}  status"]
    for r in results:
        lines.append(f"{r.name:<20} {r.error:>10.2e} {r.tolerance:>8.0e}  {'pass' if r.passed else 'FAIL'}")
    return "\n".join(lines)

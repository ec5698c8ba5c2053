"""End-to-end acceptance checks; each prints one PASS/FAIL line (also shown in the terminal summary)."""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from cawarp.autodiff import Tensor
from cawarp.caw import WeightVolume, bilinear_two_tap_weights, weighted_gather
from cawarp.config import desk_config
from cawarp.gradsuite import format_table, run_suite
from cawarp.losses import psnr, recon_loss, ssim, ssim_loss, weight_smoothness
from cawarp.scene import Plane, SceneSpec, lf_cameras, lf_plane_scene, render
from cawarp.train import evaluate, render as render_view, train
from cawarp.warp import backward_warp, build_psv

from oracles import lf_dense_neighborhood

TESTS = Path(__file__).parent


def test_gradient_suite(criterion):
    start = time.perf_counter()
    results = run_suite()
    seconds = time.perf_counter() - start
    failed = [r.name for r in results if not r.passed]
    worst = max(r.error / r.tolerance for r in results)
    ok = criterion(1, "gradient suite", not failed and seconds < 60,
                   f"{len(results)} cases, failed={failed}, worst err/tol={worst:.2f}, {seconds:.1f}s")
    assert ok, format_table(results)


def test_bilinear_equivalence(criterion):
    rng = np.random.default_rng(2024)
    worst, min_cover = 0.0, 1.0
    for _ in range(10):
        disparity = float(rng.uniform(0.2, 3.8))
        nb, flow = lf_dense_neighborhood(64, disparity)
        image = rng.random((3, 64, 64))
        xs = np.mgrid[0:64, 0:64][1]
        w = bilinear_two_tap_weights(xs + flow[0], nb)
        ours = weighted_gather(image, nb, w).data
        ref, valid = backward_warp(image, flow)
        covered = valid & np.isclose(w.sum(0), 1.0)
        min_cover = min(min_cover, covered.mean())
        worst = max(worst, float(np.abs(ours - ref.data)[:, covered].max()))
    ok = criterion(2, "bilinear equivalence", worst < 1e-5 and min_cover > 0.8,
                   f"max abs diff {worst:.2e} over 10 images, min coverage {min_cover:.2f}")
    assert ok


@pytest.mark.slow
def test_single_scene_overfit(criterion, overfit_two_plane):
    run = overfit_two_plane
    image, _ = render_view(run.result.net, run.sample)
    value = psnr(image, run.sample.target, run.sample.valid_mask)
    steps = len(run.result.history)
    ok = criterion(3, "single-scene overfit", value >= 35 and steps <= 2000 and run.seconds < 600,
                   f"PSNR {value:.2f} dB after {steps} steps in {run.seconds:.0f}s")
    assert ok


@pytest.mark.slow
def test_occlusion_recovery(criterion, overfit_two_plane):
    run = overfit_two_plane
    image, out = render_view(run.result.net, run.sample)
    # the near plane hides part of the background from the first source; the second sees it
    region = run.sample.occlusion_masks[0] & run.sample.valid_mask
    assert region.sum() >= 8
    conf = float(out.confidence.confidences.data[1][region].mean())
    value = psnr(image, run.sample.target, region)
    ok = criterion(4, "occlusion recovery", conf > 0.8 and value >= 30,
                   f"{int(region.sum())} px, confidence of unoccluded source {conf:.3f}, PSNR {value:.2f} dB")
    assert ok


@pytest.mark.parametrize("disparity", [1.37, 2.5])
def test_psv_layer_at_true_depth(criterion, disparity):
    focal, D = 32.0, 5
    cams = lf_cameras(3, 1.0, (32, 32), focal)
    spec = SceneSpec([Plane(focal / disparity, 0, None, 0.03)], cams, (32, 32), seed=5, target_index=1)
    sample = render(spec)
    # inverse-depth spacing puts the middle layer exactly on the plane
    depth_range = (focal / (disparity + 1.0), focal / (disparity - 1.0))
    worst = np.inf
    for view in sample.views:
        psv = build_psv(view, sample.target.camera, depth_range, D)
        layer = int(np.argmin(np.abs(psv.depths - focal / disparity)))
        assert np.isclose(psv.depths[layer], focal / disparity)
        worst = min(worst, psnr(psv.layers[layer], sample.target.image, psv.validity[layer]))
    ok = criterion(5, f"PSV correctness (disparity {disparity})", worst >= 50,
                   f"lowest layer PSNR over sources {worst:.2f} dB")
    assert ok


def _ablation_scene(seed: int):
    rng = np.random.default_rng(1000 + seed)
    edge = rng.uniform(0.3, 0.7)
    extent = (edge, -0.2, 1.2, 1.2) if rng.random() < 0.5 else (-0.2, -0.2, edge, 1.2)
    disparities = [(1, 2), (1, 3), (2, 3), (0.5, 2)][rng.integers(4)]
    return render(lf_plane_scene(resolution=(32, 32), disparities=disparities, seed=seed,
                                 near_extent=extent, disparity_margin=1.0))


@pytest.mark.slow
def test_ablation_direction(criterion):
    training = [_ablation_scene(s) for s in range(16)]
    held_out = [_ablation_scene(s) for s in range(100, 105)]
    scores = {}
    for content in (True, False):
        cfg = desk_config().replace(train={"steps": 1000, "lr_drop_step": 750},
                                    ablation={"content_embedding": content})
        net = train(cfg, training).net
        scores[content] = evaluate(net, held_out, cfg).psnr
    ok = criterion(6, "ablation direction", scores[True] >= scores[False],
                   f"held-out PSNR full {scores[True]:.2f} dB vs no content {scores[False]:.2f} dB")
    assert ok


def test_invariant_suite(criterion):
    start = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-m", "not slow", "-p", "no:cacheprovider",
         "--ignore", str(TESTS / "test_acceptance.py"), str(TESTS)],
        capture_output=True, text=True, cwd=TESTS.parent,
    )
    seconds = time.perf_counter() - start
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = criterion(7, "invariant suite", proc.returncode == 0 and seconds < 300, f"{summary}; {seconds:.1f}s")
    assert ok, proc.stdout[-4000:]


def test_loss_sanity(criterion):
    rng = np.random.default_rng(8)
    gt = rng.random((3, 16, 16))
    recon = float(recon_loss(gt, gt, [gt, gt], gt).data)
    same = ssim(gt, gt)
    structural = float(ssim_loss(Tensor(gt, dtype=np.float64), gt).data)
    const = np.full((4, 6, 6), 0.25)
    smooth = float(weight_smoothness([WeightVolume(Tensor(const), Tensor(const), np.ones(const.shape, bool))]).data)
    base = rng.uniform(0.2, 0.8, (3, 16, 16))
    offset = psnr(base + 0.1, base)
    ok = criterion(8, "loss sanity",
                   recon == 0 and abs(same - 1) < 1e-9 and abs(structural) < 1e-9 and smooth == 0
                   and abs(offset - 20) <= 0.01,
                   f"recon {recon}, ssim {same:.9f}, ssim loss {structural:.1e}, smooth {smooth}, "
                   f"offset PSNR {offset:.4f} dB")
    assert ok

"""Properties of trained desk-config models (shares the session overfit runs)."""

from dataclasses import replace

import numpy as np
import pytest

from cawarp.config import desk_config
from cawarp.losses import psnr
from cawarp.model import prepare
from cawarp.scene import render
from cawarp.train import render as render_view

pytestmark = pytest.mark.slow


def _mean_weight_gradient(out) -> float:
    """Mean absolute neighbour difference of the weight slices over valid pairs."""
    diffs = []
    for warp in out.warps:
        w, v = warp.volume.weights.data, warp.volume.validity
        for axis in (1, 2):
            n = v.shape[axis]
            pair = np.take(v, range(1, n), axis) & np.take(v, range(n - 1), axis)
            diffs.append(np.abs(np.diff(w, axis=axis))[pair])
    return float(np.concatenate(diffs).mean())


def test_recon_loss_median_decreases_per_window(overfit_two_plane):
    recon = np.array([row["recon"] for row in overfit_two_plane.result.history])
    medians = [np.median(recon[i : i + 500]) for i in range(0, len(recon), 500)]
    assert len(medians) == 4
    assert all(b < a for a, b in zip(medians, medians[1:])), medians


def test_source_camera_as_target_reproduces_source(overfit_two_plane):
    spec = overfit_two_plane.spec
    cams = list(spec.cameras)
    # the target slot gets a copy of the first source camera; sources stay the outer views
    identity = replace(spec, cameras=[cams[0], cams[0], cams[2]], target_index=1)
    sample = prepare(render(identity), desk_config())
    _, out = render_view(overfit_two_plane.result.net, sample)
    # the coincident source warps exactly; the blend was never trained at this target position
    warped = np.clip(out.warps[0].warped.data, 0, 1)
    assert psnr(warped, sample.target, sample.valid_mask) >= 40


def test_per_source_warp_after_one_plane_overfit(overfit_one_plane):
    run = overfit_one_plane
    _, out = render_view(run.result.net, run.sample)
    for warp in out.warps:
        assert psnr(np.clip(warp.warped.data, 0, 1), run.sample.target, run.sample.valid_mask) >= 35


def test_smoothness_term_flattens_weight_slices(overfit_one_plane, overfit_one_plane_unsmoothed):
    smoothed = _mean_weight_gradient(overfit_one_plane.result.net(overfit_one_plane.sample))
    plain = overfit_one_plane_unsmoothed.result.net(overfit_one_plane_unsmoothed.sample)
    assert smoothed < _mean_weight_gradient(plain)

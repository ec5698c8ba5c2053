import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cawarp.autodiff import Tensor, default_dtype, gradcheck, masked_softmax
from cawarp.caw import WeightVolume
from cawarp.errors import ConfigurationError, UnsupervisableError
from cawarp.losses import (
    SSIM_C1,
    SSIM_C2,
    masked_l1,
    perceptual_loss,
    psnr,
    recon_loss,
    ssim,
    ssim_loss,
    total_loss,
    weight_smoothness,
)


def _volume(weights, validity=None):
    w = np.asarray(weights, dtype=np.float64)
    v = np.ones(w.shape, dtype=bool) if validity is None else validity
    return WeightVolume(Tensor(w, dtype=np.float64), Tensor(w, dtype=np.float64), v)


def ssim_loop(a, b):
    """Windowed SSIM by explicit iteration over every valid 11x11 window."""
    r = np.arange(11) - 5
    g = np.exp(-(r**2) / (2 * 1.5**2))
    g /= g.sum()
    k = np.outer(g, g)
    C, H, W = a.shape
    vals = []
    for c in range(C):
        for y in range(H - 10):
            for x in range(W - 10):
                pa, pb = a[c, y : y + 11, x : x + 11], b[c, y : y + 11, x : x + 11]
                ma, mb = (k * pa).sum(), (k * pb).sum()
                va = (k * pa * pa).sum() - ma**2
                vb = (k * pb * pb).sum() - mb**2
                cov = (k * pa * pb).sum() - ma * mb
                vals.append(((2 * ma * mb + SSIM_C1) * (2 * cov + SSIM_C2))
                            / ((ma**2 + mb**2 + SSIM_C1) * (va + vb + SSIM_C2)))
    return float(np.mean(vals))


def smoothness_loop(volumes):
    total = 0.0
    for vol in volumes:
        w, v = vol.weights.data, vol.validity
        M, H, W = w.shape
        for m in range(M):
            for dy, dx in ((0, 1), (1, 0)):
                diffs = [abs(w[m, y + dy, x + dx] - w[m, y, x])
                         for y in range(H - dy) for x in range(W - dx)
                         if v[m, y, x] and v[m, y + dy, x + dx]]
                if diffs:
                    total += float(np.mean(diffs))
    return total


class TestReconstruction:
    def test_perfect_prediction_is_zero(self):
        gt = np.random.default_rng(0).random((3, 5, 5))
        assert float(recon_loss(gt, gt, [gt, gt], gt).data) == 0.0

    def test_constant_offset_two_sources(self):
        gt = np.full((3, 4, 4), 0.5)
        off = Tensor(gt + 0.1, dtype=np.float64)
        loss = recon_loss(off, off, [off, off], gt)
        assert float(loss.data) == pytest.approx(0.1 * (1 + 1 + 2))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        gt = rng.random((3, 5, 6))
        preds = [rng.random((3, 5, 6)) for _ in range(4)]
        mask = rng.random((5, 6)) < 0.6
        ours = float(recon_loss(*[Tensor(p, dtype=np.float64) for p in preds[:2]],
                                [Tensor(p, dtype=np.float64) for p in preds[2:]], gt, mask).data)
        expected = 0.0
        for p in preds:
            errs = [abs(p[c, y, x] - gt[c, y, x]) for c in range(3) for y in range(5) for x in range(6) if mask[y, x]]
            expected += np.mean(errs)
        assert abs(ours - expected) < 1e-6

    def test_masking_zero_error_region_is_noop(self):
        rng = np.random.default_rng(2)
        gt = rng.random((1, 4, 4))
        pred = gt.copy()
        pred[:, :2] += 0.2
        mask = np.zeros((4, 4), dtype=bool)
        mask[:2] = True
        # unmasked error is averaged over all pixels, masked over the erroneous ones only
        assert float(masked_l1(Tensor(pred, dtype=np.float64), gt, mask).data) == pytest.approx(0.2)
        assert float(masked_l1(Tensor(pred, dtype=np.float64), gt).data) == pytest.approx(0.1)

    def test_empty_mask(self):
        with pytest.raises(UnsupervisableError):
            masked_l1(np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), np.zeros((2, 2), dtype=bool))


class TestSsim:
    def test_identity(self):
        x = np.random.default_rng(0).random((3, 16, 16))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-9)
        assert float(ssim_loss(Tensor(x, dtype=np.float64), x).data) == pytest.approx(0.0, abs=1e-9)

    def test_inverted_checkerboard_negative(self):
        board = (np.indices((16, 16)).sum(0) % 2).astype(np.float64)[None]
        value = ssim(board, 1 - board)
        assert value < 0
        assert value == pytest.approx(ssim_loop(board, 1 - board), abs=1e-9)

    def test_constant_images_hand_formula(self):
        a, b = np.full((1, 12, 12), 0.3), np.full((1, 12, 12), 0.5)
        expected = (2 * 0.3 * 0.5 + SSIM_C1) / (0.3**2 + 0.5**2 + SSIM_C1)
        assert ssim(a, b) == pytest.approx(expected, rel=1e-9)
        assert expected == pytest.approx((0.3 + SSIM_C1) / (0.34 + SSIM_C1))

    def test_random_images_match_loop(self):
        rng = np.random.default_rng(3)
        a, b = rng.random((2, 14, 13)), rng.random((2, 14, 13))
        assert ssim(a, b) == pytest.approx(ssim_loop(a, b), abs=1e-9)

    def test_window_larger_than_image(self):
        with pytest.raises(ConfigurationError):
            ssim(np.zeros((1, 8, 20)), np.zeros((1, 8, 20)))


class TestWeightSmoothness:
    def test_constant_volumes_zero(self):
        assert float(weight_smoothness([_volume(np.full((3, 4, 4), 0.25))]).data) == 0.0

    def test_column_step(self):
        assert float(weight_smoothness([_volume([[[0.0, 1.0], [0.0, 1.0]]])]).data) == pytest.approx(1.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        vols = []
        for _ in range(2):
            valid = rng.random((3, 5, 6)) < 0.7
            vols.append(_volume(rng.random((3, 5, 6)) * valid, valid))
        assert abs(float(weight_smoothness(vols).data) - smoothness_loop(vols)) < 1e-6

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_non_negative(self, seed):
        rng = np.random.default_rng(seed)
        valid = rng.random((2, 4, 4)) < 0.5
        assert float(weight_smoothness([_volume(rng.standard_normal((2, 4, 4)), valid)]).data) >= 0


class TestTotal:
    def test_weighted_sum(self):
        report = total_loss((0.4, 0.0, 0.05, 2.0), lam=0.01)
        assert report.total == pytest.approx(0.47)

    def test_zero_lambda_ignores_smoothness(self):
        assert total_loss((0.4, None, 0.05, 2.0), 0.0).total == total_loss((0.4, None, 0.05, 900.0), 0.0).total

    def test_negative_lambda(self):
        with pytest.raises(ConfigurationError):
            total_loss((0.4, None, 0.05, 2.0), -0.1)

    def test_gradcheck_wrt_weight_logits(self):
        with default_dtype(np.float64):
            rng = np.random.default_rng(5)
            logits = Tensor(rng.standard_normal((3, 4, 4)), requires_grad=True)
            valid = rng.random((3, 4, 4)) < 0.8
            valid[0] = True
            field = Tensor(rng.random((3, 4, 4)))
            gt = rng.random((1, 4, 4))

            def loss():
                w = masked_softmax(logits, valid, axis=0)
                pred = (w * field).sum(axis=0, keepdims=True)
                vol = WeightVolume(w, logits, valid)
                return total_loss({"recon": masked_l1(pred, gt), "ssim_loss": Tensor(0.0),
                                   "weight_smooth": weight_smoothness([vol])}, 0.5).tensor

            err = gradcheck(loss, [logits])
        assert err < 1e-4

    def test_perceptual_disabled_by_default(self):
        assert perceptual_loss(None, np.zeros((3, 4, 4)), np.zeros((3, 4, 4))) is None

    def test_perceptual_uses_supplied_extractor(self):
        pred = Tensor(np.full((1, 2, 2), 0.5), dtype=np.float64)
        out = perceptual_loss(lambda x: [x, x * 2.0], pred, np.zeros((1, 2, 2)))
        assert float(out.data) == pytest.approx(0.5 + 1.0)


class TestPsnr:
    def test_offset_point_one(self):
        a = np.random.default_rng(6).uniform(0.2, 0.8, (3, 8, 8))
        assert psnr(a + 0.1, a) == pytest.approx(20.0, abs=0.01)

    def test_identical_capped(self):
        a = np.random.default_rng(7).random((3, 4, 4))
        assert psnr(a, a) == 99.0

    def test_mask_restricts_pixels(self):
        a = np.zeros((1, 2, 2))
        b = np.array([[[0.1, 0.5], [0.5, 0.5]]])
        mask = np.array([[True, False], [False, False]])
        assert psnr(a, b, mask) == pytest.approx(20.0)

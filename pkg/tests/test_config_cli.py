import itertools
import json
from dataclasses import replace as dc_replace

import numpy as np
import pytest

from cawarp import cli, train as train_mod
from cawarp.autodiff import load_module
from cawarp.config import RunConfig, desk_config, full_config
from cawarp.errors import ConfigurationError, NumericError
from cawarp.geometry import write_cameras
from cawarp.imageio import read_pfm, read_png
from cawarp.losses import psnr
from cawarp.model import CawNet, prepare
from cawarp.scene import lf_cameras, lf_plane_scene, render
from cawarp.train import evaluate, render as render_view, train


def tiny_config(**train_overrides) -> RunConfig:
    base = desk_config()
    return base.replace(
        data={"patch_size": 12, "batch_size": 1},
        model={"neighborhood_size": 4, "psv_layers": 2, "ctt_channels": 2, "fc_width": 4, "fc_blocks": 1,
               "fw_width": 6, "fw_layers": 2, "fb_width": 6, "fb_layers": 2, "fv_width": 4,
               "psv_features": 2, "fg_width": 2, "fg_channels": 2, "fr_width": 4, "fr_blocks": 1},
        train={"steps": 3, "lr_drop_step": 2, "checkpoint_every": 0, **train_overrides},
    )


@pytest.fixture(scope="module")
def tiny_scene():
    return render(lf_plane_scene(resolution=(16, 16), seed=0, disparity_margin=1.0))


class TestRunConfig:
    def test_ini_round_trip(self, tmp_path):
        cfg = desk_config().replace(ablation={"feature_warp": False}, loss={"weight_lambda": 0.25})
        cfg.save(tmp_path / "c.ini")
        assert RunConfig.load(tmp_path / "c.ini") == cfg

    def test_partial_file_uses_defaults(self, tmp_path):
        (tmp_path / "c.ini").write_text("[train]\nsteps = 7\n")
        cfg = RunConfig.load(tmp_path / "c.ini")
        assert cfg.train.steps == 7 and cfg.model == RunConfig().model

    @pytest.mark.parametrize("text", [
        "[train]\nsteps = many\n",
        "[train]\nlearning_rate = -1\n",
        "[data]\nmode = video\n",
        "[loss]\nweight_lambda = -0.5\n",
        "[ablation]\nfeature_warp = maybe\n",
        "[train]\nunknown_key = 1\n",
        "[optimizer]\nlr = 1\n",
        "not an ini file",
    ])
    def test_bad_files_rejected(self, tmp_path, text):
        (tmp_path / "c.ini").write_text(text)
        with pytest.raises(ConfigurationError):
            RunConfig.load(tmp_path / "c.ini")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            RunConfig.load(tmp_path / "absent.ini")

    def test_full_scale_schedule(self):
        cfg = full_config()
        assert cfg.data.batch_size == 4
        assert cfg.train.learning_rate == 1e-4 and cfg.train.lr_dropped == 1e-5
        assert cfg.learning_rate_at(7999) == 1e-4 and cfg.learning_rate_at(8000) == 1e-5

    def test_desk_defaults(self):
        cfg = desk_config()
        assert (cfg.data.batch_size, cfg.train.learning_rate, cfg.train.steps) == (2, 1e-3, 2000)

    def test_lambda_follows_smoothness_flag(self):
        cfg = desk_config()
        assert cfg.effective_lambda == 0.01
        assert cfg.replace(ablation={"weight_smoothness": False}).effective_lambda == 0.0


class TestTraining:
    @pytest.mark.parametrize("flags", list(itertools.product([True, False], repeat=5)))
    def test_every_ablation_combination_runs(self, tiny_scene, flags):
        names = ("content_embedding", "global_embedding", "psv_fusion", "feature_warp", "weight_smoothness")
        cfg = tiny_config(steps=1).replace(ablation=dict(zip(names, flags)))
        result = train(cfg, [tiny_scene])
        assert np.isfinite(result.history[-1]["total"])
        net = result.net
        assert (net.fc is None) != flags[0]
        assert (net.fv is None) != flags[2] and (net.fg is None) != flags[3]
        if not flags[4]:
            report = train_mod.compute_loss(net(prepare(tiny_scene, cfg)), prepare(tiny_scene, cfg), cfg)
            assert report.lam == 0.0

    def test_initial_network_is_neutral(self, tiny_scene):
        cfg = tiny_config()
        sample = prepare(tiny_scene, cfg)
        full, plain = CawNet(cfg), CawNet(cfg.replace(ablation={"content_embedding": False}))
        a, b = full(sample), plain(sample)
        np.testing.assert_array_equal(a.confidence.confidences.data, 0.5)
        np.testing.assert_array_equal(a.final.data, b.final.data)

    def test_content_off_zeroes_global_codes(self, tiny_scene):
        cfg = tiny_config().replace(ablation={"content_embedding": False})
        net = CawNet(cfg)
        sample = prepare(tiny_scene, cfg)
        out = net(sample)
        E = out.warps[0].aggregated.data
        C = cfg.model.ctt_channels
        assert not E[-3 * C :].any()

    def test_same_seed_bit_identical_csv(self, tmp_path, tiny_scene):
        cfg = tiny_config(steps=4)
        train(cfg, [tiny_scene], tmp_path / "a")
        train(cfg, [tiny_scene], tmp_path / "b")
        assert (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()
        assert (tmp_path / "a" / "model.epw").read_bytes() == (tmp_path / "b" / "model.epw").read_bytes()

    def test_csv_layout(self, tmp_path, tiny_scene):
        train(tiny_config(steps=2), [tiny_scene], tmp_path)
        lines = (tmp_path / "loss.csv").read_text().splitlines()
        assert lines[0] == ",".join(train_mod.CSV_FIELDS)
        assert len(lines) == 3 and lines[1].startswith("0,")

    def test_nan_loss_aborts_with_last_good_checkpoint(self, tmp_path, tiny_scene, monkeypatch):
        real = train_mod.compute_loss
        calls = {"n": 0}

        def flaky(out, sample, config, extractor=None):
            calls["n"] += 1
            report = real(out, sample, config, extractor)
            if calls["n"] >= 3:
                report = dc_replace(report, total=float("nan"))
            return report

        monkeypatch.setattr(train_mod, "compute_loss", flaky)
        cfg = tiny_config(steps=5)
        with pytest.raises(NumericError):
            train(cfg, [tiny_scene], tmp_path)
        monkeypatch.setattr(train_mod, "compute_loss", real)
        reference = train(tiny_config(steps=2), [tiny_scene]).net
        restored = CawNet(cfg)
        load_module(tmp_path / "model.epw", restored)
        for a, b in zip(restored.parameters(), reference.parameters()):
            np.testing.assert_array_equal(a.data, b.data)
        assert len((tmp_path / "loss.csv").read_text().splitlines()) == 3

    def test_evaluate_matches_brute_force_metric(self, tiny_scene):
        cfg = tiny_config()
        net = CawNet(cfg)
        report = evaluate(net, [tiny_scene], cfg)
        sample = prepare(tiny_scene, cfg)
        image, _ = render_view(net, sample)
        errs = [(float(image[c, y, x]) - float(sample.target[c, y, x])) ** 2
                for c in range(3) for y in range(16) for x in range(16) if sample.valid_mask[y, x]]
        expected = 10 * np.log10(1 / np.mean(errs))
        assert abs(report.psnr - expected) < 1e-6
        assert report.psnr == pytest.approx(psnr(image, sample.target, sample.valid_mask))


@pytest.fixture
def scene_dir(tmp_path):
    assert cli.main(["make-scene", "--out", str(tmp_path / "scene"), "--resolution", "16", "--seed", "1"]) == 0
    return tmp_path / "scene"


@pytest.fixture
def trained(tmp_path, scene_dir):
    tiny_config().save(tmp_path / "tiny.ini")
    code = cli.main(["train", "--config", str(tmp_path / "tiny.ini"), "--scene", str(scene_dir),
                     "--out", str(tmp_path / "run")])
    assert code == 0
    return tmp_path / "run"


class TestCli:
    def test_make_scene_files(self, scene_dir):
        names = {p.name for p in scene_dir.iterdir()}
        assert {"view_00.png", "view_02.cam", "flow_00_01.pfm", "depthrange.txt"} <= names

    def test_train_writes_artifacts(self, trained):
        assert {p.name for p in trained.iterdir()} >= {"config.ini", "model.epw", "loss.csv"}

    def test_render_and_dumps(self, trained, scene_dir, tmp_path):
        out = tmp_path / "render"
        code = cli.main(["render", "--checkpoint", str(trained / "model.epw"), "--scene", str(scene_dir),
                         "--out", str(out), "--dump-intermediates"])
        assert code == 0
        assert read_png(out / "render.png").shape == (3, 16, 16)
        confs = [read_pfm(out / f"confidence_{s:02d}.pfm") for s in range(2)]
        assert np.abs(sum(confs) - 1).max() <= 1e-4
        slices = sorted(out.glob("weights_s0_*.pfm"))
        assert len(slices) == 4
        total = sum(read_pfm(p) for p in slices)
        assert np.all((np.abs(total - 1) <= 1e-4) | (total == 0))
        assert (out / "intermediate.png").is_file() and (out / "warped_s1.png").is_file()

    def test_render_novel_camera(self, trained, scene_dir, tmp_path):
        cam = lf_cameras(3, 1.0, (16, 16))[0]
        cam = dc_replace(cam, pose=dc_replace(cam.pose, translation=np.array([-0.5, 0.0, 0.0])))
        write_cameras(tmp_path / "novel.cam", [cam])
        code = cli.main(["render", "--checkpoint", str(trained / "model.epw"), "--scene", str(scene_dir),
                         "--out", str(tmp_path / "novel"), "--target-camera", str(tmp_path / "novel.cam"),
                         "--sources", "0", "2"])
        assert code == 0
        assert read_png(tmp_path / "novel" / "render.png").shape == (3, 16, 16)

    def test_eval_writes_metrics(self, trained, scene_dir, tmp_path, capsys):
        code = cli.main(["eval", "--checkpoint", str(trained / "model.epw"), "--scene", str(scene_dir),
                         str(scene_dir), "--out", str(tmp_path / "ev")])
        assert code == 0
        payload = json.loads((tmp_path / "ev" / "metrics.json").read_text())
        assert len(payload["per_view"]) == 2 and 0 < payload["psnr"] <= 99
        assert json.loads(capsys.readouterr().out) == payload

    def test_missing_scene_is_data_error(self, tmp_path):
        assert cli.main(["train", "--scene", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == 3

    def test_unknown_command_is_usage_error(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["fly"])
        assert info.value.code == 1

    def test_bad_config_is_usage_error(self, tmp_path, scene_dir):
        (tmp_path / "bad.ini").write_text("[train]\nsteps = lots\n")
        assert cli.main(["train", "--config", str(tmp_path / "bad.ini"), "--scene", str(scene_dir),
                         "--out", str(tmp_path / "o")]) == 1

    def test_wrong_source_count_is_usage_error(self, tmp_path, scene_dir):
        assert cli.main(["train", "--scene", str(scene_dir), "--sources", "0", "--out", str(tmp_path / "o")]) == 1

    def test_checkpoint_mismatch_lists_shapes(self, trained, scene_dir, tmp_path, capsys):
        other = tiny_config().replace(model={"fw_width": 9})
        other.save(tmp_path / "other.ini")
        code = cli.main(["render", "--checkpoint", str(trained / "model.epw"), "--scene", str(scene_dir),
                         "--config", str(tmp_path / "other.ini"), "--out", str(tmp_path / "r")])
        assert code == 3
        assert "checkpoint shape" in capsys.readouterr().err

    def test_numeric_failure_exit_code(self, tmp_path, scene_dir, monkeypatch):
        def boom(*args, **kwargs):
            raise NumericError("non-finite loss at step 0")

        monkeypatch.setattr(cli, "train", boom)
        assert cli.main(["train", "--scene", str(scene_dir), "--out", str(tmp_path / "o")]) == 2

"""Command-line entry points: make-scene, train, render, eval, gradcheck.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure,
3 data error (missing/malformed files, checkpoint mismatch, degenerate scene).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .autodiff import load_module
from .config import RunConfig, desk_config
from .errors import (
    ConfigurationError,
    DegenerateSceneError,
    DimensionError,
    GeometryError,
    NumericError,
    ParseError,
    UnsupervisableError,
)
from .geometry import read_cameras
from .gradsuite import format_table, run_suite
from .imageio import write_png
from .model import CawNet, prepare
from .scene import lf_plane_scene, multiview_scene, read_scene_dir, render, write_scene_dir
from .train import evaluate, render as render_view, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_DATA = 0, 1, 2, 3

log = logging.getLogger("cawarp")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> RunConfig:
    if args.config:
        config = RunConfig.load(args.config)
    elif getattr(args, "checkpoint", None) and (Path(args.checkpoint).parent / "config.ini").is_file():
        config = RunConfig.load(Path(args.checkpoint).parent / "config.ini")
    else:
        config = desk_config()
    if args.seed is not None:
        config = config.replace(train={"seed": args.seed})
    return config


def _scene_ids(directory: Path) -> list:
    ids = sorted(int(p.stem.split("_")[1]) for p in directory.glob("view_*.png"))
    if not ids:
        raise FileNotFoundError(f"no view_XX.png files in {directory}")
    return ids


def _load_sample(directory, config: RunConfig, target=None, sources=None, target_camera=None):
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"scene directory not found: {directory}")
    ids = _scene_ids(directory)
    camera = None
    if target_camera is not None:
        (camera,) = read_cameras(target_camera)
        target = None
    elif target is None:
        target = ids[len(ids) // 2]
    if sources is None:
        sources = [i for i in ids if i != target]
    if len(sources) != config.data.num_sources:
        raise ConfigurationError(
            f"configuration expects {config.data.num_sources} sources, scene provides {sources}"
        )
    return read_scene_dir(directory, sources, target_id=target, target_camera=camera)


# -- subcommands --------------------------------------------------------------------------


def cmd_make_scene(args) -> int:
    seed = args.seed if args.seed is not None else 0
    res = (args.resolution, args.resolution)
    if args.kind == "lf":
        spec = lf_plane_scene(resolution=res, views=args.views, seed=seed, disparity_margin=1.0)
    else:
        spec = multiview_scene(resolution=res, views=args.views, seed=seed)
    sample = render(spec)
    write_scene_dir(sample, args.out)
    print(f"wrote {args.views}-view {args.kind} scene to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    scene = args.scene or config.data.scene_dir
    if not scene:
        raise FileNotFoundError("no scene given (use --scene or data.scene_dir)")
    sample = _load_sample(scene, config, args.target, args.sources)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.ini")
    result = train(config, [sample], out)
    final = result.history[-1]["total"] if result.history else float("nan")
    print(f"trained {config.train.steps} steps, final loss {final:.6f}; checkpoint {result.checkpoint}")
    return EXIT_OK


def _restore(args, config: RunConfig, channels: int) -> CawNet:
    net = CawNet(config, channels)
    load_module(args.checkpoint, net)
    return net


def cmd_render(args) -> int:
    config = _load_config(args)
    sample = _load_sample(args.scene, config, args.target, args.sources, args.target_camera)
    prepared = prepare(sample, config)
    net = _restore(args, config, sample.target.channels)
    image, outputs = render_view(net, prepared)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_png(out / "render.png", image)
    if args.dump_intermediates:
        outputs.confidence.dump(out)
        for k, vol in enumerate(outputs.volumes):
            vol.dump(out, prefix=f"weights_s{k}")
        write_png(out / "intermediate.png", np.clip(outputs.intermediate.data, 0, 1))
        for k, w in enumerate(outputs.warped):
            write_png(out / f"warped_s{k}.png", np.clip(w.data, 0, 1))
    print(f"rendered {image.shape[2]}x{image.shape[1]} view to {out / 'render.png'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_config(args)
    samples = [_load_sample(s, config, args.target, args.sources) for s in args.scene]
    net = _restore(args, config, samples[0].target.channels)
    report = evaluate(net, samples, config)
    payload = {"psnr": report.psnr, "ssim": report.ssim, "per_view": report.per_view}
    print(json.dumps(payload, indent=2))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suite(seed=args.seed or 0)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cawarp", description="Content-aware warping for novel view synthesis.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, scene=True):
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        if scene:
            p.add_argument("--target", type=int, help="view id used as the target")
            p.add_argument("--sources", type=int, nargs="+", help="source view ids")

    p = sub.add_parser("make-scene", help="render a synthetic scene directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("lf", "multiview"), default="lf")
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--views", type=int, default=3)
    p.set_defaults(func=cmd_make_scene)

    p = sub.add_parser("train", help="train on a scene directory")
    common(p)
    p.add_argument("--scene")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a novel view with a trained checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--target-camera", help="camera file for a view without ground truth")
    p.add_argument("--dump-intermediates", action="store_true",
                   help="also write confidence and weight PFMs and intermediate views")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint on scenes with ground truth")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True, nargs="+")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    common(p, scene=False)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"cawarp: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        print(f"cawarp: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, DimensionError, DegenerateSceneError, GeometryError, UnsupervisableError,
            OSError) as exc:
        print(f"cawarp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

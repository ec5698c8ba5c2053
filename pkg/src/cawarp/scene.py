"""Procedural Lambertian plane scenes with exact ground truth.

Scenes are stacks of world-space planes ``z = depth`` carrying band-limited
sinusoidal textures.  Rendering casts one ray per pixel centre and keeps the
nearest hit, so depth, flow and occlusion are known analytically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateSceneError, GeometryError, ParseError
from .geometry import (
    Camera,
    CameraIntrinsics,
    CameraPose,
    View,
    lf_positions,
    project,
    read_cameras,
    rotation_from_euler,
    write_cameras,
)
from .imageio import flow_to_pfm, pfm_to_flow, read_pfm, read_png, write_pfm, write_png


@dataclass(frozen=True)
class Plane:
    """Fronto-parallel plane at world ``z = depth``.

    ``extent`` is ``(x0, y0, x1, y1)`` in world units or ``None`` for an
    unbounded plane.  ``max_frequency`` bounds the texture spectrum in cycles
    per pixel as seen by the first camera at this depth.
    """

    depth: float
    texture_seed: int
    extent: tuple | None = None
    max_frequency: float = 0.2


@dataclass
class SceneSpec:
    planes: list
    cameras: list
    resolution: tuple
    seed: int = 0
    target_index: int | None = None
    channels: int = 3
    depth_range: tuple | None = None

    def __post_init__(self):
        depths = [p.depth for p in self.planes]
        if not depths or any(d <= 0 for d in depths):
            raise ConfigurationError("plane depths must be strictly positive")
        if len(set(depths)) != len(depths):
            raise ConfigurationError("plane depths must be pairwise distinct")
        if len(self.cameras) < 2:
            raise ConfigurationError("a scene needs at least two cameras")
        if self.target_index is None:
            self.target_index = len(self.cameras) // 2
        if not 0 <= self.target_index < len(self.cameras):
            raise ConfigurationError(f"target index {self.target_index} out of range")
        if self.channels not in (1, 3):
            raise ConfigurationError("channels must be 1 or 3")


@dataclass
class RenderedSample:
    """Source views, the target view and per-view ground truth.

    ``views[k]`` is camera ``source_ids[k]``; every view's ``disparities`` are
    keyed by global camera index.  ``occlusion_masks[k]`` marks target pixels
    whose surface point is hidden from source ``k``; ``target_origin`` is the
    (row, col) of the target grid inside the full target image.
    """

    views: list
    target: View
    occlusion_masks: list
    source_ids: list
    target_id: int
    depth_range: tuple
    target_origin: tuple = (0, 0)
    target_depth: np.ndarray | None = None
    target_plane: np.ndarray | None = None
    source_depths: list = field(default_factory=list)
    source_planes: list = field(default_factory=list)
    positions: dict | None = None

    @property
    def num_sources(self) -> int:
        return len(self.views)

    @property
    def target_shape(self) -> tuple:
        return self.target.shape

    def partner_ids(self, k: int) -> list:
        return [sid for j, sid in enumerate(self.source_ids) if j != k]


# -- textures -------------------------------------------------------------------------


class _Texture:
    def __init__(self, plane: Plane, scene_seed: int, pixels_per_unit: float, channels: int, components: int = 10):
        rng = np.random.default_rng([scene_seed, plane.texture_seed])
        freq = rng.uniform(0.15, 1.0, components) * plane.max_frequency * pixels_per_unit
        angle = rng.uniform(0, 2 * math.pi, components)
        self.k = 2 * math.pi * np.stack([freq * np.cos(angle), freq * np.sin(angle)], axis=1)
        self.phase = rng.uniform(0, 2 * math.pi, (channels, components))
        amp = rng.uniform(0.2, 1.0, (channels, components))
        self.amp = 0.42 * amp / amp.sum(axis=1, keepdims=True)
        self.base = rng.uniform(0.4, 0.6, channels)

    def __call__(self, xy: np.ndarray) -> np.ndarray:
        arg = xy @ self.k.T  # (..., K)
        vals = np.sin(arg[None] + self.phase[:, None, :]) * self.amp[:, None, :]
        return self.base[:, None] + vals.sum(-1)


# -- rendering -------------------------------------------------------------------------


def _cast(camera: Camera, planes: Sequence[Plane], xy: np.ndarray):
    """Nearest plane hit along pixel rays: (camera depth, plane id, world point)."""
    R, t = camera.pose.rotation, camera.pose.translation
    rays = np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], -1) @ np.linalg.inv(camera.K).T
    dirs = rays @ R  # world direction per unit camera depth (R^T r)
    origin = camera.pose.center
    best_z = np.full(xy.shape[:-1], np.inf)
    best_id = np.full(xy.shape[:-1], -1, dtype=np.int64)
    best_pt = np.zeros(xy.shape[:-1] + (3,))
    for pid, plane in enumerate(planes):
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (plane.depth - origin[2]) / dirs[..., 2]
        pts = origin + dirs * z[..., None]
        hit = np.isfinite(z) & (z > 0)
        if plane.extent is not None:
            x0, y0, x1, y1 = plane.extent
            hit &= (pts[..., 0] >= x0) & (pts[..., 0] <= x1) & (pts[..., 1] >= y0) & (pts[..., 1] <= y1)
        closer = hit & (z < best_z)
        best_z = np.where(closer, z, best_z)
        best_id = np.where(closer, pid, best_id)
        best_pt = np.where(closer[..., None], pts, best_pt)
    return best_z, best_id, best_pt


def _grid(H: int, W: int) -> np.ndarray:
    ys, xs = np.mgrid[0:H, 0:W]
    return np.stack([xs, ys], -1).astype(np.float64)


def render(spec: SceneSpec) -> RenderedSample:
    """Render every camera of ``spec``; the target camera becomes ``sample.target``."""
    H, W = spec.resolution
    for cam in spec.cameras:
        cz = cam.pose.center[2]
        for plane in spec.planes:
            if abs(cz - plane.depth) < 1e-9:
                raise DegenerateSceneError(f"camera center lies inside the plane z={plane.depth}")
    f_ref = spec.cameras[0].intrinsics.fx
    textures = [_Texture(p, spec.seed, f_ref / p.depth, spec.channels) for p in spec.planes]
    grid = _grid(H, W)

    images, depths, ids, points = [], [], [], []
    for ci, cam in enumerate(spec.cameras):
        z, pid, pts = _cast(cam, spec.planes, grid)
        if np.any(pid < 0):
            raise DegenerateSceneError(f"camera {ci} sees empty space; add an unbounded background plane")
        img = np.zeros((spec.channels, H, W))
        for k, tex in enumerate(textures):
            sel = pid == k
            if sel.any():
                img[:, sel] = tex(pts[sel][:, :2])
        images.append(img.astype(np.float32))
        depths.append(z)
        ids.append(pid)
        points.append(pts)

    n = len(spec.cameras)
    flows = {}
    for a in range(n):
        for b in range(n):
            if a != b:
                xb, _ = project(grid, depths[a], spec.cameras[a], spec.cameras[b])
                flows[a, b] = np.moveaxis(xb - grid, -1, 0)

    t = spec.target_index
    source_ids = [i for i in range(n) if i != t]
    views = []
    for i in source_ids:
        disp = {j: flows[i, j] for j in range(n) if j != i}
        views.append(View(images[i], spec.cameras[i], disp))
    target = View(images[t], spec.cameras[t], {j: flows[t, j] for j in range(n) if j != t})

    occlusion = [occlusion_mask(spec, t, s, depths[t]) for s in source_ids]
    if spec.depth_range is not None:
        depth_range = tuple(spec.depth_range)
    else:
        depth_range = (0.9 * float(depths[t].min()), 1.1 * float(depths[t].max()))
    try:
        positions = dict(enumerate(lf_positions(spec.cameras)))
    except GeometryError:
        positions = None
    return RenderedSample(
        views=views,
        target=target,
        occlusion_masks=occlusion,
        source_ids=source_ids,
        target_id=t,
        depth_range=depth_range,
        target_depth=depths[t],
        target_plane=ids[t],
        source_depths=[depths[i] for i in source_ids],
        source_planes=[ids[i] for i in source_ids],
        positions=positions,
    )


def occlusion_mask(spec: SceneSpec, target_id: int, source_id: int, target_depth: np.ndarray) -> np.ndarray:
    """Target pixels whose visible surface point is hidden behind another plane in the source."""
    H, W = spec.resolution
    grid = _grid(H, W)
    tgt, src = spec.cameras[target_id], spec.cameras[source_id]
    xs, front, z_point = project(grid, target_depth, tgt, src, return_depth=True)
    xs = np.where(front[..., None], xs, 0.0)
    z_seen, _, _ = _cast(src, spec.planes, xs)
    return front & (z_seen < z_point * (1 - 1e-9))


# -- scene families ---------------------------------------------------------------------


def lf_cameras(count: int, baseline: float, resolution, focal: float | None = None) -> list:
    """Cameras on a horizontal scanline, identical intrinsics, no rotation."""
    H, W = resolution
    focal = focal or float(W)
    K = CameraIntrinsics(focal, focal, (W - 1) / 2.0, (H - 1) / 2.0)
    cams = []
    for p in range(count):
        center = np.array([p * baseline, 0.0, 0.0])
        cams.append(Camera(K, CameraPose(np.eye(3), -center)))
    return cams


def lf_plane_scene(
    resolution=(32, 32),
    disparities=(1.0, 2.0),
    views: int = 3,
    seed: int = 0,
    near_extent=None,
    max_frequency: float = 0.2,
    channels: int = 3,
    disparity_margin: float = 0.5,
) -> SceneSpec:
    """Scanline light-field scene with planes at given per-view-step disparities.

    The first disparity is an unbounded background; later ones are bounded
    planes covering ``near_extent`` (fraction ``(x0, y0, x1, y1)`` of the
    target's field of view, default the right half).  Integer disparities make
    every correspondence land on pixel centres.
    """
    H, W = resolution
    focal, baseline = float(W), 1.0
    cams = lf_cameras(views, baseline, resolution, focal)
    depths = [focal * baseline / d for d in disparities]
    target = views // 2
    tgt_center = target * baseline
    planes = [Plane(depths[0], 0, None, max_frequency)]
    frac = near_extent or (0.5, -0.2, 1.2, 1.2)
    for k, d in enumerate(depths[1:], start=1):
        # fraction of the target frustum at depth d -> world rectangle
        x0 = tgt_center + (frac[0] * W - (W - 1) / 2 - 0.5) * d / focal
        x1 = tgt_center + (frac[2] * W - (W - 1) / 2 - 0.5) * d / focal
        y0 = (frac[1] * H - (H - 1) / 2 - 0.5) * d / focal
        y1 = (frac[3] * H - (H - 1) / 2 - 0.5) * d / focal
        planes.append(Plane(d, k, (x0, y0, x1, y1), max_frequency))
    lo, hi = min(disparities) - disparity_margin, max(disparities) + disparity_margin
    depth_range = (focal * baseline / hi, focal * baseline / lo if lo > 0 else math.inf)
    return SceneSpec(planes, cams, (H, W), seed=seed, target_index=target, channels=channels,
                     depth_range=depth_range)


def multiview_scene(resolution=(32, 32), seed: int = 0, views: int = 3, max_frequency: float = 0.03,
                    rotation: float = 0.03, channels: int = 3) -> SceneSpec:
    """Small rotated camera rig facing a background plane and one bounded near plane."""
    H, W = resolution
    rng = np.random.default_rng(seed)
    focal = float(W)
    K = CameraIntrinsics(focal, focal * rng.uniform(0.95, 1.05), (W - 1) / 2.0, (H - 1) / 2.0)
    cams = []
    for p in range(views):
        center = np.array([p * 0.08, rng.uniform(-0.02, 0.02), rng.uniform(-0.05, 0.05)])
        R = rotation_from_euler(*rng.uniform(-rotation, rotation, 3))
        cams.append(Camera(K, CameraPose(R, -R @ center)))
    planes = [Plane(4.0, 0, None, max_frequency), Plane(2.0, 1, (0.1, -2.0, 2.0, 2.0), max_frequency)]
    return SceneSpec(planes, cams, (H, W), seed=seed, channels=channels, depth_range=(1.5, 6.0))


# -- cropping -------------------------------------------------------------------------


def crop_patch(sample: RenderedSample, size: int, rng: np.random.Generator | None = None,
               offset: tuple | None = None) -> RenderedSample:
    """Cut a ``size x size`` window out of the target grid.

    Source views stay whole, so every correspondence of the window remains
    available; neighborhoods and PSVs built with ``target_origin`` address the
    window inside the full target image.
    """
    H, W = sample.target_shape
    if size > H or size > W:
        raise ConfigurationError(f"patch size {size} exceeds target resolution {H}x{W}")
    if offset is None:
        rng = rng or np.random.default_rng()
        offset = (int(rng.integers(0, H - size + 1)), int(rng.integers(0, W - size + 1)))
    top, left = offset
    sl = (slice(top, top + size), slice(left, left + size))
    tgt = sample.target
    target = View(
        tgt.image[:, sl[0], sl[1]],
        tgt.camera,
        {k: v[:, sl[0], sl[1]] for k, v in tgt.disparities.items()},
        tgt.validity[sl],
    )
    origin = (sample.target_origin[0] + top, sample.target_origin[1] + left)
    return replace(
        sample,
        target=target,
        occlusion_masks=[m[sl] for m in sample.occlusion_masks],
        target_origin=origin,
        target_depth=None if sample.target_depth is None else sample.target_depth[sl],
        target_plane=None if sample.target_plane is None else sample.target_plane[sl],
    )


def lambertian_residual(sample: RenderedSample, k: int):
    """``|I_t(x_t) - I_s(x'_t)|`` (max over channels) using the ground-truth target flow.

    Returns the residual map and the mask of pixels where it is meaningful:
    in-bounds, not occluded, and with all bilinear taps on the same plane.
    """
    from .autodiff import Tensor, bilinear_sample

    source = sample.views[k]
    sid = sample.source_ids[k]
    flow = sample.target.disparities[sid]
    Ht, Wt = sample.target_shape
    top, left = sample.target_origin
    ys, xs = np.mgrid[top:top + Ht, left:left + Wt]
    coords = np.stack([xs, ys]).astype(np.float64) + flow
    sampled, valid = bilinear_sample(Tensor(source.image, dtype=np.float64), Tensor(coords, dtype=np.float64))
    residual = np.abs(sampled.data - sample.target.image).max(axis=0)
    mask = valid & ~sample.occlusion_masks[k]
    if sample.target_plane is not None and sample.source_planes:
        planes = sample.source_planes[k]
        Hs, Ws = source.shape
        x0 = np.clip(np.floor(coords[0]).astype(int), 0, Ws - 1)
        y0 = np.clip(np.floor(coords[1]).astype(int), 0, Hs - 1)
        x1 = np.clip(x0 + 1, 0, Ws - 1)
        y1 = np.clip(y0 + 1, 0, Hs - 1)
        same = np.ones_like(mask)
        for yy in (y0, y1):
            for xx in (x0, x1):
                same &= planes[yy, xx] == sample.target_plane
        mask &= same
    return residual, mask


# -- scene directories -----------------------------------------------------------------


def write_scene_dir(sample: RenderedSample, directory) -> None:
    """Write ``view_%02d.png``, ``view_%02d.cam``, ``flow_%02d_%02d.pfm`` and ``depthrange.txt``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    views = {sid: v for sid, v in zip(sample.source_ids, sample.views)}
    views[sample.target_id] = sample.target
    for vid, view in views.items():
        write_png(out / f"view_{vid:02d}.png", view.image)
        write_cameras(out / f"view_{vid:02d}.cam", [view.camera])
        for partner, flow in view.disparities.items():
            write_pfm(out / f"flow_{vid:02d}_{partner:02d}.pfm", flow_to_pfm(flow))
    d_min, d_max = sample.depth_range
    (out / "depthrange.txt").write_text(f"{d_min!r} {d_max!r}\n")


def read_scene_dir(directory, source_ids: Sequence[int], target_id: int | None = None,
                   target_camera: Camera | None = None) -> RenderedSample:
    """Load a scene directory.  Flows from the target are not needed and not read.

    Either ``target_id`` (an existing view, whose image becomes ground truth) or
    ``target_camera`` (no ground truth; the target image is zeros) must be given.
    """
    src = Path(directory)
    try:
        d_min, d_max = (float(v) for v in (src / "depthrange.txt").read_text().split())
    except (OSError, ValueError) as exc:
        raise ParseError(f"{src / 'depthrange.txt'}: {exc}") from None
    views = []
    for sid in source_ids:
        image = read_png(src / f"view_{sid:02d}.png")
        (cam,) = read_cameras(src / f"view_{sid:02d}.cam")
        disp = {}
        for other in source_ids:
            if other != sid:
                disp[other] = pfm_to_flow(read_pfm(src / f"flow_{sid:02d}_{other:02d}.pfm"))
        if target_id is not None:
            path = src / f"flow_{sid:02d}_{target_id:02d}.pfm"
            if path.exists():
                disp[target_id] = pfm_to_flow(read_pfm(path))
        views.append(View(image, cam, disp))
    if target_id is not None:
        image = read_png(src / f"view_{target_id:02d}.png")
        (cam,) = read_cameras(src / f"view_{target_id:02d}.cam")
    elif target_camera is not None:
        cam = target_camera
        image = np.zeros_like(views[0].image)
        target_id = -1
    else:
        raise ConfigurationError("need a target view id or a target camera")
    target = View(image, cam)
    H, W = target.shape
    try:
        ids = list(source_ids) + [target_id]
        positions = dict(zip(ids, lf_positions([v.camera for v in views] + [cam])))
    except GeometryError:
        positions = None
    return RenderedSample(
        views=views,
        target=target,
        occlusion_masks=[np.zeros((H, W), dtype=bool) for _ in views],
        source_ids=list(source_ids),
        target_id=target_id,
        depth_range=(d_min, d_max),
        positions=positions,
    )

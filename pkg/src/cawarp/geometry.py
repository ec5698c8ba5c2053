"""Pinhole cameras, the target-to-source pixel relation and epipolar neighborhoods.

Poses are world-to-camera: a world point ``X`` maps to ``R @ X + t`` in camera
coordinates.  Pixel coordinates are ``(x, y)`` = (column, row).  Euler angles
follow the Z-Y-X convention ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, EmptyNeighborhoodError, GeometryError, ParseError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigurationError(f"focal lengths must be positive, got {self.fx}, {self.fy}")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def from_matrix(cls, K) -> "CameraIntrinsics":
        K = np.asarray(K, dtype=np.float64)
        return cls(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]))


@dataclass(frozen=True, eq=False)
class CameraPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise GeometryError("rotation must be orthonormal with determinant 1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class Camera:
    intrinsics: CameraIntrinsics
    pose: CameraPose

    @property
    def K(self) -> np.ndarray:
        return self.intrinsics.K


@dataclass(frozen=True)
class Pose6DoF:
    tx: float
    ty: float
    tz: float
    yaw: float
    pitch: float
    roll: float
    degenerate: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz, self.yaw, self.pitch, self.roll])


def wrap_angle(a):
    """Wrap angles to the half-open interval (-pi, pi]."""
    return math.pi - np.mod(math.pi - np.asarray(a, dtype=np.float64), 2 * math.pi)


def rotation_from_euler(yaw: float, pitch: float, roll: float) -> np.ndarray:
    cz, sz = math.cos(yaw), math.sin(yaw)
    cy, sy = math.cos(pitch), math.sin(pitch)
    cx, sx = math.cos(roll), math.sin(roll)
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1.0]])
    Ry = np.array([[cy, 0, sy], [0, 1.0, 0], [-sy, 0, cy]])
    Rx = np.array([[1.0, 0, 0], [0, cx, -sx], [0, sx, cx]])
    return Rz @ Ry @ Rx


def pose_to_6dof(pose: CameraPose, gimbal_tol: float = 1e-9) -> Pose6DoF:
    """Translation plus Z-Y-X Euler angles of a pose.

    At gimbal lock (|pitch| = pi/2) roll is set to 0 and yaw absorbs it; the
    result is flagged ``degenerate``.
    """
    R = pose.rotation
    t = pose.translation
    s = float(np.clip(-R[2, 0], -1.0, 1.0))
    pitch = math.asin(s)
    if abs(abs(s) - 1.0) < gimbal_tol:
        roll = 0.0
        yaw = math.atan2(-R[0, 1], R[1, 1])
        degenerate = True
    else:
        yaw = math.atan2(R[1, 0], R[0, 0])
        roll = math.atan2(R[2, 1], R[2, 2])
        degenerate = False
    yaw, pitch, roll = (float(wrap_angle(a)) for a in (yaw, pitch, roll))
    return Pose6DoF(float(t[0]), float(t[1]), float(t[2]), yaw, pitch, roll, degenerate)


def relative_transform(target: Camera, source: Camera) -> tuple[np.ndarray, np.ndarray]:
    """``(R, t)`` with ``X_source = R @ X_target + t`` in camera coordinates."""
    R = source.pose.rotation @ target.pose.rotation.T
    t = source.pose.translation - R @ target.pose.translation
    return R, t


def project(x_t, depth, target: Camera, source: Camera, return_depth: bool = False):
    """Map target pixels at the given z-depth into the source image.

    ``x_t`` has shape ``(..., 2)``; ``depth`` broadcasts against ``x_t[..., 0]``.
    Returns source pixel coordinates and a boolean ``in_front`` mask; pixels
    landing behind the source camera are flagged false and get NaN coordinates.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise GeometryError("depth must be positive")
    R, t = relative_transform(target, source)
    homog = np.concatenate([x_t, np.ones(x_t.shape[:-1] + (1,))], axis=-1)
    rays = homog @ np.linalg.inv(target.K).T
    points = rays * depth[..., None]
    cam = points @ R.T + t
    proj = cam @ source.K.T
    z = proj[..., 2]
    in_front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = proj[..., :2] / np.where(in_front, z, np.nan)[..., None]
    if return_depth:
        return xy, in_front, cam[..., 2]
    return xy, in_front


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0.0]])


def fundamental_matrix(target: Camera, source: Camera) -> np.ndarray:
    """``F`` with ``x_s^T F x_t = 0`` for corresponding homogeneous pixels, unit Frobenius norm."""
    if np.linalg.norm(target.pose.center - source.pose.center) < 1e-12:
        raise GeometryError("camera centers coincide; the epipolar geometry is undefined")
    R, t = relative_transform(target, source)
    F = np.linalg.inv(source.K).T @ _skew(t) @ R @ np.linalg.inv(target.K)
    return F / np.linalg.norm(F)


def epipolar_distance(F: np.ndarray, x_t, x_s) -> np.ndarray:
    """Distance in source pixels from ``x_s`` to the epipolar line ``F x_t``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    x_s = np.asarray(x_s, dtype=np.float64)
    ht = np.concatenate([x_t, np.ones(x_t.shape[:-1] + (1,))], axis=-1)
    hs = np.concatenate([x_s, np.ones(x_s.shape[:-1] + (1,))], axis=-1)
    lines = ht @ F.T
    return np.abs((hs * lines).sum(-1)) / np.hypot(lines[..., 0], lines[..., 1])


def inverse_depth_samples(depth_range: Sequence[float], count: int) -> np.ndarray:
    """``count`` depths uniform in inverse depth, far to near.  ``d_max`` may be ``inf``."""
    d_min, d_max = float(depth_range[0]), float(depth_range[1])
    if not (0 < d_min < d_max):
        raise ConfigurationError(f"depth range must satisfy 0 < d_min < d_max, got {depth_range}")
    if count < 1:
        raise ConfigurationError("need at least one depth sample")
    inv = np.linspace(1.0 / d_max, 1.0 / d_min, count)
    with np.errstate(divide="ignore"):
        return np.where(inv > 0, 1.0 / np.maximum(inv, 1e-300), np.inf)


@dataclass
class NeighborhoodIndex:
    """Per-target-pixel epipolar neighbors in one source image.

    ``coords``: ``M x H x W x 2`` integer source pixels (x, y); ``valid``:
    ``M x H x W``.  Slot ``m`` follows the far-to-near sample order; duplicates
    are removed and the tail padded with invalid entries.
    """

    coords: np.ndarray
    valid: np.ndarray
    source_shape: tuple[int, int]

    @property
    def size(self) -> int:
        return self.coords.shape[0]

    @property
    def flat_index(self) -> np.ndarray:
        """Row-major source pixel index; invalid entries point at pixel 0."""
        W = self.source_shape[1]
        flat = self.coords[..., 1] * W + self.coords[..., 0]
        return np.where(self.valid, flat, 0)

    @property
    def supervisable(self) -> np.ndarray:
        """``H x W`` mask of target pixels with at least one valid neighbor."""
        return self.valid.any(axis=0)

    def crop(self, top: int, left: int, height: int, width: int) -> "NeighborhoodIndex":
        sl = (slice(None), slice(top, top + height), slice(left, left + width))
        return NeighborhoodIndex(self.coords[sl], self.valid[sl], self.source_shape)


def _pixel_grid(height: int, width: int, origin=(0, 0)) -> np.ndarray:
    ys, xs = np.mgrid[origin[0] : origin[0] + height, origin[1] : origin[1] + width]
    return np.stack([xs, ys], axis=-1).astype(np.float64)


def build_neighborhoods(
    target: Camera,
    source: Camera,
    target_shape: tuple[int, int],
    source_shape: tuple[int, int],
    depth_range: Sequence[float],
    M: int,
    origin: tuple[int, int] = (0, 0),
) -> NeighborhoodIndex:
    """Epipolar neighborhoods for every pixel of a target grid.

    Each target pixel is projected at ``M`` depths uniform in inverse depth, the
    projections are rounded to the nearest pixel, deduplicated in order and
    padded with invalid entries; out-of-bounds samples are dropped, never clamped.
    ``origin`` offsets the grid (row, col) inside the full target image.
    """
    if M < 2:
        raise ConfigurationError(f"neighborhood size must be >= 2, got {M}")
    H, W = target_shape
    Hs, Ws = source_shape
    depths = inverse_depth_samples(depth_range, M)
    samples = np.empty((M, H, W, 2))
    ok = np.empty((M, H, W), dtype=bool)
    for m, d in enumerate(depths):
        xy, front = correspondence_grid(target, source, (H, W), d, origin)
        samples[m] = np.rint(np.moveaxis(xy, 0, -1))
        ok[m] = front
    ok &= (samples[..., 0] >= 0) & (samples[..., 0] <= Ws - 1)
    ok &= (samples[..., 1] >= 0) & (samples[..., 1] <= Hs - 1)
    samples = np.where(ok[..., None], samples, -1).astype(np.int64)

    # drop repeats of any earlier valid sample (in order), then compact to the front
    same_as_prev = np.zeros((M, H, W), dtype=bool)
    for m in range(1, M):
        eq = np.all(samples[:m] == samples[m][None], axis=-1) & ok[:m]
        same_as_prev[m] = eq.any(axis=0)
    keep = ok & ~same_as_prev
    order = np.argsort(~keep, axis=0, kind="stable")
    coords = np.take_along_axis(samples, order[..., None], axis=0)
    valid = np.take_along_axis(keep, order, axis=0)
    coords = np.where(valid[..., None], coords, 0)
    return NeighborhoodIndex(coords, valid, (Hs, Ws))


def epipolar_neighborhood(x_t, target: Camera, source: Camera, source_shape, depth_range, M: int):
    """Neighborhood of a single target pixel: ``(coords M x 2, valid M)``.

    Raises :class:`EmptyNeighborhoodError` when every sample leaves the source image.
    """
    x, y = int(round(x_t[0])), int(round(x_t[1]))
    nb = build_neighborhoods(target, source, (1, 1), source_shape, depth_range, M, origin=(y, x))
    if not nb.valid.any():
        raise EmptyNeighborhoodError(f"target pixel {tuple(x_t)} has no in-bounds epipolar neighbor")
    return nb.coords[:, 0, 0], nb.valid[:, 0, 0]


def scale_lf_disparity(flow, source_index: int, target_index: int, view_positions, partner_index: int):
    """Rescale a source-to-partner flow into a source-to-target flow on a scanline.

    The factor is ``(pos_target - pos_source) / (pos_partner - pos_source)``.
    """
    ps = float(view_positions[source_index])
    pt = float(view_positions[target_index])
    pp = float(view_positions[partner_index])
    if pp == ps:
        raise GeometryError(f"views {source_index} and {partner_index} share position {ps}")
    return flow * ((pt - ps) / (pp - ps))


def lf_positions(cameras: Sequence[Camera]) -> np.ndarray:
    """Scanline coordinate of each camera along the principal direction of the centers."""
    centers = np.array([c.pose.center for c in cameras])
    offsets = centers - centers[0]
    _, sv, vt = np.linalg.svd(offsets - offsets.mean(axis=0))
    if sv[0] < 1e-12:
        raise GeometryError("all cameras coincide")
    axis = vt[0] if vt[0][np.argmax(np.abs(vt[0]))] > 0 else -vt[0]
    return offsets @ axis


# -- camera files ------------------------------------------------------------------


def write_cameras(path, cameras: Sequence[Camera]) -> None:
    """Plain-text cameras: per block 9 K, 9 R and 3 t values, row-major."""
    blocks = []
    for cam in cameras:
        rows = [cam.K, cam.pose.rotation]
        lines = [" ".join(repr(float(v)) for v in row) for m in rows for row in m]
        lines.append(" ".join(repr(float(v)) for v in cam.pose.translation))
        blocks.append("\n".join(lines))
    Path(path).write_text("\n\n".join(blocks) + "\n")


def read_cameras(path) -> list[Camera]:
    text = Path(path).read_text()
    try:
        values = [float(tok) for tok in text.split()]
    except ValueError as exc:
        raise ParseError(f"{path}: non-numeric camera entry ({exc})") from None
    if not values or len(values) % 21:
        raise ParseError(f"{path}: expected multiples of 21 values, found {len(values)}")
    cams = []
    for i in range(0, len(values), 21):
        block = np.array(values[i : i + 21])
        K = block[:9].reshape(3, 3)
        pose = CameraPose(block[9:18].reshape(3, 3), block[18:21])
        cams.append(Camera(CameraIntrinsics.from_matrix(K), pose))
    return cams


# -- views -------------------------------------------------------------------------


@dataclass
class View:
    """An image with its camera, flows to partner views and a validity mask.

    ``disparities[i]`` is a ``2 x H x W`` flow (u, v) in pixels mapping a pixel
    of this view onto its correspondence in view ``i``.
    """

    image: np.ndarray
    camera: Camera
    disparities: dict = None
    validity: np.ndarray | None = None

    def __post_init__(self):
        self.image = np.asarray(self.image)
        if self.image.ndim != 3 or self.image.shape[0] not in (1, 3):
            raise ConfigurationError(f"view image must be C x H x W with C in {{1,3}}, got {self.image.shape}")
        if self.disparities is None:
            self.disparities = {}
        for key, flow in self.disparities.items():
            if flow.shape != (2,) + self.shape:
                raise ConfigurationError(
                    f"disparity map to view {key} has shape {flow.shape}, expected {(2,) + self.shape}"
                )
        if self.validity is None:
            self.validity = np.ones(self.shape, dtype=bool)

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape[1:]

    @property
    def channels(self) -> int:
        return self.image.shape[0]

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.camera.intrinsics

    @property
    def pose(self) -> CameraPose:
        return self.camera.pose


def correspondence_grid(target: Camera, source: Camera, target_shape, depth: float, origin=(0, 0)):
    """Source positions (``2 x H x W``, x then y) of a target grid at constant depth.

    ``depth`` may be ``inf`` (plane at infinity).  Also returns the in-front mask.
    """
    H, W = target_shape
    grid = _pixel_grid(H, W, origin)
    R, t = relative_transform(target, source)
    rays = np.concatenate([grid, np.ones((H, W, 1))], -1) @ np.linalg.inv(target.K).T
    cam = rays @ R.T if np.isinf(depth) else (rays * depth) @ R.T + t
    proj = cam @ source.K.T
    front = proj[..., 2] > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = proj[..., :2] / np.where(front, proj[..., 2], 1.0)[..., None]
    xy = np.where(front[..., None], xy, -1e6)
    return np.moveaxis(xy, -1, 0), front

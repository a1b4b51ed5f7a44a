"""Pinhole camera math, point-pixel correspondences, voxel downsampling.

Coordinate conventions (OpenCV-style):
    - Camera frame: x right, y down, z forward; the camera looks along +z.
    - Pose is camera-from-world: q = R @ p + t.
    - Projection: u = cx + fx * qx / qz, v = cy + fy * qy / qz, with
      (u, v) continuous pixel coordinates and depth = qz in metres.
    - A point is in view iff qz > 1e-9 and 0 <= u < width, 0 <= v < height.
    - Pixel bucketing rounds half-up: pixel column = floor(u + 0.5).
      Continuous coordinates in [width - 0.5, width) round to a column
      outside the image and are dropped from correspondence sets.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDepth

BEHIND_EPS = 1e-9  # camera-frame depth below this counts as behind the camera


def _readonly(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx},{self.cy}) outside image")


@dataclass(frozen=True)
class Pose:
    """Camera-from-world rigid transform: q = rotation @ p + translation."""

    rotation: np.ndarray  # 3x3
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = _readonly(self.rotation)
        t = _readonly(self.translation)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"bad pose shapes {r.shape}, {t.shape}")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0):
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not 1 within 1e-9")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose_with_world_transform(self, r_w: np.ndarray, t_w: np.ndarray) -> "Pose":
        """Pose that views points already transformed by p' = r_w @ p + t_w.

        If this pose maps world point p to camera frame, the returned pose
        maps p' to the same camera-frame point, so images rendered of the
        original and transformed cloud agree pixel for pixel.
        """
        r_new = self.rotation @ np.asarray(r_w, dtype=np.float64).T
        t_new = self.translation - r_new @ np.asarray(t_w, dtype=np.float64)
        return Pose(r_new, t_new)


@dataclass(frozen=True)
class PointCloud:
    """xyz positions (metres, world frame), rgb colors in [0,1], optional labels."""

    positions: np.ndarray  # (N, 3) float64
    colors: np.ndarray  # (N, 3) float64 in [0, 1]
    labels: np.ndarray | None = None  # (N,) int64 class ids

    def __post_init__(self):
        p = _readonly(self.positions)
        c = _readonly(self.colors)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ValueError(f"positions must be (N,3), got {p.shape}")
        if c.shape != p.shape:
            raise ValueError(f"colors shape {c.shape} != positions shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("positions contain non-finite values")
        if c.size and (c.min() < 0.0 or c.max() > 1.0):
            raise ValueError("colors outside [0,1]")
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "colors", c)
        if self.labels is not None:
            lab = _readonly(self.labels, dtype=np.int64)
            if lab.shape != (p.shape[0],):
                raise ValueError(f"labels shape {lab.shape} != ({p.shape[0]},)")
            object.__setattr__(self, "labels", lab)

    def __len__(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class Image:
    """Row-major H x W x 3 float image with values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = _readonly(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must be (H,W,3), got {px.shape}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("pixel values outside [0,1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


class OutOfView(enum.Enum):
    """Why a point produced no pixel. A normal filtering outcome, not an error."""

    BEHIND_CAMERA = "behind_camera"
    OUTSIDE_FRAME = "outside_frame"


@dataclass(frozen=True)
class CorrespondenceSet:
    """Z-buffer-resolved point-to-pixel matches for one camera.

    Per entry: winning point index, continuous projection (u, v), and its
    camera-frame depth. At most one entry per integer pixel; the integer
    pixel is recovered by half-up rounding of (u, v).
    """

    point_index: np.ndarray  # (n,) int64
    u: np.ndarray  # (n,) float64, continuous column
    v: np.ndarray  # (n,) float64, continuous row
    depth: np.ndarray  # (n,) float64, metres
    camera_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "point_index", _readonly(self.point_index, np.int64))
        object.__setattr__(self, "u", _readonly(self.u))
        object.__setattr__(self, "v", _readonly(self.v))
        object.__setattr__(self, "depth", _readonly(self.depth))
        n = self.point_index.shape[0]
        if not (self.u.shape == self.v.shape == self.depth.shape == (n,)):
            raise ValueError("correspondence arrays must share length")
        if n and self.depth.min() <= 0:
            raise ValueError("correspondence depths must be positive")

    def __len__(self):
        return self.point_index.shape[0]

    def pixel_columns(self) -> np.ndarray:
        return np.floor(self.u + 0.5).astype(np.int64)

    def pixel_rows(self) -> np.ndarray:
        return np.floor(self.v + 0.5).astype(np.int64)


def project_point(p, pose: Pose, intr: CameraIntrinsics):
    """Project one world point. Returns (u, v, depth) or an OutOfView reason."""
    p = np.asarray(p, dtype=np.float64)
    q = pose.rotation @ p + pose.translation
    if q[2] <= BEHIND_EPS:
        return OutOfView.BEHIND_CAMERA
    u = intr.cx + intr.fx * q[0] / q[2]
    v = intr.cy + intr.fy * q[1] / q[2]
    if not (0.0 <= u < intr.width and 0.0 <= v < intr.height):
        return OutOfView.OUTSIDE_FRAME
    return (u, v, q[2])


def project_points(positions: np.ndarray, pose: Pose, intr: CameraIntrinsics):
    """Vectorized projection of an (N,3) array.

    Returns (u, v, depth, valid) where valid marks points in front of the
    camera and inside the frame; u/v/depth are meaningful only where valid.
    """
    positions = np.asarray(positions, dtype=np.float64)
    q = positions @ pose.rotation.T + pose.translation
    z = q[:, 2]
    front = z > BEHIND_EPS
    safe_z = np.where(front, z, 1.0)
    u = intr.cx + intr.fx * q[:, 0] / safe_z
    v = intr.cy + intr.fy * q[:, 1] / safe_z
    valid = front & (u >= 0.0) & (u < intr.width) & (v >= 0.0) & (v < intr.height)
    return u, v, z, valid


def unproject(u: float, v: float, depth: float, pose: Pose, intr: CameraIntrinsics) -> np.ndarray:
    """Exact inverse of project_point for positive depth."""
    if not depth > 0:
        raise DegenerateDepth(f"depth must be positive, got {depth}")
    if not (np.isfinite(u) and np.isfinite(v)):
        raise ValueError("pixel coordinates must be finite")
    q = np.array([(u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth, depth])
    return pose.rotation.T @ (q - pose.translation)


def build_correspondences(
    cloud: PointCloud, pose: Pose, intr: CameraIntrinsics, camera_id: int = 0
) -> CorrespondenceSet:
    """Project every point and keep the z-buffer winner per integer pixel.

    Depth ties within a pixel are broken by the lowest point index.
    Points behind the camera, outside the frame, or whose half-up-rounded
    pixel falls outside the integer grid are simply absent.
    """
    if len(cloud) == 0:
        raise ValueError("cloud must be nonempty")
    u, v, z, valid = project_points(cloud.positions, pose, intr)
    iu = np.floor(u + 0.5).astype(np.int64)
    iv = np.floor(v + 0.5).astype(np.int64)
    valid &= (iu >= 0) & (iu < intr.width) & (iv >= 0) & (iv < intr.height)
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        empty = np.empty(0)
        return CorrespondenceSet(np.empty(0, np.int64), empty, empty, empty, camera_id)
    key = iv[idx] * intr.width + iu[idx]
    # sort by (pixel, depth, point index); first row per pixel wins
    order = np.lexsort((idx, z[idx], key))
    key_sorted = key[order]
    first = np.ones(key_sorted.shape[0], dtype=bool)
    first[1:] = key_sorted[1:] != key_sorted[:-1]
    win = idx[order][first]
    return CorrespondenceSet(win, u[win], v[win], z[win], camera_id)


@dataclass(frozen=True)
class VoxelizeResult:
    cloud: PointCloud
    index_map: np.ndarray = field(repr=False)  # (N,) int64, original -> output index

    def __iter__(self):  # allow tuple-style unpacking
        return iter((self.cloud, self.index_map))


def voxelize(cloud: PointCloud, voxel_size: float) -> VoxelizeResult:
    """Grid downsample: one point per occupied voxel.

    Voxel key is floor(coordinate / voxel_size) per axis. The output point
    is the centroid of the voxel's members with their mean color; labels
    take the majority vote (ties broken by the lowest class id). The index
    map sends each original point to its voxel's output index.
    """
    if not voxel_size > 0:
        raise ValueError(f"voxel_size must be positive, got {voxel_size}")
    keys = np.floor(cloud.positions / voxel_size).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel().astype(np.int64)
    m = uniq.shape[0]
    counts = np.bincount(inverse, minlength=m).astype(np.float64)
    pos = np.empty((m, 3))
    col = np.empty((m, 3))
    for axis in range(3):
        pos[:, axis] = np.bincount(inverse, weights=cloud.positions[:, axis], minlength=m)
        col[:, axis] = np.bincount(inverse, weights=cloud.colors[:, axis], minlength=m)
    pos /= counts[:, None]
    col /= counts[:, None]
    np.clip(col, 0.0, 1.0, out=col)

    labels = None
    if cloud.labels is not None:
        # per (voxel, label) counts; majority with ties -> lowest class id
        pair_order = np.lexsort((cloud.labels, inverse))
        vox_s = inverse[pair_order]
        lab_s = cloud.labels[pair_order]
        new_pair = np.ones(vox_s.shape[0], dtype=bool)
        new_pair[1:] = (vox_s[1:] != vox_s[:-1]) | (lab_s[1:] != lab_s[:-1])
        starts = np.flatnonzero(new_pair)
        pair_vox = vox_s[starts]
        pair_lab = lab_s[starts]
        pair_cnt = np.diff(np.append(starts, vox_s.shape[0]))
        # within a voxel, pairs are ordered by ascending label; a strictly
        # greater count is required to displace the current winner
        labels = np.zeros(m, dtype=np.int64)
        best = np.full(m, -1, dtype=np.int64)
        for pv, pl, pc in zip(pair_vox, pair_lab, pair_cnt):
            if pc > best[pv]:
                best[pv] = pc
                labels[pv] = pl

    out = PointCloud(pos, col, labels)
    return VoxelizeResult(out, inverse)

"""Camera projection, BEV indexing, depth completion, correspondences, polar grids.

Conventions used throughout:

* world frame: x/y horizontal, z up
* camera frame: X right, Y down, Z forward; E is the 4x4 world-to-camera map
* continuous image coords (u, v): u along width, v along height; integer pixel
  j covers [j, j+1) so its center sits at j + 0.5
* feature maps at stride s: feature cell (i, j) has image-pixel center
  ((j + 0.5) * s, (i + 0.5) * s)
* sampling index space (what bilinear_sample uses): cell (i, j) lives exactly
  at index (i, j); image coord (u, v) converts to ((v / s) - 0.5, (u / s) - 0.5)
* BEV cell (i, j): i indexes y, j indexes x; cell (i, j) center is at
  x = x_min + (j + 0.5) * cell_w, and the continuous cell coordinate of a
  point is (x - x_min) / cell_w - 0.5

Everything here is plain numpy; features sampled at these coordinates enter
the autodiff graph through the numerics sampling ops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class BehindCameraError(ValueError):
    """Raised when projecting a point with camera-frame z <= 0."""


@dataclass
class CameraModel:
    K: np.ndarray      # 3x3 intrinsics
    E: np.ndarray      # 4x4 world-to-camera extrinsics
    width: int
    height: int

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64)
        self.E = np.asarray(self.E, dtype=np.float64)
        if self.K.shape != (3, 3) or self.E.shape != (4, 4):
            raise ValueError("K must be 3x3 and E must be 4x4")
        if self.K[0, 0] <= 0 or self.K[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        r = self.E[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-8):
            raise ValueError("extrinsic rotation must be orthonormal")
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-8):
            raise ValueError("extrinsic rotation must be proper (det 1)")

    @property
    def fx(self) -> float: return float(self.K[0, 0])
    @property
    def fy(self) -> float: return float(self.K[1, 1])
    @property
    def cx(self) -> float: return float(self.K[0, 2])
    @property
    def cy(self) -> float: return float(self.K[1, 2])

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        r, t = self.E[:3, :3], self.E[:3, 3]
        return -r.T @ t

    @property
    def right_w(self) -> np.ndarray: return self.E[0, :3]
    @property
    def forward_w(self) -> np.ndarray: return self.E[2, :3]

    def cam_points(self, pts: np.ndarray) -> np.ndarray:
        """World points (N, 3) to camera frame (N, 3)."""
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.E[:3, :3].T + self.E[:3, 3]

    @staticmethod
    def level(position, yaw: float, fx: float, fy: float, cx: float, cy: float,
              width: int, height: int) -> "CameraModel":
        """Camera at `position` looking along ground yaw, horizon level."""
        fwd = np.array([math.cos(yaw), math.sin(yaw), 0.0])
        right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
        down = np.array([0.0, 0.0, -1.0])
        r = np.stack([right, down, fwd])
        e = np.eye(4)
        e[:3, :3] = r
        e[:3, 3] = -r @ np.asarray(position, dtype=np.float64)
        k = np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1.0]])
        return CameraModel(k, e, width, height)


def project_point(p, cam: CameraModel) -> tuple[float, float, float]:
    """World point -> continuous (u, v) and camera depth; errors behind camera."""
    pc = cam.cam_points(np.asarray(p, dtype=np.float64)[None])[0]
    if pc[2] <= 0:
        raise BehindCameraError(f"point has camera depth {pc[2]:.6g}")
    u = cam.fx * pc[0] / pc[2] + cam.cx
    v = cam.fy * pc[1] / pc[2] + cam.cy
    return float(u), float(v), float(pc[2])


def project_points(pts: np.ndarray, cam: CameraModel):
    """Bulk projection; returns (uv (N,2), depth (N,), in_front (N,) bool)."""
    pc = cam.cam_points(pts)
    z = pc[:, 2]
    front = z > 0
    zsafe = np.where(front, z, 1.0)
    u = cam.fx * pc[:, 0] / zsafe + cam.cx
    v = cam.fy * pc[:, 1] / zsafe + cam.cy
    return np.stack([u, v], axis=1), z, front


def lift_pixel(u: float, v: float, depth: float, cam: CameraModel) -> np.ndarray:
    """Inverse of project_point; depth must be positive."""
    if depth <= 0:
        raise ValueError("lift_pixel needs positive depth")
    x = (u - cam.cx) / cam.fx * depth
    y = (v - cam.cy) / cam.fy * depth
    pc = np.array([x, y, depth, 1.0])
    r = cam.E[:3, :3]
    world = r.T @ (pc[:3] - cam.E[:3, 3])
    return world


@dataclass
class BevGrid:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    h: int
    w: int

    def __post_init__(self):
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError("grid extent must be positive")
        if self.h <= 0 or self.w <= 0:
            raise ValueError("grid dims must be positive")

    @property
    def cell_w(self) -> float: return (self.x_max - self.x_min) / self.w
    @property
    def cell_h(self) -> float: return (self.y_max - self.y_min) / self.h

    def cell_center(self, i, j):
        """BEV cell -> world (x, y) of its center."""
        x = self.x_min + (np.asarray(j, dtype=np.float64) + 0.5) * self.cell_w
        y = self.y_min + (np.asarray(i, dtype=np.float64) + 0.5) * self.cell_h
        return x, y

    def continuous_cell(self, x, y):
        """World (x, y) -> continuous (row, col) in sampling index space."""
        col = (np.asarray(x, dtype=np.float64) - self.x_min) / self.cell_w - 0.5
        row = (np.asarray(y, dtype=np.float64) - self.y_min) / self.cell_h - 0.5
        return row, col


def bev_index(x, y, grid: BevGrid):
    """World (x, y) -> integer cell (i, j) plus validity.

    The raw fractional index is floored then clamped into the grid; points
    outside the closed range come back flagged invalid (but still clamped).
    Accepts scalars or arrays.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    fi = (y - grid.y_min) / (grid.y_max - grid.y_min) * grid.h
    fj = (x - grid.x_min) / (grid.x_max - grid.x_min) * grid.w
    i = np.clip(np.floor(fi), 0, grid.h - 1).astype(np.int64)
    j = np.clip(np.floor(fj), 0, grid.w - 1).astype(np.int64)
    valid = ((x >= grid.x_min) & (x <= grid.x_max)
             & (y >= grid.y_min) & (y <= grid.y_max))
    if np.isscalar(x) or x.ndim == 0:
        return int(i), int(j), bool(valid)
    return i, j, valid


@dataclass
class DepthMap:
    depth: np.ndarray   # (H, W) float64
    valid: np.ndarray   # (H, W) bool

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.depth.shape != self.valid.shape or self.depth.ndim != 2:
            raise ValueError("depth/valid must be matching 2-D arrays")
        if np.any(self.depth[self.valid] <= 0):
            raise ValueError("valid depths must be positive")

    @property
    def height(self) -> int: return self.depth.shape[0]
    @property
    def width(self) -> int: return self.depth.shape[1]


def complete_depth(sparse: DepthMap) -> DepthMap:
    """Fill holes with the nearest valid pixel's depth.

    Nearest is by Chebyshev distance (expanding square window); ties break by
    smaller row then smaller column of the donor pixel. Errors when the map
    has no valid pixel at all. Quadratic brute force - depth maps here are
    feature-resolution and tiny.
    """
    h, w = sparse.depth.shape
    if not sparse.valid.any():
        raise ValueError("cannot complete an empty depth map")
    vr, vc = np.nonzero(sparse.valid)
    vals = sparse.depth[vr, vc]
    out = sparse.depth.copy()
    hr, hc = np.nonzero(~sparse.valid)
    if hr.size:
        dist = np.maximum(np.abs(hr[:, None] - vr[None, :]),
                          np.abs(hc[:, None] - vc[None, :]))
        # lexicographic (distance, row, col) via integer packing
        key = (dist.astype(np.int64) * h + vr[None, :]) * w + vc[None, :]
        pick = np.argmin(key, axis=1)
        out[hr, hc] = vals[pick]
    return DepthMap(out, np.ones((h, w), dtype=bool))


# -- correspondences -----------------------------------------------------------


def map_c2p(pixel: tuple[int, int], k: int, dense: DepthMap, cam: CameraModel,
            grid: BevGrid, stride: int):
    """Image->BEV correspondence for one feature pixel.

    Lifts each of the (2k+1)^2 neighboring feature pixels through its completed
    depth and lands it in the BEV grid. Returns integer cells (M, 2) and a
    validity mask (M,), ordered row-major by (di, dj). Neighbors falling off
    the feature map, or landing outside the BEV range, are invalid.
    """
    i, j = pixel
    fh, fw = dense.depth.shape
    if not (0 <= i < fh and 0 <= j < fw):
        raise ValueError("pixel outside feature map")
    offs = range(-k, k + 1)
    cells = np.zeros(((2 * k + 1) ** 2, 2), dtype=np.int64)
    valid = np.zeros((2 * k + 1) ** 2, dtype=bool)
    n = 0
    for di in offs:
        for dj in offs:
            ni, nj = i + di, j + dj
            if 0 <= ni < fh and 0 <= nj < fw:
                d = dense.depth[ni, nj]
                world = lift_pixel((nj + 0.5) * stride, (ni + 0.5) * stride, d, cam)
                bi, bj, ok = bev_index(world[0], world[1], grid)
                cells[n] = (bi, bj)
                valid[n] = ok
            n += 1
    return cells, valid


def build_c2p(dense: DepthMap, cam: CameraModel, grid: BevGrid, stride: int,
              k: int):
    """Vectorized map_c2p over every feature pixel.

    Returns cells (H, W, (2k+1)^2, 2) and valid (H, W, (2k+1)^2) with the same
    neighbor ordering as map_c2p.
    """
    fh, fw = dense.depth.shape
    ii, jj = np.meshgrid(np.arange(fh), np.arange(fw), indexing="ij")
    offs = [(di, dj) for di in range(-k, k + 1) for dj in range(-k, k + 1)]
    m = len(offs)
    cells = np.zeros((fh, fw, m, 2), dtype=np.int64)
    valid = np.zeros((fh, fw, m), dtype=bool)
    r = cam.E[:3, :3]
    for n, (di, dj) in enumerate(offs):
        ni, nj = ii + di, jj + dj
        inb = (ni >= 0) & (ni < fh) & (nj >= 0) & (nj < fw)
        nic = np.clip(ni, 0, fh - 1)
        njc = np.clip(nj, 0, fw - 1)
        d = dense.depth[nic, njc]
        u = (njc + 0.5) * stride
        v = (nic + 0.5) * stride
        xc = (u - cam.cx) / cam.fx * d
        yc = (v - cam.cy) / cam.fy * d
        pc = np.stack([xc, yc, d], axis=-1).reshape(-1, 3)
        world = (pc - cam.E[:3, 3]) @ r
        bi, bj, ok = bev_index(world[:, 0], world[:, 1], grid)
        cells[:, :, n, 0] = bi.reshape(fh, fw)
        cells[:, :, n, 1] = bj.reshape(fh, fw)
        valid[:, :, n] = inb & ok.reshape(fh, fw)
    return cells, valid


def map_p2c(cell: tuple[int, int], points: np.ndarray, cams: list[CameraModel],
            grid: BevGrid, stride: int):
    """BEV->image correspondence for one pillar.

    Projects every point whose (x, y) falls in the cell into each camera.
    Returns, per camera, continuous feature-space (row, col) coordinates
    (n_i, 2) for the projections that land inside that camera's image with
    positive depth. Point order follows the input cloud; cameras follow rig
    order.
    """
    points = np.asarray(points, dtype=np.float64)
    bi, bj, ok = bev_index(points[:, 0], points[:, 1], grid)
    sel = ok & (bi == cell[0]) & (bj == cell[1])
    pts = points[sel, :3]
    out = []
    for cam in cams:
        if pts.size == 0:
            out.append(np.zeros((0, 2), dtype=np.float64))
            continue
        uv, z, front = project_points(pts, cam)
        keep = front & (uv[:, 0] >= 0) & (uv[:, 0] < cam.width) \
            & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height)
        rows = uv[keep, 1] / stride - 0.5
        cols = uv[keep, 0] / stride - 0.5
        out.append(np.stack([rows, cols], axis=1))
    return out


@dataclass
class PillarCorrespondence:
    """CSR layout of BEV->image correspondences over occupied pillars."""
    pillar_rows: np.ndarray   # (P,) BEV row of each occupied pillar
    pillar_cols: np.ndarray   # (P,)
    offsets: np.ndarray       # (P+1,) CSR offsets into the entry arrays
    cam_idx: np.ndarray       # (E,) camera of each entry
    rows: np.ndarray          # (E,) feature-space row coordinate
    cols: np.ndarray          # (E,)

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)


def build_p2c(points: np.ndarray, cams: list[CameraModel], grid: BevGrid,
              stride: int) -> PillarCorrespondence:
    """Vectorized map_p2c over all pillars that contain points.

    Entries within a pillar are ordered by (point index, camera index), which
    matches map_p2c output concatenated camera-by-... point-major; tests use
    set comparisons so only determinism matters here.
    """
    points = np.asarray(points, dtype=np.float64)
    bi, bj, ok = bev_index(points[:, 0], points[:, 1], grid)
    pid = bi * grid.w + bj
    entry_pillar = []
    entry_cam = []
    entry_rows = []
    entry_cols = []
    for ci, cam in enumerate(cams):
        uv, z, front = project_points(points[:, :3], cam)
        keep = ok & front & (uv[:, 0] >= 0) & (uv[:, 0] < cam.width) \
            & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height)
        idx = np.nonzero(keep)[0]
        entry_pillar.append(pid[idx])
        entry_cam.append(np.full(idx.size, ci, dtype=np.int64))
        entry_rows.append(uv[idx, 1] / stride - 0.5)
        entry_cols.append(uv[idx, 0] / stride - 0.5)
    pillar = np.concatenate(entry_pillar) if entry_pillar else np.zeros(0, np.int64)
    cam_i = np.concatenate(entry_cam) if entry_cam else np.zeros(0, np.int64)
    rws = np.concatenate(entry_rows) if entry_rows else np.zeros(0)
    cls = np.concatenate(entry_cols) if entry_cols else np.zeros(0)
    order = np.argsort(pillar, kind="stable")
    pillar, cam_i, rws, cls = pillar[order], cam_i[order], rws[order], cls[order]
    uniq, starts = np.unique(pillar, return_index=True)
    offsets = np.append(starts, pillar.size).astype(np.int64)
    return PillarCorrespondence(
        pillar_rows=(uniq // grid.w).astype(np.int64),
        pillar_cols=(uniq % grid.w).astype(np.int64),
        offsets=offsets, cam_idx=cam_i, rows=rws, cols=cls)


# -- polar grids ---------------------------------------------------------------


@dataclass(frozen=True)
class PolarGrid:
    bins: int          # radial bins R
    r_max: float

    def __post_init__(self):
        if self.bins <= 0 or self.r_max <= 0:
            raise ValueError("polar grid needs positive bins and r_max")

    @property
    def dr(self) -> float:
        return self.r_max / self.bins


def azimuth_of_column(col: int, cam: CameraModel, stride: int) -> float:
    """Ground azimuth (rad, from camera forward axis) of a feature column."""
    fw = cam.width // stride
    if not (0 <= col < fw):
        raise ValueError("column outside feature map")
    i_px = (col + 0.5) * stride
    return math.atan((i_px - cam.cx) / cam.fx)


def _ground_basis(cam: CameraModel):
    fwd = cam.forward_w.copy()
    right = cam.right_w.copy()
    if abs(right[2]) > 1e-9:
        raise ValueError("polar ops require a level camera (horizontal image x axis)")
    fwd[2] = 0.0
    fwd /= np.linalg.norm(fwd)
    return cam.position[:2], fwd[:2], right[:2]


def polar_sample_grid(cam: CameraModel, pgrid: PolarGrid, grid: BevGrid,
                      stride: int):
    """BEV sampling coords for each polar bin -> (rows, cols), shape (R, Wf).

    Bin (r, c) sits at radius (r + 0.5) * dr along the azimuth of feature
    column c, measured from the camera position.
    """
    origin, fwd, right = _ground_basis(cam)
    wf = cam.width // stride
    thetas = np.array([azimuth_of_column(c, cam, stride) for c in range(wf)])
    radii = (np.arange(pgrid.bins) + 0.5) * pgrid.dr
    dirs = fwd[None, :] * np.cos(thetas)[:, None] + right[None, :] * np.sin(thetas)[:, None]
    pts = origin[None, None, :] + radii[:, None, None] * dirs[None, :, :]
    rows, cols = grid.continuous_cell(pts[..., 0], pts[..., 1])
    return rows, cols


def bev_to_polar_coords(cam: CameraModel, pgrid: PolarGrid, grid: BevGrid,
                        stride: int):
    """Inverse correspondence: for each BEV cell, its (bin, col) polar coords.

    Returns (bin_cont (H, W), col_cont (H, W), in_frustum (H, W)). A cell is in
    the frustum when it lies strictly in front of the camera and its polar
    coordinate falls inside the sampleable polar map.
    """
    origin, fwd, right = _ground_basis(cam)
    ii, jj = np.meshgrid(np.arange(grid.h), np.arange(grid.w), indexing="ij")
    x, y = grid.cell_center(ii, jj)
    dx = x - origin[0]
    dy = y - origin[1]
    zeta = dx * fwd[0] + dy * fwd[1]
    xi = dx * right[0] + dy * right[1]
    front = zeta > 1e-9
    zsafe = np.where(front, zeta, 1.0)
    u = cam.fx * (xi / zsafe) + cam.cx
    col_cont = u / stride - 0.5
    radius = np.hypot(dx, dy)
    bin_cont = radius / pgrid.dr - 0.5
    wf = cam.width // stride
    ok = front & (bin_cont >= 0) & (bin_cont <= pgrid.bins - 1) \
        & (col_cont >= 0) & (col_cont <= wf - 1)
    return bin_cont, col_cont, ok

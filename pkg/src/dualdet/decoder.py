"""Alternating multi-modal predictive interaction decoder.

Queries start at per-class heatmap peaks. Each layer extracts an RoI around the
query's current box from one modality (image features on odd 1-indexed layers,
BEV features on even ones), runs a query-conditioned dynamic convolution over
the RoI, and predicts a class score and a box refinement on top of the running
box. Box geometry feeding RoI extraction is always detached: gradients flow
through features and dynamic parameters, not through box coordinates.

Box parameterization beta (10): cx, cy in BEV cell units, z in meters,
log w / log l / log h, sin yaw, cos yaw, vx, vy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BevGrid, CameraModel
from .numerics import (Tensor, add, bilinear_sample_many, concat, gather_rc,
                       gather_rows, matmul, relu, reshape, sinusoidal_encoding,
                       where_mask)
from .numerics.nn import MLP, LayerNorm, Linear, Module
from .rng import Rng

FOCAL_PRIOR_BIAS = -float(np.log(99.0))   # sigmoid(bias) = 0.01


@dataclass
class DecoderConfig:
    layers: int = 5
    channels: int = 32
    num_queries: int = 40
    num_classes: int = 3
    roi_size: int = 5
    dyn_hidden: int = 8    # channels of the dynamic conv bottleneck


# -- box parameterization -----------------------------------------------------


def beta_init(cells: np.ndarray) -> np.ndarray:
    """Initial beta for query cells (N, 2) as (row, col): unit box at the cell."""
    n = cells.shape[0]
    beta = np.zeros((n, 10))
    beta[:, 0] = cells[:, 1] + 0.5    # cx in cell units along x / columns
    beta[:, 1] = cells[:, 0] + 0.5    # cy along y / rows
    beta[:, 7] = 1.0                  # cos yaw
    return beta


def beta_centers_world(beta: np.ndarray, grid: BevGrid) -> np.ndarray:
    """(N, 3) world centers from beta cell coordinates."""
    x = grid.x_min + beta[:, 0] * grid.cell_w
    y = grid.y_min + beta[:, 1] * grid.cell_h
    return np.stack([x, y, beta[:, 2]], axis=1)


def beta_decode(beta: np.ndarray, grid: BevGrid) -> dict:
    """Decode beta rows into world-space box arrays."""
    centers = beta_centers_world(beta, grid)
    sizes = np.exp(np.clip(beta[:, 3:6], -10.0, 10.0))
    yaws = np.arctan2(beta[:, 6], beta[:, 7])
    return {"centers": centers, "sizes": sizes, "yaws": yaws,
            "velocities": beta[:, 8:10].copy()}


def beta_encode(center, size, yaw, grid: BevGrid, velocity=(0.0, 0.0)) -> np.ndarray:
    """Encode one world-space box as a beta row (inverse of beta_decode)."""
    return np.array([
        (center[0] - grid.x_min) / grid.cell_w,
        (center[1] - grid.y_min) / grid.cell_h,
        center[2],
        np.log(size[0]), np.log(size[1]), np.log(size[2]),
        np.sin(yaw), np.cos(yaw),
        velocity[0], velocity[1]])


def beta_corners(beta_row: np.ndarray, grid: BevGrid) -> np.ndarray:
    """(8, 3) world corners of one beta box (bottom 4 then top 4)."""
    cx = grid.x_min + beta_row[0] * grid.cell_w
    cy = grid.y_min + beta_row[1] * grid.cell_h
    cz = beta_row[2]
    w, l, h = np.exp(np.clip(beta_row[3:6], -10.0, 10.0))
    s, c = beta_row[6], beta_row[7]
    nrm = np.hypot(s, c)
    if nrm > 1e-9:
        s, c = s / nrm, c / nrm
    else:
        s, c = 0.0, 1.0
    dx = np.array([l, l, -l, -l]) / 2
    dy = np.array([w, -w, -w, w]) / 2
    xs = cx + c * dx - s * dy
    ys = cy + s * dx + c * dy
    bottom = np.stack([xs, ys, np.full(4, cz - h / 2)], axis=1)
    top = np.stack([xs, ys, np.full(4, cz + h / 2)], axis=1)
    return np.concatenate([bottom, top], axis=0)


# -- query initialization -----------------------------------------------------


def local_peaks(scores: np.ndarray) -> np.ndarray:
    """3x3 local maxima (ties count as peaks); scores (H, W) -> bool (H, W)."""
    h, w = scores.shape
    padded = np.full((h + 2, w + 2), -np.inf)
    padded[1:-1, 1:-1] = scores
    best = scores.copy()
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            np.maximum(best, padded[1 + di:h + 1 + di, 1 + dj:w + 1 + dj],
                       out=best)
    return scores >= best


def init_queries(probs: np.ndarray, num_queries: int):
    """Pick query cells from a per-class score map (H, W, K).

    Local peaks come first, ordered by descending score with flat class-major
    index breaking ties; if there are fewer peaks than queries, the best
    non-peak cells fill the rest. Returns (cells (N,2) int, classes (N,),
    scores (N,)).
    """
    h, w, k = probs.shape
    peak = np.stack([local_peaks(probs[:, :, ki]) for ki in range(k)], axis=2)
    flat_scores = probs.transpose(2, 0, 1).reshape(-1)        # class-major
    flat_peak = peak.transpose(2, 0, 1).reshape(-1)
    order = np.lexsort((np.arange(flat_scores.size), -flat_scores))
    ordered_peaks = order[flat_peak[order]]
    chosen = ordered_peaks[:num_queries]
    if chosen.size < num_queries:
        rest = order[~flat_peak[order]][:num_queries - chosen.size]
        chosen = np.concatenate([chosen, rest])
    classes, rem = np.divmod(chosen, h * w)
    rows, cols = np.divmod(rem, w)
    cells = np.stack([rows, cols], axis=1).astype(np.int64)
    return cells, classes.astype(np.int64), flat_scores[chosen]


def query_posenc(cells: np.ndarray, channels: int) -> np.ndarray:
    """Sinusoidal (row, col) position code, half the channels each."""
    half = channels // 2
    return np.concatenate([
        sinusoidal_encoding(cells[:, 0].astype(np.float64), half),
        sinusoidal_encoding(cells[:, 1].astype(np.float64), channels - half)],
        axis=1)


# -- RoI extraction ------------------------------------------------------------


def _axis_points(a: float, b: float, s: int) -> np.ndarray:
    return np.array([(a + b) / 2.0]) if s == 1 else np.linspace(a, b, s)


def roi_align(m: Tensor, r0: float, r1: float, c0: float, c1: float,
              s: int) -> Tensor:
    """Sample an s x s grid spanning the rect inclusively -> (s*s, C)."""
    rows, cols = roi_grid_points(r0, r1, c0, c1, s)
    return bilinear_sample_many(m, rows, cols)


def roi_grid_points(r0, r1, c0, c1, s: int):
    rr = _axis_points(r0, r1, s)
    cc = _axis_points(c0, c1, s)
    gr, gc = np.meshgrid(rr, cc, indexing="ij")
    return gr.reshape(-1), gc.reshape(-1)


def image_roi_rect(beta_row: np.ndarray, grid: BevGrid, cam: CameraModel,
                   stride: int):
    """Feature-space rect (r0, r1, c0, c1) covering the box in this camera.

    Uses only positive-depth corners; returns None when no corner is in front
    of the camera or the clipped rect is empty.
    """
    corners = beta_corners(beta_row, grid)
    pc = cam.cam_points(corners)
    front = pc[:, 2] > 1e-6
    if not front.any():
        return None
    z = pc[front, 2]
    u = cam.fx * pc[front, 0] / z + cam.cx
    v = cam.fy * pc[front, 1] / z + cam.cy
    u0, u1 = max(u.min(), 0.0), min(u.max(), float(cam.width))
    v0, v1 = max(v.min(), 0.0), min(v.max(), float(cam.height))
    if u0 >= u1 or v0 >= v1:
        return None
    return (v0 / stride - 0.5, v1 / stride - 0.5,
            u0 / stride - 0.5, u1 / stride - 0.5)


def choose_camera(beta_row: np.ndarray, grid: BevGrid, cams: list,
                  stride: int):
    """Camera with the largest visible rect area; ties pick the smaller index.

    Returns (cam_idx, rect) or (-1, None) when the box is invisible everywhere.
    """
    best = (-1, None)
    best_area = 0.0
    for ci, cam in enumerate(cams):
        rect = image_roi_rect(beta_row, grid, cam, stride)
        if rect is None:
            continue
        area = (rect[1] - rect[0]) * (rect[3] - rect[2])
        if area > best_area + 1e-12:
            best = (ci, rect)
            best_area = area
    return best


def bev_roi_points(beta_row: np.ndarray, grid: BevGrid, s: int):
    """Continuous BEV cell coords of an s x s grid over the 2x-enlarged footprint."""
    cx, cy = beta_row[0], beta_row[1]           # cell units
    w, l = np.exp(np.clip(beta_row[3:5], -10.0, 10.0))
    sn, cs = beta_row[6], beta_row[7]
    nrm = np.hypot(sn, cs)
    if nrm > 1e-9:
        sn, cs = sn / nrm, cs / nrm
    else:
        sn, cs = 0.0, 1.0
    # local box frame, extents doubled (half-extent l/2 * 2 = l along heading)
    lx = _axis_points(-l, l, s)
    ly = _axis_points(-w, w, s)
    gx, gy = np.meshgrid(lx, ly, indexing="ij")
    wx = cs * gx - sn * gy                      # meters
    wy = sn * gx + cs * gy
    cols = cx + wx / grid.cell_w - 0.5          # continuous sampling col (x)
    rows = cy + wy / grid.cell_h - 0.5
    return rows.reshape(-1), cols.reshape(-1)


# -- modules -------------------------------------------------------------------


class DynamicInteraction(Module):
    """Query-conditioned two-layer conv over RoI features, then residual LN.

    The parameter generator is randomly initialized (a zero generator would
    leave every relu stuck at zero gradient) while the output projection is
    zero-initialized, so the block starts as an exact identity.
    """

    def __init__(self, channels: int, hidden: int, roi_size: int, rng: Rng):
        self.c = channels
        self.h = hidden
        self.s2 = roi_size * roi_size
        n_params = 2 * channels * hidden + hidden + channels
        self.param_gen = Linear(channels, n_params, rng.split(1))
        self.out = Linear(self.s2 * channels, channels, zero_init=True)
        self.ln = LayerNorm(channels)

    def forward(self, emb: Tensor, roi: Tensor, visible: np.ndarray) -> Tensor:
        n, c, h = emb.shape[0], self.c, self.h
        p = self.param_gen(emb)
        w1 = reshape(p[:, :c * h], (n, c, h))
        b1 = reshape(p[:, c * h:c * h + h], (n, 1, h))
        w2 = reshape(p[:, c * h + h:2 * c * h + h], (n, h, c))
        b2 = reshape(p[:, 2 * c * h + h:], (n, 1, c))
        x = relu(add(matmul(roi, w1), b1))
        x = relu(add(matmul(x, w2), b2))
        delta = self.out(reshape(x, (n, self.s2 * c)))
        merged = self.ln(add(emb, delta))
        return where_mask(visible[:, None], merged, emb)


class PredictionHeads(Module):
    """Per-layer classification and box refinement heads."""

    def __init__(self, channels: int, num_classes: int, rng: Rng):
        self.cls = MLP(channels, channels, num_classes, rng.split(1),
                       zero_last=True, last_bias_fill=FOCAL_PRIOR_BIAS)
        self.box = MLP(channels, channels, 10, rng.split(2), zero_last=True)

    def forward(self, emb: Tensor):
        return self.cls(emb), self.box(emb)


class DecoderLayer(Module):
    def __init__(self, cfg: DecoderConfig, rng: Rng):
        self.dyn = DynamicInteraction(cfg.channels, cfg.dyn_hidden,
                                      cfg.roi_size, rng.split(1))
        self.heads = PredictionHeads(cfg.channels, cfg.num_classes, rng.split(2))


@dataclass
class LayerOutput:
    logits: Tensor          # (N, K)
    beta: Tensor            # (N, 10)
    visible: np.ndarray     # (N,) bool, all True on BEV layers
    modality: str           # "image" or "bev"
    cam_idx: np.ndarray     # (N,) chosen camera per query (-1 off image layers)


class Decoder(Module):
    def __init__(self, cfg: DecoderConfig, rng: Rng):
        self.cfg = cfg
        self.layers = [DecoderLayer(cfg, rng.split(20 + i))
                       for i in range(cfg.layers)]

    def _image_roi(self, beta: np.ndarray, h_imgs: list, grid: BevGrid,
                   cams: list, stride: int):
        """RoI stack (N, S^2, C) from each query's chosen camera (batched per cam)."""
        n = beta.shape[0]
        s = self.cfg.roi_size
        c = self.cfg.channels
        cam_of = np.full(n, -1, dtype=np.int64)
        rects = [None] * n
        for qi in range(n):
            ci, rect = choose_camera(beta[qi], grid, cams, stride)
            cam_of[qi] = ci
            rects[qi] = rect
        parts = []
        part_rows = []
        for ci in range(len(cams)):
            members = np.nonzero(cam_of == ci)[0]
            if members.size == 0:
                continue
            rr, cc = [], []
            for qi in members:
                r, cpts = roi_grid_points(*rects[qi], s)
                rr.append(r)
                cc.append(cpts)
            parts.append(bilinear_sample_many(h_imgs[ci], np.concatenate(rr),
                                              np.concatenate(cc)))
            part_rows.append(members)
        invis = np.nonzero(cam_of < 0)[0]
        if invis.size:
            parts.append(Tensor(np.zeros((invis.size * s * s, c))))
            part_rows.append(invis)
        stacked = concat(parts, axis=0) if len(parts) > 1 else parts[0]
        order = np.concatenate([np.repeat(m * s * s, s * s)
                                + np.tile(np.arange(s * s), m.size)
                                for m in (np.asarray(pr) for pr in part_rows)])
        inv = np.argsort(order, kind="stable")
        roi = reshape(gather_rows(stacked, inv), (n, s * s, c))
        return roi, cam_of

    def _bev_roi(self, beta: np.ndarray, h_bev: Tensor, grid: BevGrid):
        n = beta.shape[0]
        s = self.cfg.roi_size
        rr = np.empty((n, s * s))
        cc = np.empty((n, s * s))
        for qi in range(n):
            rr[qi], cc[qi] = bev_roi_points(beta[qi], grid, s)
        samp = bilinear_sample_many(h_bev, rr.reshape(-1), cc.reshape(-1))
        return reshape(samp, (n, s * s, self.cfg.channels))

    def forward(self, h_bev: Tensor, h_imgs: list, heat_probs: np.ndarray,
                grid: BevGrid, cams: list, stride: int) -> list[LayerOutput]:
        cfg = self.cfg
        cells, classes, _ = init_queries(heat_probs, cfg.num_queries)
        emb = add(gather_rc(h_bev, cells[:, 0], cells[:, 1]),
                  query_posenc(cells, cfg.channels))
        beta = beta_init(cells)
        outs = []
        for li, layer in enumerate(self.layers):
            image_turn = li % 2 == 0          # odd 1-indexed layers read images
            if image_turn:
                roi, cam_of = self._image_roi(beta, h_imgs, grid, cams, stride)
                visible = cam_of >= 0
            else:
                roi = self._bev_roi(beta, h_bev, grid)
                cam_of = np.full(beta.shape[0], -1, dtype=np.int64)
                visible = np.ones(beta.shape[0], dtype=bool)
            emb = layer.dyn(emb, roi, visible)
            logits, delta = layer.heads(emb)
            beta_t = add(delta, beta)
            outs.append(LayerOutput(logits=logits, beta=beta_t,
                                    visible=visible,
                                    modality="image" if image_turn else "bev",
                                    cam_idx=cam_of))
            beta = beta_t.data.copy()
        return outs

"""Dual-stream representational interaction encoder.

Each layer runs two parallel streams over the BEV map and the per-camera image
maps. Stream order per sublayer: in-modal deformable self-attention, then (BEV
stream only) LiDAR-guided polar ray cross-attention, then cross-modal
neighborhood attention, then FFN - every sublayer wrapped residual + LayerNorm.
Cross-modal key/value gathering follows precomputed geometric correspondences;
queries with no valid neighbor pass through unchanged.

All residual-branch output projections start at zero, so an untrained encoder
is a pass-through up to LayerNorm. Camera maps are processed stacked along a
leading batch axis; unbatched per-pillar / per-camera reference paths are kept
alongside for equivalence checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (BevGrid, CameraModel, PillarCorrespondence, PolarGrid,
                       bev_to_polar_coords, polar_sample_grid)
from .numerics import (AttentionConfig, Tensor, add, bilinear_sample_many,
                       bilinear_sample_nd, concat, gather_rc, gather_rows,
                       masked_mha, mul, relu, reshape, scatter_rc,
                       sinusoidal_encoding, softmax_axis, stack, transpose,
                       tsum, where_mask)
from .numerics.functional import avgpool2
from .numerics.nn import LayerNorm, Linear, Module
from .rng import Rng


class NeighborCountError(ValueError):
    """A pillar has more valid neighbors than the largest interval bound."""


@dataclass(frozen=True)
class GroupedIntervals:
    """Half-open neighbor-count buckets (b[i], b[i+1]] for padded batching."""
    boundaries: tuple = (0, 4, 16, 64)

    def __post_init__(self):
        b = self.boundaries
        if len(b) < 2 or b[0] != 0 or any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise ValueError("boundaries must start at 0 and strictly increase")

    def interval_of(self, counts: np.ndarray) -> np.ndarray:
        """Bucket index per count; counts of 0 get -1 (no attention)."""
        counts = np.asarray(counts)
        if counts.size and counts.max(initial=0) > self.boundaries[-1]:
            raise NeighborCountError(
                f"count {int(counts.max())} exceeds top boundary {self.boundaries[-1]}")
        idx = np.searchsorted(self.boundaries, counts, side="left") - 1
        return np.where(counts == 0, -1, idx)

    def padded_elements(self, counts: np.ndarray) -> int:
        """Total padded key slots: sum over buckets of members * upper bound."""
        idx = self.interval_of(counts)
        total = 0
        for i in range(len(self.boundaries) - 1):
            total += int((idx == i).sum()) * self.boundaries[i + 1]
        return total


@dataclass
class GroupedReport:
    padded_elements: int
    naive_elements: int
    per_interval: list

    @property
    def ratio(self) -> float:
        return self.padded_elements / self.naive_elements if self.naive_elements else 0.0


@dataclass
class EncoderConfig:
    layers: int = 2
    channels: int = 32
    heads: int = 4
    k: int = 1                       # cross-modal neighborhood half-width
    deform_points: int = 4
    image_scales: int = 2
    ffn_hidden: int = 64
    polar_bins: int = 32
    polar_r_max: float = 26.0
    intervals: tuple = (0, 4, 16, 64)
    use_iml: bool = True
    use_mmri: bool = True

    @property
    def attn(self) -> AttentionConfig:
        return AttentionConfig(self.heads, self.channels)


@dataclass
class EncoderGeometry:
    """Per-scene constants the encoder consumes (pure geometry, precomputed)."""
    grid: BevGrid
    cams: list
    stride: int
    c2p_cells: list       # per cam (Hf, Wf, M, 2) int BEV cells
    c2p_valid: list       # per cam (Hf, Wf, M) bool
    p2c: PillarCorrespondence
    polar_rows: list      # per cam (R, Wf) BEV sampling rows for polar bins
    polar_cols: list
    inv_bin: list         # per cam (H, W) polar bin coordinate of each BEV cell
    inv_col: list
    inv_mask: list        # per cam (H, W) in-frustum mask
    pgrid: PolarGrid
    # stacked / merged convenience views (derived from the lists above)
    c2p_cells_st: np.ndarray = None   # (B, Hf, Wf, M, 2)
    c2p_valid_st: np.ndarray = None   # (B, Hf, Wf, M)
    polar_rows_st: np.ndarray = None  # (B, R, Wf)
    polar_cols_st: np.ndarray = None
    merged_cam: np.ndarray = None     # (H, W) last covering camera, -1 if none
    merged_bin: np.ndarray = None
    merged_col: np.ndarray = None

    def __post_init__(self):
        if self.c2p_cells_st is None:
            self.c2p_cells_st = np.stack(self.c2p_cells)
            self.c2p_valid_st = np.stack(self.c2p_valid)
            self.polar_rows_st = np.stack(self.polar_rows)
            self.polar_cols_st = np.stack(self.polar_cols)
            h, w = self.inv_mask[0].shape
            self.merged_cam = np.full((h, w), -1, dtype=np.int64)
            self.merged_bin = np.zeros((h, w))
            self.merged_col = np.zeros((h, w))
            for ci, m in enumerate(self.inv_mask):
                self.merged_cam[m] = ci
                self.merged_bin[m] = self.inv_bin[ci][m]
                self.merged_col[m] = self.inv_col[ci][m]


# -- modules -------------------------------------------------------------------


class DeformableSelfAttention(Module):
    """In-modal deformable attention: each cell attends at predicted offsets.

    Offsets and mixing weights come from the query feature; values are bilinear
    samples of the value-projected map at one or more pooled scales. Operates on
    stacked maps (B, H, W, C); a single map may be passed as (H, W, C).
    """

    def __init__(self, channels: int, heads: int, points: int, scales: int,
                 rng: Rng):
        self.heads = heads
        self.points = points
        self.scales = scales
        self.channels = channels
        self.value_proj = Linear(channels, channels, rng.split(1))
        self.offset = Linear(channels, heads * scales * points * 2, rng.split(2))
        self.weight = Linear(channels, heads * scales * points, rng.split(3))
        self.out = Linear(channels, channels, zero_init=True)

    def forward(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = reshape(x, (1,) + x.shape)
        b, h, w, c = x.shape
        nh, m, ns = self.heads, self.points, self.scales
        d = c // nh
        v = self.value_proj(x)
        scale_maps = [v]
        for _ in range(ns - 1):
            scale_maps.append(avgpool2(scale_maps[-1]))
        q = reshape(x, (b * h * w, c))
        off = reshape(self.offset(q), (b * h * w, nh, ns, m, 2))
        wgt = softmax_axis(reshape(self.weight(q), (b * h * w, nh, ns * m)), -1)
        wgt = reshape(wgt, (b * h * w, nh, ns, m, 1))
        ii, jj = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
        base_r = np.tile(ii.reshape(-1), b)[:, None, None]   # (BHW, 1, 1)
        base_c = np.tile(jj.reshape(-1), b)[:, None, None]
        bidx = (np.repeat(np.arange(b), h * w)[:, None, None] * nh
                + np.arange(nh)[None, :, None])
        bidx = np.broadcast_to(bidx, (b * h * w, nh, m)).ravel()
        acc = None
        for s in range(ns):
            smap = scale_maps[s]
            hs, ws = smap.shape[1], smap.shape[2]
            head_maps = reshape(transpose(reshape(smap, (b, hs, ws, nh, d)),
                                          (0, 3, 1, 2, 4)), (b * nh, hs, ws, d))
            f = 0.5 ** s
            rows = add(off[:, :, s, :, 0], (base_r + 0.5) * f - 0.5)
            cols = add(off[:, :, s, :, 1], (base_c + 0.5) * f - 0.5)
            samp = bilinear_sample_nd(head_maps, bidx, reshape(rows, (-1,)),
                                      reshape(cols, (-1,)))
            samp = reshape(samp, (b * h * w, nh, m, d))
            contrib = tsum(mul(samp, wgt[:, :, s, :, :]), axis=2)
            acc = contrib if acc is None else add(acc, contrib)
        out = self.out(reshape(acc, (b * h * w, c)))
        out = reshape(out, (b, h, w, c))
        return reshape(out, (h, w, c)) if squeeze else out


class CrossModalAttention(Module):
    """Projected multi-head attention from per-query neighbor sets."""

    def __init__(self, channels: int, heads: int, rng: Rng):
        self.cfg = AttentionConfig(heads, channels)
        self.q_proj = Linear(channels, channels, rng.split(1))
        self.k_proj = Linear(channels, channels, rng.split(2))
        self.v_proj = Linear(channels, channels, rng.split(3))
        self.out = Linear(channels, channels, zero_init=True)

    def attend(self, queries: Tensor, neighbors: Tensor, mask: np.ndarray) -> Tensor:
        """queries (B, C), neighbors (B, U, C), mask (B, U) -> (B, C)."""
        b, c = queries.shape
        q = reshape(self.q_proj(queries), (b, 1, c))
        k = self.k_proj(neighbors)
        v = self.v_proj(neighbors)
        out = masked_mha(q, k, v, mask[:, None, :], self.cfg)
        return self.out(reshape(out, (b, c)))


class PolarRayAttention(Module):
    """Cross-plane attention between polar-resampled BEV rays and image columns.

    Sinusoidal encodings enter the query (radial bin) and key (image row)
    projections; values stay un-encoded. Attention is strictly column-local.
    """

    def __init__(self, channels: int, heads: int, rng: Rng):
        self.cfg = AttentionConfig(heads, channels)
        self.channels = channels
        self.q_proj = Linear(channels, channels, rng.split(1))
        self.k_proj = Linear(channels, channels, rng.split(2))
        self.v_proj = Linear(channels, channels, rng.split(3))
        self.out = Linear(channels, channels, zero_init=True)

    def columns_attend(self, h_polar: Tensor, h_img: Tensor) -> Tensor:
        """h_polar (..., R, Wf, C) x h_img (..., Hf, Wf, C) -> (..., R, Wf, C)."""
        r, wf, c = h_polar.shape[-3:]
        hf = h_img.shape[-3]
        lead = h_polar.shape[:-3]
        pe_r = sinusoidal_encoding(np.arange(r, dtype=np.float64), c)[:, None, :]
        pe_v = sinusoidal_encoding(np.arange(hf, dtype=np.float64), c)[:, None, :]
        q = self.q_proj(add(h_polar, pe_r))
        k = self.k_proj(add(h_img, pe_v))
        v = self.v_proj(h_img)
        n = len(lead)
        perm = tuple(range(n)) + (n + 1, n, n + 2)           # swap rows<->cols
        qc = transpose(q, perm)                              # (..., Wf, R, C)
        kc = transpose(k, perm)                              # (..., Wf, Hf, C)
        vc = transpose(v, perm)
        mask = np.ones(lead + (wf, r, hf), dtype=bool)
        out = masked_mha(qc, kc, vc, mask, self.cfg)
        return self.out(transpose(out, perm))


def polar_ray_attention(h_bev: Tensor, h_img: Tensor, cam_idx: int,
                        module: PolarRayAttention, geom: EncoderGeometry,
                        base: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Full polar pass for one camera (unbatched reference).

    Resamples the BEV map onto the camera's polar grid, attends along columns,
    and resamples back; BEV cells outside the frustum keep the values of
    `base` (defaults to h_bev). Returns (updated BEV map, polar attention
    output) - the latter is exposed for column-isolation checks.
    """
    if base is None:
        base = h_bev
    rows = geom.polar_rows[cam_idx]
    cols = geom.polar_cols[cam_idx]
    r, wf = rows.shape
    c = h_bev.shape[-1]
    h_polar = reshape(bilinear_sample_many(h_bev, rows.ravel(), cols.ravel()),
                      (r, wf, c))
    polar_out = module.columns_attend(h_polar, h_img)
    mask = geom.inv_mask[cam_idx]
    sel_r, sel_c = np.nonzero(mask)
    sampled = bilinear_sample_many(polar_out,
                                   geom.inv_bin[cam_idx][sel_r, sel_c],
                                   geom.inv_col[cam_idx][sel_r, sel_c])
    updated = scatter_rc(sampled, sel_r, sel_c, (h_bev.shape[0], h_bev.shape[1]))
    keep = (~mask)[:, :, None]
    return add(updated, mul(base, keep.astype(np.float64))), polar_out


def polar_ray_attention_all(h_bev: Tensor, him: Tensor,
                            module: PolarRayAttention,
                            geom: EncoderGeometry) -> tuple[Tensor, Tensor]:
    """All-camera polar pass, batched along columns.

    Equivalent to applying polar_ray_attention camera by camera where a later
    camera overwrites overlap: each BEV cell reads the polar map of the last
    camera whose frustum covers it. him is the stacked image maps (B, Hf, Wf, C).
    """
    b = him.shape[0]
    h, w, c = h_bev.shape
    rows = geom.polar_rows_st
    cols = geom.polar_cols_st
    _, r, wf = rows.shape
    h_polar = reshape(bilinear_sample_many(h_bev, rows.ravel(), cols.ravel()),
                      (b, r, wf, c))
    polar_out = module.columns_attend(h_polar, him)
    sel = geom.merged_cam >= 0
    sel_r, sel_c = np.nonzero(sel)
    sampled = bilinear_sample_nd(polar_out, geom.merged_cam[sel_r, sel_c],
                                 geom.merged_bin[sel_r, sel_c],
                                 geom.merged_col[sel_r, sel_c])
    updated = scatter_rc(sampled, sel_r, sel_c, (h, w))
    keep = (~sel)[:, :, None]
    return add(updated, mul(h_bev, keep.astype(np.float64))), polar_out


# -- cross-modal ops --------------------------------------------------------------


def bev_to_image_attention(h_img: Tensor, h_bev: Tensor, cells: np.ndarray,
                           valid: np.ndarray, module: CrossModalAttention) -> Tensor:
    """Each image feature pixel attends over its lifted BEV neighbor cells.

    cells (..., M, 2) / valid (..., M) come from the image->BEV correspondence
    (optionally stacked over cameras). Pixels with no valid neighbor pass
    through unchanged.
    """
    lead = h_img.shape[:-1]
    c = h_img.shape[-1]
    m = cells.shape[-2]
    nq = int(np.prod(lead))
    queries = reshape(h_img, (nq, c))
    flat_cells = cells.reshape(-1, 2)
    keys = reshape(gather_rc(h_bev, flat_cells[:, 0], flat_cells[:, 1]),
                   (nq, m, c))
    mask = valid.reshape(nq, m)
    attended = module.attend(queries, keys, mask)
    any_valid = mask.any(axis=1)[:, None]
    out = where_mask(any_valid, attended, queries)
    return reshape(out, lead + (c,))


def _sample_entries(him, corr: PillarCorrespondence) -> Tensor:
    """Bilinear-sample every correspondence entry from its camera map -> (E, C)."""
    if isinstance(him, list):
        him = stack(him, axis=0)
    c = him.shape[-1]
    if corr.cam_idx.size == 0:
        return Tensor(np.zeros((0, c)))
    return bilinear_sample_nd(him, corr.cam_idx, corr.rows, corr.cols)


def image_to_bev_attention(h_bev: Tensor, h_imgs, corr: PillarCorrespondence,
                           module: CrossModalAttention, grid: BevGrid) -> Tensor:
    """Unbatched reference: every occupied pillar attends over its projections.

    One attention call per pillar at its exact neighbor count - no padding.
    Pillars with zero valid neighbors (or no points) pass through unchanged.
    """
    samples = _sample_entries(h_imgs, corr)
    h, w, c = h_bev.shape
    att_rows, att_cols, outs = [], [], []
    for p in range(corr.pillar_rows.size):
        lo, hi = int(corr.offsets[p]), int(corr.offsets[p + 1])
        if hi == lo:
            continue
        q = gather_rc(h_bev, corr.pillar_rows[p:p + 1], corr.pillar_cols[p:p + 1])
        kv = reshape(samples[lo:hi], (1, hi - lo, c))
        out = module.attend(q, kv, np.ones((1, hi - lo), dtype=bool))
        outs.append(out)
        att_rows.append(corr.pillar_rows[p])
        att_cols.append(corr.pillar_cols[p])
    if not outs:
        return h_bev
    att = concat(outs, axis=0)
    rows = np.asarray(att_rows)
    cols = np.asarray(att_cols)
    replaced = scatter_rc(att, rows, cols, (h, w))
    keep = np.ones((h, w), dtype=bool)
    keep[rows, cols] = False
    return add(replaced, mul(h_bev, keep[:, :, None].astype(np.float64)))


def grouped_image_to_bev_attention(h_bev: Tensor, h_imgs,
                                   corr: PillarCorrespondence,
                                   module: CrossModalAttention, grid: BevGrid,
                                   intervals: GroupedIntervals
                                   ) -> tuple[Tensor, GroupedReport]:
    """Batched variant: pillars bucketed by neighbor count, padded and masked.

    Numerically equivalent to image_to_bev_attention; also reports how many
    padded key slots were materialized versus single-interval padding.
    """
    samples = _sample_entries(h_imgs, corr)
    counts = corr.counts
    idx = intervals.interval_of(counts)
    h, w, c = h_bev.shape
    att_parts, row_parts, col_parts = [], [], []
    per_interval = []
    padded = 0
    for i in range(len(intervals.boundaries) - 1):
        members = np.nonzero(idx == i)[0]
        if members.size == 0:
            per_interval.append((i, 0, 0))
            continue
        u = intervals.boundaries[i + 1]
        b = members.size
        padded += b * u
        slot = np.arange(u)[None, :]
        starts = corr.offsets[members][:, None]
        take = np.minimum(starts + slot, corr.offsets[members + 1][:, None] - 1)
        mask = slot < counts[members][:, None]
        kv = reshape(gather_rows(samples, take.ravel()), (b, u, c))
        q = gather_rc(h_bev, corr.pillar_rows[members], corr.pillar_cols[members])
        att_parts.append(module.attend(q, kv, mask))
        row_parts.append(corr.pillar_rows[members])
        col_parts.append(corr.pillar_cols[members])
        per_interval.append((i, b, b * u))
    active = int((counts > 0).sum())
    report = GroupedReport(padded_elements=padded,
                           naive_elements=active * intervals.boundaries[-1],
                           per_interval=per_interval)
    if not att_parts:
        return h_bev, report
    att = concat(att_parts, axis=0)
    rows = np.concatenate(row_parts)
    cols = np.concatenate(col_parts)
    replaced = scatter_rc(att, rows, cols, (h, w))
    keep = np.ones((h, w), dtype=bool)
    keep[rows, cols] = False
    return add(replaced, mul(h_bev, keep[:, :, None].astype(np.float64))), report


# -- layers ------------------------------------------------------------------------


class FFN(Module):
    def __init__(self, channels: int, hidden: int, rng: Rng):
        self.fc1 = Linear(channels, hidden, rng.split(1))
        self.fc2 = Linear(hidden, channels, zero_init=True)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(x)))


class EncoderLayer(Module):
    """One dual-stream interaction layer (parallel update of both streams)."""

    def __init__(self, cfg: EncoderConfig, rng: Rng):
        c, h = cfg.channels, cfg.heads
        self.cfg = cfg
        self.sa_bev = DeformableSelfAttention(c, h, cfg.deform_points, 1, rng.split(1))
        self.sa_img = DeformableSelfAttention(c, h, cfg.deform_points,
                                              cfg.image_scales, rng.split(2))
        self.polar = PolarRayAttention(c, h, rng.split(3))
        self.i2l = CrossModalAttention(c, h, rng.split(4))
        self.l2i = CrossModalAttention(c, h, rng.split(5))
        self.ffn_bev = FFN(c, cfg.ffn_hidden, rng.split(6))
        self.ffn_img = FFN(c, cfg.ffn_hidden, rng.split(7))
        self.ln_bev_sa = LayerNorm(c)
        self.ln_bev_polar = LayerNorm(c)
        self.ln_bev_ca = LayerNorm(c)
        self.ln_bev_ffn = LayerNorm(c)
        self.ln_img_sa = LayerNorm(c)
        self.ln_img_ca = LayerNorm(c)
        self.ln_img_ffn = LayerNorm(c)

    def forward(self, h_bev: Tensor, him: Tensor,
                geom: EncoderGeometry) -> tuple[Tensor, Tensor, GroupedReport | None]:
        cfg = self.cfg
        report = None
        # BEV stream
        t = h_bev
        if cfg.use_iml:
            t = self.ln_bev_sa(add(self.sa_bev(t), t))
        u = t
        if cfg.use_mmri:
            merged, _ = polar_ray_attention_all(t, him, self.polar, geom)
            u = self.ln_bev_polar(add(merged, t))
            enhanced, report = grouped_image_to_bev_attention(
                u, him, geom.p2c, self.i2l, geom.grid,
                GroupedIntervals(cfg.intervals))
            u = self.ln_bev_ca(add(enhanced, u))
        bev_out = self.ln_bev_ffn(add(self.ffn_bev(u), u))
        # image stream (cross-modal keys read the layer-input BEV map)
        a = him
        if cfg.use_iml:
            a = self.ln_img_sa(add(self.sa_img(a), a))
        if cfg.use_mmri:
            att = bev_to_image_attention(a, h_bev, geom.c2p_cells_st,
                                         geom.c2p_valid_st, self.l2i)
            a = self.ln_img_ca(add(att, a))
        img_out = self.ln_img_ffn(add(self.ffn_img(a), a))
        return bev_out, img_out, report


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: Rng):
        self.cfg = cfg
        self.layers = [EncoderLayer(cfg, rng.split(10 + i))
                       for i in range(cfg.layers)]

    def forward(self, h_bev: Tensor, h_imgs, geom: EncoderGeometry):
        """Returns (h_bev', per-camera image maps, grouped padding reports).

        With both interaction families disabled there is no encoder: inputs
        pass through untouched.
        """
        as_list = isinstance(h_imgs, list)
        if not self.cfg.use_iml and not self.cfg.use_mmri:
            return h_bev, h_imgs, []
        him = stack(h_imgs, axis=0) if as_list else h_imgs
        reports = []
        for layer in self.layers:
            h_bev, him, rep = layer(h_bev, him, geom)
            if rep is not None:
                reports.append(rep)
        if as_list:
            him = [him[i] for i in range(him.shape[0])]
        return h_bev, him, reports


def encode(h_bev: Tensor, h_imgs, encoder: Encoder, geom: EncoderGeometry):
    return encoder(h_bev, h_imgs, geom)


def build_encoder_geometry(points: np.ndarray, cams: list[CameraModel],
                           grid: BevGrid, stride: int, k: int,
                           pgrid: PolarGrid) -> EncoderGeometry:
    """Precompute every geometric correspondence the encoder needs for a scene."""
    from .geometry import build_c2p, build_p2c, complete_depth
    from .scenesim import render_sparse_depth
    c2p_cells, c2p_valid = [], []
    polar_rows, polar_cols = [], []
    inv_bin, inv_col, inv_mask = [], [], []
    for cam in cams:
        sparse = render_sparse_depth(points, cam, stride)
        if sparse.valid.any():
            dense = complete_depth(sparse)
            cells, valid = build_c2p(dense, cam, grid, stride, k)
        else:
            fh, fw = cam.height // stride, cam.width // stride
            cells = np.zeros((fh, fw, (2 * k + 1) ** 2, 2), np.int64)
            valid = np.zeros((fh, fw, (2 * k + 1) ** 2), bool)
        c2p_cells.append(cells)
        c2p_valid.append(valid)
        rows, cols = polar_sample_grid(cam, pgrid, grid, stride)
        polar_rows.append(rows)
        polar_cols.append(cols)
        b, c, m = bev_to_polar_coords(cam, pgrid, grid, stride)
        inv_bin.append(b)
        inv_col.append(c)
        inv_mask.append(m)
    p2c = build_p2c(points, cams, grid, stride)
    return EncoderGeometry(grid=grid, cams=cams, stride=stride,
                           c2p_cells=c2p_cells, c2p_valid=c2p_valid, p2c=p2c,
                           polar_rows=polar_rows, polar_cols=polar_cols,
                           inv_bin=inv_bin, inv_col=inv_col, inv_mask=inv_mask,
                           pgrid=pgrid)

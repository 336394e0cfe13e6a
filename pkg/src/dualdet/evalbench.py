"""Evaluation (center-distance AP) and the grouped-attention benchmark.

AP greedily matches predictions to the nearest unmatched same-class ground
truth within a center-distance threshold, sweeping score cutoffs from high to
low; predictions sharing a score form a single cutoff. AP is the sum of
rectangle areas (recall increment times precision at that cutoff). map_lite
averages AP over thresholds {0.5, 1, 2, 4} m and the classes present: a class
with predictions but no ground truth counts as 0, a class absent from both is
excluded.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .decoder import beta_decode
from .encoder import (CrossModalAttention, GroupedIntervals,
                      grouped_image_to_bev_attention)
from .geometry import BevGrid, PillarCorrespondence
from .model import Detector, ModelOutput, SceneBundle
from .numerics import Tensor, no_grad, sigmoid
from .rng import Rng


# -- AP ------------------------------------------------------------------------


def ap_for_class(scene_preds: list, scene_gts: list, class_id: int,
                 threshold: float):
    """AP for one class at one center-distance threshold; None if absent everywhere.

    scene_preds / scene_gts: per-scene dicts with keys classes (N,),
    centers (N, >=2) and, for predictions, scores (N,).
    """
    total_gt = int(sum((np.asarray(g["classes"]) == class_id).sum()
                       for g in scene_gts))
    entries = []
    for si, sp in enumerate(scene_preds):
        sel = np.asarray(sp["classes"]) == class_id
        for sc, ct in zip(np.asarray(sp["scores"])[sel],
                          np.asarray(sp["centers"])[sel]):
            entries.append((float(sc), si, ct))
    if total_gt == 0:
        return None if not entries else 0.0
    if not entries:
        return 0.0
    order = sorted(range(len(entries)), key=lambda i: (-entries[i][0], i))
    matched = [np.zeros(len(np.asarray(g["classes"])), dtype=bool)
               for g in scene_gts]
    tp = fp = 0
    cutoffs = []
    prev_score = None
    for i in order:
        score, si, ct = entries[i]
        if prev_score is not None and score != prev_score:
            cutoffs.append((tp, fp))
        prev_score = score
        g = scene_gts[si]
        cand = np.nonzero((np.asarray(g["classes"]) == class_id)
                          & ~matched[si])[0]
        hit = False
        if cand.size:
            d = np.linalg.norm(np.asarray(g["centers"])[cand, :2]
                               - np.asarray(ct)[:2], axis=1)
            j = int(np.argmin(d))
            if d[j] <= threshold:
                matched[si][cand[j]] = True
                hit = True
        tp, fp = (tp + 1, fp) if hit else (tp, fp + 1)
    cutoffs.append((tp, fp))
    ap = 0.0
    prev_r = 0.0
    for tp_k, fp_k in cutoffs:
        prec = tp_k / max(tp_k + fp_k, 1)
        rec = tp_k / total_gt
        ap += (rec - prev_r) * prec
        prev_r = rec
    return ap


def ap_center_distance(scene_preds: list, scene_gts: list,
                       threshold: float) -> float:
    """AP at one distance threshold, averaged over classes present anywhere."""
    classes = set()
    for g in scene_gts:
        classes.update(np.asarray(g["classes"]).tolist())
    for p in scene_preds:
        classes.update(np.asarray(p["classes"]).tolist())
    vals = [ap_for_class(scene_preds, scene_gts, int(k), threshold)
            for k in sorted(classes)]
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else 0.0


DEFAULT_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)


def map_lite(scene_preds: list, scene_gts: list,
             thresholds=DEFAULT_THRESHOLDS) -> float:
    """Mean AP over thresholds and present classes (flat mean, None excluded)."""
    classes = set()
    for g in scene_gts:
        classes.update(np.asarray(g["classes"]).tolist())
    for p in scene_preds:
        classes.update(np.asarray(p["classes"]).tolist())
    vals = []
    for thr in thresholds:
        for k in sorted(classes):
            ap = ap_for_class(scene_preds, scene_gts, int(k), thr)
            if ap is not None:
                vals.append(ap)
    return float(np.mean(vals)) if vals else 0.0


def extract_predictions(output: ModelOutput, grid: BevGrid) -> dict:
    """Final-layer detections: argmax class, its probability, decoded centers."""
    lo = output.layer_outputs[-1]
    probs = 1.0 / (1.0 + np.exp(-lo.logits.data))
    classes = probs.argmax(axis=1)
    scores = probs[np.arange(probs.shape[0]), classes]
    dec = beta_decode(lo.beta.data, grid)
    return {"classes": classes.astype(np.int64), "scores": scores,
            "centers": dec["centers"], "sizes": dec["sizes"],
            "yaws": dec["yaws"]}


def bundle_ground_truth(bundle: SceneBundle) -> dict:
    centers = np.array([b.center for b in bundle.scene.boxes]).reshape(-1, 3)
    return {"classes": bundle.gt_classes, "centers": centers}


def evaluate_bundles(model: Detector, bundles: list,
                     thresholds=DEFAULT_THRESHOLDS) -> float:
    """map_lite of a model over prepared scene bundles (inference mode)."""
    preds, gts = [], []
    with no_grad():
        for b in bundles:
            out = model(b)
            preds.append(extract_predictions(out, model.cfg.grid))
            gts.append(bundle_ground_truth(b))
    return map_lite(preds, gts, thresholds)


# -- grouped attention benchmark -------------------------------------------------


@dataclass
class BenchResult:
    grouped_ms: float
    naive_ms: float
    padded_elements: int
    naive_elements: int
    grouped_peak_bytes: int
    naive_peak_bytes: int
    max_abs_diff: float

    def lines(self) -> list:
        r = self
        return [f"grouped_ms={r.grouped_ms:.3f}",
                f"naive_ms={r.naive_ms:.3f}",
                f"padded_elements={r.padded_elements}",
                f"naive_elements={r.naive_elements}",
                f"padding_ratio={r.padded_elements / max(r.naive_elements, 1):.6f}",
                f"grouped_peak_bytes={r.grouped_peak_bytes}",
                f"naive_peak_bytes={r.naive_peak_bytes}",
                f"max_abs_diff={r.max_abs_diff:.3e}"]


def _attention_peak_bytes(batch: int, width: int, channels: int,
                          heads: int) -> int:
    """Live-buffer accounting for one padded attention batch (float64).

    Counts the dominant simultaneous arrays: raw gathered keys plus k/v
    projections (3 * B*U*C), attention logits and weights (2 * B*heads*U),
    and the query/output rows (2 * B*C).
    """
    return 8 * (3 * batch * width * channels + 2 * batch * heads * width
                + 2 * batch * channels)


def synthetic_correspondence(counts: np.ndarray, grid: BevGrid, fh: int,
                             fw: int, n_cams: int, seed: int):
    """A fake pillar->image correspondence with the given neighbor counts."""
    rng = Rng(seed)
    p = counts.size
    if p > grid.h * grid.w:
        raise ValueError(f"{p} pillars cannot fit {grid.h * grid.w} cells")
    cells = rng.split(1).randint(grid.h * grid.w, size=p)
    # unique cells keep the scatter well-defined; retries must be keyed on the
    # attempt, not the current size, or a zero-progress round repeats forever
    cells = np.unique(cells)
    attempt = 2
    while cells.size < p:
        extra = rng.split(attempt).randint(grid.h * grid.w,
                                           size=p - cells.size)
        cells = np.unique(np.concatenate([cells, extra]))
        attempt += 1
    cells = cells[:p]
    rows, cols = np.divmod(cells, grid.w)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    e = int(offsets[-1])
    cam_idx = rng.split(3).randint(n_cams, size=e)
    frows = rng.split(4).uniform(0.0, fh - 1.001, size=e)
    fcols = rng.split(5).uniform(0.0, fw - 1.001, size=e)
    return PillarCorrespondence(pillar_rows=rows, pillar_cols=cols,
                                offsets=offsets, cam_idx=cam_idx,
                                rows=frows, cols=fcols)


def bench_grouped(counts: np.ndarray, intervals: GroupedIntervals,
                  channels: int = 32, heads: int = 4, n_cams: int = 4,
                  fh: int = 16, fw: int = 32, grid: BevGrid | None = None,
                  seed: int = 0, trials: int = 5) -> BenchResult:
    """Time grouped interval batching against single-interval (naive) padding.

    Both paths run the same attention module on the same synthetic
    correspondence; the naive path pads every pillar to the top boundary.
    """
    if grid is None:
        grid = BevGrid(-18.0, 18.0, -18.0, 18.0, 64, 64)
    corr = synthetic_correspondence(counts, grid, fh, fw, n_cams, seed)
    rng = Rng(seed + 17)
    module = CrossModalAttention(channels, heads, rng.split(1))
    module.out.w.data[:] = rng.split(2).normal(size=(channels, channels)) * 0.1
    h_bev = Tensor(rng.split(3).normal(size=(grid.h, grid.w, channels)))
    h_imgs = [Tensor(rng.split(10 + ci).normal(size=(fh, fw, channels)))
              for ci in range(n_cams)]
    top = intervals.boundaries[-1]
    naive_iv = GroupedIntervals((0, top))

    def run(iv):
        with no_grad():
            return grouped_image_to_bev_attention(h_bev, h_imgs, corr, module,
                                                  grid, iv)

    out_g, rep_g = run(intervals)
    out_n, rep_n = run(naive_iv)
    diff = float(np.abs(out_g.data - out_n.data).max())

    def best_time(iv):
        best = np.inf
        for _ in range(trials):
            t0 = time.perf_counter()
            run(iv)
            best = min(best, time.perf_counter() - t0)
        return best * 1000.0

    idx = intervals.interval_of(counts)
    peak_g = 0
    for i in range(len(intervals.boundaries) - 1):
        b = int((idx == i).sum())
        if b:
            peak_g = max(peak_g, _attention_peak_bytes(
                b, intervals.boundaries[i + 1], channels, heads))
    active = int((counts > 0).sum())
    peak_n = _attention_peak_bytes(active, top, channels, heads)
    return BenchResult(grouped_ms=best_time(intervals),
                       naive_ms=best_time(naive_iv),
                       padded_elements=rep_g.padded_elements,
                       naive_elements=rep_n.padded_elements,
                       grouped_peak_bytes=peak_g,
                       naive_peak_bytes=peak_n,
                       max_abs_diff=diff)


# -- encoder ablation ------------------------------------------------------------

ABLATION_VARIANTS = {
    "none": (False, False),
    "iml": (True, False),
    "mmri": (False, True),
    "both": (True, True),
}


def run_ablation(run_cfg, seeds=(0, 1, 2), variants=None, log=None) -> dict:
    """Train each encoder variant from scratch and report median map_lite.

    Every variant/seed pair trains on the same procedurally generated scenes
    (scene content is seed-independent across variants) with identical
    schedules; only the encoder toggles differ. Returns
    {variant: {"scores": [per-seed map_lite...], "median": float}}.
    """
    import copy

    from .model import Detector, prepare_scene
    from .scenesim import gen_scene
    from .training import make_state, train_loop

    variants = dict(variants or ABLATION_VARIANTS)
    # Bundles (geometry, rasters, targets) are identical across variants; only
    # the encoder toggles differ, so prepare each scene once.
    bundles = [prepare_scene(gen_scene(run_cfg.scene, run_cfg.scene_seed + i),
                             run_cfg.model)
               for i in range(run_cfg.train_scenes)]
    eval_bundles = [prepare_scene(
        gen_scene(run_cfg.scene, run_cfg.scene_seed + 10_000 + i),
        run_cfg.model)
               for i in range(run_cfg.eval_scenes)]
    results = {}
    for name, (use_iml, use_mmri) in variants.items():
        mcfg = copy.deepcopy(run_cfg.model)
        mcfg.encoder.use_iml = use_iml
        mcfg.encoder.use_mmri = use_mmri
        scores = []
        for seed in seeds:
            tcfg = copy.deepcopy(run_cfg.train)
            tcfg.seed = seed
            state = make_state(Detector(mcfg, Rng(seed)))
            train_loop(state, bundles, tcfg)
            score = evaluate_bundles(state.model, eval_bundles)
            scores.append(score)
            if log:
                log(f"variant={name} seed={seed} map_lite={score:.4f}")
        results[name] = {"scores": scores, "median": float(np.median(scores))}
    return results


# -- PGM heatmap export ----------------------------------------------------------


def write_pgm(path: str, values: np.ndarray) -> None:
    """8-bit binary PGM (P5) of values in [0, 1]; deterministic quantization."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("PGM export needs a 2-D array")
    q = np.clip(np.rint(v * 255.0), 0, 255).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def read_pgm(path: str) -> np.ndarray:
    """Read a binary P5 PGM written by write_pgm -> uint8 (H, W)."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = (int(t) for t in parts[1].split())
    maxval = int(parts[2])
    if maxval != 255:
        raise ValueError("only 8-bit PGM supported")
    raw = parts[3][:w * h]
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w)

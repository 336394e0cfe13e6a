"""Set-based training: bipartite matching, losses, and the epoch loop.

Every decoder layer is matched and supervised independently (deep supervision);
the heatmap head gets a penalty-reduced focal loss on Gaussian-splatted
targets. Matching costs are computed on detached predictions; the assignment
solver is scipy's linear_sum_assignment behind a small stable interface.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .decoder import LayerOutput
from .geometry import BevGrid
from .model import Detector, ModelOutput, SceneBundle
from .numerics import (NonFiniteError, Tensor, absolute, add, gather_rows,
                       mul, no_grad, pow_const, sigmoid, softplus, sub, tsum)
from .numerics.optim import Adam, one_cycle
from .numerics import tensorio
from .rng import Rng
from .scenesim import flip_scene, rotate_scene

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
COST_CLS_WEIGHT = 1.0
COST_BOX_WEIGHT = 0.25
Z_NORM = 10.0


@dataclass
class MatchResult:
    rows: np.ndarray   # prediction indices
    cols: np.ndarray   # ground-truth indices


def hungarian(cost: np.ndarray) -> MatchResult:
    """Minimum-cost bipartite assignment on a (N, G) matrix."""
    rows, cols = scipy.optimize.linear_sum_assignment(cost)
    return MatchResult(rows=np.asarray(rows), cols=np.asarray(cols))


def _norm_box_vec(betas: np.ndarray, grid: BevGrid) -> np.ndarray:
    """8-dim comparable vector: normalized centers, z, log sizes, heading."""
    v = np.empty(betas.shape[:-1] + (8,))
    v[..., 0] = betas[..., 0] / grid.w
    v[..., 1] = betas[..., 1] / grid.h
    v[..., 2] = betas[..., 2] / Z_NORM
    v[..., 3:6] = betas[..., 3:6]
    v[..., 6:8] = betas[..., 6:8]
    return v


def matching_cost(logits: np.ndarray, betas: np.ndarray,
                  gt_classes: np.ndarray, gt_betas: np.ndarray,
                  grid: BevGrid) -> np.ndarray:
    """(N, G) assignment cost: focal positive term + weighted box L1."""
    p = 1.0 / (1.0 + np.exp(-logits))
    pg = np.clip(p[:, gt_classes], 1e-12, 1.0)            # (N, G)
    cls = FOCAL_ALPHA * (1.0 - pg) ** FOCAL_GAMMA * (-np.log(pg))
    pv = _norm_box_vec(betas, grid)[:, None, :]
    gv = _norm_box_vec(gt_betas, grid)[None, :, :]
    box = np.abs(pv - gv).sum(axis=-1)
    return COST_CLS_WEIGHT * cls + COST_BOX_WEIGHT * box


def focal_loss(logits: Tensor, gt_classes: np.ndarray, match: MatchResult) -> Tensor:
    """Sigmoid focal loss over all (query, class) cells / matched count."""
    n, k = logits.shape
    pos = np.zeros((n, k))
    if match.rows.size:
        pos[match.rows, gt_classes[match.cols]] = 1.0
    p = sigmoid(logits)
    pos_term = mul(mul(pow_const(add(mul(p, -1.0), 1.0), FOCAL_GAMMA),
                       softplus(mul(logits, -1.0))), FOCAL_ALPHA * pos)
    neg_term = mul(mul(pow_const(p, FOCAL_GAMMA), softplus(logits)),
                   (1.0 - FOCAL_ALPHA) * (1.0 - pos))
    denom = max(int(match.rows.size), 1)
    return mul(tsum(add(pos_term, neg_term)), 1.0 / denom)


def l1_box_loss(betas: Tensor, gt_betas: np.ndarray, match: MatchResult) -> Tensor:
    """Mean absolute error over matched boxes and all 10 beta dims."""
    if match.rows.size == 0:
        return mul(tsum(betas), 0.0)
    pred = gather_rows(betas, match.rows)
    diff = absolute(sub(pred, gt_betas[match.cols]))
    return mul(tsum(diff), 1.0 / (match.rows.size * 10))


def make_heat_target(gt_betas: np.ndarray, gt_classes: np.ndarray,
                     grid: BevGrid, num_classes: int,
                     min_sigma: float = 0.7) -> np.ndarray:
    """Per-class Gaussian splats; the cell containing each center is exactly 1."""
    heat = np.zeros((grid.h, grid.w, num_classes))
    ii, jj = np.meshgrid(np.arange(grid.h), np.arange(grid.w), indexing="ij")
    for b, k in zip(gt_betas, gt_classes):
        cx, cy = b[0], b[1]                         # cell units
        w, l = np.exp(b[3]), np.exp(b[4])
        extent = max(w / grid.cell_w, l / grid.cell_h)
        sigma = max(extent / 6.0, min_sigma)
        g = np.exp(-((jj + 0.5 - cx) ** 2 + (ii + 0.5 - cy) ** 2)
                   / (2.0 * sigma ** 2))
        ci = min(max(int(np.floor(cy)), 0), grid.h - 1)
        cj = min(max(int(np.floor(cx)), 0), grid.w - 1)
        g[ci, cj] = 1.0
        np.maximum(heat[:, :, k], g, out=heat[:, :, k])
    return heat


def heatmap_loss(logits: Tensor, target: np.ndarray) -> Tensor:
    """Penalty-reduced focal loss (alpha=2, beta=4), normalized by peak count."""
    pos = (target >= 1.0).astype(np.float64)
    p = sigmoid(logits)
    pos_term = mul(mul(pow_const(add(mul(p, -1.0), 1.0), 2.0),
                       softplus(mul(logits, -1.0))), pos)
    neg_w = (1.0 - target) ** 4 * (1.0 - pos)
    neg_term = mul(mul(pow_const(p, 2.0), softplus(logits)), neg_w)
    denom = max(int(pos.sum()), 1)
    return mul(tsum(add(pos_term, neg_term)), 1.0 / denom)


def detection_loss(output: ModelOutput, bundle: SceneBundle,
                   grid: BevGrid) -> tuple[Tensor, dict]:
    """Deep-supervised total: sum over layers of (cls + box) plus heatmap."""
    parts = {}
    total = None
    for li, lo in enumerate(output.layer_outputs):
        cost = matching_cost(lo.logits.data, lo.beta.data,
                             bundle.gt_classes, bundle.gt_betas, grid)
        match = (hungarian(cost) if bundle.gt_classes.size
                 else MatchResult(np.zeros(0, np.int64), np.zeros(0, np.int64)))
        cls = focal_loss(lo.logits, bundle.gt_classes, match)
        box = l1_box_loss(lo.beta, bundle.gt_betas, match)
        parts[f"layer{li}_cls"] = cls
        parts[f"layer{li}_box"] = box
        layer_sum = add(cls, box)
        total = layer_sum if total is None else add(total, layer_sum)
    heat = heatmap_loss(output.heat_logits, bundle.heat_target)
    parts["heatmap"] = heat
    total = heat if total is None else add(total, heat)
    return total, parts


@dataclass
class TrainConfig:
    epochs: int = 10
    max_lr: float = 1e-3
    div_factor: float = 10.0
    final_div: float = 100.0
    pct_up: float = 0.3
    beta1_max: float = 0.95
    beta1_min: float = 0.85
    weight_decay: float = 0.0
    augment: bool = False
    seed: int = 0
    eval_every: int = 0            # epochs between held-out evals; 0 = never


@dataclass
class TrainState:
    model: Detector
    opt: Adam
    step: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)


def train_step(state: TrainState, bundle: SceneBundle, total_steps: int,
               cfg: TrainConfig) -> dict:
    """One optimization step on one scene; aborts on non-finite loss."""
    model = state.model
    grid = model.cfg.grid
    out = model(bundle)
    loss, parts = detection_loss(out, bundle, grid)
    val = float(loss.data)
    if not np.isfinite(val):
        raise NonFiniteError(f"non-finite loss at step {state.step}")
    state.opt.zero_grad()
    loss.backward()
    lr, beta1 = one_cycle(state.step, total_steps, max_lr=cfg.max_lr,
                          div_factor=cfg.div_factor, final_div=cfg.final_div,
                          pct_up=cfg.pct_up, beta1_max=cfg.beta1_max,
                          beta1_min=cfg.beta1_min)
    state.opt.weight_decay = cfg.weight_decay
    state.opt.step(lr=lr, beta1=beta1)
    state.step += 1
    return {"loss": val,
            "parts": {k: float(v.data) for k, v in parts.items()},
            "lr": lr, "beta1": beta1}


def _augmented_bundle(bundle: SceneBundle, rng: Rng, model_cfg) -> SceneBundle:
    from .model import prepare_scene
    scene = bundle.scene
    angle = float(rng.split(1).uniform(-np.pi / 8, np.pi / 8))
    scene = rotate_scene(scene, angle)
    if int(rng.split(2).randint(2)) == 1:
        scene = flip_scene(scene)
    return prepare_scene(scene, model_cfg)


def train_loop(state: TrainState, bundles: list, cfg: TrainConfig,
               eval_bundles: list | None = None,
               metrics_path: str | None = None,
               checkpoint_path: str | None = None,
               log=None, stop_epoch: int | None = None) -> list:
    """Epoch loop: deterministic shuffling/augmentation derived from cfg.seed.

    Appends one record per epoch to state.history (and key=value lines to
    metrics_path): mean training loss, and map_lite on eval_bundles when
    eval_every divides the epoch. Checkpoints carry parameters, optimizer state
    and the epoch counter, so resuming with the same config reproduces the
    uninterrupted trace; stop_epoch simulates an interruption.
    """
    from .evalbench import evaluate_bundles
    total_steps = cfg.epochs * len(bundles)
    lines = []
    last = cfg.epochs if stop_epoch is None else min(cfg.epochs, stop_epoch)
    while state.epoch < last:
        ep = state.epoch
        rng = Rng(cfg.seed).split(1000 + ep)
        order = list(range(len(bundles)))
        rng.split(1).shuffle(order)
        losses = []
        t0 = time.time()
        for oi, bi in enumerate(order):
            bundle = bundles[bi]
            if cfg.augment:
                bundle = _augmented_bundle(bundle, rng.split(2000 + oi),
                                           state.model.cfg)
            rec = train_step(state, bundle, total_steps, cfg)
            losses.append(rec["loss"])
        entry = {"epoch": ep, "loss": float(np.mean(losses)),
                 "seconds": time.time() - t0}
        if (eval_bundles and cfg.eval_every
                and (ep + 1) % cfg.eval_every == 0):
            entry["map_lite"] = evaluate_bundles(state.model, eval_bundles)
        state.history.append(entry)
        state.epoch = ep + 1
        line = " ".join(f"{k}={entry[k]:.6g}" if isinstance(entry[k], float)
                        else f"{k}={entry[k]}" for k in sorted(entry))
        lines.append(line)
        if log:
            log(line)
        if checkpoint_path:
            save_checkpoint_file(checkpoint_path, state)
    if metrics_path:
        with open(metrics_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return state.history


# -- checkpointing -------------------------------------------------------------


def save_checkpoint_file(path: str, state: TrainState) -> None:
    arrays = {f"param.{n}": p.data for n, p in state.model.named_parameters()}
    arrays.update(state.opt.state_arrays())
    arrays["meta.step"] = np.array([state.step], dtype=np.float64)
    arrays["meta.epoch"] = np.array([state.epoch], dtype=np.float64)
    tensorio.save_checkpoint(path, arrays)


def load_checkpoint_file(path: str, state: TrainState) -> None:
    arrays = tensorio.load_checkpoint(path)
    params = {n[len("param."):]: a for n, a in arrays.items()
              if n.startswith("param.")}
    state.model.load_state_dict(params)
    opt_arrays = {n: a for n, a in arrays.items() if n.startswith("adam.")}
    state.opt.load_state_arrays(opt_arrays)
    state.step = int(arrays["meta.step"][0])
    state.epoch = int(arrays["meta.epoch"][0])


def make_state(model: Detector, cfg: TrainConfig | None = None) -> TrainState:
    params = [p for _, p in model.named_parameters()]
    return TrainState(model=model, opt=Adam(params))

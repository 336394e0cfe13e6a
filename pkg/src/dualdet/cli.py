"""Command-line interface: scene generation, training, evaluation, benchmarks.

Subcommands share --config / --seed / --out. Worker count for the
embarrassingly parallel commands (gen-scene, eval) comes from the DIPP_THREADS
environment variable (0 or 1 = serial); results are identical for any worker
count. Failures print a single diagnostic line
``error category=<category>: <message>`` to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_run_config
from .numerics import NonFiniteError, no_grad, sigmoid
from .rng import Rng
from .scenesim import gen_scene, load_scene, save_scene


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _threads() -> int:
    raw = os.environ.get("DIPP_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise CliError("env", f"DIPP_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise CliError("env", f"DIPP_THREADS must be >= 0, got {n}")
    return n


def _parallel_map(fn, items):
    """Order-preserving map; DIPP_THREADS > 1 fans out to a thread pool."""
    n = _threads()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _load_config(args) -> RunConfig:
    if args.config is None:
        return RunConfig()
    try:
        return load_run_config(args.config)
    except FileNotFoundError:
        raise CliError("io", f"config file not found: {args.config}")
    except ConfigError as e:
        raise CliError("config", str(e))


def _scene_paths(scenes_arg: str) -> list:
    p = Path(scenes_arg)
    if p.is_dir():
        found = sorted(p.glob("*.json"))
        if not found:
            raise CliError("io", f"no scene files in {scenes_arg}")
        return found
    if p.exists():
        return [p]
    raise CliError("io", f"scene path not found: {scenes_arg}")


def _load_scenes(scenes_arg: str):
    return [load_scene(str(sp)) for sp in _scene_paths(scenes_arg)]


def _gen_scenes(cfg: RunConfig, seed0: int, count: int):
    return _parallel_map(lambda i: gen_scene(cfg.scene, seed0 + i),
                         list(range(count)))


def _build_model(cfg: RunConfig, seed: int):
    from .model import Detector
    return Detector(cfg.model, Rng(seed))


def _prepare_bundles(cfg: RunConfig, scenes):
    from .model import prepare_scene
    return _parallel_map(lambda s: prepare_scene(s, cfg.model), scenes)


def _restore(cfg: RunConfig, seed: int, checkpoint: str | None):
    from .training import load_checkpoint_file, make_state
    model = _build_model(cfg, seed)
    state = make_state(model)
    if checkpoint:
        if not Path(checkpoint).exists():
            raise CliError("io", f"checkpoint not found: {checkpoint}")
        try:
            load_checkpoint_file(checkpoint, state)
        except Exception as e:
            raise CliError("format", f"cannot load checkpoint: {e}")
    return state


# -- subcommands -----------------------------------------------------------------


def cmd_gen_scene(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    if args.count == 1 and not out.is_dir() and out.suffix == ".json":
        save_scene(gen_scene(cfg.scene, args.seed), str(out.parent or Path(".")),
                   out.stem)
        print(f"wrote {out}")
        return 0
    out.mkdir(parents=True, exist_ok=True)
    scenes = _gen_scenes(cfg, args.seed, args.count)
    for i, scene in enumerate(scenes):
        save_scene(scene, str(out), f"scene_{args.seed + i:05d}")
    print(f"wrote {args.count} scenes to {out}")
    return 0


def cmd_train(args) -> int:
    from .training import TrainConfig, save_checkpoint_file, train_loop
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.scenes:
        scenes = _load_scenes(args.scenes)
        train_scenes = scenes[:max(len(scenes) - cfg.eval_scenes, 1)]
        eval_scenes = scenes[len(train_scenes):]
    else:
        train_scenes = _gen_scenes(cfg, cfg.scene_seed, cfg.train_scenes)
        eval_scenes = _gen_scenes(cfg, cfg.scene_seed + 10_000, cfg.eval_scenes)
    bundles = _prepare_bundles(cfg, train_scenes)
    eval_bundles = _prepare_bundles(cfg, eval_scenes) if eval_scenes else None
    tcfg = cfg.train
    if args.seed is not None:
        tcfg.seed = args.seed
    state = _restore(cfg, tcfg.seed, args.checkpoint)
    ck_path = str(out / "checkpoint.dipp")
    train_loop(state, bundles, tcfg, eval_bundles=eval_bundles,
               metrics_path=str(out / "metrics.txt"),
               checkpoint_path=ck_path, log=print)
    save_checkpoint_file(ck_path, state)
    print(f"trained {state.epoch} epochs; checkpoint at {ck_path}")
    return 0


def cmd_eval(args) -> int:
    from .evalbench import (DEFAULT_THRESHOLDS, bundle_ground_truth,
                            extract_predictions, map_lite)
    cfg = _load_config(args)
    state = _restore(cfg, args.seed or 0, args.checkpoint)
    if args.scenes:
        scenes = _load_scenes(args.scenes)
    else:
        scenes = _gen_scenes(cfg, cfg.scene_seed + 10_000, cfg.eval_scenes)
    bundles = _prepare_bundles(cfg, scenes)
    model = state.model

    def run_one(b):
        with no_grad():
            out = model(b)
        return extract_predictions(out, model.cfg.grid), bundle_ground_truth(b)

    results = _parallel_map(run_one, bundles)
    preds = [r[0] for r in results]
    gts = [r[1] for r in results]
    lines = [f"scenes={len(bundles)}"]
    for thr in DEFAULT_THRESHOLDS:
        lines.append(f"map_at_{thr}={map_lite(preds, gts, (thr,)):.6f}")
    lines.append(f"map_lite={map_lite(preds, gts):.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_bench_attn(args) -> int:
    from .encoder import GroupedIntervals
    from .evalbench import bench_grouped
    cfg = _load_config(args)
    counts = np.concatenate([np.full(int(m), int(c), dtype=np.int64)
                             for c, m in cfg.bench_counts])
    iv = GroupedIntervals(cfg.model.encoder.intervals)
    res = bench_grouped(counts, iv, channels=cfg.model.channels,
                        heads=cfg.model.encoder.heads, seed=args.seed or 0)
    text = "\n".join(res.lines()) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_dump_heatmap(args) -> int:
    from .evalbench import write_pgm
    from .model import prepare_scene
    cfg = _load_config(args)
    state = _restore(cfg, args.seed or 0, args.checkpoint)
    if args.scenes:
        scene = _load_scenes(args.scenes)[0]
    else:
        scene = gen_scene(cfg.scene, args.seed or 0)
    bundle = prepare_scene(scene, cfg.model)
    with no_grad():
        out = state.model(bundle)
    probs = sigmoid(out.heat_logits).data
    base = Path(args.out)
    write_pgm(str(base), probs.max(axis=2))
    for k in range(probs.shape[2]):
        write_pgm(str(base.with_name(base.stem + f"_class{k}" + base.suffix)),
                  probs[:, :, k])
    print(f"wrote {base} and {probs.shape[2]} per-class maps")
    return 0


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dualdet",
                                 description="LiDAR-camera interaction detector")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="run config JSON")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=out_required)

    p = sub.add_parser("gen-scene", help="generate synthetic scenes")
    common(p)
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(fn=cmd_gen_scene, seed=0)

    p = sub.add_parser("train", help="train a detector")
    common(p)
    p.add_argument("--checkpoint", help="resume from checkpoint")
    p.add_argument("--scenes", help="scene file or directory (else procedural)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p, out_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenes")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench-attn", help="grouped attention benchmark")
    common(p, out_required=False)
    p.set_defaults(fn=cmd_bench_attn)

    p = sub.add_parser("dump-heatmap", help="export heatmaps as PGM")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--scenes", help="scene file to run on (else procedural)")
    p.set_defaults(fn=cmd_dump_heatmap)
    return ap


_CATEGORY_MAP = [
    (CliError, None),
    (ConfigError, "config"),
    (NonFiniteError, "numeric"),
    (FileNotFoundError, "io"),
    (json.JSONDecodeError, "format"),
]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:                       # single-line diagnostics
        category = "internal"
        for etype, cat in _CATEGORY_MAP:
            if isinstance(e, etype):
                category = cat if cat is not None else e.category
                break
        print(f"error category={category}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

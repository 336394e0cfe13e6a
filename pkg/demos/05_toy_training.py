"""End-to-end training on a handful of toy scenes: loss curve, held-out
map_lite, and checkpoint save/restore."""

import os
import tempfile

from dualdet.decoder import DecoderConfig
from dualdet.encoder import EncoderConfig
from dualdet.evalbench import evaluate_bundles
from dualdet.model import Detector, ModelConfig, prepare_scene
from dualdet.rng import Rng
from dualdet.scenesim import SceneSpec, gen_scene
from dualdet.training import (TrainConfig, load_checkpoint_file, make_state,
                              save_checkpoint_file, train_loop)

cfg = ModelConfig(
    extent=9.0, grid_h=12, grid_w=12, stride=8, channels=8, num_classes=3,
    k=1, polar_bins=8,
    encoder=EncoderConfig(layers=1, channels=8, heads=2, deform_points=2,
                          image_scales=1, ffn_hidden=8),
    decoder=DecoderConfig(layers=2, channels=8, num_queries=8,
                          num_classes=3, roi_size=3, dyn_hidden=4))
spec = SceneSpec(x_min=-9, x_max=9, y_min=-9, y_max=9, n_objects_min=2,
                 n_objects_max=3, n_cameras=2, image_width=64,
                 image_height=32, ground_points=80, clutter_min=1,
                 clutter_max=1, rays_per_object=24)

print("preparing 8 train scenes and 4 held-out scenes ...")
train = [prepare_scene(gen_scene(spec, seed=s), cfg) for s in range(8)]
held = [prepare_scene(gen_scene(spec, seed=100 + s), cfg) for s in range(4)]

model = Detector(cfg, Rng(0))
state = make_state(model)
tcfg = TrainConfig(epochs=4, max_lr=3e-3, seed=0, eval_every=2)
print(f"training {tcfg.epochs} epochs on {len(train)} scenes ...")
train_loop(state, train, tcfg, eval_bundles=held, log=print)

first = state.history[0]["loss"]
last = state.history[-1]["loss"]
print(f"\nloss went {first:.4f} -> {last:.4f} "
      f"({100 * (first - last) / first:.1f}% down)")
print(f"held-out map_lite after training: "
      f"{evaluate_bundles(model, held):.4f}")

with tempfile.TemporaryDirectory() as td:
    path = os.path.join(td, "toy.dipp")
    save_checkpoint_file(path, state)
    print(f"\ncheckpoint written ({os.path.getsize(path)} bytes)")
    clone = make_state(Detector(cfg, Rng(99)))
    before = evaluate_bundles(clone.model, held)
    load_checkpoint_file(path, clone)
    after = evaluate_bundles(clone.model, held)
    print(f"fresh model map_lite {before:.4f}; after restore {after:.4f} "
          f"(matches trained model: "
          f"{abs(after - evaluate_bundles(model, held)) == 0.0})")
    print(f"restored step={clone.step} epoch={clone.epoch}")

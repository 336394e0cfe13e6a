"""Full detector: featurizers, interaction encoder, heatmap head, decoder.

A SceneBundle packages everything per-scene that does not depend on model
weights (geometry correspondences, image rasters, ground-truth targets), so it
can be computed once and reused across epochs when augmentation is off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import Decoder, DecoderConfig, LayerOutput, beta_encode
from .encoder import (Encoder, EncoderConfig, EncoderGeometry, GroupedReport,
                      build_encoder_geometry)
from .geometry import BevGrid, PolarGrid
from .numerics import Tensor, relu, sigmoid
from .numerics.nn import Conv2d, Module
from .rng import Rng
from .scenesim import (ImageFeaturizer, PointFeaturizer, Scene, raster_image)


@dataclass
class ModelConfig:
    extent: float = 18.0
    grid_h: int = 36
    grid_w: int = 36
    stride: int = 8
    channels: int = 32
    num_classes: int = 3
    k: int = 1
    polar_bins: int = 32
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def __post_init__(self):
        self.encoder.channels = self.channels
        self.decoder.channels = self.channels
        self.decoder.num_classes = self.num_classes
        self.encoder.polar_bins = self.polar_bins
        self.encoder.polar_r_max = float(self.extent * np.sqrt(2.0) + 1.0)

    @property
    def grid(self) -> BevGrid:
        e = self.extent
        return BevGrid(-e, e, -e, e, self.grid_h, self.grid_w)

    @property
    def pgrid(self) -> PolarGrid:
        return PolarGrid(self.polar_bins, self.encoder.polar_r_max)


@dataclass
class SceneBundle:
    """Weight-independent per-scene inputs and targets."""
    scene: Scene
    geom: EncoderGeometry
    rasters: list                 # per cam (fh, fw, K+2) numpy
    gt_classes: np.ndarray        # (G,)
    gt_betas: np.ndarray          # (G, 10)
    heat_target: np.ndarray       # (H, W, K)


def prepare_scene(scene: Scene, cfg: ModelConfig) -> SceneBundle:
    from .training import make_heat_target
    grid = cfg.grid
    geom = build_encoder_geometry(scene.points, scene.cams, grid, cfg.stride,
                                  cfg.k, cfg.pgrid)
    rasters = [raster_image(scene.boxes, cam, cfg.stride, cfg.num_classes)
               for cam in scene.cams]
    gt_classes = np.array([b.class_id for b in scene.boxes], dtype=np.int64)
    gt_betas = np.stack([beta_encode(b.center, b.size, b.yaw, grid, b.velocity)
                         for b in scene.boxes]) if scene.boxes else np.zeros((0, 10))
    heat = make_heat_target(gt_betas, gt_classes, grid, cfg.num_classes)
    return SceneBundle(scene=scene, geom=geom, rasters=rasters,
                       gt_classes=gt_classes, gt_betas=gt_betas,
                       heat_target=heat)


@dataclass
class ModelOutput:
    heat_logits: Tensor               # (H, W, K)
    layer_outputs: list[LayerOutput]  # decoder predictions, one per layer
    grouped_reports: list[GroupedReport]
    h_bev: Tensor
    h_imgs: list


class Detector(Module):
    def __init__(self, cfg: ModelConfig, rng: Rng):
        from .decoder import FOCAL_PRIOR_BIAS
        self.cfg = cfg
        c = cfg.channels
        self.point_feat = PointFeaturizer(c, rng.split(1))
        self.img_feat = ImageFeaturizer(c, cfg.num_classes, rng.split(2))
        self.encoder = Encoder(cfg.encoder, rng.split(3))
        self.heat1 = Conv2d(3, c, c, rng.split(4))
        self.heat2 = Conv2d(3, c, cfg.num_classes, rng.split(5),
                            bias_fill=FOCAL_PRIOR_BIAS)
        self.decoder = Decoder(cfg.decoder, rng.split(6))

    def forward(self, bundle: SceneBundle) -> ModelOutput:
        cfg = self.cfg
        grid = cfg.grid
        h_bev = self.point_feat(bundle.scene.points, grid)
        h_imgs = [self.img_feat(r) for r in bundle.rasters]
        h_bev, h_imgs, reports = self.encoder(h_bev, h_imgs, bundle.geom)
        heat_logits = self.heat2(relu(self.heat1(h_bev)))
        heat_probs = sigmoid(heat_logits).data
        outs = self.decoder(h_bev, h_imgs, heat_probs, grid,
                            bundle.scene.cams, cfg.stride)
        return ModelOutput(heat_logits=heat_logits, layer_outputs=outs,
                           grouped_reports=reports, h_bev=h_bev, h_imgs=h_imgs)

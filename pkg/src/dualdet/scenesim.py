"""Procedural scene generation and the two modality featurizers.

A scene is a pure function of (spec, seed): ground-plane returns plus vertical
clutter columns, class-colored boxes sampled on their surfaces with range-
decaying density, and a level multi-camera rig at the ego origin. Classes
share one size distribution on purpose - geometry alone cannot identify class,
only the image channels can.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .geometry import BevGrid, CameraModel, DepthMap, bev_index, project_points
from .numerics import Tensor, relu, scatter_rc, segment_max
from .numerics.nn import Conv2d, Linear, Module
from .numerics.tensorio import load_tensor, save_tensor
from .rng import Rng


class PlacementError(RuntimeError):
    """Box placement could not satisfy the overlap constraint."""


@dataclass
class Box3D:
    center: np.ndarray      # (3,) world, z at box mid-height
    size: np.ndarray        # (w, l, h); l runs along the heading
    yaw: float
    class_id: int
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.asarray(self.size, dtype=np.float64)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        if np.any(self.size <= 0):
            raise ValueError("box sizes must be positive")

    def footprint(self) -> np.ndarray:
        """4 ground-plane corners (x, y), counterclockwise."""
        w, l, _ = self.size
        local = np.array([[l / 2, w / 2], [-l / 2, w / 2],
                          [-l / 2, -w / 2], [l / 2, -w / 2]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center[:2]

    def corners(self) -> np.ndarray:
        """8 corners, bottom 4 then top 4."""
        fp = self.footprint()
        h = self.size[2]
        zlo = np.full(4, self.center[2] - h / 2)
        zhi = np.full(4, self.center[2] + h / 2)
        bottom = np.column_stack([fp, zlo])
        top = np.column_stack([fp, zhi])
        return np.vstack([bottom, top])


@dataclass
class SceneSpec:
    x_min: float = -18.0
    x_max: float = 18.0
    y_min: float = -18.0
    y_max: float = 18.0
    num_classes: int = 3
    n_objects_min: int = 5
    n_objects_max: int = 9
    size_wl_min: float = 1.6
    size_wl_max: float = 3.4
    size_h_min: float = 1.0
    size_h_max: float = 2.2
    placement_margin: float = 1.2
    min_gap: float = 0.4
    n_cameras: int = 4
    image_width: int = 256
    image_height: int = 128
    fov_deg: float = 100.0
    camera_height: float = 1.6
    rays_per_object: int = 48
    density_ref_dist: float = 5.0
    ground_points: int = 600
    ground_sigma_z: float = 0.04
    clutter_min: int = 2
    clutter_max: int = 5
    clutter_height: float = 1.8
    max_retries: int = 200


@dataclass
class Scene:
    spec: SceneSpec
    seed: int
    boxes: list
    cams: list
    points: np.ndarray      # (N, 4): x, y, z, intensity


def make_rig(spec: SceneSpec) -> list[CameraModel]:
    """Evenly spaced level cameras at the ego origin."""
    fx = (spec.image_width / 2) / math.tan(math.radians(spec.fov_deg) / 2)
    cams = []
    for i in range(spec.n_cameras):
        yaw = 2 * math.pi * i / spec.n_cameras
        cams.append(CameraModel.level(
            [0.0, 0.0, spec.camera_height], yaw, fx, fx,
            spec.image_width / 2, spec.image_height / 2,
            spec.image_width, spec.image_height))
    return cams


def gen_scene(spec: SceneSpec, seed: int) -> Scene:
    """Deterministic scene from an integer seed."""
    rng = Rng(seed)
    obj_rng = rng.split(1)
    lidar_rng = rng.split(2)
    boxes = _place_boxes(spec, obj_rng)
    cams = make_rig(spec)
    points = sample_lidar(boxes, spec, lidar_rng)
    return Scene(spec=spec, seed=seed, boxes=boxes, cams=cams, points=points)


def _place_boxes(spec: SceneSpec, rng: Rng) -> list[Box3D]:
    n = spec.n_objects_min + rng.randint(spec.n_objects_max - spec.n_objects_min + 1)
    boxes: list[Box3D] = []
    for _ in range(n):
        placed = False
        for _attempt in range(spec.max_retries):
            w = rng.uniform(spec.size_wl_min, spec.size_wl_max)
            l = rng.uniform(spec.size_wl_min, spec.size_wl_max)
            h = rng.uniform(spec.size_h_min, spec.size_h_max)
            yaw = rng.uniform(-math.pi, math.pi)
            cx = rng.uniform(spec.x_min + spec.placement_margin,
                             spec.x_max - spec.placement_margin)
            cy = rng.uniform(spec.y_min + spec.placement_margin,
                             spec.y_max - spec.placement_margin)
            rad = math.hypot(w, l) / 2
            ok = True
            for b in boxes:
                brad = math.hypot(b.size[0], b.size[1]) / 2
                if math.hypot(cx - b.center[0], cy - b.center[1]) < rad + brad + spec.min_gap:
                    ok = False
                    break
            # keep a clear bubble at the origin for the rig
            if math.hypot(cx, cy) < rad + 1.5:
                ok = False
            if ok:
                cls = rng.randint(spec.num_classes)
                boxes.append(Box3D(center=np.array([cx, cy, h / 2]),
                                   size=np.array([w, l, h]), yaw=yaw,
                                   class_id=cls))
                placed = True
                break
        if not placed:
            raise PlacementError("could not place box without overlap")
    return boxes


def sample_lidar(boxes: list[Box3D], spec: SceneSpec, rng: Rng) -> np.ndarray:
    """Surface returns for each box plus environment (ground + clutter) points.

    Per-object counts scale with inverse distance from the ego origin, so far
    boxes are genuinely sparse. Object points sit within 1 cm of the box
    surface. With rays_per_object == 0 only environment points remain.
    """
    chunks = []
    if spec.rays_per_object > 0:
        for bi, box in enumerate(boxes):
            brng = rng.split(100 + bi)
            d = float(np.hypot(box.center[0], box.center[1]))
            frac = min(1.0, spec.density_ref_dist / max(d, 1e-6))
            count = max(1, int(round(spec.rays_per_object * frac)))
            chunks.append(_sample_box_surface(box, count, brng))
    grng = rng.split(2)
    ground = np.empty((spec.ground_points, 4))
    ground[:, 0] = grng.uniform(spec.x_min, spec.x_max, spec.ground_points)
    ground[:, 1] = grng.uniform(spec.y_min, spec.y_max, spec.ground_points)
    ground[:, 2] = np.clip(grng.normal(spec.ground_points, std=spec.ground_sigma_z),
                           -0.15, 0.15)
    ground[:, 3] = grng.uniform(0.0, 1.0, spec.ground_points)
    chunks.append(ground)
    crng = rng.split(3)
    n_cols = spec.clutter_min + crng.randint(max(spec.clutter_max - spec.clutter_min, 0) + 1)
    for _ in range(n_cols):
        cx = crng.uniform(spec.x_min + 0.5, spec.x_max - 0.5)
        cy = crng.uniform(spec.y_min + 0.5, spec.y_max - 0.5)
        m = 6 + crng.randint(7)
        col = np.empty((m, 4))
        col[:, 0] = cx + crng.normal(m, std=0.06)
        col[:, 1] = cy + crng.normal(m, std=0.06)
        col[:, 2] = crng.uniform(0.05, spec.clutter_height, m)
        col[:, 3] = crng.uniform(0.0, 1.0, m)
        chunks.append(col)
    return np.vstack(chunks)


def _sample_box_surface(box: Box3D, count: int, rng: Rng) -> np.ndarray:
    w, l, h = box.size
    areas = np.array([w * l, w * h, w * h, l * h, l * h])  # top, +x, -x, +y, -y faces
    probs = np.cumsum(areas / areas.sum())
    u = rng.uniform(0.0, 1.0, count)
    face = np.searchsorted(probs, u)
    a = rng.uniform(-0.5, 0.5, count)
    b = rng.uniform(-0.5, 0.5, count)
    jitter = rng.uniform(-0.008, 0.008, count)
    local = np.empty((count, 3))
    for i in range(count):
        f = face[i]
        if f == 0:    # top
            local[i] = (a[i] * l, b[i] * w, h / 2 + jitter[i])
        elif f == 1:  # +x side (heading)
            local[i] = (l / 2 + jitter[i], a[i] * w, b[i] * h)
        elif f == 2:
            local[i] = (-l / 2 + jitter[i], a[i] * w, b[i] * h)
        elif f == 3:
            local[i] = (a[i] * l, w / 2 + jitter[i], b[i] * h)
        else:
            local[i] = (a[i] * l, -w / 2 + jitter[i], b[i] * h)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    world = np.empty((count, 4))
    world[:, 0] = c * local[:, 0] - s * local[:, 1] + box.center[0]
    world[:, 1] = s * local[:, 0] + c * local[:, 1] + box.center[1]
    world[:, 2] = local[:, 2] + box.center[2]
    world[:, 3] = rng.uniform(0.0, 1.0, count)
    return world


# -- sensor-derived raster inputs -----------------------------------------------


def render_sparse_depth(points: np.ndarray, cam: CameraModel, stride: int) -> DepthMap:
    """Nearest-return depth per feature cell (cells without returns invalid)."""
    fh, fw = cam.height // stride, cam.width // stride
    uv, z, front = project_points(np.asarray(points)[:, :3], cam)
    keep = front & (uv[:, 0] >= 0) & (uv[:, 0] < cam.width) \
        & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height)
    depth = np.full((fh, fw), np.inf)
    r = (uv[keep, 1] // stride).astype(np.int64)
    c = (uv[keep, 0] // stride).astype(np.int64)
    np.minimum.at(depth, (r, c), z[keep])
    valid = np.isfinite(depth)
    depth[~valid] = 0.0
    return DepthMap(depth, valid)


def raster_image(boxes: list[Box3D], cam: CameraModel, stride: int,
                 num_classes: int) -> np.ndarray:
    """Class-and-depth-colored box rasterization at feature resolution.

    Channels: one-hot class, depth shade (ref/d), occupancy. Background stays
    zero. Per-box fill covers the axis-aligned rect of its visible projected
    corners; nearer boxes overwrite farther ones.
    """
    fh, fw = cam.height // stride, cam.width // stride
    out = np.zeros((fh, fw, num_classes + 2))
    order = []
    for box in boxes:
        pc = cam.cam_points(box.corners())
        front = pc[:, 2] > 0
        if not front.any():
            continue
        d = float(np.hypot(box.center[0] - cam.position[0],
                           box.center[1] - cam.position[1]))
        order.append((d, box, pc, front))
    order.sort(key=lambda t: -t[0])  # far first so near overwrites
    for d, box, pc, front in order:
        z = pc[front, 2]
        u = cam.fx * pc[front, 0] / z + cam.cx
        v = cam.fy * pc[front, 1] / z + cam.cy
        j0 = max(0, int(math.ceil(u.min() / stride - 0.5)))
        j1 = min(fw - 1, int(math.floor(u.max() / stride - 0.5)))
        i0 = max(0, int(math.ceil(v.min() / stride - 0.5)))
        i1 = min(fh - 1, int(math.floor(v.max() / stride - 0.5)))
        if j1 < j0 or i1 < i0:
            continue
        vec = np.zeros(num_classes + 2)
        vec[box.class_id] = 1.0
        vec[num_classes] = min(2.0, 5.0 / max(d, 0.5))
        vec[num_classes + 1] = 1.0
        out[i0:i1 + 1, j0:j1 + 1] = vec
    return out


# -- featurizers -----------------------------------------------------------------


class PointFeaturizer(Module):
    """Per-point MLP, per-pillar max pool, scatter to BEV, two 3x3 convs."""

    POINT_DIM = 5  # dx, dy (in-cell offsets), z, intensity, range fraction

    def __init__(self, channels: int, rng: Rng):
        self.fc1 = Linear(self.POINT_DIM, channels, rng.split(1))
        self.fc2 = Linear(channels, channels, rng.split(2))
        self.conv1 = Conv2d(3, channels, channels, rng.split(3))
        self.conv2 = Conv2d(3, channels, channels, rng.split(4))

    def forward(self, points: np.ndarray, grid: BevGrid) -> Tensor:
        feats, seg, rows, cols = pillar_groups(points, grid)
        if feats.shape[0] == 0:
            base = Tensor(np.zeros((grid.h, grid.w, self.fc2.w.data.shape[1])))
        else:
            x = relu(self.fc1(Tensor(feats)))
            x = self.fc2(x)
            pooled = segment_max(x, seg, rows.size)
            base = scatter_rc(pooled, rows, cols, (grid.h, grid.w))
        y = relu(self.conv1(base))
        return self.conv2(y)


def pillar_groups(points: np.ndarray, grid: BevGrid):
    """Sorted per-pillar grouping of in-range points.

    Returns (per-point features (N, 5), segment ids (N,), pillar rows (P,),
    pillar cols (P,)); segments are compacted and sorted so segment_max can
    consume them directly. Point permutations change only intra-segment order,
    which max pooling ignores.
    """
    pts = np.asarray(points, dtype=np.float64)
    bi, bj, ok = bev_index(pts[:, 0], pts[:, 1], grid)
    pts = pts[ok]
    bi, bj = bi[ok], bj[ok]
    if pts.shape[0] == 0:
        return (np.zeros((0, PointFeaturizer.POINT_DIM)), np.zeros(0, np.int64),
                np.zeros(0, np.int64), np.zeros(0, np.int64))
    pid = bi * grid.w + bj
    order = np.argsort(pid, kind="stable")
    pts, pid = pts[order], pid[order]
    uniq, seg = np.unique(pid, return_inverse=True)
    cxs = grid.x_min + ((uniq % grid.w) + 0.5) * grid.cell_w
    cys = grid.y_min + ((uniq // grid.w) + 0.5) * grid.cell_h
    r_max = math.hypot(max(abs(grid.x_min), abs(grid.x_max)),
                       max(abs(grid.y_min), abs(grid.y_max)))
    feats = np.column_stack([
        (pts[:, 0] - cxs[seg]) / grid.cell_w,
        (pts[:, 1] - cys[seg]) / grid.cell_h,
        pts[:, 2],
        pts[:, 3],
        np.hypot(pts[:, 0], pts[:, 1]) / r_max,
    ])
    return feats, seg.astype(np.int64), (uniq // grid.w).astype(np.int64), \
        (uniq % grid.w).astype(np.int64)


class ImageFeaturizer(Module):
    """Two stride-1 convs over the class/depth raster."""

    def __init__(self, channels: int, num_classes: int, rng: Rng):
        self.conv1 = Conv2d(3, num_classes + 2, channels, rng.split(1))
        self.conv2 = Conv2d(3, channels, channels, rng.split(2))

    def forward(self, raster: np.ndarray) -> Tensor:
        return self.conv2(relu(self.conv1(Tensor(raster))))


def featurize_points(points: np.ndarray, grid: BevGrid,
                     feat: PointFeaturizer) -> Tensor:
    return feat(points, grid)


def featurize_image(scene: Scene, cam_idx: int, stride: int,
                    feat: ImageFeaturizer) -> Tensor:
    raster = raster_image(scene.boxes, scene.cams[cam_idx], stride,
                          scene.spec.num_classes)
    return feat(raster)


# -- augmentation ----------------------------------------------------------------


def rotate_scene(scene: Scene, angle: float) -> Scene:
    """Rotate world content about the origin; the rig stays put."""
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    pts = scene.points.copy()
    pts[:, :2] = pts[:, :2] @ rot.T
    boxes = []
    for b in scene.boxes:
        center = b.center.copy()
        center[:2] = rot @ center[:2]
        yaw = math.atan2(math.sin(b.yaw + angle), math.cos(b.yaw + angle))
        boxes.append(Box3D(center=center, size=b.size.copy(), yaw=yaw,
                           class_id=b.class_id, velocity=rot @ b.velocity))
    return Scene(spec=scene.spec, seed=scene.seed, boxes=boxes,
                 cams=scene.cams, points=pts)


def flip_scene(scene: Scene) -> Scene:
    """Mirror across the x axis (y -> -y); the rig stays put."""
    pts = scene.points.copy()
    pts[:, 1] = -pts[:, 1]
    boxes = []
    for b in scene.boxes:
        center = b.center.copy()
        center[1] = -center[1]
        vel = b.velocity.copy()
        vel[1] = -vel[1]
        boxes.append(Box3D(center=center, size=b.size.copy(), yaw=-b.yaw,
                           class_id=b.class_id, velocity=vel))
    return Scene(spec=scene.spec, seed=scene.seed, boxes=boxes,
                 cams=scene.cams, points=pts)


# -- persistence -----------------------------------------------------------------

SCENE_FORMAT_VERSION = 1


def save_scene(scene: Scene, directory: str, name: str) -> str:
    """Write <name>.json plus a <name>.points.dipt sidecar; returns json path."""
    os.makedirs(directory, exist_ok=True)
    sidecar = f"{name}.points.dipt"
    save_tensor(os.path.join(directory, sidecar), scene.points)
    doc = {
        "format_version": SCENE_FORMAT_VERSION,
        "seed": scene.seed,
        "spec": asdict(scene.spec),
        "boxes": [{
            "center": [float(v) for v in b.center],
            "size": [float(v) for v in b.size],
            "yaw": float(b.yaw),
            "class_id": int(b.class_id),
            "velocity": [float(v) for v in b.velocity],
        } for b in scene.boxes],
        "rig": [{
            "K": [[float(v) for v in row] for row in cam.K],
            "E": [[float(v) for v in row] for row in cam.E],
            "width": cam.width,
            "height": cam.height,
        } for cam in scene.cams],
        "points_file": sidecar,
    }
    path = os.path.join(directory, f"{name}.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")
    return path


def load_scene(path: str) -> Scene:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format_version") != SCENE_FORMAT_VERSION:
        raise ValueError("unsupported scene format version")
    spec = SceneSpec(**doc["spec"])
    boxes = [Box3D(center=np.array(b["center"]), size=np.array(b["size"]),
                   yaw=b["yaw"], class_id=b["class_id"],
                   velocity=np.array(b["velocity"])) for b in doc["boxes"]]
    cams = [CameraModel(np.array(c["K"]), np.array(c["E"]), c["width"], c["height"])
            for c in doc["rig"]]
    points = load_tensor(os.path.join(os.path.dirname(path), doc["points_file"]))
    return Scene(spec=spec, seed=doc["seed"], boxes=boxes, cams=cams, points=points)

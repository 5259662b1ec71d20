"""Seeded synthetic scenes with exact per-surfel ground truth.

Presets:

* ``room``: floor and walls (stuff) plus boxes (things), mostly opaque.
* ``thin``: elongated rotated ribbons, aspect ratio well above 20.
* ``stack``: columns of semi-transparent camera-facing layers; every pixel
  sees dozens of contributors.

Instance features are random unit vectors per object; the matching query
carries 4x that vector and sits at the object centroid with the object's
extent as covariance. Semantic features are class one-hots plus N(0, 0.05)
noise, decoded by an identity-like affine decoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .oracle import bruteforce_images
from .scene import INS_DIM, SEM_DIM, Camera, Scene, SemanticDecoder
from .segmentation import ALPHA_VOID, VOID

PRESETS = ("room", "thin", "stack")
CLASS_NAMES = ("floor", "wall", "box", "chair", "table", "plant", "ribbon", "sheet")
THING_FLAGS = (False, False, True, True, True, True, True, True)
FLOOR, WALL = 0, 1
THING_CLASSES = (2, 3, 4, 5)
QUERY_GAIN = 4.0
SEM_NOISE = 0.05
IMAGE_SIZE = 256
FOCAL = 220.0


@dataclass(eq=False)
class SyntheticScene:
    scene: Scene
    cameras: list[Camera]
    surfel_class: np.ndarray     # (N,) class id per surfel
    surfel_instance: np.ndarray  # (N,) 1-based instance id, 0 for stuff
    preset: str
    seed: int
    _gt_cache: dict = field(default_factory=dict, repr=False)

    def label_vectors(self) -> np.ndarray:
        """One-hot class block followed by one-hot instance block, per surfel."""
        nc = self.scene.decoder.num_classes
        m = self.scene.n_queries
        out = np.zeros((self.scene.n_surfels, nc + m))
        out[np.arange(self.scene.n_surfels), self.surfel_class] = 1.0
        things = self.surfel_instance > 0
        out[np.flatnonzero(things), nc + self.surfel_instance[things] - 1] = 1.0
        return out

    def ground_truth(self, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
        """GT (class, instance) maps: full-accumulation blend of the true one-hot labels."""
        key = json_key(camera)
        if key not in self._gt_cache:
            nc = self.scene.decoder.num_classes
            _, _, alpha, feat = bruteforce_images(self.scene, camera, self.label_vectors())
            cls = np.full(alpha.shape, VOID, dtype=np.int32)
            inst = np.zeros(alpha.shape, dtype=np.int32)
            solid = alpha > ALPHA_VOID
            arg = np.argmax(feat[:, :, :nc], axis=-1).astype(np.int32)
            cls[solid] = arg[solid]
            if self.scene.n_queries:
                things = np.asarray(THING_FLAGS)[arg] & solid
                ins = np.argmax(feat[:, :, nc:], axis=-1).astype(np.int32) + 1
                inst[things] = ins[things]
            self._gt_cache[key] = (cls, inst)
        return self._gt_cache[key]


def json_key(camera: Camera) -> tuple:
    d = camera.to_dict()
    return tuple(d["rotation"]) + tuple(d["translation"]) + (d["fx"], d["fy"], d["cx"], d["cy"],
                                                             d["width"], d["height"])


def default_decoder(sem_dim: int = SEM_DIM) -> SemanticDecoder:
    nc = len(CLASS_NAMES)
    weights = np.zeros((nc, sem_dim))
    weights[:, :nc] = np.eye(nc)
    return SemanticDecoder(weights, np.zeros(nc), CLASS_NAMES, np.array(THING_FLAGS))


class _Builder:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.rows: dict[str, list] = {k: [] for k in (
            "centers", "tangent_u", "tangent_v", "scales", "opacity", "rgb", "cls", "inst")}

    def add(self, centers, tu, tv, scales, opacity, rgb, cls, inst):
        n = len(centers)
        self.rows["centers"].append(np.asarray(centers, dtype=np.float64))
        self.rows["tangent_u"].append(np.broadcast_to(tu, (n, 3)))
        self.rows["tangent_v"].append(np.broadcast_to(tv, (n, 3)))
        self.rows["scales"].append(np.broadcast_to(scales, (n, 2)))
        self.rows["opacity"].append(np.broadcast_to(opacity, (n,)))
        self.rows["rgb"].append(np.broadcast_to(rgb, (n, 3)))
        self.rows["cls"].append(np.full(n, cls))
        self.rows["inst"].append(np.full(n, inst))

    def plane_grid(self, origin, ax_u, ax_v, len_u, len_v, count, *, cls, inst, rgb,
                   opacity=0.85, fill=0.6):
        """Grid of surfels covering the rectangle origin + [0, len_u] ax_u + [0, len_v] ax_v."""
        ax_u = np.asarray(ax_u, dtype=np.float64)
        ax_v = np.asarray(ax_v, dtype=np.float64)
        nu = max(1, round(math.sqrt(count * len_u / len_v)))
        nv = max(1, round(count / nu))
        su, sv = len_u / nu, len_v / nv
        gu, gv = np.meshgrid((np.arange(nu) + 0.5) * su, (np.arange(nv) + 0.5) * sv, indexing="ij")
        centers = np.asarray(origin) + gu.reshape(-1, 1) * ax_u + gv.reshape(-1, 1) * ax_v
        n = len(centers)
        jitter = self.rng.uniform(-0.1, 0.1, size=(n, 1))
        color = np.clip(np.asarray(rgb) + self.rng.normal(0, 0.03, size=(n, 3)), 0, 1)
        op = np.clip(opacity + jitter[:, 0] * 0.5, 0.05, 1.0)
        self.add(centers, ax_u, ax_v, [fill * su, fill * sv], op, color, cls, inst)
        return n

    def arrays(self):
        return {k: np.concatenate(v) if v else np.zeros(0) for k, v in self.rows.items()}


def _finish(builder: _Builder, m: int, rng: np.random.Generator, preset: str, seed: int,
            cameras: list[Camera]) -> SyntheticScene:
    a = builder.arrays()
    n = len(a["centers"])
    cls = a["cls"].astype(np.int64)
    inst = a["inst"].astype(np.int64)
    nc = len(CLASS_NAMES)

    sem = np.zeros((n, SEM_DIM))
    sem[np.arange(n), cls] = 1.0
    sem += rng.normal(0, SEM_NOISE, size=sem.shape)

    obj_feat = rng.normal(size=(m, INS_DIM))
    obj_feat /= np.linalg.norm(obj_feat, axis=1, keepdims=True)
    ins = np.zeros((n, INS_DIM))
    things = inst > 0
    ins[things] = obj_feat[inst[things] - 1]

    q_centers = np.zeros((m, 3))
    q_cov = np.zeros((m, 3, 3))
    for j in range(m):
        pts = a["centers"][inst == j + 1]
        q_centers[j] = pts.mean(axis=0)
        half = np.maximum(0.5 * (pts.max(axis=0) - pts.min(axis=0)), 0.05)
        q_cov[j] = np.diag(half ** 2)

    scene = Scene(
        centers=a["centers"], tangent_u=a["tangent_u"], tangent_v=a["tangent_v"],
        scales=a["scales"], opacity=a["opacity"], rgb=a["rgb"],
        sem_features=sem, ins_features=ins,
        query_centers=q_centers, query_covariances=q_cov, query_features=QUERY_GAIN * obj_feat,
        decoder=default_decoder(),
    )
    assert nc <= SEM_DIM
    return SyntheticScene(scene, cameras, cls, inst, preset, seed)


def _room(n_surfels: int, n_instances: int, rng: np.random.Generator):
    b = _Builder(rng)
    size, height = 4.0, 2.5
    half = size / 2
    ex, ey, ez = np.eye(3)

    # object footprints on a jittered grid in front of the back wall
    cols = max(1, math.ceil(math.sqrt(n_instances * 1.5)))
    rows = max(1, math.ceil(n_instances / cols))
    cell_w = 3.2 / cols
    cell_d = 2.0 / rows
    boxes = []
    for j in range(n_instances):
        r, c = divmod(j, cols)
        w = rng.uniform(0.45, 0.75) * cell_w
        d = rng.uniform(0.45, 0.75) * cell_d
        h = rng.uniform(0.3, 0.9)
        x = -1.6 + (c + 0.5) * cell_w + rng.uniform(-0.08, 0.08) * cell_w
        y = -0.4 + (r + 0.5) * cell_d + rng.uniform(-0.08, 0.08) * cell_d
        boxes.append((x - w / 2, y - d / 2, w, d, h))

    surfaces = [
        (np.array([-half, -half, 0.0]), ex, ey, size, size, FLOOR, 0, (0.55, 0.5, 0.45)),
        (np.array([-half, half, 0.0]), ex, ez, size, height, WALL, 0, (0.8, 0.8, 0.75)),
        (np.array([-half, -half, 0.0]), ey, ez, size, height, WALL, 0, (0.75, 0.78, 0.8)),
        (np.array([half, -half, 0.0]), ey, ez, size, height, WALL, 0, (0.78, 0.75, 0.8)),
    ]
    for j, (x0, y0, w, d, h) in enumerate(boxes):
        cls = THING_CLASSES[j % len(THING_CLASSES)]
        color = tuple(rng.uniform(0.15, 0.95, size=3))
        inst = j + 1
        surfaces += [
            (np.array([x0, y0, h]), ex, ey, w, d, cls, inst, color),
            (np.array([x0, y0, 0.0]), ex, ez, w, h, cls, inst, color),
            (np.array([x0, y0 + d, 0.0]), ex, ez, w, h, cls, inst, color),
            (np.array([x0, y0, 0.0]), ey, ez, d, h, cls, inst, color),
            (np.array([x0 + w, y0, 0.0]), ey, ez, d, h, cls, inst, color),
        ]
    # box bottoms rest on the floor; boxes are lifted 1 mm to avoid coplanar ties
    areas = np.array([s[3] * s[4] for s in surfaces])
    weights = areas.copy()
    weights[5:] *= 3.0  # denser sampling on objects
    counts = np.maximum(1, np.round(n_surfels * weights / weights.sum())).astype(int)
    for (origin, au, av, lu, lv, cls, inst, color), cnt in zip(surfaces, counts):
        if inst:
            origin = origin + np.array([0, 0, 1e-3])
        b.plane_grid(origin, au, av, lu, lv, cnt, cls=cls, inst=inst, rgb=color, opacity=0.9)
    cameras = [
        Camera.look_at((x, -1.85, 1.5), (x * 0.3, 0.6, 0.35), fx=FOCAL,
                       width=IMAGE_SIZE, height=IMAGE_SIZE)
        for x in (-0.9, -0.3, 0.3, 0.9)
    ]
    return b, n_instances, cameras


def _random_frames(n, rng, max_tilt):
    """Tangent frames roughly facing -y with random in-plane rotation and a small tilt."""
    theta = rng.uniform(0, np.pi, n)
    tilt_axis = rng.uniform(0, 2 * np.pi, n)
    tilt = rng.uniform(0, max_tilt, n)
    normal = np.stack([np.sin(tilt) * np.cos(tilt_axis), -np.cos(tilt), np.sin(tilt) * np.sin(tilt_axis)], axis=1)
    ref = np.stack([np.cos(theta), np.zeros(n), np.sin(theta)], axis=1)
    tu = ref - (ref * normal).sum(1, keepdims=True) * normal
    tu /= np.linalg.norm(tu, axis=1, keepdims=True)
    tv = np.cross(normal, tu)
    tv /= np.linalg.norm(tv, axis=1, keepdims=True)
    return tu, tv


def _thin(n_surfels: int, n_instances: int, rng: np.random.Generator):
    b = _Builder(rng)
    n = max(n_surfels, 1)
    k = max(n_instances, 1)
    cluster = rng.uniform([-1.4, 3.0, -1.4], [1.4, 4.5, 1.4], size=(k, 3))
    owner = np.arange(n) % k
    centers = cluster[owner] + rng.normal(0, [0.45, 0.3, 0.45], size=(n, 3))
    tu, tv = _random_frames(n, rng, np.radians(25))
    length = rng.uniform(0.18, 0.35, n)
    scales = np.stack([length, length / rng.uniform(40, 60, n)], axis=1)
    for j in range(k):
        sel = owner == j
        cls = THING_CLASSES[j % len(THING_CLASSES)] if n_instances else 6
        color = rng.uniform(0.2, 0.95, size=3)
        rgb = np.clip(color + rng.normal(0, 0.03, size=(sel.sum(), 3)), 0, 1)
        b.add(centers[sel], tu[sel], tv[sel], scales[sel], rng.uniform(0.6, 0.95, sel.sum()), rgb,
              6 if not n_instances else cls, j + 1 if n_instances else 0)
    cameras = [Camera.look_at((x, -1.0, 0.0), (0.0, 3.7, 0.0), fx=FOCAL, width=IMAGE_SIZE,
                              height=IMAGE_SIZE) for x in (-0.3, 0.3)]
    return b, n_instances, cameras


def _stack(n_surfels: int, n_instances: int, rng: np.random.Generator, layers: int = 24):
    b = _Builder(rng)
    k = max(n_instances, 1)
    cols = math.ceil(math.sqrt(k))
    rows = math.ceil(k / cols)
    span, gap = 4.4, 0.8
    cw, ch = span / cols, span / rows
    per_layer = max(1, round(n_surfels / (k * layers)))
    ex, ez = np.array([1.0, 0, 0]), np.array([0, 0, 1.0])
    for j in range(k):
        r, c = divmod(j, cols)
        # blocks are separated so that no pixel mixes two objects' labels
        x0 = -span / 2 + c * cw + gap / 2
        z0 = -span / 2 + r * ch + gap / 2
        cls = 7 if j % 2 == 0 else THING_CLASSES[j % len(THING_CLASSES)]
        color = rng.uniform(0.2, 0.95, size=3)
        for layer in range(layers):
            y = 2.3 + 1.2 * layer / max(layers - 1, 1) + rng.uniform(-0.01, 0.01)
            b.plane_grid(np.array([x0, y, z0]), ex, ez, cw - gap, ch - gap, per_layer,
                         cls=cls, inst=j + 1, rgb=color, opacity=0.1, fill=0.6)
    cameras = [Camera.look_at((x, -0.5, 0.0), (0.0, 3.0, 0.0), up=(0, 0, 1), fx=FOCAL,
                              width=IMAGE_SIZE, height=IMAGE_SIZE) for x in (0.0, 0.15)]
    return b, k, cameras


def generate_scene(preset: str = "room", n_surfels: int = 3000, n_instances: int = 6,
                   seed: int = 0) -> SyntheticScene:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    if n_surfels < 1:
        raise ValueError("n_surfels must be >= 1")
    if n_instances < 0:
        raise ValueError("n_instances must be >= 0")
    rng = np.random.default_rng(seed)
    builder_fn = {"room": _room, "thin": _thin, "stack": _stack}[preset]
    b, n_objects, cameras = builder_fn(n_surfels, n_instances, rng)
    return _finish(b, n_objects, rng, preset, seed, cameras)

"""Tile-parallel front-to-back alpha blending.

Per pixel, contributors come from the tile's depth-sorted list. Each accepted
contributor ``i`` has alpha ``a_i`` and blend weight ``w_i = a_i * T_i`` where
``T_i`` is the transmittance in front of it. RGB, depth and alpha always blend
every contributor. The high-channel feature images (semantic features and
instance distributions) either blend every contributor or, with ``top_k``,
only the ``K`` contributors of largest ``w_i``; weights are always computed
over the full list.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, field

import numba
import numpy as np
from numba import njit, prange

from .culling import TileAssignment, TileGrid, assign_tiles, mode_index
from .projection import ProjectedScene, project_scene, ray_splat, splat_alpha
from .scene import Camera, Scene
from .segmentation import decode_semantic, fuse_panoptic, instance_labels

CHANNELS = ("rgb", "depth", "alpha", "semantic", "instance", "panoptic")
FEATURE_CHANNELS = {"semantic", "instance", "panoptic"}
DEFAULT_TOP_K = 24
ALPHA_DEPTH_MIN = 1e-4


def default_threads() -> int:
    env = os.environ.get("FSGS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def set_threads(n: int | None) -> int:
    n = default_threads() if n is None else int(n)
    n = max(1, min(n, numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


@dataclass(frozen=True)
class RenderConfig:
    mode: str = "accutile"
    top_k: int | None = None
    renormalize_topk: bool = False
    channels: tuple[str, ...] = CHANNELS
    transmittance_epsilon: float = 1e-4
    tile_size: int = 16

    def __post_init__(self):
        mode_index(self.mode)
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        bad = set(self.channels) - set(CHANNELS)
        if bad:
            raise ValueError(f"unknown channels {sorted(bad)}")
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def wants_features(self) -> bool:
        return bool(FEATURE_CHANNELS & set(self.channels))


@dataclass
class RenderStats:
    rn_total: int = 0
    rn_per_tile: float = 0.0
    wall_time_ms: float = 0.0
    pixels_blended: int = 0
    feature_mads: int = 0

    @property
    def fps(self) -> float:
        return 1000.0 / self.wall_time_ms if self.wall_time_ms > 0 else float("inf")

    def to_dict(self) -> dict:
        return {
            "rn_total": self.rn_total,
            "rn_per_tile": self.rn_per_tile,
            "wall_time_ms": self.wall_time_ms,
            "fps": self.fps,
            "pixels_blended": self.pixels_blended,
            "feature_mads": self.feature_mads,
        }


@dataclass(eq=False)
class FrameBundle:
    rgb: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray
    semantic_features: np.ndarray | None = None
    semantic_logits: np.ndarray | None = None
    instance_dist: np.ndarray | None = None
    panoptic_class: np.ndarray | None = None
    panoptic_instance: np.ndarray | None = None
    stats: RenderStats = field(default_factory=RenderStats)

    ARRAYS = ("rgb", "depth", "alpha", "semantic_features", "semantic_logits",
              "instance_dist", "panoptic_class", "panoptic_instance")

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.ARRAYS if getattr(self, k) is not None}

    def digest(self) -> str:
        """Hash of every image channel (timing stats excluded)."""
        h = hashlib.sha256()
        for name, arr in self.arrays().items():
            h.update(name.encode())
            h.update(str(arr.dtype).encode() + str(arr.shape).encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


@njit(cache=True)
def topk_indices(weights, k):
    """Positions of the k largest weights (ties keep the nearer one), ascending."""
    n = len(weights)
    if n <= k:
        return np.arange(n)
    order = np.argsort(-weights, kind="mergesort")
    return np.sort(order[:k])


@njit(parallel=True, cache=True)
def _raster_kernel(offsets, ids, transforms, opacity, rgb, feats, width, height, ts, tiles_x,
                   k, eps, topk, renorm, do_feat,
                   out_rgb, out_depth, out_alpha, out_feat, tile_blended, tile_mads):
    n_tiles = len(offsets) - 1
    n_ch = feats.shape[1]
    for t in prange(n_tiles):
        s0 = offsets[t]
        s1 = offsets[t + 1]
        tx = t % tiles_x
        ty = t // tiles_x
        x0 = tx * ts
        y0 = ty * ts
        x1 = min(x0 + ts, width)
        y1 = min(y0 + ts, height)
        buf_id = np.empty(s1 - s0, dtype=np.int64)
        buf_w = np.empty(s1 - s0, dtype=np.float64)
        blended = 0
        mads = 0
        for py in range(y0, y1):
            for px in range(x0, x1):
                trans = 1.0
                cr = 0.0
                cg = 0.0
                cb = 0.0
                dacc = 0.0
                n = 0
                acc = out_feat[py, px]
                for j in range(s0, s1):
                    s = ids[j]
                    hit, u, v, d = ray_splat(transforms[s], float(px), float(py))
                    if not hit:
                        continue
                    a = splat_alpha(opacity[s], u, v, k)
                    if a == 0.0:
                        continue
                    w = a * trans
                    cr += w * rgb[s, 0]
                    cg += w * rgb[s, 1]
                    cb += w * rgb[s, 2]
                    dacc += w * d
                    if do_feat:
                        if topk == 0:
                            for c in range(n_ch):
                                acc[c] += w * feats[s, c]
                        else:
                            buf_id[n] = s
                            buf_w[n] = w
                    n += 1
                    trans *= 1.0 - a
                    if trans < eps:
                        break
                alpha = 1.0 - trans
                out_rgb[py, px, 0] = cr
                out_rgb[py, px, 1] = cg
                out_rgb[py, px, 2] = cb
                out_alpha[py, px] = alpha
                out_depth[py, px] = dacc / alpha if alpha > ALPHA_DEPTH_MIN else 0.0
                blended += n
                if do_feat:
                    if topk == 0:
                        mads += n * n_ch
                    else:
                        sel = topk_indices(buf_w[:n], topk)
                        wsum = 0.0
                        for q in sel:
                            s = buf_id[q]
                            w = buf_w[q]
                            wsum += w
                            for c in range(n_ch):
                                acc[c] += w * feats[s, c]
                        if renorm and wsum > 0.0:
                            for c in range(n_ch):
                                acc[c] /= wsum
                        mads += len(sel) * n_ch
        tile_blended[t] = blended
        tile_mads[t] = mads


@dataclass(frozen=True, eq=False)
class SurfelLabels:
    """Per-surfel label vectors blended into the feature images."""

    semantic: np.ndarray  # (N, F_s)
    instance: np.ndarray  # (N, M)

    @classmethod
    def from_scene(cls, scene: Scene) -> "SurfelLabels":
        return cls(scene.sem_features.astype(np.float64), instance_labels(scene))

    def stacked(self) -> np.ndarray:
        return np.ascontiguousarray(np.concatenate([self.semantic, self.instance], axis=1))


def rasterize(proj: ProjectedScene, assignment: TileAssignment, opacity, rgb, feats,
              config: RenderConfig):
    """Blend all tiles; returns (rgb, depth, alpha, feats, pixels_blended, feature_mads)."""
    grid = assignment.grid
    h, w = grid.height, grid.width
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    do_feat = config.wants_features and feats.shape[1] > 0
    out_rgb = np.zeros((h, w, 3))
    out_depth = np.zeros((h, w))
    out_alpha = np.zeros((h, w))
    out_feat = np.zeros((h, w, feats.shape[1] if do_feat else 0))
    tile_blended = np.zeros(grid.n_tiles, dtype=np.int64)
    tile_mads = np.zeros(grid.n_tiles, dtype=np.int64)
    _raster_kernel(assignment.offsets, assignment.surfel_ids, proj.transforms,
                   np.asarray(opacity, dtype=np.float64), np.asarray(rgb, dtype=np.float64),
                   feats if do_feat else np.zeros((len(feats), 0)),
                   w, h, grid.tile_size, grid.tiles_x, float(proj.k),
                   float(config.transmittance_epsilon), int(config.top_k or 0),
                   bool(config.renormalize_topk), do_feat,
                   out_rgb, out_depth, out_alpha, out_feat, tile_blended, tile_mads)
    return out_rgb, out_depth, out_alpha, out_feat, int(tile_blended.sum()), int(tile_mads.sum())


def assemble_bundle(scene: Scene, config: RenderConfig, rgb, depth, alpha, feat, n_sem: int) -> FrameBundle:
    """Decode feature images and fuse panoptic labels for the requested channels."""
    chans = set(config.channels)
    bundle = FrameBundle(rgb=rgb, depth=depth, alpha=alpha)
    if not config.wants_features:
        return bundle
    h, w = alpha.shape
    sem_feat = feat[:, :, :n_sem] if feat.shape[2] else np.zeros((h, w, n_sem))
    ins = feat[:, :, n_sem:] if feat.shape[2] else np.zeros((h, w, 0))
    logits = decode_semantic(sem_feat, scene.decoder)
    if "semantic" in chans or "panoptic" in chans:
        bundle.semantic_features = np.ascontiguousarray(sem_feat)
        bundle.semantic_logits = logits
    if "instance" in chans or "panoptic" in chans:
        bundle.instance_dist = np.ascontiguousarray(ins)
    if "panoptic" in chans:
        bundle.panoptic_class, bundle.panoptic_instance = fuse_panoptic(logits, ins, alpha, scene.decoder)
    return bundle


def render(scene: Scene, camera: Camera, config: RenderConfig | None = None, *,
           labels: SurfelLabels | None = None, threads: int | None = None) -> FrameBundle:
    config = config or RenderConfig()
    camera.check()
    set_threads(threads)
    start = time.perf_counter()
    if labels is None:
        labels = SurfelLabels.from_scene(scene)
    proj = project_scene(scene, camera)
    grid = TileGrid(camera.width, camera.height, config.tile_size)
    assignment = assign_tiles(proj, grid, config.mode)
    rgb, depth, alpha, feat, blended, mads = rasterize(
        proj, assignment, scene.opacity, scene.rgb, labels.stacked(), config)
    bundle = assemble_bundle(scene, config, rgb, depth, alpha, feat, labels.semantic.shape[1])
    elapsed = (time.perf_counter() - start) * 1000.0
    bundle.stats = RenderStats(
        rn_total=assignment.rn_total,
        rn_per_tile=assignment.rn_per_tile,
        wall_time_ms=elapsed,
        pixels_blended=blended,
        feature_mads=mads,
    )
    return bundle


def collect_stats(bundle: FrameBundle) -> RenderStats:
    return bundle.stats


def topk_select(contributors, k: int) -> list[int]:
    """Indices chosen from a front-to-back list of (value, alpha, transmittance)."""
    weights = np.array([float(a) * float(t) for _, a, t in contributors], dtype=np.float64)
    return [int(i) for i in topk_indices(weights, int(k))]


def topk_accumulate(contributors, k: int | None, renormalize: bool = False) -> np.ndarray:
    """Blend the value vectors of the selected contributors."""
    if not contributors:
        return np.zeros(0)
    idx = range(len(contributors)) if k is None else topk_select(contributors, k)
    out = np.zeros(np.asarray(contributors[0][0]).shape)
    wsum = 0.0
    for i in idx:
        val, a, t = contributors[i]
        out += np.asarray(val, dtype=np.float64) * (a * t)
        wsum += a * t
    if k is not None and renormalize and wsum > 0:
        out /= wsum
    return out

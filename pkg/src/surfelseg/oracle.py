"""Brute-force references for testing: an all-surfels-per-pixel renderer and
exhaustive surfel/tile overlap checks. Single-threaded, no tiling."""

from __future__ import annotations

import numpy as np
from numba import njit

from .culling import TileGrid
from .projection import ProjectedScene, project_scene, ray_splat, splat_alpha
from .raster import CHANNELS, RenderConfig, SurfelLabels, assemble_bundle
from .scene import Camera, Scene

MAX_RENDER_SURFELS = 10_000
MAX_TILE_SURFELS = 2_000


class OracleRefusal(ValueError):
    """The scene exceeds the oracle's cost guard."""


@njit(cache=True)
def _select_largest(w, k):
    """k rounds of 'take the largest remaining weight, nearest first'."""
    n = len(w)
    taken = np.zeros(n, dtype=np.bool_)
    for _ in range(min(k, n)):
        best = -1
        for i in range(n):
            if not taken[i] and (best < 0 or w[i] > w[best]):
                best = i
        taken[best] = True
    return taken


@njit(cache=True)
def _bruteforce_kernel(order, transforms, opacity, rgb, feats, width, height, k, eps,
                       topk, renorm, do_feat, out_rgb, out_depth, out_alpha, out_feat):
    n_ch = feats.shape[1]
    n_all = len(order)
    ids = np.empty(n_all, dtype=np.int64)
    ws = np.empty(n_all, dtype=np.float64)
    for py in range(height):
        for px in range(width):
            trans = 1.0
            n = 0
            for s in order:
                hit, u, v, d = ray_splat(transforms[s], float(px), float(py))
                if not hit:
                    continue
                a = splat_alpha(opacity[s], u, v, k)
                if a == 0.0:
                    continue
                w = a * trans
                out_rgb[py, px] += w * rgb[s]
                out_depth[py, px] += w * d
                ids[n] = s
                ws[n] = w
                n += 1
                trans *= 1.0 - a
                if trans < eps:
                    break
            alpha = 1.0 - trans
            out_alpha[py, px] = alpha
            out_depth[py, px] = out_depth[py, px] / alpha if alpha > 1e-4 else 0.0
            if not do_feat:
                continue
            if topk == 0:
                keep = np.ones(n, dtype=np.bool_)
            else:
                keep = _select_largest(ws[:n], topk)
            wsum = 0.0
            for q in range(n):
                if keep[q]:
                    wsum += ws[q]
                    for c in range(n_ch):
                        out_feat[py, px, c] += ws[q] * feats[ids[q], c]
            if topk > 0 and renorm and wsum > 0.0:
                for c in range(n_ch):
                    out_feat[py, px, c] /= wsum


def depth_order(proj: ProjectedScene) -> np.ndarray:
    ids = np.flatnonzero(proj.valid)
    return ids[np.lexsort((ids, proj.depths[ids]))]


def bruteforce_images(scene: Scene, camera: Camera, feats: np.ndarray, *, top_k: int | None = None,
                      renormalize_topk: bool = False, transmittance_epsilon: float = 1e-4):
    """Raw (rgb, depth, alpha, features) images blending arbitrary per-surfel vectors."""
    if scene.n_surfels > MAX_RENDER_SURFELS:
        raise OracleRefusal(f"{scene.n_surfels} surfels exceeds the oracle limit of {MAX_RENDER_SURFELS}")
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    if feats.ndim != 2 or len(feats) != scene.n_surfels:
        raise ValueError(f"expected ({scene.n_surfels}, C) label vectors, got {feats.shape}")
    proj = project_scene(scene, camera)
    h, w = camera.height, camera.width
    do_feat = feats.shape[1] > 0
    out_rgb = np.zeros((h, w, 3))
    out_depth = np.zeros((h, w))
    out_alpha = np.zeros((h, w))
    out_feat = np.zeros((h, w, feats.shape[1]))
    _bruteforce_kernel(depth_order(proj), proj.transforms, scene.opacity.astype(np.float64),
                       scene.rgb.astype(np.float64), feats, w, h, proj.k, float(transmittance_epsilon),
                       int(top_k or 0), bool(renormalize_topk), do_feat,
                       out_rgb, out_depth, out_alpha, out_feat)
    return out_rgb, out_depth, out_alpha, out_feat


def bruteforce_render(scene: Scene, camera: Camera, channels=CHANNELS, *, top_k: int | None = None,
                      renormalize_topk: bool = False, transmittance_epsilon: float = 1e-4,
                      labels: SurfelLabels | None = None):
    """Reference FrameBundle evaluated per pixel over every surfel in depth order."""
    config = RenderConfig(top_k=top_k, renormalize_topk=renormalize_topk, channels=tuple(channels),
                          transmittance_epsilon=transmittance_epsilon)
    labels = labels or SurfelLabels.from_scene(scene)
    feats = labels.stacked() if config.wants_features else np.zeros((scene.n_surfels, 0))
    rgb, depth, alpha, feat = bruteforce_images(
        scene, camera, feats, top_k=top_k, renormalize_topk=renormalize_topk,
        transmittance_epsilon=transmittance_epsilon)
    return assemble_bundle(scene, config, rgb, depth, alpha, feat, labels.semantic.shape[1])


def ellipse_rect_min(inv_cov, center, rect):
    """Minimum of (x - c)^T P (x - c) over rectangles (x0, x1, y0, y1).

    Closed form: zero if the center is inside, otherwise the best of the four
    edge minima, each a clamped 1-D quadratic. ``rect`` may be (..., 4).
    """
    a, b, c = inv_cov[0, 0], inv_cov[0, 1], inv_cov[1, 1]
    rect = np.asarray(rect, dtype=np.float64)
    x0 = rect[..., 0] - center[0]
    x1 = rect[..., 1] - center[0]
    y0 = rect[..., 2] - center[1]
    y1 = rect[..., 3] - center[1]

    def q(dx, dy):
        return a * dx * dx + 2 * b * dx * dy + c * dy * dy

    cands = []
    for dx in (x0, x1):
        cands.append(q(dx, np.clip(-b * dx / c, y0, y1)))
    for dy in (y0, y1):
        cands.append(q(np.clip(-b * dy / a, x0, x1), dy))
    best = np.minimum.reduce(cands)
    inside = (x0 <= 0) & (x1 >= 0) & (y0 <= 0) & (y1 >= 0)
    best = np.where(inside, 0.0, best)
    return float(best) if best.ndim == 0 else best


def dense_rect_min(inv_cov, center, rect, n: int = 64) -> float:
    """Same minimum estimated on an n x n grid spanning the rectangle."""
    xs = np.linspace(rect[0], rect[1], n) - center[0]
    ys = np.linspace(rect[2], rect[3], n) - center[1]
    dx, dy = np.meshgrid(xs, ys)
    q = inv_cov[0, 0] * dx * dx + 2 * inv_cov[0, 1] * dx * dy + inv_cov[1, 1] * dy * dy
    return float(q.min())


def bruteforce_tile_assign(scene: Scene, camera: Camera, grid: TileGrid | None = None) -> np.ndarray:
    """(N, n_tiles) bool: does surfel i's screen ellipse meet tile t (closed form)?"""
    if scene.n_surfels > MAX_TILE_SURFELS:
        raise OracleRefusal(f"{scene.n_surfels} surfels exceeds the tile oracle limit of {MAX_TILE_SURFELS}")
    grid = grid or TileGrid.for_camera(camera)
    proj = project_scene(scene, camera)
    out = np.zeros((scene.n_surfels, grid.n_tiles), dtype=bool)
    rects = np.array([grid.tile_rect(t % grid.tiles_x, t // grid.tiles_x) for t in range(grid.n_tiles)])
    k2 = proj.k * proj.k
    for i in np.flatnonzero(proj.valid):
        a, b, c = proj.conics[i, :3]
        out[i] = ellipse_rect_min(np.array([[a, b], [b, c]]), proj.centers[i], rects) <= k2
    return out


@njit(cache=True)
def _pixel_coverage_kernel(valid, transforms, k, width, height, ts, tiles_x, out):
    k2 = k * k
    for i in range(len(valid)):
        if not valid[i]:
            continue
        for py in range(height):
            for px in range(width):
                hit, u, v, _ = ray_splat(transforms[i], float(px), float(py))
                if hit and u * u + v * v <= k2:
                    out[i, (py // ts) * tiles_x + px // ts] = True


def bruteforce_pixel_coverage(scene: Scene, camera: Camera, grid: TileGrid | None = None) -> np.ndarray:
    """(N, n_tiles) bool: does any pixel of tile t see density >= exp(-k^2/2) from surfel i?"""
    if scene.n_surfels > MAX_TILE_SURFELS:
        raise OracleRefusal(f"{scene.n_surfels} surfels exceeds the tile oracle limit of {MAX_TILE_SURFELS}")
    grid = grid or TileGrid.for_camera(camera)
    proj = project_scene(scene, camera)
    out = np.zeros((scene.n_surfels, grid.n_tiles), dtype=np.bool_)
    _pixel_coverage_kernel(proj.valid, proj.transforms, proj.k, grid.width, grid.height,
                           grid.tile_size, grid.tiles_x, out)
    return out


@njit(cache=True)
def _overlap_kernel(order, transforms, opacity, k, width, height, out):
    for py in range(height):
        for px in range(width):
            n = 0
            for s in order:
                hit, u, v, _ = ray_splat(transforms[s], float(px), float(py))
                if hit and splat_alpha(opacity[s], u, v, k) > 0.0:
                    n += 1
            out[py, px] = n


def overlap_counts(scene: Scene, camera: Camera) -> np.ndarray:
    """Per-pixel count of surfels with non-negligible alpha, ignoring early termination."""
    proj = project_scene(scene, camera)
    out = np.zeros((camera.height, camera.width), dtype=np.int64)
    _overlap_kernel(depth_order(proj), proj.transforms, scene.opacity.astype(np.float64),
                    proj.k, camera.width, camera.height, out)
    return out

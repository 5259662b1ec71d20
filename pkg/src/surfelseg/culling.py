"""Surfel-to-tile assignment.

Three culling modes over the same screen ellipse:

* ``loose``: square box of radius k * sqrt(largest eigenvalue of the covariance).
* ``snug``: exact axis-aligned extremes of the ellipse.
* ``accutile``: per tile-row (or tile-column) exact spans from the conic's
  quadratic, so only tiles the ellipse actually crosses are listed.

Tile ``(tx, ty)`` covers the continuous rectangle
``[tx*ts, (tx+1)*ts] x [ty*ts, (ty+1)*ts]`` clipped to ``[0, W] x [0, H]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .projection import ProjectedScene

MODES = ("loose", "snug", "accutile")
LOOSE, SNUG, ACCUTILE = 0, 1, 2
TILE_SIZE = 16
# absorbs rounding in extreme/root computations; keeps culling conservative
PAD = 1e-6


@dataclass(frozen=True)
class TileGrid:
    width: int
    height: int
    tile_size: int = TILE_SIZE

    @property
    def tiles_x(self) -> int:
        return -(-self.width // self.tile_size)

    @property
    def tiles_y(self) -> int:
        return -(-self.height // self.tile_size)

    @property
    def n_tiles(self) -> int:
        return self.tiles_x * self.tiles_y

    def tile_rect(self, tx: int, ty: int) -> tuple[float, float, float, float]:
        ts = self.tile_size
        return (float(tx * ts), float(min((tx + 1) * ts, self.width)),
                float(ty * ts), float(min((ty + 1) * ts, self.height)))

    @classmethod
    def for_camera(cls, camera, tile_size: int = TILE_SIZE) -> "TileGrid":
        return cls(camera.width, camera.height, tile_size)


@dataclass(frozen=True)
class SnugBox:
    pixel_box: tuple[float, float, float, float]  # x0, x1, y0, y1
    tile_box: tuple[int, int, int, int] | None     # tx0, tx1, ty0, ty1 inclusive


@dataclass(frozen=True, eq=False)
class TileAssignment:
    """Per-tile surfel lists, each sorted by (depth, id)."""

    grid: TileGrid
    offsets: np.ndarray     # (n_tiles + 1,)
    surfel_ids: np.ndarray  # (rn_total,)
    depths: np.ndarray      # (rn_total,)
    mode: str

    @property
    def rn_total(self) -> int:
        return int(len(self.surfel_ids))

    @property
    def nonempty_tiles(self) -> int:
        return int(np.count_nonzero(np.diff(self.offsets)))

    @property
    def rn_per_tile(self) -> float:
        ne = self.nonempty_tiles
        return self.rn_total / ne if ne else 0.0

    def tile_list(self, tx: int, ty: int) -> np.ndarray:
        t = ty * self.grid.tiles_x + tx
        return self.surfel_ids[self.offsets[t]:self.offsets[t + 1]]

    def pairs(self) -> set[tuple[int, int]]:
        """Set of (surfel id, tile index)."""
        tiles = np.repeat(np.arange(self.grid.n_tiles), np.diff(self.offsets))
        return set(zip(self.surfel_ids.tolist(), tiles.tolist()))


@njit(cache=True)
def _tile_range(lo, hi, extent, ts, ntiles):
    """Inclusive tile index range covering [lo, hi] within [0, extent]; (0, -1) if empty."""
    if hi < 0.0 or lo > extent or lo > hi:
        return 0, -1
    lo = max(lo, 0.0)
    hi = min(hi, float(extent))
    t0 = int(math.floor(lo / ts))
    t1 = min(int(math.floor(hi / ts)), ntiles - 1)
    return t0, t1


@njit(cache=True)
def _loose_radius(sxx, sxy, syy, k):
    mid = 0.5 * (sxx + syy)
    disc = math.sqrt(max(0.25 * (sxx - syy) ** 2 + sxy * sxy, 0.0))
    return k * math.sqrt(mid + disc) + PAD


@njit(cache=True)
def _axis_span(a, b, c, d, e, f, xc, yc, sxx, sxy, syy, k, lo, hi):
    """x-extent of the ellipse within the horizontal band y in [lo, hi].

    Uses the row quadratic a x^2 + (2b y + 2d) x + (c y^2 + 2e y + f) = 0 at the
    clipped band edges plus the leftmost/rightmost points of the ellipse.
    Returns (ok, xmin, xmax).
    """
    ry = k * math.sqrt(syy)
    y0 = max(lo, yc - ry)
    y1 = min(hi, yc + ry)
    if y0 > y1:
        return False, 0.0, 0.0
    xmin = math.inf
    xmax = -math.inf
    for y in (y0, y1):
        bb = b * y + d
        cc = c * y * y + 2.0 * e * y + f
        disc = bb * bb - a * cc
        if disc < 0.0:
            disc = 0.0
        sq = math.sqrt(disc)
        xl = (-bb - sq) / a
        xr = (-bb + sq) / a
        xmin = min(xmin, xl)
        xmax = max(xmax, xr)
    rx = k * math.sqrt(sxx)
    off = k * sxy / math.sqrt(sxx)
    # leftmost point (xc - rx, yc - off), rightmost (xc + rx, yc + off)
    if y0 <= yc - off <= y1:
        xmin = min(xmin, xc - rx)
    if y0 <= yc + off <= y1:
        xmax = max(xmax, xc + rx)
    return True, xmin - PAD, xmax + PAD


@njit(cache=True)
def _surfel_tiles(mode, conic, center, cov, k, width, height, ts, tiles_x, tiles_y, out, write):
    """Count (and optionally write into ``out``) the tile indices of one surfel."""
    a, b, c, d, e, f = conic[0], conic[1], conic[2], conic[3], conic[4], conic[5]
    xc, yc = center[0], center[1]
    sxx, sxy, syy = cov[0], cov[1], cov[2]
    if mode == LOOSE:
        r = _loose_radius(sxx, sxy, syy, k)
        rx = r
        ry = r
    else:
        rx = k * math.sqrt(sxx) + PAD
        ry = k * math.sqrt(syy) + PAD
    tx0, tx1 = _tile_range(xc - rx, xc + rx, width, ts, tiles_x)
    ty0, ty1 = _tile_range(yc - ry, yc + ry, height, ts, tiles_y)
    if tx0 > tx1 or ty0 > ty1:
        return 0
    n = 0
    if mode != ACCUTILE:
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                if write:
                    out[n] = ty * tiles_x + tx
                n += 1
        return n
    # outer loop over the shorter tile span
    if (ty1 - ty0) <= (tx1 - tx0):
        for ty in range(ty0, ty1 + 1):
            lo = float(ty * ts)
            hi = float(min((ty + 1) * ts, height))
            ok, x0, x1 = _axis_span(a, b, c, d, e, f, xc, yc, sxx, sxy, syy, k, lo, hi)
            if not ok:
                continue
            c0, c1 = _tile_range(x0, x1, width, ts, tiles_x)
            c0 = max(c0, tx0)
            c1 = min(c1, tx1)
            for tx in range(c0, c1 + 1):
                if write:
                    out[n] = ty * tiles_x + tx
                n += 1
    else:
        # transposed problem: swap the roles of x and y
        for tx in range(tx0, tx1 + 1):
            lo = float(tx * ts)
            hi = float(min((tx + 1) * ts, width))
            ok, y0, y1 = _axis_span(c, b, a, e, d, f, yc, xc, syy, sxy, sxx, k, lo, hi)
            if not ok:
                continue
            r0, r1 = _tile_range(y0, y1, height, ts, tiles_y)
            r0 = max(r0, ty0)
            r1 = min(r1, ty1)
            for ty in range(r0, r1 + 1):
                if write:
                    out[n] = ty * tiles_x + tx
                n += 1
    return n


@njit(parallel=True, cache=True)
def _count_all(mode, conics, centers, covs, valid, k, width, height, ts, tiles_x, tiles_y):
    n = len(valid)
    counts = np.zeros(n, dtype=np.int64)
    dummy = np.zeros(1, dtype=np.int64)
    for i in prange(n):
        if valid[i]:
            counts[i] = _surfel_tiles(mode, conics[i], centers[i], covs[i], k, width, height,
                                      ts, tiles_x, tiles_y, dummy, False)
    return counts


@njit(parallel=True, cache=True)
def _fill_all(mode, conics, centers, covs, valid, k, width, height, ts, tiles_x, tiles_y, starts, out):
    n = len(valid)
    for i in prange(n):
        if valid[i]:
            s = starts[i]
            e = starts[i + 1]
            _surfel_tiles(mode, conics[i], centers[i], covs[i], k, width, height,
                          ts, tiles_x, tiles_y, out[s:e], True)


def mode_index(mode: str) -> int:
    try:
        return MODES.index(mode)
    except ValueError:
        raise ValueError(f"unknown culling mode {mode!r}; expected one of {MODES}") from None


def surfel_tile_pairs(proj: ProjectedScene, grid: TileGrid, mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Flat (surfel id, tile index) arrays, grouped by surfel in id order."""
    m = mode_index(mode)
    args = (m, proj.conics, proj.centers, proj.covariances, proj.valid, float(proj.k),
            grid.width, grid.height, grid.tile_size, grid.tiles_x, grid.tiles_y)
    counts = _count_all(*args)
    starts = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    tiles = np.empty(starts[-1], dtype=np.int64)
    _fill_all(*args, starts, tiles)
    ids = np.repeat(np.arange(len(counts), dtype=np.int64), counts)
    return ids, tiles


def assign_tiles(proj: ProjectedScene, grid: TileGrid, mode: str = "accutile") -> TileAssignment:
    ids, tiles = surfel_tile_pairs(proj, grid, mode)
    depth = proj.depths[ids]
    order = np.lexsort((ids, depth, tiles))
    tiles = tiles[order]
    offsets = np.searchsorted(tiles, np.arange(grid.n_tiles + 1), side="left").astype(np.int64)
    return TileAssignment(grid, offsets, ids[order], depth[order], mode)


# Scalar views used for inspection and tests; they run the same kernels.

def _conic_arrays(conic):
    arr = np.array([conic.A, conic.B, conic.C, conic.D, conic.E, conic.F], dtype=np.float64)
    cov = conic.covariance
    return arr, np.asarray(conic.center, dtype=np.float64), np.array([cov[0, 0], cov[0, 1], cov[1, 1]])


def _tile_set(conic, grid: TileGrid, mode: int) -> set[tuple[int, int]]:
    arr, center, cov = _conic_arrays(conic)
    args = (mode, arr, center, cov, float(conic.k), grid.width, grid.height,
            grid.tile_size, grid.tiles_x, grid.tiles_y)
    n = _surfel_tiles(*args, np.zeros(1, dtype=np.int64), False)
    out = np.zeros(max(n, 1), dtype=np.int64)
    _surfel_tiles(*args, out, True)
    return {(int(t % grid.tiles_x), int(t // grid.tiles_x)) for t in out[:n]}


def tile_set(conic, grid: TileGrid, mode: str) -> set[tuple[int, int]]:
    """All (tx, ty) assigned to one conic under ``mode``."""
    return _tile_set(conic, grid, mode_index(mode))


def loose_aabb_tiles(conic, grid: TileGrid) -> tuple[int, int, int, int] | None:
    """Inclusive (tx0, tx1, ty0, ty1) of the circumscribed square, or None if off-grid."""
    cov = conic.covariance
    r = _loose_radius(cov[0, 0], cov[0, 1], cov[1, 1], conic.k)
    xc, yc = conic.center
    tx0, tx1 = _tile_range(xc - r, xc + r, grid.width, grid.tile_size, grid.tiles_x)
    ty0, ty1 = _tile_range(yc - r, yc + r, grid.height, grid.tile_size, grid.tiles_y)
    if tx0 > tx1 or ty0 > ty1:
        return None
    return tx0, tx1, ty0, ty1


def snugbox_bounds(conic, grid: TileGrid) -> SnugBox:
    cov = conic.covariance
    rx = conic.k * math.sqrt(cov[0, 0])
    ry = conic.k * math.sqrt(cov[1, 1])
    xc, yc = conic.center
    box = (xc - rx, xc + rx, yc - ry, yc + ry)
    tx0, tx1 = _tile_range(box[0] - PAD, box[1] + PAD, grid.width, grid.tile_size, grid.tiles_x)
    ty0, ty1 = _tile_range(box[2] - PAD, box[3] + PAD, grid.height, grid.tile_size, grid.tiles_y)
    tiles = None if (tx0 > tx1 or ty0 > ty1) else (tx0, tx1, ty0, ty1)
    return SnugBox(box, tiles)


def accutile_row_spans(conic, grid: TileGrid, snug: SnugBox | None = None) -> dict[int, tuple[int, int]]:
    """Map tile row -> inclusive tile column span crossed by the ellipse in that row."""
    snug = snug or snugbox_bounds(conic, grid)
    if snug.tile_box is None:
        return {}
    tx0, tx1, ty0, ty1 = snug.tile_box
    arr, center, cov = _conic_arrays(conic)
    ts = grid.tile_size
    spans = {}
    for ty in range(ty0, ty1 + 1):
        lo, hi = float(ty * ts), float(min((ty + 1) * ts, grid.height))
        ok, x0, x1 = _axis_span(*arr, center[0], center[1], cov[0], cov[1], cov[2], conic.k, lo, hi)
        if not ok:
            continue
        c0, c1 = _tile_range(x0, x1, grid.width, ts, grid.tiles_x)
        c0, c1 = max(c0, tx0), min(c1, tx1)
        if c0 <= c1:
            spans[ty] = (c0, c1)
    return spans

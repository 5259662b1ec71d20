"""Surfel-to-screen projection.

Pixel ``(i, j)`` samples the continuous screen point ``(i, j)``. A surfel's
tangent plane maps to homogeneous screen coordinates through a 3x3
homography ``T`` (rows ``T1``, ``T2``, ``Tw``), so the image of the cutoff
disk ``u^2 + v^2 <= k^2`` is an exact conic. That conic is what culling uses;
blending evaluates density through the exact ray-splat intersection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .scene import Camera, Scene, Surfel

K_CUTOFF = 3.0
Z_NEAR = 0.01
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.999
DET_EPS = 1e-9


@dataclass(frozen=True)
class TangentTransform:
    matrix: np.ndarray

    @property
    def T1(self) -> np.ndarray:
        return self.matrix[0]

    @property
    def T2(self) -> np.ndarray:
        return self.matrix[1]

    @property
    def Tw(self) -> np.ndarray:
        return self.matrix[2]

    def apply(self, u: float, v: float) -> np.ndarray:
        """Perspective-divided screen position of tangent point (u, v)."""
        x = self.matrix @ np.array([u, v, 1.0])
        return x[:2] / x[2]


@dataclass(frozen=True)
class Conic:
    """Screen ellipse ``A x^2 + 2Bxy + C y^2 + 2Dx + 2Ey + F <= 0``."""

    A: float
    B: float
    C: float
    D: float
    E: float
    F: float
    center: np.ndarray
    k: float

    @property
    def inverse_covariance(self) -> np.ndarray:
        return np.array([[self.A, self.B], [self.B, self.C]])

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.inverse_covariance)

    def q(self, x, y):
        return (self.A * x * x + 2 * self.B * x * y + self.C * y * y
                + 2 * self.D * x + 2 * self.E * y + self.F)


@dataclass(frozen=True, eq=False)
class ProjectedScene:
    """Per-surfel projection results for one camera (float64)."""

    transforms: np.ndarray   # (N, 3, 3)
    depths: np.ndarray       # (N,) camera-space z of centers
    valid: np.ndarray        # (N,) bool: accepted for rendering
    conics: np.ndarray       # (N, 6) A, B, C, D, E, F
    centers: np.ndarray      # (N, 2) ellipse center
    covariances: np.ndarray  # (N, 3) Sxx, Sxy, Syy of the screen covariance
    k: float

    @property
    def n(self) -> int:
        return len(self.depths)

    def conic(self, i: int) -> Conic:
        a, b, c, d, e, f = self.conics[i]
        return Conic(a, b, c, d, e, f, self.centers[i].copy(), self.k)

    def transform(self, i: int) -> TangentTransform:
        return TangentTransform(self.transforms[i].copy())


def _intrinsics(camera: Camera) -> np.ndarray:
    return np.array([[camera.fx, 0.0, camera.cx], [0.0, camera.fy, camera.cy], [0.0, 0.0, 1.0]])


def transforms_for(centers, tangent_u, tangent_v, scales, camera: Camera) -> np.ndarray:
    """Batched homographies: columns are K R (r_u t_u), K R (r_v t_v), K (R p + t)."""
    kr = _intrinsics(camera) @ camera.rotation
    kt = _intrinsics(camera) @ camera.translation
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    tu = np.asarray(tangent_u, dtype=np.float64).reshape(-1, 3)
    tv = np.asarray(tangent_v, dtype=np.float64).reshape(-1, 3)
    sc = np.asarray(scales, dtype=np.float64).reshape(-1, 2)
    out = np.empty((len(centers), 3, 3))
    out[:, :, 0] = (tu * sc[:, :1]) @ kr.T
    out[:, :, 1] = (tv * sc[:, 1:]) @ kr.T
    out[:, :, 2] = centers @ kr.T + kt
    return out


def view_depths(centers, camera: Camera) -> np.ndarray:
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    return centers @ camera.rotation[2] + camera.translation[2]


def view_depth(surfel: Surfel, camera: Camera) -> float:
    return float(view_depths(surfel.center, camera)[0])


def tangent_to_screen_transform(surfel: Surfel, camera: Camera) -> TangentTransform | None:
    """Homography for one surfel, or None when its center is not beyond the near plane."""
    t = transforms_for(surfel.center, surfel.tangent_u, surfel.tangent_v,
                       [surfel.scale_u, surfel.scale_v], camera)[0]
    if not np.all(np.isfinite(t)) or t[2, 2] <= Z_NEAR:
        return None
    return TangentTransform(t)


def conics_from_transforms(transforms: np.ndarray, k: float = K_CUTOFF):
    """Exact screen conics of the cutoff disks; returns (conics, centers, covs, valid)."""
    t = np.asarray(transforms, dtype=np.float64).reshape(-1, 3, 3)
    n = len(t)
    conics = np.zeros((n, 6))
    centers = np.zeros((n, 2))
    covs = np.zeros((n, 3))
    if n == 0:
        return conics, centers, covs, np.zeros(0, dtype=bool)

    tw = t[:, 2, :]
    # the whole disk must sit in front of the near plane for its image to be an ellipse
    w_min = tw[:, 2] - k * np.hypot(tw[:, 0], tw[:, 1])
    det = np.linalg.det(t)
    valid = np.isfinite(det) & (np.abs(det) > DET_EPS) & (w_min > Z_NEAR) & (tw[:, 2] > Z_NEAR)

    tinv = np.zeros_like(t)
    tinv[valid] = np.linalg.inv(t[valid])
    # homogeneous screen x lies on the conic iff (T^-1 x)^T diag(1, 1, -k^2) (T^-1 x) = 0
    g = np.array([1.0, 1.0, -k * k])
    m = np.einsum("nji,j,njk->nik", tinv, g, tinv)
    s = m[:, :2, :2]
    lin = m[:, :2, 2]
    h = m[:, 2, 2]
    s_det = s[:, 0, 0] * s[:, 1, 1] - s[:, 0, 1] * s[:, 1, 0]
    valid &= (s[:, 0, 0] > 0) & (s_det > 0)

    safe = np.where(valid, s_det, 1.0)
    cx = -(s[:, 1, 1] * lin[:, 0] - s[:, 0, 1] * lin[:, 1]) / safe
    cy = -(-s[:, 1, 0] * lin[:, 0] + s[:, 0, 0] * lin[:, 1]) / safe
    r = (s[:, 0, 0] * cx * cx + 2 * s[:, 0, 1] * cx * cy + s[:, 1, 1] * cy * cy) - h
    valid &= r > 0

    scale = np.where(valid, k * k / np.where(r > 0, r, 1.0), 0.0)
    a = s[:, 0, 0] * scale
    b = 0.5 * (s[:, 0, 1] + s[:, 1, 0]) * scale
    c = s[:, 1, 1] * scale
    inv_det = np.where(valid, 1.0 / np.where(valid, a * c - b * b, 1.0), 0.0)
    conics[:, 0] = a
    conics[:, 1] = b
    conics[:, 2] = c
    conics[:, 3] = -(a * cx + b * cy)
    conics[:, 4] = -(b * cx + c * cy)
    conics[:, 5] = a * cx * cx + 2 * b * cx * cy + c * cy * cy - k * k
    centers[:, 0] = cx
    centers[:, 1] = cy
    covs[:, 0] = c * inv_det
    covs[:, 1] = -b * inv_det
    covs[:, 2] = a * inv_det
    valid &= np.all(np.isfinite(conics), axis=1) & np.all(np.isfinite(covs), axis=1)
    conics[~valid] = 0.0
    centers[~valid] = 0.0
    covs[~valid] = 0.0
    return conics, centers, covs, valid


def project_conic(t: TangentTransform, k: float = K_CUTOFF) -> Conic | None:
    """Conic of the disk ``u^2 + v^2 <= k^2`` in screen space, or None if degenerate."""
    conics, centers, _, valid = conics_from_transforms(t.matrix[None], k)
    if not valid[0]:
        return None
    a, b, c, d, e, f = conics[0]
    return Conic(a, b, c, d, e, f, centers[0], k)


def linearized_covariance(t: TangentTransform) -> np.ndarray:
    """First-order screen covariance J J^T of the perspective map at the surfel center."""
    m = t.matrix
    w = m[2, 2]
    xs, ys = m[0, 2], m[1, 2]
    jac = np.array([
        [(m[0, 0] * w - xs * m[2, 0]) / w**2, (m[0, 1] * w - xs * m[2, 1]) / w**2],
        [(m[1, 0] * w - ys * m[2, 0]) / w**2, (m[1, 1] * w - ys * m[2, 1]) / w**2],
    ])
    cov = jac @ jac.T
    return 0.5 * (cov + cov.T)


def project_scene(scene: Scene, camera: Camera, k: float = K_CUTOFF) -> ProjectedScene:
    transforms = transforms_for(scene.centers, scene.tangent_u, scene.tangent_v, scene.scales, camera)
    depths = view_depths(scene.centers, camera)
    conics, centers, covs, valid = conics_from_transforms(transforms, k)
    valid &= depths > Z_NEAR
    return ProjectedScene(transforms, depths, valid, conics, centers, covs, float(k))


@njit(cache=True)
def ray_splat(t, x, y):
    """Intersect the ray through screen point (x, y) with a surfel plane.

    Returns (hit, u, v, depth) where (u, v) are tangent coordinates.
    """
    h10 = t[0, 0] - x * t[2, 0]
    h11 = t[0, 1] - x * t[2, 1]
    h12 = t[0, 2] - x * t[2, 2]
    h20 = t[1, 0] - y * t[2, 0]
    h21 = t[1, 1] - y * t[2, 1]
    h22 = t[1, 2] - y * t[2, 2]
    det = h10 * h21 - h11 * h20
    if abs(det) < DET_EPS:
        return False, 0.0, 0.0, 0.0
    u = (h11 * h22 - h12 * h21) / det
    v = (h12 * h20 - h10 * h22) / det
    depth = t[2, 0] * u + t[2, 1] * v + t[2, 2]
    if depth <= Z_NEAR:
        return False, 0.0, 0.0, 0.0
    return True, u, v, depth


@njit(cache=True)
def splat_alpha(opacity, u, v, k):
    """Blending alpha at tangent point (u, v); 0 outside the cutoff or below 1/255."""
    rho = u * u + v * v
    if rho > k * k:
        return 0.0
    a = opacity * math.exp(-0.5 * rho)
    if a > ALPHA_MAX:
        a = ALPHA_MAX
    if a < ALPHA_MIN:
        return 0.0
    return a


def ray_splat_intersect(t: TangentTransform, pixel) -> tuple[float, float, float] | None:
    hit, u, v, depth = ray_splat(np.ascontiguousarray(t.matrix, dtype=np.float64),
                                 float(pixel[0]), float(pixel[1]))
    if not hit:
        return None
    return u, v, depth


def density(u: float, v: float) -> float:
    return math.exp(-0.5 * (u * u + v * v))

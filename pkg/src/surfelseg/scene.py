"""Scene data model and the FSGS binary scene format.

Layout (all little-endian)::

    b"FSGS"  u32 version  u32 n_surfels  u32 n_queries  u32 sem_dim  u32 ins_dim  u32 n_classes
    float32: centers N*3, tangent_u N*3, tangent_v N*3, scales N*2, opacity N, rgb N*3,
             sem_features N*sem_dim, ins_features N*ins_dim,
             query_centers M*3, query_covariances M*9 (row-major), query_features M*ins_dim,
             decoder_weights n_classes*sem_dim, decoder_bias n_classes
    n_classes x (u32 byte length, UTF-8 name)
    n_classes x u8 thing flag
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"FSGS"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4s6I")

SEM_DIM = 16
INS_DIM = 32

UNIT_TOL = 1e-4
SYM_TOL = 1e-6
ROT_TOL = 1e-6


class FormatError(ValueError):
    """Raised when a scene file is not a readable FSGS file."""


class ValidationError(ValueError):
    """Raised when a scene violates an invariant; ``index`` names the record."""

    def __init__(self, message: str, kind: str = "", index: int | None = None):
        super().__init__(message)
        self.kind = kind
        self.index = index


@dataclass(frozen=True)
class Surfel:
    center: np.ndarray
    tangent_u: np.ndarray
    tangent_v: np.ndarray
    scale_u: float
    scale_v: float
    opacity: float
    rgb: np.ndarray
    sem_feature: np.ndarray
    ins_feature: np.ndarray
    id: int = 0


@dataclass(frozen=True)
class InstanceQuery:
    center: np.ndarray
    covariance: np.ndarray
    feature: np.ndarray
    query_id: int = 0


@dataclass(frozen=True)
class SemanticDecoder:
    """Affine map from blended semantic features to class logits."""

    weights: np.ndarray
    bias: np.ndarray
    class_names: tuple[str, ...] = ()
    thing_flags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self):
        object.__setattr__(self, "weights", np.ascontiguousarray(self.weights, dtype=np.float32))
        object.__setattr__(self, "bias", np.ascontiguousarray(self.bias, dtype=np.float32))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "thing_flags", np.asarray(self.thing_flags, dtype=bool))

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @classmethod
    def empty(cls, sem_dim: int = SEM_DIM) -> "SemanticDecoder":
        return cls(np.zeros((0, sem_dim)), np.zeros(0), (), np.zeros(0, dtype=bool))


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; ``rotation``/``translation`` map world points into camera space (+z forward)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    def check(self) -> None:
        """Raise ValidationError if the camera invariants do not hold."""
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("invalid focal length", "focal")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("invalid image size", "size")
        r = self.rotation
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(self.translation))):
            raise ValidationError("invalid rotation", "rotation")
        if np.max(np.abs(r @ r.T - np.eye(3))) > ROT_TOL or np.linalg.det(r) < 0:
            raise ValidationError("invalid rotation", "rotation")

    @property
    def position(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), *, fx=220.0, fy=None,
                width=256, height=256, cx=None, cy=None) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        return cls(
            fx=float(fx),
            fy=float(fy if fy is not None else fx),
            cx=float(cx if cx is not None else width / 2),
            cy=float(cy if cy is not None else height / 2),
            width=width,
            height=height,
            rotation=rot,
            translation=-rot @ eye,
        )

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": int(self.width),
            "height": int(self.height),
            "rotation": [float(x) for x in self.rotation.ravel()],
            "translation": [float(x) for x in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        try:
            rot = np.asarray(d["rotation"], dtype=np.float64)
            trans = np.asarray(d["translation"], dtype=np.float64)
            if rot.size != 9 or trans.size != 3:
                raise ValueError
            cam = cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                      int(d["width"]), int(d["height"]), rot, trans)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed camera record: {exc!r}", "camera") from exc
        cam.check()
        return cam


def load_trajectory(path) -> list[Camera]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    return [Camera.from_dict(d) for d in data]


def save_trajectory(cameras, path) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in cameras], indent=1))


def _f32(a, shape):
    return np.ascontiguousarray(np.asarray(a, dtype=np.float32).reshape(shape))


@dataclass(frozen=True, eq=False)
class Scene:
    """Immutable structure-of-arrays scene. Arrays are stored as float32, the on-disk precision."""

    centers: np.ndarray
    tangent_u: np.ndarray
    tangent_v: np.ndarray
    scales: np.ndarray
    opacity: np.ndarray
    rgb: np.ndarray
    sem_features: np.ndarray
    ins_features: np.ndarray
    query_centers: np.ndarray
    query_covariances: np.ndarray
    query_features: np.ndarray
    decoder: SemanticDecoder
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        n = len(np.asarray(self.centers).reshape(-1, 3))
        m = len(np.asarray(self.query_centers).reshape(-1, 3))
        sem = np.asarray(self.sem_features)
        ins = np.asarray(self.ins_features)
        qf = np.asarray(self.query_features)
        fs = sem.shape[1] if sem.ndim == 2 else SEM_DIM
        fi = ins.shape[1] if ins.ndim == 2 else (qf.shape[1] if qf.ndim == 2 else INS_DIM)
        set_ = object.__setattr__
        set_(self, "centers", _f32(self.centers, (n, 3)))
        set_(self, "tangent_u", _f32(self.tangent_u, (n, 3)))
        set_(self, "tangent_v", _f32(self.tangent_v, (n, 3)))
        set_(self, "scales", _f32(self.scales, (n, 2)))
        set_(self, "opacity", _f32(self.opacity, (n,)))
        set_(self, "rgb", _f32(self.rgb, (n, 3)))
        set_(self, "sem_features", _f32(sem, (n, fs)))
        set_(self, "ins_features", _f32(ins, (n, fi)))
        set_(self, "query_centers", _f32(self.query_centers, (m, 3)))
        set_(self, "query_covariances", _f32(self.query_covariances, (m, 3, 3)))
        set_(self, "query_features", _f32(qf, (m, fi)))
        for name in ("centers", "tangent_u", "tangent_v", "scales", "opacity", "rgb",
                     "sem_features", "ins_features", "query_centers",
                     "query_covariances", "query_features"):
            getattr(self, name).flags.writeable = False

    @property
    def n_surfels(self) -> int:
        return len(self.centers)

    @property
    def n_queries(self) -> int:
        return len(self.query_centers)

    @property
    def sem_dim(self) -> int:
        return self.sem_features.shape[1]

    @property
    def ins_dim(self) -> int:
        return self.ins_features.shape[1]

    def surfel(self, i: int) -> Surfel:
        return Surfel(
            center=self.centers[i], tangent_u=self.tangent_u[i], tangent_v=self.tangent_v[i],
            scale_u=float(self.scales[i, 0]), scale_v=float(self.scales[i, 1]),
            opacity=float(self.opacity[i]), rgb=self.rgb[i],
            sem_feature=self.sem_features[i], ins_feature=self.ins_features[i], id=i,
        )

    @property
    def surfels(self) -> list[Surfel]:
        return [self.surfel(i) for i in range(self.n_surfels)]

    def query(self, j: int) -> InstanceQuery:
        return InstanceQuery(self.query_centers[j], self.query_covariances[j],
                             self.query_features[j], j)

    @property
    def queries(self) -> list[InstanceQuery]:
        return [self.query(j) for j in range(self.n_queries)]

    @classmethod
    def from_surfels(cls, surfels, queries=(), decoder: SemanticDecoder | None = None,
                     sem_dim: int = SEM_DIM, ins_dim: int = INS_DIM) -> "Scene":
        surfels = list(surfels)
        queries = list(queries)

        def stack(items, attr, width):
            if not items:
                return np.zeros((0, width))
            return np.stack([np.asarray(getattr(s, attr), dtype=np.float64).reshape(width) for s in items])

        if surfels:
            sem_dim = len(surfels[0].sem_feature)
            ins_dim = len(surfels[0].ins_feature)
        elif queries:
            ins_dim = len(queries[0].feature)
        return cls(
            centers=stack(surfels, "center", 3),
            tangent_u=stack(surfels, "tangent_u", 3),
            tangent_v=stack(surfels, "tangent_v", 3),
            scales=np.array([[s.scale_u, s.scale_v] for s in surfels]).reshape(-1, 2),
            opacity=np.array([s.opacity for s in surfels]),
            rgb=stack(surfels, "rgb", 3),
            sem_features=stack(surfels, "sem_feature", sem_dim),
            ins_features=stack(surfels, "ins_feature", ins_dim),
            query_centers=stack(queries, "center", 3),
            query_covariances=np.array([np.asarray(q.covariance).reshape(3, 3) for q in queries]).reshape(-1, 3, 3),
            query_features=stack(queries, "feature", ins_dim),
            decoder=decoder if decoder is not None else SemanticDecoder.empty(sem_dim),
        )


def validate_scene(scene: Scene) -> list[str]:
    """Return one report per invariant violation; empty iff the scene is valid."""
    reports: list[str] = []
    n = scene.n_surfels
    per_surfel = [
        ("centers", scene.centers), ("tangent_u", scene.tangent_u), ("tangent_v", scene.tangent_v),
        ("scales", scene.scales), ("opacity", scene.opacity[:, None]), ("rgb", scene.rgb),
        ("sem_feature", scene.sem_features), ("ins_feature", scene.ins_features),
    ]
    finite = np.ones(n, dtype=bool)
    for _, arr in per_surfel:
        finite &= np.all(np.isfinite(arr), axis=1)
    tu = scene.tangent_u.astype(np.float64)
    tv = scene.tangent_v.astype(np.float64)
    nu = np.linalg.norm(tu, axis=1)
    nv = np.linalg.norm(tv, axis=1)
    dot = np.einsum("ij,ij->i", tu, tv)
    for i in range(n):
        if not finite[i]:
            reports.append(f"surfel {i}: non-finite value")
            continue
        if abs(nu[i] - 1) > UNIT_TOL or abs(nv[i] - 1) > UNIT_TOL:
            reports.append(f"surfel {i}: tangent not unit length")
        if abs(dot[i]) > UNIT_TOL:
            reports.append(f"surfel {i}: tangents not orthogonal")
        if not (scene.scales[i, 0] > 0 and scene.scales[i, 1] > 0):
            reports.append(f"surfel {i}: scale not positive")
        if not 0.0 <= scene.opacity[i] <= 1.0:
            reports.append(f"surfel {i}: opacity out of range")
        if np.any(scene.rgb[i] < 0) or np.any(scene.rgb[i] > 1):
            reports.append(f"surfel {i}: rgb out of range")

    if scene.query_features.shape[1] != scene.ins_dim and scene.n_queries:
        reports.append("scene: query feature dim does not match surfel instance feature dim")
    for j in range(scene.n_queries):
        cov = scene.query_covariances[j].astype(np.float64)
        if not (np.all(np.isfinite(cov)) and np.all(np.isfinite(scene.query_centers[j]))
                and np.all(np.isfinite(scene.query_features[j]))):
            reports.append(f"query {j}: non-finite value")
            continue
        if np.max(np.abs(cov - cov.T)) > SYM_TOL:
            reports.append(f"query {j}: covariance not symmetric")
            continue
        if np.min(np.linalg.eigvalsh(cov)) <= 0:
            reports.append(f"query {j}: not positive definite")

    dec = scene.decoder
    if dec.weights.shape != (dec.num_classes, scene.sem_dim):
        reports.append("decoder: weight shape does not match classes and semantic dim")
    if dec.bias.shape != (dec.num_classes,) or len(dec.thing_flags) != dec.num_classes:
        reports.append("decoder: bias or thing flags length does not match classes")
    elif not (np.all(np.isfinite(dec.weights)) and np.all(np.isfinite(dec.bias))):
        reports.append("decoder: non-finite value")
    return reports


def _raise_first(reports: list[str]) -> None:
    if not reports:
        return
    first = reports[0]
    head, _, detail = first.partition(": ")
    kind, _, idx = head.partition(" ")
    raise ValidationError(first, kind=detail, index=int(idx) if idx.isdigit() else None)


def scene_to_bytes(scene: Scene) -> bytes:
    dec = scene.decoder
    parts = [HEADER.pack(MAGIC, FORMAT_VERSION, scene.n_surfels, scene.n_queries,
                         scene.sem_dim, scene.ins_dim, dec.num_classes)]
    for arr in (scene.centers, scene.tangent_u, scene.tangent_v, scene.scales, scene.opacity,
                scene.rgb, scene.sem_features, scene.ins_features, scene.query_centers,
                scene.query_covariances, scene.query_features, dec.weights, dec.bias):
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    for name in dec.class_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
    parts.append(np.asarray(dec.thing_flags, dtype=np.uint8).tobytes())
    return b"".join(parts)


def save_scene(scene: Scene, path) -> None:
    Path(path).write_bytes(scene_to_bytes(scene))


def record_size(sem_dim: int = SEM_DIM, ins_dim: int = INS_DIM) -> int:
    """Bytes per surfel record."""
    return 4 * (3 + 3 + 3 + 2 + 1 + 3 + sem_dim + ins_dim)


def scene_from_bytes(buf: bytes) -> Scene:
    if len(buf) < HEADER.size:
        raise FormatError("file too short for header")
    magic, version, n, m, fs, fi, nc = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}")
    off = HEADER.size

    def take(count, shape):
        nonlocal off
        nbytes = 4 * count
        if off + nbytes > len(buf):
            raise FormatError("truncated array data")
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(shape)
        off += nbytes
        return arr.astype(np.float32)

    arrays = dict(
        centers=take(n * 3, (n, 3)),
        tangent_u=take(n * 3, (n, 3)),
        tangent_v=take(n * 3, (n, 3)),
        scales=take(n * 2, (n, 2)),
        opacity=take(n, (n,)),
        rgb=take(n * 3, (n, 3)),
        sem_features=take(n * fs, (n, fs)),
        ins_features=take(n * fi, (n, fi)),
        query_centers=take(m * 3, (m, 3)),
        query_covariances=take(m * 9, (m, 3, 3)),
        query_features=take(m * fi, (m, fi)),
    )
    weights = take(nc * fs, (nc, fs))
    bias = take(nc, (nc,))
    names = []
    for _ in range(nc):
        if off + 4 > len(buf):
            raise FormatError("truncated class names")
        (length,) = struct.unpack_from("<I", buf, off)
        off += 4
        if off + length > len(buf):
            raise FormatError("truncated class names")
        try:
            names.append(buf[off:off + length].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError("class name is not UTF-8") from exc
        off += length
    if off + nc > len(buf):
        raise FormatError("truncated thing flags")
    flags = np.frombuffer(buf, dtype=np.uint8, count=nc, offset=off).astype(bool)
    off += nc
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes")
    decoder = SemanticDecoder(weights, bias, tuple(names), flags)
    return Scene(decoder=decoder, format_version=version, **arrays)


def load_scene(path) -> Scene:
    """Read and validate an FSGS file; raises FormatError or ValidationError."""
    scene = scene_from_bytes(Path(path).read_bytes())
    _raise_first(validate_scene(scene))
    return scene

"""Four-mode ablation benchmark: loose vs AccuTile culling, full vs Top-K features.

Each mode is timed as the median of ``repeats`` frames after ``warmup``
untimed frames, cycling through the supplied cameras.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass

import numpy as np

from .evaluation import evaluate_panoptic
from .raster import DEFAULT_TOP_K, RenderConfig, render
from .scene import Camera, Scene

MODES = {
    "A": ("loose", False),
    "B": ("accutile", False),
    "C": ("loose", True),
    "D": ("accutile", True),
}


@dataclass
class BenchConfig:
    warmup: int = 3
    repeats: int = 20
    top_k: int = DEFAULT_TOP_K
    threads: int | None = None
    modes: tuple[str, ...] = ("A", "B", "C", "D")


def mode_config(name: str, top_k: int = DEFAULT_TOP_K) -> RenderConfig:
    culling, use_topk = MODES[name]
    return RenderConfig(mode=culling, top_k=top_k if use_topk else None)


def bench_mode(scene: Scene, cameras: list[Camera], name: str, config: BenchConfig,
               gt: list | None = None) -> dict:
    """One row: {mode, culling, top_k, time_ms, fps, rn_total, rn_per_tile, feature_mads, pq}."""
    rc = mode_config(name, config.top_k)
    for i in range(config.warmup):
        render(scene, cameras[i % len(cameras)], rc, threads=config.threads)
    times = []
    for i in range(config.repeats):
        times.append(render(scene, cameras[i % len(cameras)], rc, threads=config.threads).stats.wall_time_ms)

    # work counters and quality are deterministic; take one pass over the cameras
    rn, rn_tile, mads, pqs = [], [], [], []
    for j, cam in enumerate(cameras):
        b = render(scene, cam, rc, threads=config.threads)
        rn.append(b.stats.rn_total)
        rn_tile.append(b.stats.rn_per_tile)
        mads.append(b.stats.feature_mads)
        if gt is not None:
            gc, gi = gt[j]
            pqs.append(evaluate_panoptic(b.panoptic_class, b.panoptic_instance, gc, gi).pq)
    t = statistics.median(times) if times else float("nan")
    return {
        "mode": name,
        "culling": rc.mode,
        "top_k": rc.top_k,
        "time_ms": t,
        "fps": 1000.0 / t if t > 0 else float("inf"),
        "rn_total": float(np.mean(rn)),
        "rn_per_tile": float(np.mean(rn_tile)),
        "feature_mads": float(np.mean(mads)),
        "pq": float(np.mean(pqs)) if pqs else None,
    }


def run_bench(scene: Scene, cameras: list[Camera], config: BenchConfig | None = None,
              gt: list | None = None) -> list[dict]:
    config = config or BenchConfig()
    if not cameras:
        raise ValueError("at least one camera is required")
    return [bench_mode(scene, cameras, m, config, gt) for m in config.modes]


def check_monotone(rows: list[dict]) -> bool:
    """rn_total(D) <= rn_total(B) <= rn_total(A) and rn_total(D) <= rn_total(C) <= rn_total(A)."""
    rn = {r["mode"]: r["rn_total"] for r in rows}
    return rn["D"] <= rn["B"] <= rn["A"] and rn["D"] <= rn["C"] <= rn["A"]

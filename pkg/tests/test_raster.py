import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from surfelseg import RenderConfig, Scene, render
from surfelseg.oracle import (
    MAX_RENDER_SURFELS,
    OracleRefusal,
    bruteforce_images,
    bruteforce_render,
    overlap_counts,
)
from surfelseg.raster import SurfelLabels, topk_accumulate, topk_indices, topk_select

from conftest import facing_camera, make_surfel, random_scene


def max_diff(a, b):
    out = 0.0
    for name, x in a.arrays().items():
        y = getattr(b, name)
        out = max(out, float(np.max(np.abs(x.astype(np.float64) - y.astype(np.float64)))) if x.size else 0.0)
    return out


def test_single_surfel_center_pixel():
    scene = Scene.from_surfels([make_surfel(opacity=0.5, rgb=(1, 0, 0))])
    b = render(scene, facing_camera(), RenderConfig(channels=("rgb", "depth", "alpha")))
    assert np.allclose(b.rgb[128, 128], [0.5, 0, 0])
    assert b.alpha[128, 128] == pytest.approx(0.5)
    assert b.depth[128, 128] == pytest.approx(5.0)
    # 20 px right of center is tangent (1, 0)
    assert b.alpha[128, 148] == pytest.approx(0.5 * math.exp(-0.5))


def test_two_stacked_surfels():
    front = make_surfel(center=(0, 0, 1), opacity=0.5, rgb=(1, 0, 0))
    back = make_surfel(center=(0, 0, 0), opacity=0.5, rgb=(0, 0, 1))
    scene = Scene.from_surfels([back, front])
    b = render(scene, facing_camera(), RenderConfig(channels=("rgb", "alpha")))
    assert np.allclose(b.rgb[128, 128], [0.5, 0, 0.25])
    assert b.alpha[128, 128] == pytest.approx(0.75)


def test_empty_scene_renders_zero_frame():
    scene = Scene.from_surfels([])
    b = render(scene, facing_camera(size=64))
    assert not b.rgb.any() and not b.alpha.any() and not b.depth.any()
    assert b.stats.rn_total == 0 and b.stats.feature_mads == 0
    o = bruteforce_render(scene, facing_camera(size=64))
    assert max_diff(b, o) == 0.0


def test_single_surfel_matches_oracle_exactly():
    scene = Scene.from_surfels([make_surfel(tu=(0.6, 0.8, 0), tv=(-0.8, 0.6, 0), scales=(1.3, 0.4))])
    assert max_diff(render(scene, facing_camera()), bruteforce_render(scene, facing_camera())) == 0.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_scene_matches_oracle_every_mode(seed):
    scene, cam = random_scene(seed, n=400)
    ref = bruteforce_render(scene, cam)
    bundles = [render(scene, cam, RenderConfig(mode=m)) for m in ("loose", "snug", "accutile")]
    for b in bundles:
        assert max_diff(b, ref) <= 1e-5
    # culling changes work, never output
    assert bundles[0].digest() == bundles[1].digest() == bundles[2].digest()


@pytest.mark.parametrize("seed", [3, 4])
def test_topk_matches_oracle(seed):
    scene, cam = random_scene(seed, n=400)
    for renorm in (False, True):
        b = render(scene, cam, RenderConfig(top_k=3, renormalize_topk=renorm))
        o = bruteforce_render(scene, cam, top_k=3, renormalize_topk=renorm)
        assert max_diff(b, o) <= 1e-5


def test_topk_at_least_n_equals_full():
    scene, cam = random_scene(5, n=300)
    full = render(scene, cam)
    big = render(scene, cam, RenderConfig(top_k=10_000))
    assert big.digest() == full.digest()


def test_topk_renormalization_keeps_argmax(stack):
    cam = stack.cameras[0]
    a = render(stack.scene, cam, RenderConfig(top_k=24))
    b = render(stack.scene, cam, RenderConfig(top_k=24, renormalize_topk=True))
    assert np.array_equal(a.panoptic_class, b.panoptic_class)
    assert np.array_equal(a.panoptic_instance, b.panoptic_instance)


def test_early_termination_bounded():
    scene, cam = random_scene(6, n=600)
    a = render(scene, cam)
    b = render(scene, cam, RenderConfig(transmittance_epsilon=0.0))
    for name in ("rgb", "depth", "alpha", "semantic_features", "instance_dist"):
        x, y = getattr(a, name), getattr(b, name)
        scale = 1.0 if name != "depth" else max(1.0, float(np.abs(y).max()))
        assert np.max(np.abs(x - y)) <= 1e-3 * scale


def test_stats_counters():
    scene, cam = random_scene(7, n=300)
    full = render(scene, cam)
    top = render(scene, cam, RenderConfig(top_k=2))
    n_ch = scene.sem_dim + scene.n_queries
    assert full.stats.feature_mads == full.stats.pixels_blended * n_ch
    assert top.stats.feature_mads <= full.stats.feature_mads
    assert top.stats.rn_total == full.stats.rn_total
    assert full.stats.fps == pytest.approx(1000.0 / full.stats.wall_time_ms)
    rgb_only = render(scene, cam, RenderConfig(channels=("rgb",)))
    assert rgb_only.stats.feature_mads == 0
    assert rgb_only.semantic_features is None and rgb_only.panoptic_class is None


def test_topk_mads_bound_from_overlap(stack):
    # feature work per pixel is min(N, K) blended contributors
    cam = stack.cameras[0]
    full = render(stack.scene, cam)
    top = render(stack.scene, cam, RenderConfig(top_k=24))
    avg_n = overlap_counts(stack.scene, cam).mean()
    assert top.stats.feature_mads <= full.stats.feature_mads * (24 / avg_n) * 1.1


def test_topk_select_examples():
    contributors = [((1.0, 0.0), 0.5, 1.0), ((0.0, 1.0), 0.9, 0.5), ((1.0, 1.0), 0.2, 0.05)]
    # weights 0.5, 0.45, 0.01
    assert topk_select(contributors, 1) == [0]
    assert topk_select(contributors, 2) == [0, 1]
    assert topk_select(contributors, 5) == [0, 1, 2]
    assert np.allclose(topk_accumulate(contributors, 1), [0.5, 0.0])
    assert np.allclose(topk_accumulate(contributors, 1, renormalize=True), [1.0, 0.0])
    assert np.allclose(topk_accumulate(contributors, None), topk_accumulate(contributors, 3))


def test_topk_ties_prefer_nearer():
    w = np.array([0.2, 0.3, 0.3, 0.3, 0.1])
    assert list(topk_indices(w, 2)) == [1, 2]
    assert list(topk_indices(w, 1)) == [1]


@given(st.lists(st.floats(0, 1), min_size=0, max_size=40), st.integers(1, 45))
def test_topk_indices_property(weights, k):
    w = np.array(weights, dtype=np.float64)
    sel = list(topk_indices(w, k))
    assert sel == sorted(sel)
    assert len(sel) == min(k, len(w))
    if len(sel) < len(w):
        chosen = w[sel]
        rest = np.delete(w, sel)
        assert chosen.min() >= rest.max()


def test_determinism_across_threads(small_room):
    cam = small_room.cameras[0]
    digests = {render(small_room.scene, cam, RenderConfig(top_k=24), threads=t).digest() for t in (1, 2, 4, 8)}
    assert len(digests) == 1


def test_oracle_refuses_large_scene():
    rng = np.random.default_rng(0)
    n = MAX_RENDER_SURFELS + 1
    scene = Scene(centers=rng.normal(size=(n, 3)), tangent_u=np.tile([1.0, 0, 0], (n, 1)),
                  tangent_v=np.tile([0, 1.0, 0], (n, 1)), scales=np.ones((n, 2)),
                  opacity=np.full(n, 0.5), rgb=np.zeros((n, 3)), sem_features=np.zeros((n, 1)),
                  ins_features=np.zeros((n, 1)), query_centers=np.zeros((0, 3)),
                  query_covariances=np.zeros((0, 3, 3)), query_features=np.zeros((0, 1)),
                  decoder=Scene.from_surfels([]).decoder.empty(1))
    with pytest.raises(OracleRefusal):
        bruteforce_images(scene, facing_camera(size=16), np.zeros((n, 0)))


def test_custom_labels_blend_like_oracle():
    scene, cam = random_scene(8, n=200)
    rng = np.random.default_rng(8)
    labels = SurfelLabels(rng.uniform(size=(200, 4)), rng.uniform(size=(200, 3)))
    b = render(scene, cam, labels=labels)
    o = bruteforce_render(scene, cam, labels=labels)
    assert max_diff(b, o) <= 1e-5


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        RenderConfig(mode="tight")
    with pytest.raises(ValueError):
        RenderConfig(top_k=0)
    with pytest.raises(ValueError):
        RenderConfig(channels=("rgb", "normals"))

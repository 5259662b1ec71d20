import numpy as np
import pytest

from surfelseg import render, validate_scene
from surfelseg.oracle import overlap_counts
from surfelseg.projection import project_scene
from surfelseg.scene import scene_to_bytes
from surfelseg.segmentation import VOID, attention_matrix
from surfelseg.synthgen import PRESETS, generate_scene


@pytest.mark.parametrize("preset", PRESETS)
def test_seed_determinism_and_validity(preset):
    a = generate_scene(preset, 400, 3, seed=7)
    b = generate_scene(preset, 400, 3, seed=7)
    assert scene_to_bytes(a.scene) == scene_to_bytes(b.scene)
    assert validate_scene(a.scene) == []
    c = generate_scene(preset, 400, 3, seed=8)
    assert scene_to_bytes(c.scene) != scene_to_bytes(a.scene)


def test_unknown_preset_and_bad_counts():
    with pytest.raises(ValueError):
        generate_scene("forest", 10, 1, 0)
    with pytest.raises(ValueError):
        generate_scene("room", 0, 1, 0)


def test_thin_aspect_ratio(thin):
    cam = thin.cameras[0]
    proj = project_scene(thin.scene, cam)
    covs = proj.covariances[proj.valid]
    aspects = []
    for sxx, sxy, syy in covs:
        ev = np.linalg.eigvalsh([[sxx, sxy], [sxy, syy]])
        aspects.append(np.sqrt(ev[1] / ev[0]))
    assert np.mean(aspects) >= 20
    assert thin.scene.n_surfels >= 500


def test_stack_median_overlap(stack):
    counts = overlap_counts(stack.scene, stack.cameras[0])
    assert np.median(counts) >= 64


def test_queries_sit_at_object_centroids(room):
    s = room.scene
    for j in range(s.n_queries):
        members = room.surfel_instance == j + 1
        assert np.allclose(s.query_centers[j], s.centers[members].mean(0), atol=1e-5)


def test_matching_query_has_highest_attention(room):
    att = attention_matrix(room.scene)
    things = room.surfel_instance > 0
    best = np.argmax(att[things], axis=1) + 1
    assert np.mean(best == room.surfel_instance[things]) >= 0.99


def test_ground_truth_agrees_with_full_render(room):
    cam = room.cameras[0]
    gc, gi = room.ground_truth(cam)
    b = render(room.scene, cam)
    solid = gc != VOID
    agree = (b.panoptic_class == gc) & (b.panoptic_instance == gi)
    assert np.mean(agree[solid]) >= 0.99
    assert set(np.unique(gi)) - {0} <= set(range(1, room.scene.n_queries + 1))


def test_label_vectors_are_one_hot(small_room):
    v = small_room.label_vectors()
    nc = small_room.scene.decoder.num_classes
    assert np.all(v[:, :nc].sum(1) == 1)
    things = small_room.surfel_instance > 0
    assert np.all(v[things, nc:].sum(1) == 1)
    assert np.all(v[~things, nc:].sum(1) == 0)

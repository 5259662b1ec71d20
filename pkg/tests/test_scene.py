import json
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from surfelseg import Camera, FormatError, Scene, ValidationError, load_scene, save_scene, validate_scene
from surfelseg.scene import (
    HEADER,
    InstanceQuery,
    load_trajectory,
    record_size,
    save_trajectory,
    scene_from_bytes,
    scene_to_bytes,
)
from surfelseg.synthgen import generate_scene

from conftest import facing_camera, make_surfel


def one_surfel_scene(**kw):
    return Scene.from_surfels([make_surfel(**kw)])


def test_minimal_file_roundtrip(tmp_path):
    scene = one_surfel_scene()
    path = tmp_path / "one.fsgs"
    save_scene(scene, path)
    loaded = load_scene(path)
    assert loaded.n_surfels == 1
    assert loaded.n_queries == 0
    assert loaded.decoder.num_classes == 0


def test_generated_scene_roundtrip_is_bitwise(tmp_path):
    scene = generate_scene("room", 500, 3, seed=7).scene
    path = tmp_path / "room.fsgs"
    save_scene(scene, path)
    loaded = load_scene(path)
    for name in ("centers", "tangent_u", "tangent_v", "scales", "opacity", "rgb", "sem_features",
                 "ins_features", "query_centers", "query_covariances", "query_features"):
        a, b = getattr(scene, name), getattr(loaded, name)
        assert a.tobytes() == b.tobytes(), name
    assert loaded.decoder.class_names == scene.decoder.class_names
    assert np.array_equal(loaded.decoder.thing_flags, scene.decoder.thing_flags)
    # save(load(x)) reproduces the file exactly
    assert scene_to_bytes(loaded) == path.read_bytes()


def test_save_is_deterministic(tmp_path):
    scene = generate_scene("thin", 200, 2, seed=3).scene
    save_scene(scene, tmp_path / "a.fsgs")
    save_scene(scene, tmp_path / "b.fsgs")
    assert (tmp_path / "a.fsgs").read_bytes() == (tmp_path / "b.fsgs").read_bytes()


def test_file_size_is_header_plus_records():
    # 1000 surfels, no queries, no classes: header + 1000 fixed-size records
    rng = np.random.default_rng(0)
    surfels = [make_surfel(center=rng.normal(size=3), sem_dim=16, ins_dim=32) for _ in range(1000)]
    data = scene_to_bytes(Scene.from_surfels(surfels))
    assert record_size(16, 32) == 4 * (3 + 3 + 3 + 2 + 1 + 3 + 16 + 32)
    assert len(data) == HEADER.size + 1000 * record_size(16, 32)


def test_equal_tangents_cite_surfel_zero(tmp_path):
    scene = one_surfel_scene(tu=(1, 0, 0), tv=(1, 0, 0))
    path = tmp_path / "bad.fsgs"
    path.write_bytes(scene_to_bytes(scene))
    with pytest.raises(ValidationError) as err:
        load_scene(path)
    assert err.value.index == 0
    assert "surfel 0" in str(err.value)


def test_opacity_report():
    surfels = [make_surfel(center=(i, 0, 0)) for i in range(5)]
    surfels[3] = make_surfel(center=(3, 0, 0), opacity=1.5)
    assert validate_scene(Scene.from_surfels(surfels)) == ["surfel 3: opacity out of range"]


def test_valid_scene_has_no_reports():
    assert validate_scene(generate_scene("stack", 300, 2, seed=1).scene) == []


def test_indefinite_query_covariance_reported():
    # spectral assembly with one negative eigenvalue
    rng = np.random.default_rng(4)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    cov = q @ np.diag([0.5, 0.2, -1e-3]) @ q.T
    assert np.linalg.eigvalsh(cov).min() < 0
    good = InstanceQuery(center=np.zeros(3), covariance=np.eye(3), feature=np.zeros(2))
    bad = InstanceQuery(center=np.zeros(3), covariance=cov, feature=np.zeros(2))
    scene = Scene.from_surfels([make_surfel()], queries=[good, bad])
    assert validate_scene(scene) == ["query 1: not positive definite"]


def test_bad_magic_and_truncation():
    data = scene_to_bytes(one_surfel_scene())
    with pytest.raises(FormatError):
        scene_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        scene_from_bytes(data[:-3])
    with pytest.raises(FormatError):
        scene_from_bytes(data + b"\0")
    with pytest.raises(FormatError):
        scene_from_bytes(data[:10])
    bumped = struct.pack("<4sI", b"FSGS", 99) + data[8:]
    with pytest.raises(FormatError):
        scene_from_bytes(bumped)


def test_scene_arrays_are_read_only():
    scene = one_surfel_scene()
    with pytest.raises(ValueError):
        scene.centers[0, 0] = 1.0


def test_surfel_accessor_matches_arrays():
    scene = generate_scene("room", 300, 2, seed=2).scene
    s = scene.surfel(17)
    assert np.array_equal(s.center, scene.centers[17])
    assert s.scale_u == scene.scales[17, 0]
    assert s.id == 17


def test_camera_check_rejects_bad_rotation():
    cam = facing_camera()
    cam.check()
    bad = Camera(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height,
                 cam.rotation * 1.01, cam.translation)
    with pytest.raises(ValidationError, match="invalid rotation"):
        bad.check()
    reflect = Camera(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height,
                     np.diag([1.0, 1.0, -1.0]), cam.translation)
    with pytest.raises(ValidationError, match="invalid rotation"):
        reflect.check()


def test_look_at_places_target_on_axis():
    cam = Camera.look_at((1.0, -3.0, 2.0), (0.2, 0.5, 0.4), width=64, height=48, fx=50)
    cam.check()
    p = cam.rotation @ np.array([0.2, 0.5, 0.4]) + cam.translation
    assert p[2] > 0
    assert np.allclose(p[:2], 0, atol=1e-9)
    assert np.allclose(cam.position, [1.0, -3.0, 2.0])


def test_trajectory_roundtrip(tmp_path):
    cams = [Camera.look_at((x, -2, 1), (0, 0, 0)) for x in (-1.0, 0.5)]
    save_trajectory(cams, tmp_path / "t.json")
    back = load_trajectory(tmp_path / "t.json")
    assert json.loads((tmp_path / "t.json").read_text())[0]["width"] == cams[0].width
    for a, b in zip(cams, back):
        assert np.array_equal(a.rotation, b.rotation)
        assert np.array_equal(a.translation, b.translation)


def test_malformed_camera_record():
    with pytest.raises(ValidationError):
        Camera.from_dict({"fx": 1.0})


@given(st.integers(0, 2**31 - 1))
def test_random_scene_roundtrip_property(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(0, 20))
    surfels = []
    for i in range(n):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        surfels.append(make_surfel(center=rng.normal(size=3), tu=q[:, 0], tv=q[:, 1],
                                   scales=rng.uniform(0.01, 2, 2), opacity=rng.uniform(),
                                   rgb=rng.uniform(size=3)))
    scene = Scene.from_surfels(surfels, sem_dim=4, ins_dim=2)
    back = scene_from_bytes(scene_to_bytes(scene))
    assert back.n_surfels == n
    assert back.centers.tobytes() == scene.centers.tobytes()
    assert back.opacity.tobytes() == scene.opacity.tobytes()

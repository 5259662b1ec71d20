import json
import subprocess
import sys

import numpy as np
import pytest

from surfelseg import imageio, load_scene
from surfelseg.cli import FRAME_FILES, main


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert main(["gen", "--preset", "room", "--surfels", "800", "--instances", "3",
                 "--seed", "2", "--out", str(root / "gen")]) == 0
    return root


def test_gen_outputs(corpus):
    gen = corpus / "gen"
    assert load_scene(gen / "scene.fsgs").n_surfels > 0
    cams = json.loads((gen / "cameras.json").read_text())
    assert len(cams) == 4
    for i in range(len(cams)):
        for name in ("semantic", "instance", "panoptic"):
            assert (gen / "gt" / f"frame_{i:04d}" / FRAME_FILES[name]).exists()


def test_gen_is_seed_deterministic(corpus, tmp_path):
    assert main(["gen", "--preset", "room", "--surfels", "800", "--instances", "3",
                 "--seed", "2", "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "scene.fsgs").read_bytes() == (corpus / "gen" / "scene.fsgs").read_bytes()


def test_render_defaults_write_six_files(corpus, tmp_path):
    gen = corpus / "gen"
    args = ["render", "--scene", str(gen / "scene.fsgs"), "--camera", str(gen / "cameras.json")]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    frame = tmp_path / "a" / "frame_0000"
    names = sorted(p.name for p in frame.iterdir())
    assert names == sorted(list(FRAME_FILES.values()) + ["stats.json"])
    stats = json.loads((frame / "stats.json").read_text())
    assert set(stats) >= {"mode", "time_ms", "fps", "rn_total", "rn_per_tile", "feature_mads", "pq"}
    # same flags, different thread count: byte-identical images
    assert main(args + ["--out", str(tmp_path / "b"), "--threads", "1"]) == 0
    for name in FRAME_FILES.values():
        assert (frame / name).read_bytes() == (tmp_path / "b" / "frame_0000" / name).read_bytes()


def test_render_channel_subset(corpus, tmp_path):
    gen = corpus / "gen"
    assert main(["render", "--scene", str(gen / "scene.fsgs"), "--camera", str(gen / "cameras.json"),
                 "--out", str(tmp_path), "--channels", "rgb,semantic", "--topk", "24",
                 "--mode", "snug"]) == 0
    names = sorted(p.name for p in (tmp_path / "frame_0003").iterdir())
    assert names == ["rgb.png", "semantic.png", "stats.json"]


def test_render_then_eval(corpus, tmp_path):
    gen = corpus / "gen"
    main(["render", "--scene", str(gen / "scene.fsgs"), "--camera", str(gen / "cameras.json"),
          "--out", str(tmp_path / "r")])
    out = tmp_path / "m.json"
    assert main(["eval", "--pred", str(tmp_path / "r"), "--gt", str(gen / "gt"), "--out", str(out)]) == 0
    metrics = json.loads(out.read_text())
    assert metrics["frames"] == 4
    assert metrics["miou"] > 90
    assert main(["eval", "--pred", str(gen / "gt"), "--gt", str(gen / "gt"), "--out", str(out)]) == 0
    same = json.loads(out.read_text())
    for k in ("pq", "sq", "rq", "miou", "macc", "mcov", "mwcov"):
        assert same[k] == 100.0


def test_eval_hand_case_fixture(tmp_path):
    for sub in ("pred", "gt"):
        (tmp_path / sub / "frame_0000").mkdir(parents=True)
    gt = np.full((8, 8), -1)
    gt[0:4, 0:4] = 2
    pred = np.full((8, 8), -1)
    pred[0:4, 1:5] = 2
    inst = np.where(gt >= 0, 1, 0)
    imageio.save_panoptic_png(tmp_path / "gt" / "frame_0000" / "panoptic.png", gt, inst)
    imageio.save_panoptic_png(tmp_path / "pred" / "frame_0000" / "panoptic.png", pred, np.where(pred >= 0, 1, 0))
    out = tmp_path / "m.json"
    assert main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["pq"] == 60.0


def test_eval_empty_pred_is_error(corpus, tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["eval", "--pred", str(tmp_path / "empty"), "--gt", str(corpus / "gen" / "gt")]) != 0
    assert "error" in capsys.readouterr().err


def test_missing_scene_is_error(tmp_path, capsys):
    cam = tmp_path / "c.json"
    cam.write_text("[]")
    assert main(["render", "--scene", str(tmp_path / "nope.fsgs"), "--camera", str(cam),
                 "--out", str(tmp_path)]) != 0
    assert "error" in capsys.readouterr().err


def test_bad_rotation_in_camera_file(corpus, tmp_path, capsys):
    cams = json.loads((corpus / "gen" / "cameras.json").read_text())
    cams[0]["rotation"] = [2, 0, 0, 0, 1, 0, 0, 0, 1]
    (tmp_path / "c.json").write_text(json.dumps(cams))
    assert main(["render", "--scene", str(corpus / "gen" / "scene.fsgs"), "--camera",
                 str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) != 0
    assert "invalid rotation" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["gen", "--preset", "forest", "--out", "x"],
    ["render", "--scene", "s"],
    ["render", "--scene", "s", "--camera", "c", "--out", "o", "--mode", "tight"],
    ["render", "--scene", "s", "--camera", "c", "--out", "o", "--channels", "rgb,normals"],
    ["bench", "--topk", "0"],
    ["frobnicate"],
])
def test_malformed_flags_exit_nonzero(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_bench_preset_report(tmp_path):
    out = tmp_path / "bench.json"
    assert main(["bench", "--preset", "thin", "--surfels", "300", "--instances", "2",
                 "--warmup", "0", "--repeats", "2", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    rows = {r["mode"]: r for r in report["rows"]}
    assert set(rows) == {"A", "B", "C", "D"}
    for r in rows.values():
        assert set(r) >= {"mode", "time_ms", "fps", "rn_total", "rn_per_tile", "feature_mads", "pq"}
    assert report["rn_monotone"]


def test_console_entry_point_usage():
    proc = subprocess.run([sys.executable, "-m", "surfelseg.cli", "render"], capture_output=True, text=True)
    assert proc.returncode != 0
    assert "usage" in proc.stderr

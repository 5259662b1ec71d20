import pytest

from surfelseg.bench import MODES, BenchConfig, check_monotone, mode_config, run_bench


def test_mode_table():
    assert mode_config("A").top_k is None and mode_config("A").mode == "loose"
    assert mode_config("D", 8).top_k == 8 and mode_config("D").mode == "accutile"
    assert set(MODES) == {"A", "B", "C", "D"}


def test_rows_and_monotone_work(small_room):
    cams = small_room.cameras[:2]
    gt = [small_room.ground_truth(c) for c in cams]
    rows = run_bench(small_room.scene, cams, BenchConfig(warmup=0, repeats=1), gt=gt)
    assert [r["mode"] for r in rows] == ["A", "B", "C", "D"]
    for r in rows:
        assert r["time_ms"] > 0 and r["fps"] > 0
        assert 0 <= r["pq"] <= 100
    assert check_monotone(rows)
    by = {r["mode"]: r for r in rows}
    # Top-K bounds per-pixel feature work; culling alone cannot increase it
    assert by["C"]["feature_mads"] <= by["A"]["feature_mads"]
    assert by["B"]["feature_mads"] <= by["A"]["feature_mads"]


def test_check_monotone_detects_violation():
    rows = [{"mode": m, "rn_total": v} for m, v in zip("ABCD", (10, 12, 10, 9))]
    assert not check_monotone(rows)


def test_requires_camera(small_room):
    with pytest.raises(ValueError):
        run_bench(small_room.scene, [], BenchConfig(warmup=0, repeats=1))

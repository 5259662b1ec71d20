import numpy as np
import pytest
from hypothesis import given, strategies as st
from PIL import Image

from surfelseg import imageio


def test_pfm_roundtrip(tmp_path):
    depth = np.random.default_rng(0).uniform(0, 10, size=(7, 5)).astype(np.float32)
    imageio.write_pfm(tmp_path / "d.pfm", depth)
    back = imageio.read_pfm(tmp_path / "d.pfm")
    assert back.dtype == np.float32
    assert np.array_equal(back, depth)
    assert (tmp_path / "d.pfm").read_bytes().startswith(b"Pf\n5 7\n-1.0\n")


def test_pfm_rejects_other_files(tmp_path):
    (tmp_path / "x.pfm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(ValueError):
        imageio.read_pfm(tmp_path / "x.pfm")


@given(st.integers(0, 10_000))
def test_panoptic_pack_roundtrip(seed):
    rng = np.random.default_rng(seed)
    cls = rng.integers(-1, 40, size=(6, 6)).astype(np.int32)
    inst = np.where(cls < 0, 0, rng.integers(0, 999, size=(6, 6))).astype(np.int32)
    for void, dtype in ((imageio.PANOPTIC_VOID_WIRE, np.uint32), (imageio.PANOPTIC_VOID_PNG, np.uint16)):
        ids = imageio.pack_panoptic(cls, inst, void=void, dtype=dtype)
        c2, i2 = imageio.unpack_panoptic(ids, void=void)
        assert np.array_equal(c2, cls) and np.array_equal(i2, inst)


def test_panoptic_packing_values():
    ids = imageio.pack_panoptic(np.array([[3, -1]]), np.array([[7, 0]]))
    assert ids.tolist() == [[3007, 0xFFFFFFFF]]
    with pytest.raises(ValueError):
        imageio.pack_panoptic(np.array([[1]]), np.array([[1000]]))
    with pytest.raises(ValueError):
        imageio.pack_panoptic(np.array([[70]]), np.array([[0]]), void=0xFFFF, dtype=np.uint16)


def test_panoptic_png_roundtrip(tmp_path):
    cls = np.array([[0, 5, -1], [2, 2, 7]], np.int32)
    inst = np.array([[0, 3, 0], [1, 1, 12]], np.int32)
    imageio.save_panoptic_png(tmp_path / "p.png", cls, inst)
    with Image.open(tmp_path / "p.png") as im:
        assert np.array(im).dtype == np.uint16
    c2, i2 = imageio.load_panoptic_png(tmp_path / "p.png")
    assert np.array_equal(c2, cls) and np.array_equal(i2, inst)


def test_label_png_roundtrip(tmp_path):
    labels = np.array([[0, 1, -1], [254, 3, 3]])
    imageio.save_label_png(tmp_path / "s.png", labels)
    with Image.open(tmp_path / "s.png") as im:
        assert im.mode == "P"
    assert np.array_equal(imageio.load_label_png(tmp_path / "s.png"), labels)
    with pytest.raises(ValueError):
        imageio.save_label_png(tmp_path / "bad.png", np.array([[255]]))


def test_rgb_png_quantization():
    rgb = np.array([[[0.0, 0.5, 1.0], [1.2, -0.1, 0.25]]])
    data = imageio.encode_rgb_png(rgb)
    assert imageio.decode_png(data).tolist() == [[[0, 128, 255], [255, 0, 64]]]


def test_raw_rasters_little_endian():
    d = np.array([[1.5, -2.0]], np.float64)
    assert imageio.depth_bytes(d) == np.array([1.5, -2.0], "<f4").tobytes()
    assert imageio.panoptic_bytes(np.array([[1]]), np.array([[2]])) == (1002).to_bytes(4, "little")

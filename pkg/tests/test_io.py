import numpy as np
import pytest

from resolvent_pnp.data import load_image_dir, make_toy_images
from resolvent_pnp.io import (
    FormatError,
    dump_keyvalue,
    load_ntf,
    load_pnm,
    ntf_dumps,
    ntf_loads,
    parse_keyvalue,
    save_ntf,
    save_pnm,
)
from resolvent_pnp.tensor import make_rng


@pytest.mark.parametrize("shape", [(), (3,), (2, 5), (1, 3, 4, 2)])
def test_ntf_round_trip(tmp_path, shape):
    a = make_rng(0).standard_normal(shape)
    save_ntf(tmp_path / "a.ntf", a)
    b = load_ntf(tmp_path / "a.ntf")
    assert b.shape == a.shape and np.array_equal(a, b)


def test_ntf_layout():
    buf = ntf_dumps(np.array([[1.0, 2.0]]))
    assert buf[:4] == b"NTF1"
    assert buf[4:16] == b"\x02\x00\x00\x00\x01\x00\x00\x00\x02\x00\x00\x00"
    assert np.frombuffer(buf[16:], "<f8").tolist() == [1.0, 2.0]


def test_ntf_rejects_bad_files():
    buf = ntf_dumps(np.ones(3))
    for bad in (b"XXXX" + buf[4:], buf[:-1], buf + b"\x00", buf[:6]):
        with pytest.raises(FormatError):
            ntf_loads(bad)


def test_pnm_round_trip(tmp_path):
    g = np.round(make_rng(1).uniform(size=(5, 7)) * 255) / 255
    save_pnm(tmp_path / "g.pgm", g)
    np.testing.assert_allclose(load_pnm(tmp_path / "g.pgm"), g, atol=1e-12)
    c = np.round(make_rng(2).uniform(size=(3, 4, 6)) * 255) / 255
    save_pnm(tmp_path / "c.ppm", c)
    np.testing.assert_allclose(load_pnm(tmp_path / "c.ppm"), c, atol=1e-12)
    save_pnm(tmp_path / "clip.pgm", np.array([[-1.0, 2.0]]))
    np.testing.assert_array_equal(load_pnm(tmp_path / "clip.pgm"), [[0.0, 1.0]])
    with pytest.raises(ValueError):
        save_pnm(tmp_path / "x.pgm", np.zeros((2, 2, 2)))


def test_pnm_header_comments(tmp_path):
    (tmp_path / "h.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    np.testing.assert_array_equal(load_pnm(tmp_path / "h.pgm"), [[0.0, 1.0]])
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(FormatError):
        load_pnm(tmp_path / "bad.pgm")


def test_keyvalue():
    text = "# comment\nlam = 0.1\n\nname=a=b  # trailing\n"
    assert parse_keyvalue(text) == {"lam": "0.1", "name": "a=b"}
    assert parse_keyvalue(dump_keyvalue({"x": 1, "y": "z"})) == {"x": "1", "y": "z"}
    with pytest.raises(FormatError):
        parse_keyvalue("novalue\n")


def test_image_dir(tmp_path):
    imgs = make_toy_images(3, 8, 0)
    for i, im in enumerate(imgs):
        save_pnm(tmp_path / f"{i}.pgm", im[0])
    stack = load_image_dir(tmp_path)
    assert stack.shape == (3, 1, 8, 8)
    np.testing.assert_allclose(stack, np.round(imgs * 255) / 255, atol=1e-12)


def test_toy_images_reproducible():
    a, b = make_toy_images(4, 16, 7), make_toy_images(4, 16, 7)
    assert np.array_equal(a, b) and a.shape == (4, 1, 16, 16)
    assert a.min() >= 0 and a.max() <= 1
    assert not np.array_equal(a, make_toy_images(4, 16, 8))

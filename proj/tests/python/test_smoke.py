"""Smoke tests of the Python bindings."""

import math

import numpy as np
import pytest

import hcanet

hcanet.quiet()


def test_version():
    assert hcanet.version().count(".") == 2


def test_cube_round_trip(tmp_path):
    cube = hcanet.synthetic_cube(32, 24, 8, seed=3)
    assert cube.shape == (8, 32, 24)
    assert cube.dtype == np.float32
    assert 0.05 <= cube.min() and cube.max() <= 0.95
    hcanet.save_cube(tmp_path / "c.hsic", cube)
    assert np.array_equal(hcanet.load_cube(tmp_path / "c.hsic"), cube)


def test_noise_and_metrics():
    clean = hcanet.synthetic_cube(128, 128, 8, seed=1)
    noisy, report = hcanet.add_noise(clean, "g30", seed=5)
    assert report["kind"] == "gaussian"
    assert abs(hcanet.psnr(noisy, clean) - 10 * math.log10((255 / 30) ** 2)) < 0.3
    again, _ = hcanet.add_noise(clean, "g30", seed=5)
    assert np.array_equal(noisy, again)
    m = hcanet.evaluate(clean, clean)
    assert m["psnr_db"] == 100.0 and m["sam_rad"] == 0.0
    _, rep5 = hcanet.add_noise(clean, "case5", seed=2)
    assert rep5["kind"] == "case5"


def test_errors_map_to_python_exceptions(tmp_path):
    with pytest.raises(ValueError):
        hcanet.add_noise(hcanet.synthetic_cube(32, 32, 8), "case9")
    with pytest.raises(OSError):
        hcanet.load_cube(tmp_path / "missing.hsic")
    (tmp_path / "bad.hsic").write_bytes(b"HSIC\x01")
    with pytest.raises(hcanet.FormatError):
        hcanet.load_cube(tmp_path / "bad.hsic")


def test_network_identity_and_checkpoint(tmp_path):
    net = hcanet.Network("desk", bands=8)
    assert net.param_count == 130862
    assert hcanet.Network("paper").param_count == 4664609
    cube = hcanet.synthetic_cube(16, 16, 8, seed=2)
    net.zero_tail()
    assert np.array_equal(net.denoise(cube), cube)
    net.save(tmp_path / "m.hcaw")
    back = hcanet.Network.load(tmp_path / "m.hcaw")
    assert back.config == net.config
    with pytest.raises(ValueError):
        net.denoise(hcanet.synthetic_cube(16, 16, 4))


def test_gradcheck_cafm():
    rep = hcanet.gradcheck("cafm", seeds=1)
    assert rep["passed"] is True

"""HCANet hyperspectral denoising.

Cubes are float32 numpy arrays shaped (bands, height, width) with values in [0, 1].
"""

import json

from ._core import (
    ConfigError,
    FormatError,
    IoError,
    MetricError,
    NumericalError,
    ShapeError,
    load_cube,
    psnr,
    quiet,
    sam,
    save_cube,
    ssim,
    synthetic_cube,
    version,
)
from . import _core

__all__ = [
    "ConfigError", "FormatError", "IoError", "MetricError", "NumericalError", "ShapeError",
    "Network", "add_noise", "evaluate", "gradcheck", "load_cube", "psnr", "quiet", "sam",
    "save_cube", "ssim", "synthetic_cube", "version",
]

_CASES = {"g30": ("gaussian", 30.0), "g50": ("gaussian", 50.0), "g70": ("gaussian", 70.0),
          "blind": ("blind_gaussian", None)}


def add_noise(cube, case="g30", seed=0, **params):
    """Degrade a clean cube. `case` is g30|g50|g70|blind|case1..case5 or a noise kind.

    Returns (noisy_cube, degradation_report).
    """
    kind, sigma = _CASES.get(case, (case, None))
    spec = {"kind": kind, "seed": seed, **params}
    if sigma is not None:
        spec["sigma"] = sigma
    noisy, report = _core._apply_noise(cube, json.dumps(spec))
    return noisy, json.loads(report)


def evaluate(pred, ref):
    """PSNR, SSIM and SAM report as a dict."""
    return json.loads(_core._evaluate(pred, ref))


def gradcheck(preset="cafm", seeds=5, step=1e-3):
    return json.loads(_core._gradcheck(preset, seeds, step))


class Network:
    """An HCANet model. `config` is a NetworkConfig dict, or "desk"/"paper"."""

    def __init__(self, config="desk", bands=None, _impl=None):
        if _impl is not None:
            self._impl = _impl
            return
        if isinstance(config, str):
            config = {"preset": config}
        config = dict(config)
        if bands is not None:
            config["bands"] = bands
        self._impl = _core._Network(json.dumps(config))

    @classmethod
    def load(cls, path):
        return cls(_impl=_core._Network.load(str(path)))

    def save(self, path):
        self._impl.save(str(path))

    @property
    def config(self):
        return json.loads(self._impl.config_json())

    @property
    def param_count(self):
        return self._impl.param_count

    def zero_tail(self):
        """Zero the tail conv; denoise then returns its input."""
        self._impl.zero_tail()

    def denoise(self, cube, clip=False):
        return self._impl.denoise(cube, clip)

    def train(self, dataset_manifest, train=None, noise=None, out_dir=None):
        """Train in place. Returns {"best_epoch", "log"}."""
        result = self._impl._train(str(dataset_manifest), json.dumps(train or {}),
                                   json.dumps(noise or {}), str(out_dir) if out_dir else "")
        return json.loads(result)

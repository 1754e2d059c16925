"""Synthetic hyperspectral scenes built from Gaussian-mixture endmember spectra.

A scene is generated on a continuous 1 nm grid (400-1000 nm) and then
band-integrated onto a sensor grid, so the same scene seed rendered through two
sensors yields the same label map with different band counts.
"""
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import ConfigError
from ..rng import make_rng
from ..tokenizer import WavelengthGrid
from .cube import HyperCube

CONTINUUM = np.arange(400.0, 1001.0, 1.0)


def generate_endmembers(k, seed=42, min_distance=2.0, max_tries=1000):
    """``k`` spectra on the 1 nm continuum, pairwise L2 distance >= ``min_distance``.

    Each spectrum is a base level plus 3-6 Gaussian bumps/dips (centres
    400-1000 nm, widths 20-120 nm), clamped to [0, 1]. A candidate that lands
    too close to an accepted spectrum is redrawn.
    """
    if k < 1:
        raise ConfigError(f"need at least one endmember, got {k}")
    rng = make_rng(seed, "endmembers")
    out = []
    for _ in range(max_tries * k):
        base = rng.uniform(0.1, 0.5)
        s = np.full(CONTINUUM.shape, base)
        for _ in range(int(rng.integers(3, 7))):
            centre = rng.uniform(400.0, 1000.0)
            width = rng.uniform(20.0, 120.0)
            amp = rng.uniform(-0.3, 0.5)
            s += amp * np.exp(-0.5 * ((CONTINUUM - centre) / width) ** 2)
        s = np.clip(s, 0.0, 1.0)
        if all(np.linalg.norm(s - o) >= min_distance for o in out):
            out.append(s)
            if len(out) == k:
                return np.stack(out)
    raise ConfigError(f"could not place {k} endmembers {min_distance} apart")


def band_matrix(grid: WavelengthGrid):
    """(len(CONTINUUM), C) averaging matrix: each band is the mean over its width.

    Band width is the grid spacing (the range width for a single band); a band
    narrower than the continuum step falls back to the nearest sample.
    """
    wl = grid.array()
    c = wl.size
    if c > 1:
        edges = np.concatenate([[wl[0] - (wl[1] - wl[0]) / 2], (wl[:-1] + wl[1:]) / 2,
                                [wl[-1] + (wl[-1] - wl[-2]) / 2]])
    else:
        edges = np.array([wl[0] - 0.5, wl[0] + 0.5])
    m = np.zeros((CONTINUUM.size, c))
    for i in range(c):
        sel = (CONTINUUM >= edges[i]) & (CONTINUUM < edges[i + 1])
        if not sel.any():
            sel = np.zeros(CONTINUUM.size, dtype=bool)
            sel[np.argmin(np.abs(CONTINUUM - wl[i]))] = True
        m[sel, i] = 1.0 / sel.sum()
    return m


@dataclass(frozen=True)
class SyntheticSceneSpec:
    n_classes: int = 5
    height: int = 32
    width: int = 32
    n_bands: int = 15
    wl_min: float = 470.0
    wl_max: float = 630.0
    noise: float = 0.05
    jitter: float = 0.3
    smoothness: float = 3.0
    prior_skew: float = 0.6
    endmember_seed: int = 42
    scene_seed: int = 0
    min_distance: float = 2.0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("a scene needs at least 2 classes")
        if self.noise < 0 or self.jitter < 0:
            raise ConfigError("noise and jitter must be non-negative")
        self.grid  # validates range

    @property
    def grid(self):
        return WavelengthGrid.linear(self.n_bands, self.wl_min, self.wl_max)


def label_field(spec: SyntheticSceneSpec):
    """Argmax over K smoothed noise fields with a per-class offset (nonuniform priors)."""
    rng = make_rng(spec.scene_seed, "scene-labels")
    k, h, w = spec.n_classes, spec.height, spec.width
    fields = rng.standard_normal((k, h, w))
    for i in range(k):
        f = gaussian_filter(fields[i], spec.smoothness, mode="wrap")
        fields[i] = f / (f.std() + 1e-12)
    fields -= (spec.prior_skew * np.arange(k) / max(k - 1, 1))[:, None, None]
    return fields.argmax(axis=0).astype(np.uint16)


def continuous_scene(spec: SyntheticSceneSpec, endmembers=None):
    """Labels (H, W) and continuum spectra (H, W, 601) before sensor integration."""
    if endmembers is None:
        endmembers = generate_endmembers(spec.n_classes, spec.endmember_seed, spec.min_distance)
    labels = label_field(spec)
    rng = make_rng(spec.scene_seed, "scene-spectra")
    h, w = labels.shape
    other = rng.integers(0, spec.n_classes, size=(h, w))
    abundance = spec.jitter * rng.random((h, w))[..., None]
    spectra = (1.0 - abundance) * endmembers[labels] + abundance * endmembers[other]
    if spec.noise > 0:
        spectra = spectra + spec.noise * rng.standard_normal(spectra.shape)
    return labels, spectra


def generate_scene(spec: SyntheticSceneSpec, endmembers=None) -> HyperCube:
    labels, spectra = continuous_scene(spec, endmembers)
    grid = spec.grid
    refl = np.clip(spectra @ band_matrix(grid), 0.0, 1.0)
    return HyperCube(refl.astype(np.float32), grid.array(), labels)

"""Pseudo-RGB projection of hyperspectral cubes for the cross-modality baselines.

Two recipes:

* ``cie``: integrate each spectrum against Gaussian stand-ins for the three
  colour-matching curves (peaks 600/550/450 nm, sigma 40 nm) over the bands
  inside 380-780 nm, then divide by the cube maximum.
* ``tri-band``: average three contiguous, near-equal thirds of the band axis.

``cie`` needs at least three visible bands and a band within one sigma of
every curve peak; otherwise (e.g. a 600-975 nm sensor, which misses the blue
and green peaks) the projection falls back to ``tri-band``.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .data.cube import HyperCube
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

METHODS = ("cie", "tri-band")
PRGB_WAVELENGTHS = (600.0, 550.0, 450.0)
CMF_PEAKS = (600.0, 550.0, 450.0)
CMF_SIGMA = 40.0
VISIBLE = (380.0, 780.0)


@dataclass(frozen=True)
class ProjectionSpec:
    method: str = "cie"
    clamp: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown projection method {self.method!r}; expected one of {METHODS}")


def cie_supported(wavelengths):
    wl = np.asarray(wavelengths, dtype=np.float64)
    visible = (wl >= VISIBLE[0]) & (wl <= VISIBLE[1])
    if visible.sum() < 3:
        return False
    return all(np.min(np.abs(wl - peak)) <= CMF_SIGMA for peak in CMF_PEAKS)


def resolve_method(wavelengths, method):
    if method == "cie" and not cie_supported(wavelengths):
        return "tri-band"
    return method


def tri_band(refl):
    thirds = np.array_split(np.arange(refl.shape[-1]), 3)
    return np.stack([refl[..., idx].mean(axis=-1) for idx in thirds], axis=-1)


def cie(refl, wavelengths):
    wl = np.asarray(wavelengths, dtype=np.float64)
    visible = (wl >= VISIBLE[0]) & (wl <= VISIBLE[1])
    curves = np.exp(-0.5 * ((wl[visible, None] - np.asarray(CMF_PEAKS)) / CMF_SIGMA) ** 2)
    rgb = refl[..., visible].astype(np.float64) @ curves
    peak = rgb.max()
    return rgb / peak if peak > 0 else rgb


def project_prgb(cube: HyperCube, spec: ProjectionSpec = ProjectionSpec()):
    """Return ``(H x W x 3 image in [0, 1], method actually used)``."""
    if cube.n_bands < 3:
        raise DataError(f"pRGB projection needs at least 3 bands, got {cube.n_bands}")
    method = resolve_method(cube.wavelengths, spec.method)
    if method != spec.method:
        log.info("grid does not cover the colour-matching peaks inside %g-%g nm; method=tri-band", *VISIBLE)
    if method == "cie":
        img = cie(cube.reflectance, cube.wavelengths)
    else:
        img = tri_band(cube.reflectance.astype(np.float64))
    return np.clip(img, *spec.clamp).astype(np.float32), method


def project_cube(cube: HyperCube, spec: ProjectionSpec = ProjectionSpec()):
    """pRGB as a 3-band HyperCube (wavelengths 600/550/450 nm) carrying the source labels."""
    img, method = project_prgb(cube, spec)
    return HyperCube(img, np.asarray(PRGB_WAVELENGTHS), cube.labels), method

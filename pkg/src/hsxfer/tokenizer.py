"""Per-band spectral tokens with a wavelength-driven positional encoding.

Every band becomes one token: a learned scalar-to-vector embedding of its
reflectance plus a sinusoidal code of its central wavelength in nanometres.
Because position is physical wavelength rather than band index, the same
tokenizer handles any band count and spectral range.
"""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .nn import Module, Parameter

WAVELENGTH_MIN_NM = 200.0
WAVELENGTH_MAX_NM = 3000.0


@dataclass(frozen=True)
class WavelengthGrid:
    """Central wavelengths (nm) of a sensor's bands, strictly increasing."""

    wavelengths: tuple

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        object.__setattr__(self, "wavelengths", tuple(float(v) for v in wl))
        check_wavelengths(wl)
        if np.any(np.diff(wl) <= 0):
            raise DataError("wavelength grid must be strictly increasing")

    @classmethod
    def linear(cls, n_bands, lo, hi):
        if n_bands == 1:
            return cls(((lo + hi) / 2.0,))
        return cls(tuple(np.linspace(lo, hi, n_bands)))

    def __len__(self):
        return len(self.wavelengths)

    def array(self):
        return np.asarray(self.wavelengths, dtype=np.float64)


def check_wavelengths(wl):
    wl = np.asarray(wl, dtype=np.float64)
    if wl.ndim != 1 or wl.size < 1:
        raise DataError("need at least one wavelength")
    if not np.all(np.isfinite(wl)) or wl.min() <= WAVELENGTH_MIN_NM or wl.max() >= WAVELENGTH_MAX_NM:
        raise DataError(f"wavelengths must lie in ({WAVELENGTH_MIN_NM:g}, {WAVELENGTH_MAX_NM:g}) nm")
    return wl


def as_wavelengths(grid):
    """Accept a WavelengthGrid or any 1-D array of wavelengths (band order is free)."""
    if isinstance(grid, WavelengthGrid):
        return grid.array()
    return check_wavelengths(grid)


@dataclass(frozen=True)
class TokenizerConfig:
    d_model: int = 32
    pe_scale: float = 10000.0

    def __post_init__(self):
        if self.d_model < 4 or self.d_model % 2:
            raise ConfigError(f"d_model must be even and >= 4, got {self.d_model}")


def positional_encoding(wavelength, d_model, base=10000.0):
    """Sinusoidal code of wavelength(s) in nm; returns shape ``wavelength.shape + (d_model,)``.

    ``pe[2i] = sin(lam / base**(2i/d))`` and ``pe[2i+1] = cos(...)`` at the same
    frequency. Evaluated in float64.
    """
    if d_model % 2:
        raise ConfigError(f"d_model must be even, got {d_model}")
    lam = np.asarray(wavelength, dtype=np.float64)
    freq = base ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    phase = lam[..., None] / freq
    pe = np.empty(lam.shape + (d_model,), dtype=np.float64)
    pe[..., 0::2] = np.sin(phase)
    pe[..., 1::2] = np.cos(phase)
    return pe


@dataclass
class SpectralTokenSequence:
    tokens: np.ndarray
    wavelengths: np.ndarray

    def __len__(self):
        return self.tokens.shape[0]


class SpectralTokenizer(Module):
    """``token_c = w * x_c + b + PE(lam_c)`` with ``w`` a learned d-vector and ``b`` a learned scalar."""

    def __init__(self, cfg: TokenizerConfig, rng):
        self.cfg = cfg
        self.w_embed = Parameter(rng.standard_normal(cfg.d_model))
        self.b_embed = Parameter(np.zeros(()))

    def pe(self, wavelengths):
        return positional_encoding(wavelengths, self.cfg.d_model, self.cfg.pe_scale).astype(T.get_dtype())

    def __call__(self, spectra, wavelengths):
        """spectra: Tensor (..., C); returns Tensor (..., C, d_model)."""
        x = T.reshape(spectra, spectra.shape + (1,))
        return x * self.w_embed + self.b_embed + self.pe(wavelengths)


def tokenize_pixel(spectrum, grid, tokenizer: SpectralTokenizer) -> SpectralTokenSequence:
    wl = as_wavelengths(grid)
    spectrum = np.asarray(spectrum)
    if spectrum.ndim != 1 or spectrum.shape[0] != wl.shape[0]:
        raise DataError(f"spectrum has {spectrum.shape} values but the grid has {wl.shape[0]} bands")
    if not np.all(np.isfinite(spectrum)):
        raise DataError("spectrum contains non-finite reflectances")
    with T.no_grad():
        tokens = tokenizer(T.Tensor(spectrum), wl).data
    return SpectralTokenSequence(tokens, wl)


def tokenize_cube(cube, tokenizer: SpectralTokenizer, rows_per_chunk=8):
    """Yield one SpectralTokenSequence per pixel in row-major order.

    Rows are tokenized in chunks so memory stays bounded by ``rows_per_chunk``.
    """
    wl = as_wavelengths(cube.wavelengths)
    refl = cube.reflectance
    h, w, c = refl.shape
    if c != wl.shape[0]:
        raise DataError(f"cube has {c} bands but {wl.shape[0]} wavelengths")
    for r0 in range(0, h, rows_per_chunk):
        block = refl[r0: r0 + rows_per_chunk]
        if not np.all(np.isfinite(block)):
            raise DataError("cube contains non-finite reflectances")
        with T.no_grad():
            tokens = tokenizer(T.Tensor(block), wl).data
        for i in range(tokens.shape[0]):
            for j in range(w):
                yield SpectralTokenSequence(tokens[i, j], wl)

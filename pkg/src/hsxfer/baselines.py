"""Spectral-classification baselines: MiniROCKET, HDC-MiniROCKET and a small 1-D CNN.

MiniROCKET convolves each spectrum with the 84 fixed length-9 kernels (three
weights of 2, six of -1) at a handful of dilations and pools every
(kernel, dilation, bias) triple to a PPV, the fraction of positions where the
convolution exceeds the bias.

The HDC variant replaces the plain PPV by a position-weighted one: exceedances
at normalized position ``p`` count ``cos(s * theta_j * p)`` instead of 1, with a
seeded base angle ``theta_j`` per feature. This is a real-valued stand-in for
binding with fractional-power position hypervectors; ``s = 0`` recovers
MiniROCKET exactly.
"""
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from . import container
from . import tensor as T
from .errors import ConfigError, DataError, ShapeError, StateError
from .nn import Conv1d, Linear, Module
from .rng import make_rng

KERNEL_LENGTH = 9
MAGIC = b"MRKT"
_PHI = (math.sqrt(5.0) + 1.0) / 2.0


def kernel_bank():
    """(84, 9) array: every placement of three 2s among six -1s."""
    bank = -np.ones((84, KERNEL_LENGTH))
    for i, idx in enumerate(combinations(range(KERNEL_LENGTH), 3)):
        bank[i, list(idx)] = 2.0
    return bank


KERNELS = kernel_bank()


def effective_feature_count(requested):
    return 84 * (requested // 84)


def fit_dilations(length, per_kernel):
    """Dilations spread log-uniformly (base 2) with receptive field <= ``length``.

    Returns ``(dilations, counts)``; ``counts`` sum to ``per_kernel`` and say how
    many bias quantiles each dilation receives.
    """
    max_exp = math.log2((max(length, KERNEL_LENGTH) - 1) / (KERNEL_LENGTH - 1))
    raw = np.floor(2.0 ** np.linspace(0.0, max_exp, per_kernel)).astype(np.int64)
    return np.unique(raw, return_counts=True)


def pad_spectra(x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] < KERNEL_LENGTH:
        x = np.pad(x, ((0, 0), (0, KERNEL_LENGTH - x.shape[1])))
    return x


def _shifted(x, dilation):
    """(N, 9, L) stack with ``out[:, j, t] = x[:, t + (j - 4) * dilation]``, zero outside."""
    n, length = x.shape
    out = np.zeros((n, KERNEL_LENGTH, length))
    for j in range(KERNEL_LENGTH):
        shift = (j - KERNEL_LENGTH // 2) * dilation
        lo, hi = max(0, -shift), min(length, length - shift)
        if lo < hi:
            out[:, j, lo:hi] = x[:, lo + shift: hi + shift]
    return out


def convolve_bank(x, dilation):
    """(N, 84, L) convolution outputs; accumulates taps in order like ``conv1d_dilated``."""
    s = _shifted(x, dilation)
    conv = np.zeros((x.shape[0], 84, x.shape[1]))
    for j in range(KERNEL_LENGTH):
        conv += KERNELS[None, :, j, None] * s[:, None, j, :]
    return conv


@dataclass
class MiniRocketModel:
    requested: int = 1000
    length: int = 0
    dilations: np.ndarray = None
    counts: np.ndarray = None
    biases: list = field(default_factory=list)  # per dilation: (84, count)
    seed: int = 42

    @property
    def fitted(self):
        return self.dilations is not None

    @property
    def per_kernel(self):
        return self.requested // 84

    @property
    def n_features(self):
        return effective_feature_count(self.requested)

    def to_bytes(self):
        if not self.fitted:
            raise StateError("MiniROCKET model is not fitted")
        tensors = OrderedDict([("dilations", self.dilations.astype(np.float64)),
                               ("counts", self.counts.astype(np.float64))])
        for i, b in enumerate(self.biases):
            tensors[f"bias.{i}"] = b.astype(np.float64)
        cfg = {"requested": self.requested, "length": self.length, "seed": self.seed}
        return container.pack(MAGIC, cfg, tensors)

    @classmethod
    def from_bytes(cls, buf):
        cfg, t, _ = container.unpack(buf, MAGIC)
        n = len(t["dilations"])
        return cls(int(cfg["requested"]), int(cfg["length"]), t["dilations"].astype(np.int64),
                   t["counts"].astype(np.int64), [t[f"bias.{i}"] for i in range(n)], int(cfg["seed"]))

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def quantile_levels(n, offset=0):
    """Low-discrepancy quantile levels ``frac((i + 1) * phi)``."""
    return np.mod((np.arange(offset, offset + n) + 1) * _PHI, 1.0)


def minirocket_fit(spectra, requested=1000, seed=42):
    x = pad_spectra(spectra)
    if x.shape[0] == 0:
        raise DataError("MiniROCKET needs at least one training spectrum")
    per_kernel = requested // 84
    if per_kernel < 1:
        raise ConfigError(f"requested {requested} features; need at least 84")
    dilations, counts = fit_dilations(x.shape[1], per_kernel)
    rng = make_rng(seed, "minirocket-bias")
    biases = []
    offset = 0
    for d, q in zip(dilations, counts):
        pick = rng.integers(0, x.shape[0], size=84)
        conv = convolve_bank(x[pick], int(d))  # row i is example pick[i]
        levels = quantile_levels(int(q), offset)
        b = np.stack([np.quantile(conv[i, i], levels) for i in range(84)])
        biases.append(b)
        offset += int(q)
    return MiniRocketModel(requested, x.shape[1], dilations, counts, biases, seed)


def _weighted_ppv(model, spectra, weights=None, chunk=256):
    if not model.fitted:
        raise StateError("MiniROCKET model is not fitted")
    single = np.asarray(spectra).ndim == 1
    x = pad_spectra(spectra)
    if x.shape[1] != model.length:
        raise ShapeError(f"model was fitted on length {model.length}, got {x.shape[1]}")
    out = np.empty((x.shape[0], model.n_features))
    for s in range(0, x.shape[0], chunk):
        xs = x[s: s + chunk]
        cols = []
        start = 0
        for d, b in zip(model.dilations, model.biases):
            conv = convolve_bank(xs, int(d))
            hit = conv[:, :, None, :] > b[None, :, :, None]  # N, 84, q, L
            if weights is None:
                cols.append(hit.mean(axis=-1).reshape(xs.shape[0], -1))
            else:
                w = weights[start: start + b.size].reshape(84, b.shape[1], -1)
                cols.append((hit * w[None]).mean(axis=-1).reshape(xs.shape[0], -1))
            start += b.size
        out[s: s + chunk] = np.concatenate(cols, axis=1)
    return out[0] if single else out


def minirocket_transform(model: MiniRocketModel, spectra):
    """PPV features in [0, 1]; shape (n_features,) or (N, n_features)."""
    return _weighted_ppv(model, spectra)


@dataclass(frozen=True)
class HDCConfig:
    scale: float = 5.0
    seed: int = 42

    def __post_init__(self):
        if self.scale < 0:
            raise ConfigError(f"HDC scale must be >= 0, got {self.scale}")

    def angles(self, n_features):
        """Base angles, uniform in (-pi, pi]."""
        u = make_rng(self.seed, "hdc-angles").random(n_features)
        return np.pi - 2.0 * np.pi * u


def hdc_weights(model, cfg: HDCConfig):
    length = model.length
    pos = np.arange(length) / (length - 1) if length > 1 else np.zeros(1)
    theta = cfg.angles(model.n_features)
    return np.cos(cfg.scale * theta[:, None] * pos[None, :])


def hdc_transform(model: MiniRocketModel, cfg: HDCConfig, spectra):
    """Position-weighted PPV features in [-1, 1], same layout as :func:`minirocket_transform`."""
    if not model.fitted:
        raise StateError("MiniROCKET model is not fitted")
    return _weighted_ppv(model, spectra, hdc_weights(model, cfg))


# 1-D CNN -----------------------------------------------------------------------

@dataclass(frozen=True)
class JustoLiuConfig:
    n_classes: int = 2
    kernel_sizes: tuple = (6, 6)
    channels: tuple = (6, 12)

    @property
    def min_length(self):
        return 2 ** len(self.channels)


class JustoLiuNet(Module):
    """conv(6, 6ch) -> relu -> pool2 -> conv(6, 12ch) -> relu -> pool2 -> flatten -> FC.

    Convolutions keep the sequence length ('same' padding) so short spectra
    such as 15 bands remain admissible.
    """

    def __init__(self, n_bands, cfg: JustoLiuConfig, seed=42):
        if n_bands < cfg.min_length:
            raise ShapeError(f"spectrum of {n_bands} bands is shorter than the {cfg.min_length}-band minimum")
        rng = make_rng(seed, "justoliu-init")
        self.cfg = cfg
        self.n_bands = n_bands
        convs, c_in, length = [], 1, n_bands
        for ks, ch in zip(cfg.kernel_sizes, cfg.channels):
            convs.append(Conv1d(c_in, ch, ks, rng))
            c_in, length = ch, length // 2
        self.convs = convs
        self.flat = c_in * length
        self.fc = Linear(self.flat, cfg.n_classes, rng)

    def logits(self, x):
        if x.shape[-1] != self.n_bands:
            raise ShapeError(f"expected {self.n_bands} bands, got {x.shape[-1]}")
        h = x.reshape(x.shape[0], x.shape[1], 1)
        for conv in self.convs:
            h = T.maxpool1d(T.relu(conv(h)))
        return self.fc(h.reshape(h.shape[0], self.flat))

    def __call__(self, x):
        return self.logits(x)


def justoliu_forward(model: JustoLiuNet, spectra):
    spectra = np.atleast_2d(np.asarray(spectra))
    with T.no_grad():
        return T.softmax(model.logits(T.Tensor(spectra)), axis=-1).data

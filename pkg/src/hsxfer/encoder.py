"""MiniHSL: a small spectral transformer pretrained by masked band reconstruction.

The encoder sees one pixel at a time as a sequence of per-band tokens. During
pretraining a fraction of the tokens is replaced by a learned mask token (plus
the band's wavelength code, so the encoder still knows *where* the hidden band
sits) and a small MLP head regresses the hidden reflectances.
"""
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import container
from . import tensor as T
from .errors import ConfigError, DataError, FormatError, NumericError, TrainingError
from .nn import LayerNorm, Linear, Module, Parameter
from .rng import make_rng
from .tokenizer import SpectralTokenizer, SpectralTokenSequence, TokenizerConfig, as_wavelengths

log = logging.getLogger(__name__)

MAGIC = b"MHSL"


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    heads: int = 2
    d_model: int = 32
    d_ff: int = 64
    pe_scale: float = 10000.0

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if self.layers < 1:
            raise ConfigError("need at least one encoder layer")
        TokenizerConfig(self.d_model, self.pe_scale)

    @property
    def embed_dim(self):
        return self.d_model


@dataclass(frozen=True)
class MaskSpec:
    mask_ratio: float = 0.95
    stream: object = "mask"

    def __post_init__(self):
        if not 0 < self.mask_ratio < 1:
            raise ConfigError(f"mask_ratio must be in (0, 1), got {self.mask_ratio}")

    def count(self, n_bands):
        if n_bands < 2:
            raise DataError(f"masking needs at least 2 bands, got {n_bands}")
        # guard against 0.95 * 20 -> 18.999...
        n = math.floor(self.mask_ratio * n_bands + 1e-9)
        return min(max(n, 1), n_bands - 1)


def sample_mask(n_samples, n_bands, spec: MaskSpec, rng):
    """Boolean (n_samples, n_bands) array; each row hides ``spec.count(n_bands)`` bands."""
    n = spec.count(n_bands)
    order = np.argsort(rng.random((n_samples, n_bands)), axis=1, kind="stable")
    mask = np.zeros((n_samples, n_bands), dtype=bool)
    np.put_along_axis(mask, order[:, :n], True, axis=1)
    return mask


class EncoderBlock(Module):
    """Pre-norm transformer layer: x + MHSA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, cfg: EncoderConfig, rng):
        d = cfg.d_model
        self.heads = cfg.heads
        self.ln1 = LayerNorm(d)
        self.qkv = Linear(d, 3 * d, rng)
        self.proj = Linear(d, d, rng)
        self.ln2 = LayerNorm(d)
        self.ff1 = Linear(d, cfg.d_ff, rng)
        self.ff2 = Linear(cfg.d_ff, d, rng)

    def attention(self, x):
        b, c, d = x.shape
        h = self.heads
        dh = d // h
        qkv = self.qkv(x).reshape(b, c, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        ctx = T.matmul(T.softmax(scores, axis=-1), v)
        return self.proj(ctx.transpose(0, 2, 1, 3).reshape(b, c, d))

    def __call__(self, x):
        x = x + self.attention(self.ln1(x))
        return x + self.ff2(T.gelu(self.ff1(self.ln2(x))))


class MiniHSL(Module):
    def __init__(self, cfg: EncoderConfig = EncoderConfig(), seed=42):
        rng = make_rng(seed, "encoder-init")
        self.cfg = cfg
        self.tokenizer = SpectralTokenizer(TokenizerConfig(cfg.d_model, cfg.pe_scale), rng)
        self.mask_token = Parameter(rng.standard_normal(cfg.d_model) * 0.02)
        self.blocks = [EncoderBlock(cfg, rng) for _ in range(cfg.layers)]
        self.ln_out = LayerNorm(cfg.d_model)
        self.rec1 = Linear(cfg.d_model, cfg.d_ff, rng)
        self.rec2 = Linear(cfg.d_ff, 1, rng)
        self.frozen = False

    def backbone_parameters(self):
        return [p for n, p in self.named_parameters() if not n.startswith("rec")]

    def embed(self, spectra, wavelengths, mask=None):
        """Token embeddings for (B, C) spectra; masked positions get mask_token + PE."""
        tokens = self.tokenizer(spectra, wavelengths)
        if mask is None:
            return tokens
        m = np.asarray(mask, dtype=T.get_dtype())[..., None]
        masked = self.mask_token + self.tokenizer.pe(wavelengths)
        return tokens * (1.0 - m) + masked * m

    def encode_tokens(self, x):
        for i, block in enumerate(self.blocks):
            x = block(x)
            if not np.all(np.isfinite(x.data)):
                raise NumericError(f"non-finite activation after encoder layer {i}")
        x = self.ln_out(x)
        if not np.all(np.isfinite(x.data)):
            raise NumericError("non-finite activation after output layer norm")
        return x

    def forward(self, spectra, wavelengths, mask=None):
        """Per-token embeddings (B, C, D) for a batch of spectra sharing one wavelength grid."""
        spectra = spectra if isinstance(spectra, T.Tensor) else T.Tensor(spectra)
        return self.encode_tokens(self.embed(spectra, wavelengths, mask))

    __call__ = forward

    def reconstruct_all(self, per_token):
        """Predicted reflectance for every position, shape (..., C)."""
        y = self.rec2(T.gelu(self.rec1(per_token)))
        return y.reshape(y.shape[:-1])

    def encode(self, seq: SpectralTokenSequence):
        """Encode one tokenized pixel; returns (per-token C x D, pixel embedding D)."""
        if len(seq) < 1:
            raise DataError("cannot encode an empty token sequence")
        with T.no_grad():
            tok = T.Tensor(seq.tokens[None])
            out = self.encode_tokens(tok).data[0]
        return out, out.mean(axis=0)

    def mask_tokens(self, seq: SpectralTokenSequence, spec: MaskSpec, seed=42):
        """Replace a random subset of tokens by mask_token + PE; returns (sequence, sorted indices)."""
        c = len(seq)
        mask = sample_mask(1, c, spec, make_rng(seed, spec.stream))[0]
        tokens = seq.tokens.copy()
        pe = self.tokenizer.pe(seq.wavelengths)
        tokens[mask] = self.mask_token.data + pe[mask]
        return SpectralTokenSequence(tokens, seq.wavelengths), np.nonzero(mask)[0]

    def reconstruct(self, per_token, indices):
        """Predicted reflectances at ``indices`` from (C, D) per-token embeddings."""
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size == 0:
            return np.zeros(0, dtype=T.get_dtype())
        per_token = np.asarray(per_token)
        if indices.min() < 0 or indices.max() >= per_token.shape[0]:
            raise DataError("masked index out of range")
        with T.no_grad():
            return self.reconstruct_all(T.Tensor(per_token[indices])).data

    def encode_pixels(self, spectra, wavelengths, chunk=512):
        """Pixel embeddings (N, D) for (N, C) spectra in eval mode; mean over tokens."""
        wl = as_wavelengths(wavelengths)
        spectra = np.asarray(spectra)
        out = np.empty((spectra.shape[0], self.cfg.d_model), dtype=T.get_dtype())
        with T.no_grad():
            for s in range(0, spectra.shape[0], chunk):
                tok = self.encode_tokens(self.embed(T.Tensor(spectra[s: s + chunk]), wl))
                out[s: s + chunk] = tok.data.mean(axis=1)
        return out

    def freeze(self):
        self.eval()
        self.set_requires_grad(False)
        self.frozen = True
        return self


def freeze(model: MiniHSL) -> MiniHSL:
    """Put the encoder in eval mode with every weight excluded from gradients."""
    return model.freeze()


def weights_hash(module: Module) -> str:
    h = hashlib.sha256()
    for name, arr in module.state_dict().items():
        arr = np.ascontiguousarray(arr)
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


@dataclass
class EncoderCheckpoint:
    config: EncoderConfig
    state: dict
    frozen: bool = False
    history: list = field(default_factory=list)

    @classmethod
    def from_model(cls, model: MiniHSL, history=()):
        return cls(model.cfg, model.copy_state(), model.frozen, list(history))

    def to_bytes(self) -> bytes:
        return container.pack(MAGIC, asdict(self.config), self.state)

    @property
    def hash(self) -> str:
        return container.digest_of(self.to_bytes())

    def build(self, seed=42) -> MiniHSL:
        model = MiniHSL(self.config, seed=seed)
        model.load_state_dict(self.state)
        if self.frozen:
            model.freeze()
        return model

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, buf: bytes):
        cfg, tensors, _ = container.unpack(buf, MAGIC)
        try:
            config = EncoderConfig(**cfg)
        except TypeError as exc:
            raise FormatError(f"checkpoint config does not match EncoderConfig: {exc}") from exc
        return cls(config, tensors)

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def masked_mse(model: MiniHSL, spectra, wavelengths, mask):
    """Masked-band MSE of the reconstruction head, without gradients."""
    with T.no_grad():
        pred = model.reconstruct_all(model(spectra, wavelengths, mask))
        return float(T.mse(pred, T.Tensor(spectra), mask).data)


def _pick_batch(source, batch_size, rng):
    k = int(rng.integers(len(source)))
    spectra, wl = source[k]
    idx = rng.integers(0, spectra.shape[0], size=batch_size)
    return spectra[idx], wl


@dataclass
class PretrainResult:
    checkpoint: EncoderCheckpoint
    history: list
    model: MiniHSL


def pretrain(source, cfg=EncoderConfig(), spec=MaskSpec(), steps=500, lr=1e-3, batch_size=64, seed=42):
    """Masked spectral reconstruction on unlabeled pixels.

    ``source`` is a list of ``(spectra N x C, wavelengths C)`` pairs; grids may
    differ between entries. Each step draws one entry and ``batch_size`` pixels.
    """
    if not source:
        raise DataError("pretraining source is empty")
    source = [(np.asarray(s, dtype=T.get_dtype()), as_wavelengths(w)) for s, w in source]
    model = MiniHSL(cfg, seed=seed).train()
    opt = T.Adam(model.parameters(), lr=lr)
    rng = make_rng(seed, "pretrain-batches")
    mask_rng = make_rng(seed, spec.stream)
    history = []
    for step in range(steps):
        spectra, wl = _pick_batch(source, batch_size, rng)
        mask = sample_mask(spectra.shape[0], spectra.shape[1], spec, mask_rng)
        opt.zero_grad()
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                pred = model.reconstruct_all(model(spectra, wl, mask))
        except NumericError as exc:
            raise NumericError(f"pretraining diverged at step {step}: {exc}", last_finite_step=step - 1) from exc
        loss = T.mse(pred, T.Tensor(spectra), mask)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingError(f"pretraining diverged at step {step}", last_finite_step=step - 1)
        loss.backward()
        opt.step()
        history.append(value)
        if step % 100 == 0:
            log.info("pretrain step %d loss %.5f", step, value)
    model.eval()
    return PretrainResult(EncoderCheckpoint.from_model(model, history), history, model)

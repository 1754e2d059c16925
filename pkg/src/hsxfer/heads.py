"""Segmentation and classification heads plus their training loops.

``SegmentationNet`` is a U-Net with an optional 1x1 "neck" in front. With the
neck and batch-norm/dropout enabled it is the RU-Net head used on top of frozen
backbone features; without them it is the vanilla U-Net trained on raw cubes.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import container
from . import tensor as T
from .data.cube import IGNORE_LABEL
from .errors import ConfigError, DataError, ShapeError, TrainingError
from .metrics import ConfusionMatrix, MetricReport
from .nn import BatchNorm, Conv2d, Linear, Module
from .rng import make_rng

log = logging.getLogger(__name__)

MAGIC = b"MHED"

# learning rates per spectral model kind
SPECTRAL_LR = {
    "justoliu": 1e-1,
    "minirocket": 3e-4,
    "hdc-minirocket": 3e-4,
    "hsl-fc": 1e-4,
    "hsl": 1e-4,
}


@dataclass(frozen=True)
class NeckConfig:
    in_dim: int
    out_channels: int = 16

    def __post_init__(self):
        if self.out_channels < 1:
            raise ConfigError("neck needs at least one output channel")


@dataclass(frozen=True)
class RUNetConfig:
    depth: int = 2
    base: int = 16
    dropout: float = 0.2
    batch_norm: bool = True

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("U-Net depth must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


VANILLA_UNET = RUNetConfig(dropout=0.0, batch_norm=False)


@dataclass(frozen=True)
class FCHeadConfig:
    in_dim: int
    n_classes: int

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("a classifier needs at least 2 classes")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 4
    max_epochs: int = 50
    patience: int = 20
    seed: int = 42
    optimizer: str = "adam"
    steps_per_epoch: int = 0  # 0: one pass over the training set

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1 or self.steps_per_epoch < 0:
            raise ConfigError(f"invalid training config: {self}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def make_optimizer(self, params):
        return T.Adam(params, self.lr) if self.optimizer == "adam" else T.SGD(params, self.lr)


class ConvBlock(Module):
    """[conv3x3 -> batch_norm -> relu -> dropout] x 2."""

    def __init__(self, c_in, c_out, cfg: RUNetConfig, rng):
        self.conv1 = Conv2d(c_in, c_out, 3, rng)
        self.conv2 = Conv2d(c_out, c_out, 3, rng)
        if cfg.batch_norm:
            self.bn1 = BatchNorm(c_out)
            self.bn2 = BatchNorm(c_out)
        self.p = cfg.dropout
        self.use_bn = cfg.batch_norm

    def __call__(self, x, rng=None):
        for conv, bn in ((self.conv1, "bn1"), (self.conv2, "bn2")):
            x = conv(x)
            if self.use_bn:
                x = getattr(self, bn)(x)
            x = T.dropout(T.relu(x), self.p, self.training, rng)
        return x


class SegmentationNet(Module):
    def __init__(self, in_channels, n_classes, cfg: RUNetConfig = RUNetConfig(), neck: Optional[NeckConfig] = None,
                 seed=42):
        rng = make_rng(seed, "segnet-init")
        self.cfg = cfg
        self.n_classes = n_classes
        self.in_channels = in_channels
        c = in_channels
        if neck is not None:
            if neck.in_dim != in_channels:
                raise ConfigError(f"neck expects {neck.in_dim} input channels, model has {in_channels}")
            self.neck = Conv2d(in_channels, neck.out_channels, 1, rng)
            # per-channel standardization of the frozen features, fitted on the training set
            self.input_mean = np.zeros(in_channels, dtype=T.get_dtype())
            self.input_scale = np.ones(in_channels, dtype=T.get_dtype())
            self._buffer_names = ("input_mean", "input_scale")
            c = neck.out_channels
        else:
            self.neck = None
        widths = [cfg.base * 2 ** i for i in range(cfg.depth + 1)]
        down = []
        for w in widths[:-1]:
            down.append(ConvBlock(c, w, cfg, rng))
            c = w
        self.down = down
        self.bottom = ConvBlock(c, widths[-1], cfg, rng)
        up = []
        for i in reversed(range(cfg.depth)):
            up.append(ConvBlock(widths[i + 1] + widths[i], widths[i], cfg, rng))
        self.up = up
        self.classifier = Conv2d(widths[0], n_classes, 1, rng)
        self.dropout_rng = make_rng(seed, "segnet-dropout")

    def logits(self, x):
        """(N, H, W, C) -> (N, H, W, K). H and W must be divisible by 2**depth."""
        m = 2 ** self.cfg.depth
        if x.shape[-3] % m or x.shape[-2] % m:
            raise ShapeError(f"spatial extent {x.shape[-3]}x{x.shape[-2]} not divisible by {m}")
        rng = self.dropout_rng
        if self.neck is not None:
            x = (x - T.Tensor(self.input_mean)) * T.Tensor(self.input_scale)
            x = self.neck(x)
        skips = []
        for block in self.down:
            x = block(x, rng)
            skips.append(x)
            x = T.maxpool2d(x)
        x = self.bottom(x, rng)
        for block, skip in zip(self.up, reversed(skips)):
            x = block(T.concat([T.upsample2x(x), skip], axis=-1), rng)
        return self.classifier(x)

    __call__ = logits

    def fit_input_stats(self, maps, eps=1e-6):
        """Set the neck's input standardization from a list of (H, W, D) feature maps."""
        if self.neck is None:
            raise ConfigError("input standardization applies only to models with a neck")
        flat = np.concatenate([np.asarray(m, dtype=np.float64).reshape(-1, self.in_channels) for m in maps])
        self.input_mean[...] = flat.mean(axis=0)
        self.input_scale[...] = 1.0 / (flat.std(axis=0) + eps)

    def predict(self, inputs):
        """Argmax class map for one (H, W, C) array of any size (reflect-padded internally)."""
        self.eval()
        with T.no_grad():
            x, (h, w) = pad_to_multiple(inputs, 2 ** self.cfg.depth)
            out = self.logits(T.Tensor(x[None]))
        return out.data[0, :h, :w].argmax(axis=-1).astype(np.uint16)


def pad_to_multiple(x, m):
    """Reflect-pad the two leading spatial axes of (H, W, C) up to multiples of ``m``."""
    x = np.asarray(x)
    h, w = x.shape[:2]
    ph, pw = (-h) % m, (-w) % m
    if ph or pw:
        mode = "reflect" if h > ph and w > pw else "edge"
        x = np.pad(x, ((0, ph), (0, pw), (0, 0)), mode=mode)
    return x, (h, w)


def runet_forward(model: SegmentationNet, features):
    """Logits for one H x W x D feature map (eval mode, cropped back to H x W)."""
    model.eval()
    with T.no_grad():
        x, (h, w) = pad_to_multiple(features, 2 ** model.cfg.depth)
        return model.logits(T.Tensor(x[None])).data[0, :h, :w]


unet_forward = runet_forward


class FCHead(Module):
    """Single fully connected layer; softmax is applied by the loss or by :func:`fc_forward`."""

    def __init__(self, cfg: FCHeadConfig, seed=42):
        rng = make_rng(seed, "fc-init")
        self.cfg = cfg
        self.fc = Linear(cfg.in_dim, cfg.n_classes, rng)

    def logits(self, x):
        return self.fc(x)

    __call__ = logits


def fc_forward(head, embedding):
    e = np.atleast_2d(np.asarray(embedding))
    with T.no_grad():
        p = T.softmax(head.logits(T.Tensor(e)), axis=-1).data
    return p[0] if np.asarray(embedding).ndim == 1 else p


def save_head(model: Module, path, config: dict):
    Path(path).write_bytes(container.pack(MAGIC, config, model.state_dict()))


def load_head_state(path):
    cfg, tensors, _ = container.unpack(Path(path).read_bytes(), MAGIC)
    return cfg, tensors


# training ------------------------------------------------------------------------

@dataclass
class EpochStat:
    epoch: int
    loss: float
    val_miou: float
    cache_hits: int = 0
    cache_misses: int = 0


@dataclass
class TrainResult:
    best_epoch: int
    epochs_run: int
    history: list = field(default_factory=list)
    val_report: Optional[MetricReport] = None


def _check_loss(value, epoch):
    if not math.isfinite(value):
        raise TrainingError(f"loss became non-finite in epoch {epoch}", last_finite_step=epoch - 1)


def epoch_batches(n, tc: TrainConfig, stream):
    """Index batches for one epoch.

    Without ``steps_per_epoch`` this is one shuffled pass. Otherwise exactly
    that many full batches are cut from consecutive shuffles, so small training
    subsets still get the same number of optimizer steps per epoch.
    """
    rng = make_rng(tc.seed, stream)
    if not tc.steps_per_epoch:
        order = rng.permutation(n)
        return [order[s: s + tc.batch_size] for s in range(0, n, tc.batch_size)]
    size = min(tc.batch_size, n)
    need = tc.steps_per_epoch * size
    order = np.concatenate([rng.permutation(n) for _ in range(-(-need // n))])[:need]
    return [order[s: s + size] for s in range(0, need, size)]


def evaluate_segmentation(model, items, n_classes, features: Callable, class_names=None):
    cm = ConfusionMatrix(n_classes)
    for item in items:
        cm.update(model.predict(features(item)), item.labels)
    return MetricReport.from_confusion(cm, class_names)


def train_segmentation(model: SegmentationNet, train, val, tc: TrainConfig, features: Callable = None,
                       cache=None, class_names=None) -> TrainResult:
    """Fit ``model`` on labelled cubes, early-stopping on validation mIoU.

    ``features(cube)`` supplies the network input for a cube, called once per
    cube per epoch (raw reflectance by default). When it reads a feature cache,
    pass the cache so per-epoch hit/miss counts land in the history. The best
    validation epoch's weights are restored before returning.
    """
    if not train:
        raise DataError("training split is empty")
    if not val:
        raise DataError("validation split is empty")
    features = features or (lambda cube: cube.reflectance)
    n_classes = model.n_classes
    opt = tc.make_optimizer(model.parameters())
    m = 2 ** model.cfg.depth

    def score():
        if cache is not None:
            cache.reset_counters()
        rep = evaluate_segmentation(model, val, n_classes, features, class_names)
        return rep

    if model.neck is not None or cache is not None:
        # one pass over the training cubes fills the cache before epoch 1
        maps = [features(c) for c in train]
        if model.neck is not None:
            model.fit_input_stats(maps)
        del maps
    rep = score()
    best = (rep.miou, 0, model.copy_state(), rep)
    history = [EpochStat(0, float("nan"), rep.miou)]
    since = 0
    epoch = 0
    for epoch in range(1, tc.max_epochs + 1):
        if cache is not None:
            cache.reset_counters()
        model.train()
        losses = []
        inputs = [pad_to_multiple(features(c), m) for c in train]  # one lookup per cube per epoch
        for idx in epoch_batches(len(train), tc, f"seg-shuffle-{epoch}"):
            batch = [train[i] for i in idx]
            xs = [inputs[i] for i in idx]
            shapes = {x.shape for x, _ in xs}
            if len(shapes) != 1:
                raise ShapeError(f"cubes in a batch must share a shape, got {sorted(shapes)}")
            x = np.stack([a for a, _ in xs])
            y = np.full(x.shape[:3], IGNORE_LABEL, dtype=np.int64)
            for i, c in enumerate(batch):
                h, w = c.labels.shape
                y[i, :h, :w] = c.labels
            opt.zero_grad()
            logits = model.logits(T.Tensor(x))
            loss = T.cross_entropy(logits.reshape(-1, n_classes), y.reshape(-1), IGNORE_LABEL)
            value = float(loss.data)
            _check_loss(value, epoch)
            loss.backward()
            opt.step()
            losses.append(value)
        hits = cache.hits if cache is not None else 0
        misses = cache.misses if cache is not None else 0
        rep = score()
        history.append(EpochStat(epoch, float(np.mean(losses)), rep.miou, hits, misses))
        log.debug("epoch %d loss %.4f val mIoU %.4f", epoch, np.mean(losses), rep.miou)
        if rep.miou > best[0]:
            best = (rep.miou, epoch, model.copy_state(), rep)
            since = 0
        else:
            since += 1
            if since >= tc.patience:
                break
    model.load_state_dict(best[2])
    model.eval()
    return TrainResult(best[1], epoch, history, best[3])


def _pixel_report(model, x, y, n_classes, batch=1024, class_names=None):
    model.eval()
    cm = ConfusionMatrix(n_classes)
    with T.no_grad():
        for s in range(0, x.shape[0], batch):
            pred = model.logits(T.Tensor(x[s: s + batch])).data.argmax(axis=-1)
            cm.update(pred, y[s: s + batch])
    return MetricReport.from_confusion(cm, class_names)


def predict_pixels(model, x, batch=1024):
    model.eval()
    out = []
    with T.no_grad():
        for s in range(0, x.shape[0], batch):
            out.append(model.logits(T.Tensor(x[s: s + batch])).data.argmax(axis=-1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def train_spectral(model, x_train, y_train, x_val, y_val, tc: TrainConfig, n_classes, class_names=None):
    """Per-pixel classifier training with early stopping on validation mIoU.

    ``model.logits`` maps (B, F) inputs to (B, K) logits; rows labelled with the
    ignore value are skipped.
    """
    x_train = np.asarray(x_train)
    y_train = np.asarray(y_train)
    keep = y_train != IGNORE_LABEL
    x_train, y_train = x_train[keep], y_train[keep]
    if x_train.shape[0] == 0:
        raise DataError("training split is empty")
    if len(x_val) == 0:
        raise DataError("validation split is empty")
    opt = tc.make_optimizer(model.parameters())
    rep = _pixel_report(model, x_val, y_val, n_classes, class_names=class_names)
    best = (rep.miou, 0, model.copy_state(), rep)
    history = [EpochStat(0, float("nan"), rep.miou)]
    since = 0
    epoch = 0
    for epoch in range(1, tc.max_epochs + 1):
        model.train()
        order = make_rng(tc.seed, f"spec-shuffle-{epoch}").permutation(x_train.shape[0])
        losses = []
        for s in range(0, order.size, tc.batch_size):
            idx = order[s: s + tc.batch_size]
            opt.zero_grad()
            loss = T.cross_entropy(model.logits(T.Tensor(x_train[idx])), y_train[idx], IGNORE_LABEL)
            value = float(loss.data)
            _check_loss(value, epoch)
            loss.backward()
            opt.step()
            losses.append(value)
        rep = _pixel_report(model, x_val, y_val, n_classes, class_names=class_names)
        history.append(EpochStat(epoch, float(np.mean(losses)), rep.miou))
        if rep.miou > best[0]:
            best = (rep.miou, epoch, model.copy_state(), rep)
            since = 0
        else:
            since += 1
            if since >= tc.patience:
                break
    model.load_state_dict(best[2])
    model.eval()
    return TrainResult(best[1], epoch, history, best[3])


def default_spectral_config(kind, **overrides):
    """TrainConfig with the per-model learning rate; the 1-D CNN uses plain SGD."""
    if kind not in SPECTRAL_LR:
        raise ConfigError(f"unknown spectral model kind {kind!r}")
    base = dict(lr=SPECTRAL_LR[kind], batch_size=256, max_epochs=100, patience=20,
                optimizer="sgd" if kind == "justoliu" else "adam")
    base.update(overrides)
    return TrainConfig(**base)

"""Experiment configs, single runs and the benchmark matrix.

A run trains one model on one dataset under one of three strategies:

* ``in-domain``: train from scratch on the target cubes;
* ``cross-domain``: freeze a pretrained MiniHSL encoder, cache its per-pixel
  features, and train only the neck and head;
* ``cross-modality``: project cubes to pseudo-RGB and train from scratch on 3
  channels.

Evaluation touches the test split only after training; while training, a
guard rejects any attempt to load a test-tagged cube.
"""
import contextlib
import hashlib
import logging
import math
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import kvfile
from .baselines import (HDCConfig, JustoLiuConfig, JustoLiuNet, hdc_transform, minirocket_fit,
                        minirocket_transform)
from .data.cache import FeatureCache
from .data.cube import IGNORE_LABEL
from .data.manifest import DatasetManifest, subset_training
from .encoder import EncoderCheckpoint, weights_hash
from .errors import ConfigError, DataError
from .heads import (VANILLA_UNET, FCHead, FCHeadConfig, NeckConfig, RUNetConfig, SegmentationNet,
                    TrainConfig, default_spectral_config, predict_pixels, save_head, train_segmentation,
                    train_spectral)
from .metrics import ConfusionMatrix, MetricReport
from .modality import ProjectionSpec, project_cube
from .rng import make_rng

log = logging.getLogger(__name__)

STRATEGIES = ("in-domain", "cross-domain", "cross-modality")
TASKS = ("segmentation", "spectral")
FRACTIONS = (0.10, 0.25, 1.0)

# model id -> (task, strategy, backbone label, data label)
MODELS = {
    "unet": ("segmentation", "in-domain", "--", "HSI"),
    "runet": ("segmentation", "in-domain", "--", "HSI"),
    "hsl-runet": ("segmentation", "cross-domain", "MiniHSL", "HSI"),
    "prgb-runet": ("segmentation", "cross-modality", "--", "pRGB"),
    "prgb-unet": ("segmentation", "cross-modality", "--", "pRGB"),
    "justoliu": ("spectral", "in-domain", "--", "HSI"),
    "minirocket": ("spectral", "in-domain", "--", "HSI"),
    "hdc-minirocket": ("spectral", "in-domain", "--", "HSI"),
    "hsl-fc": ("spectral", "cross-domain", "MiniHSL", "HSI"),
}
APPROACH_NAMES = {
    "unet": "U-Net", "runet": "RU-Net", "hsl-runet": "RU-Net", "prgb-runet": "RU-Net", "prgb-unet": "U-Net",
    "justoliu": "1D-Justo-LiuNet", "minirocket": "MiniROCKET", "hdc-minirocket": "HDC-MiniROCKET",
    "hsl-fc": "MiniHSL-FC",
}


@dataclass
class ExperimentConfig:
    model: str
    dataset: str  # manifest path
    strategy: str = ""
    task: str = ""
    fraction: float = 1.0
    train: TrainConfig = field(default_factory=TrainConfig)
    checkpoint: Optional[str] = None
    projection: str = "cie"
    out: Optional[str] = None
    max_train_pixels: int = 4000
    max_val_pixels: int = 2000
    minirocket_features: int = 1000
    hdc_scale: float = 5.0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {sorted(MODELS)}")
        task, strategy, _, _ = MODELS[self.model]
        self.task = self.task or task
        self.strategy = self.strategy or strategy
        if (self.task, self.strategy) != (task, strategy):
            raise ConfigError(f"model {self.model!r} is a {task}/{strategy} model, "
                              f"config says {self.task}/{self.strategy}")
        if not any(math.isclose(self.fraction, f) for f in FRACTIONS):
            raise ConfigError(f"fraction must be one of {FRACTIONS}, got {self.fraction}")
        if self.strategy == "cross-domain" and not self.checkpoint:
            raise ConfigError("cross-domain runs need a checkpoint")
        if self.strategy == "cross-modality":
            ProjectionSpec(self.projection)

    def canonical(self):
        """Config text that determines the result (output location excluded)."""
        d = OrderedDict(model=self.model, strategy=self.strategy, task=self.task, fraction=repr(float(self.fraction)),
                        dataset=_file_digest(self.dataset),
                        checkpoint=_file_digest(self.checkpoint) if self.checkpoint else "",
                        projection=self.projection if self.strategy == "cross-modality" else "",
                        max_train_pixels=self.max_train_pixels, max_val_pixels=self.max_val_pixels,
                        minirocket_features=self.minirocket_features, hdc_scale=repr(float(self.hdc_scale)))
        d.update((k, repr(v)) for k, v in asdict(self.train).items())
        return kvfile.dump([(None, {k: str(v) for k, v in d.items()})])

    @property
    def config_hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @classmethod
    def from_sections(cls, sections, base_dir="."):
        d = kvfile.as_dict(sections)
        exp = dict(d.get("experiment", d.get(None, {})))
        if "model" not in exp or "dataset" not in exp:
            raise ConfigError("experiment config needs 'model' and 'dataset'")
        base = Path(base_dir)

        def rel(p):
            return str(base / p) if p and not Path(p).is_absolute() else p

        kw = dict(model=exp["model"], dataset=rel(exp["dataset"]), strategy=exp.get("strategy", ""),
                  task=exp.get("task", ""))
        if "fraction" in exp:
            kw["fraction"] = _float(exp["fraction"], "fraction")
        if exp.get("checkpoint"):
            kw["checkpoint"] = rel(exp["checkpoint"])
        if "out" in exp:
            kw["out"] = rel(exp["out"])
        for key in ("projection",):
            if key in exp:
                kw[key] = exp[key]
        for key in ("max_train_pixels", "max_val_pixels", "minirocket_features"):
            if key in exp:
                kw[key] = _int(exp[key], key)
        if "hdc_scale" in exp:
            kw["hdc_scale"] = _float(exp["hdc_scale"], "hdc_scale")
        kw["train"] = train_config_for(kw["model"], d.get("train", {}))
        return cls(**kw)

    @classmethod
    def load(cls, path):
        path = Path(path)
        return cls.from_sections(kvfile.parse(path.read_text(encoding="utf-8")), path.parent)


def _file_digest(path):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"file not found: {path}")
    return hashlib.sha256(p.read_bytes()).hexdigest()


def _float(v, key):
    try:
        return float(v)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {v!r}") from exc


def _int(v, key):
    try:
        return int(v)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {v!r}") from exc


SEGMENTATION_DEFAULTS = dict(lr=1e-3, batch_size=4, max_epochs=30, patience=10, steps_per_epoch=6)


def train_config_for(model, overrides=None):
    overrides = dict(overrides or {})
    typed = {}
    for f in fields(TrainConfig):
        if f.name in overrides:
            raw = overrides.pop(f.name)
            typed[f.name] = raw if f.name == "optimizer" else (
                _int(raw, f.name) if f.type in (int, "int") else _float(raw, f.name))
    if overrides:
        raise ConfigError(f"unknown [train] keys: {sorted(overrides)}")
    if MODELS[model][0] == "spectral":
        return default_spectral_config(_spectral_kind(model), **typed)
    base = dict(SEGMENTATION_DEFAULTS)
    base.update(typed)
    return TrainConfig(**base)


def _spectral_kind(model):
    return "hsl-fc" if model == "hsl-fc" else model


# test-split guard ------------------------------------------------------------------

class SplitGuard:
    """Loads cubes from a manifest, refusing test cubes until evaluation starts."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self.phase = "train"
        self.reads = []

    def load(self, entry):
        if entry.split == "test" and self.phase != "eval":
            raise DataError(f"test cube {entry.path} requested during training")
        self.reads.append((self.phase, entry.split, entry.path))
        return self.manifest.load(entry)

    @contextlib.contextmanager
    def evaluation(self):
        self.phase = "eval"
        try:
            yield
        finally:
            self.phase = "done"

    def test_reads_during_training(self):
        return [r for r in self.reads if r[0] == "train" and r[1] == "test"]


# run record --------------------------------------------------------------------------

@dataclass
class RunRecord:
    config_hash: str
    seed: int
    model: str
    strategy: str
    task: str
    dataset: str
    fraction: float
    n_train: int
    epochs_run: int
    best_epoch: int
    report: MetricReport
    val_miou: list = field(default_factory=list)
    backbone_hash_before: str = ""
    backbone_hash_after: str = ""
    cache_hits: list = field(default_factory=list)
    cache_misses: list = field(default_factory=list)
    projection: str = ""
    wall_time: float = 0.0

    def to_text(self):
        """Deterministic summary; wall time is kept out so reruns compare byte-for-byte."""
        lines = [f"config_hash = {self.config_hash}", f"seed = {self.seed}", f"model = {self.model}",
                 f"strategy = {self.strategy}", f"task = {self.task}", f"dataset = {self.dataset}",
                 f"fraction = {self.fraction!r}", f"n_train = {self.n_train}",
                 f"epochs_run = {self.epochs_run}", f"best_epoch = {self.best_epoch}"]
        for k, v in self.report.summary().items():
            lines.append(f"{k} = {v!r}")
        lines.append("val_miou = " + ", ".join(f"{v:.6f}" for v in self.val_miou))
        if self.backbone_hash_before:
            lines.append(f"backbone_hash_before = {self.backbone_hash_before}")
            lines.append(f"backbone_hash_after = {self.backbone_hash_after}")
        if self.cache_hits:
            lines.append("cache_hits = " + ", ".join(map(str, self.cache_hits)))
            lines.append("cache_misses = " + ", ".join(map(str, self.cache_misses)))
        if self.projection:
            lines.append(f"projection = {self.projection}")
        return "\n".join(lines) + "\n"


# running ------------------------------------------------------------------------------

class Runner:
    """Executes experiments, sharing checkpoints and the feature cache across runs."""

    def __init__(self, cache: Optional[FeatureCache] = None):
        self.cache = cache or FeatureCache()
        self._encoders = {}

    def encoder(self, path):
        path = str(path)
        if path not in self._encoders:
            ckpt = EncoderCheckpoint.load(path)
            model = ckpt.build().freeze()
            self._encoders[path] = (model, ckpt.hash)
        return self._encoders[path]

    def run(self, cfg: ExperimentConfig) -> RunRecord:
        t0 = time.perf_counter()
        manifest = DatasetManifest.load_file(cfg.dataset)
        guard = SplitGuard(manifest)
        seed = cfg.train.seed
        train_entries = subset_training(manifest.split("train"), cfg.fraction, seed)
        train = [guard.load(e) for e in train_entries]
        val = [guard.load(e) for e in manifest.split("val")]
        if cfg.task == "segmentation":
            record, model, predict = self._segmentation(cfg, manifest, train, val)
        else:
            record, model, predict = self._spectral(cfg, manifest, train, val)
        with guard.evaluation():
            test_entries = manifest.split("test")
            if not test_entries:
                raise DataError("test split is empty")
            cm = ConfusionMatrix(manifest.n_classes)
            preds = {}
            for e in test_entries:
                cube = guard.load(e)
                pred = predict(cube)
                cm.update(pred, cube.labels)
                preds[Path(e.path).stem] = pred
        record.report = MetricReport.from_confusion(cm, manifest.classes)
        record.wall_time = time.perf_counter() - t0
        if cfg.out:
            write_run(cfg, record, model, preds)
        return record

    def _base_record(self, cfg, manifest, n_train, result):
        return RunRecord(cfg.config_hash, cfg.train.seed, cfg.model, cfg.strategy, cfg.task, manifest.name,
                         float(cfg.fraction), n_train, result.epochs_run, result.best_epoch, None,
                         [h.val_miou for h in result.history])

    def _segmentation(self, cfg, manifest, train, val):
        k = manifest.n_classes
        seed = cfg.train.seed
        if cfg.strategy == "in-domain":
            net_cfg = VANILLA_UNET if cfg.model == "unet" else RUNetConfig()
            model = SegmentationNet(train[0].n_bands, k, net_cfg, seed=seed)
            result = train_segmentation(model, train, val, cfg.train, class_names=manifest.classes)
            record = self._base_record(cfg, manifest, len(train), result)
            return record, model, lambda cube: model.predict(cube.reflectance)
        if cfg.strategy == "cross-modality":
            spec = ProjectionSpec(cfg.projection)
            methods = set()

            def proj(cube):
                out, method = project_cube(cube, spec)
                methods.add(method)
                return out

            train_p, val_p = [proj(c) for c in train], [proj(c) for c in val]
            net_cfg = VANILLA_UNET if cfg.model == "prgb-unet" else RUNetConfig()
            model = SegmentationNet(3, k, net_cfg, seed=seed)
            result = train_segmentation(model, train_p, val_p, cfg.train, class_names=manifest.classes)
            record = self._base_record(cfg, manifest, len(train), result)
            record.projection = ",".join(sorted(methods))
            return record, model, lambda cube: model.predict(proj(cube).reflectance)
        encoder, ckpt_hash = self.encoder(cfg.checkpoint)
        before = weights_hash(encoder)
        cache = self.cache

        def features(cube):
            return cache.get(encoder, cube, ckpt_hash).features

        d = encoder.cfg.embed_dim
        model = SegmentationNet(d, k, RUNetConfig(), NeckConfig(d), seed=seed)
        result = train_segmentation(model, train, val, cfg.train, features=features, cache=cache,
                                    class_names=manifest.classes)
        record = self._base_record(cfg, manifest, len(train), result)
        record.backbone_hash_before = before
        record.backbone_hash_after = weights_hash(encoder)
        record.cache_hits = [h.cache_hits for h in result.history[1:]]
        record.cache_misses = [h.cache_misses for h in result.history[1:]]
        return record, model, lambda cube: model.predict(features(cube))

    def _spectral(self, cfg, manifest, train, val):
        k = manifest.n_classes
        seed = cfg.train.seed
        xtr, ytr = sample_pixels(train, cfg.max_train_pixels, make_rng(seed, "train-pixels"))
        xva, yva = sample_pixels(val, cfg.max_val_pixels, make_rng(seed, "val-pixels"))
        before = ""
        if cfg.model == "justoliu":
            model = JustoLiuNet(xtr.shape[1], JustoLiuConfig(n_classes=k), seed=seed)

            def transform(x):
                return x
        elif cfg.model in ("minirocket", "hdc-minirocket"):
            rocket = minirocket_fit(xtr, cfg.minirocket_features, seed=seed)
            if cfg.model == "minirocket":
                def transform(x):
                    return minirocket_transform(rocket, x)
            else:
                hdc = HDCConfig(cfg.hdc_scale, seed)

                def transform(x):
                    return hdc_transform(rocket, hdc, x)
            model = FCHead(FCHeadConfig(rocket.n_features, k), seed=seed)
        else:
            encoder, ckpt_hash = self.encoder(cfg.checkpoint)
            before = weights_hash(encoder)
            wl = train[0].wavelengths

            def transform(x):
                return encoder.encode_pixels(x, wl)
            model = FCHead(FCHeadConfig(encoder.cfg.embed_dim, k), seed=seed)
        result = train_spectral(model, transform(xtr), ytr, transform(xva), yva, cfg.train, k,
                                class_names=manifest.classes)
        record = self._base_record(cfg, manifest, len(train), result)
        if before:
            record.backbone_hash_before = before
            record.backbone_hash_after = weights_hash(self.encoder(cfg.checkpoint)[0])

        def predict(cube):
            h, w, c = cube.shape
            return predict_pixels(model, transform(cube.reflectance.reshape(-1, c))).reshape(h, w).astype(np.uint16)

        return record, model, predict


def sample_pixels(cubes, limit, rng):
    """Labelled pixels (ignore label dropped), subsampled to at most ``limit``."""
    xs = np.concatenate([c.reflectance.reshape(-1, c.n_bands) for c in cubes])
    ys = np.concatenate([c.labels.reshape(-1) for c in cubes]).astype(np.int64)
    keep = ys != IGNORE_LABEL
    xs, ys = xs[keep], ys[keep]
    if xs.shape[0] > limit:
        idx = np.sort(rng.choice(xs.shape[0], size=limit, replace=False))
        xs, ys = xs[idx], ys[idx]
    return xs, ys


def write_run(cfg: ExperimentConfig, record: RunRecord, model, preds):
    out = Path(cfg.out)
    (out / "predictions").mkdir(parents=True, exist_ok=True)
    (out / "record.txt").write_text(record.to_text(), encoding="utf-8")
    (out / "report.txt").write_text(record.report.to_text(), encoding="utf-8")
    (out / "report.csv").write_text(record.report.to_csv(), encoding="utf-8")
    (out / "config.txt").write_text(cfg.canonical(), encoding="utf-8")
    (out / "timing.txt").write_text(f"wall_time_s = {record.wall_time:.3f}\n", encoding="utf-8")
    save_head(model, out / "head.mhed", {"model": cfg.model, "config_hash": record.config_hash})
    for stem, pred in sorted(preds.items()):
        np.save(out / "predictions" / f"{stem}.npy", pred, allow_pickle=False)


def run_experiment(cfg: ExperimentConfig, runner: Optional[Runner] = None) -> RunRecord:
    return (runner or Runner()).run(cfg)


# benchmark matrix ------------------------------------------------------------------------

METRIC_KEYS = ("OA", "AA", "F1", "mIoU")


@dataclass
class MatrixSpec:
    data: str
    checkpoint: Optional[str]
    datasets: list
    models: list
    fractions: list
    train: dict = field(default_factory=dict)
    baseline: str = "runet"
    transfer: str = "hsl-runet"
    projection: str = "cie"

    @classmethod
    def from_sections(cls, sections, base_dir="."):
        d = kvfile.as_dict(sections)
        b = dict(d.get("benchmark", d.get(None, {})))
        base = Path(base_dir)

        def rel(p):
            return str(base / p) if p and not Path(p).is_absolute() else p

        if "data" not in b:
            raise ConfigError("benchmark config needs 'data' (suite directory)")
        fractions = [_float(f, "fractions") for f in kvfile.split_list(b.get("fractions", "0.10, 0.25, 1.0"))]
        spec = cls(data=rel(b["data"]), checkpoint=rel(b.get("checkpoint")) or None,
                   datasets=kvfile.split_list(b.get("datasets", "hyko2, hcv, hsidrive")),
                   models=kvfile.split_list(b.get("models", "unet, runet, hsl-runet")),
                   fractions=fractions, train=dict(d.get("train", {})),
                   baseline=b.get("baseline", "runet"), transfer=b.get("transfer", "hsl-runet"),
                   projection=b.get("projection", "cie"))
        for m in spec.models:
            if m not in MODELS:
                raise ConfigError(f"unknown model {m!r}")
        return spec

    @classmethod
    def load(cls, path):
        path = Path(path)
        return cls.from_sections(kvfile.parse(path.read_text(encoding="utf-8")), path.parent)

    def cells(self, out_dir):
        for ds in self.datasets:
            for model in self.models:
                for frac in self.fractions:
                    name = f"{ds}__{model}__{frac:g}"
                    needs_ckpt = MODELS[model][1] == "cross-domain"
                    yield ExperimentConfig(
                        model=model, dataset=str(Path(self.data) / ds / "manifest.txt"), fraction=frac,
                        train=train_config_for(model, self.train),
                        checkpoint=self.checkpoint if needs_ckpt else None, projection=self.projection,
                        out=str(Path(out_dir) / "runs" / name)), ds


@dataclass
class TableRow:
    dataset: str
    approach: str
    backbone: str
    data: str
    fraction: float
    metrics: dict
    model: str = ""


class ComparisonTable:
    """Dataset rows plus per-(model, fraction) average and worst-case aggregate rows."""

    def __init__(self, rows):
        self.rows = list(rows)

    def aggregates(self):
        groups = OrderedDict()
        for r in self.rows:
            groups.setdefault((r.model, r.fraction), []).append(r)
        avg, worst = [], []
        for (model, frac), rs in groups.items():
            first = rs[0]
            avg.append(TableRow("Average", first.approach, first.backbone, first.data, frac,
                                {k: float(np.mean([r.metrics[k] for r in rs])) for k in METRIC_KEYS}, model))
            worst.append(TableRow("Worst-Case", first.approach, first.backbone, first.data, frac,
                                  {k: float(min(r.metrics[k] for r in rs)) for k in METRIC_KEYS}, model))
        return avg, worst

    def all_rows(self):
        avg, worst = self.aggregates()
        return self.rows + avg + worst

    def to_csv(self):
        lines = ["dataset,approach,backbone,data,model,fraction," + ",".join(METRIC_KEYS)]
        for r in self.all_rows():
            vals = ",".join(repr(float(r.metrics[k])) for k in METRIC_KEYS)
            lines.append(f"{r.dataset},{r.approach},{r.backbone},{r.data},{r.model},{r.fraction!r},{vals}")
        return "\n".join(lines) + "\n"

    def to_text(self):
        header = f"{'Dataset':<14}{'Approach':<17}{'Backbone':<10}{'Data':<6}{'Frac':>6}" + "".join(
            f"{k:>8}" for k in METRIC_KEYS)
        lines = [header, "-" * len(header)]
        for r in self.all_rows():
            lines.append(f"{r.dataset:<14}{r.approach:<17}{r.backbone:<10}{r.data:<6}{r.fraction:>6.2f}"
                         + "".join(f"{100 * r.metrics[k]:>8.2f}" for k in METRIC_KEYS))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text):
        lines = text.strip().splitlines()
        rows = []
        for line in lines[1:]:
            ds, appr, bb, data, model, frac, *vals = line.split(",")
            if ds in ("Average", "Worst-Case"):
                continue
            rows.append(TableRow(ds, appr, bb, data, float(frac),
                                 dict(zip(METRIC_KEYS, map(float, vals))), model))
        return cls(rows)


def limited_data_deltas(table: ComparisonTable, transfer, baseline, metric="mIoU"):
    """Per (dataset, fraction): transfer-model metric minus baseline-model metric."""
    idx = {(r.dataset, r.model, r.fraction): r.metrics[metric] for r in table.rows}
    out = []
    for (ds, model, frac), v in idx.items():
        if model != transfer or (ds, baseline, frac) not in idx:
            continue
        out.append((ds, frac, v - idx[(ds, baseline, frac)]))
    return out


def deltas_csv(deltas):
    lines = ["dataset,fraction,delta_mIoU"]
    lines += [f"{ds},{frac!r},{d!r}" for ds, frac, d in deltas]
    return "\n".join(lines) + "\n"


def deltas_svg(deltas, width=640, height=320):
    """Grouped bar chart of mIoU deltas; green for gains, red for losses."""
    if not deltas:
        return '<svg xmlns="http://www.w3.org/2000/svg" width="10" height="10"/>\n'
    span = max(max(abs(d) for _, _, d in deltas), 1e-6)
    pad, mid = 40, height / 2
    bar = (width - 2 * pad) / len(deltas)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<line x1="{pad}" y1="{mid}" x2="{width - pad}" y2="{mid}" stroke="black"/>']
    for i, (ds, frac, d) in enumerate(deltas):
        h = (height / 2 - pad) * abs(d) / span
        x = pad + i * bar + bar * 0.1
        y = mid - h if d >= 0 else mid
        color = "green" if d >= 0 else "red"
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar * 0.8:.1f}" height="{h:.1f}" fill="{color}"/>')
        parts.append(f'<text x="{x:.1f}" y="{height - 10}" font-size="9">{ds} {100 * frac:g}%</text>')
        parts.append(f'<text x="{x:.1f}" y="{(y - 3) if d >= 0 else (y + h + 10):.1f}" font-size="9">'
                     f'{100 * d:+.2f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


@dataclass
class BenchmarkResult:
    table: ComparisonTable
    records: list
    deltas: list


def _run_cell(args):
    cfg, store = args
    return Runner(FeatureCache(store)).run(cfg)


def run_benchmark(spec: MatrixSpec, out_dir, workers=1, cache_store=None) -> BenchmarkResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = list(spec.cells(out))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        store = cache_store or out / "feature_cache"
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_run_cell, [(cfg, store) for cfg, _ in cells]))
    else:
        runner = Runner(FeatureCache(cache_store))
        records = []
        for cfg, ds in cells:
            log.info("run %s / %s / %g", ds, cfg.model, cfg.fraction)
            records.append(runner.run(cfg))
    rows = []
    for (cfg, ds), rec in zip(cells, records):
        _, _, backbone, data = MODELS[cfg.model]
        rows.append(TableRow(ds, APPROACH_NAMES[cfg.model], backbone, data, cfg.fraction,
                             rec.report.summary(), cfg.model))
    table = ComparisonTable(rows)
    deltas = limited_data_deltas(table, spec.transfer, spec.baseline)
    (out / "table.csv").write_text(table.to_csv(), encoding="utf-8")
    (out / "table.txt").write_text(table.to_text(), encoding="utf-8")
    (out / "limited_data.csv").write_text(deltas_csv(deltas), encoding="utf-8")
    (out / "limited_data.svg").write_text(deltas_svg(deltas), encoding="utf-8")
    return BenchmarkResult(table, records, deltas)

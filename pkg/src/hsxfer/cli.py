"""Command-line entry point: ``hsxfer <verb> [options]``.

Exit codes: 0 success, 2 config error, 3 data/format error, 4 training
divergence, 5 evaluation error.
"""
import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import kvfile
from .bench import (FRACTIONS, ComparisonTable, ExperimentConfig, MatrixSpec, Runner, deltas_csv, deltas_svg,
                    limited_data_deltas, run_benchmark)
from .data.cache import FeatureCache
from .data.cube import read_cube, write_cube
from .data.manifest import SPLITS, DatasetManifest
from .data.suite import TARGETS, SuiteSpec, generate_suite, load_source_pixels
from .encoder import EncoderCheckpoint, EncoderConfig, MaskSpec, pretrain
from .errors import ConfigError, EvaluationError, HSXError
from .metrics import ConfusionMatrix, MetricReport
from .modality import ProjectionSpec, project_cube

log = logging.getLogger("hsxfer")

MATRICES = {
    "segmentation": ["unet", "runet", "hsl-runet"],
    "spectral": ["justoliu", "minirocket", "hdc-minirocket", "hsl-fc"],
    "modality": ["prgb-runet", "hsl-runet"],
}


def _config_sections(path):
    if not path:
        return {}
    return kvfile.as_dict(kvfile.parse(Path(path).read_text(encoding="utf-8")))


def _require(value, flag):
    if value is None:
        raise ConfigError(f"{flag} is required")
    return value


# verbs --------------------------------------------------------------------------

def cmd_gen_data(args):
    sec = _config_sections(args.config).get("suite", {})
    kw = {}
    for key, cast in (("n_cubes", int), ("height", int), ("width", int), ("smoothness", float),
                      ("source_cubes", int), ("source_classes", int), ("source_noise", float), ("n_classes", int)):
        if key in sec:
            try:
                kw[key] = cast(sec[key])
            except ValueError as exc:
                raise ConfigError(f"[suite] {key}: bad value {sec[key]!r}") from exc
    if args.classes:
        kw["n_classes"] = args.classes
    if args.cubes:
        kw["n_cubes"] = args.cubes
    if args.size:
        kw["height"] = kw["width"] = args.size
    suite = SuiteSpec(**kw)
    out = Path(_require(args.out, "--out"))
    manifests = generate_suite(out, suite, args.seed, tuple(args.targets or TARGETS))
    for key, m in manifests.items():
        print(f"{key}: {len(m.entries)} cubes -> {out / key / 'manifest.txt'}")
    return 0


def cmd_pretrain(args):
    sec = _config_sections(args.config)
    enc = {k: int(v) for k, v in sec.get("encoder", {}).items() if k != "pe_scale"}
    if "pe_scale" in sec.get("encoder", {}):
        enc["pe_scale"] = float(sec["encoder"]["pe_scale"])
    cfg = EncoderConfig(**enc)
    source = Path(_require(args.source, "--source"))
    manifest = DatasetManifest.load_file(source / "manifest.txt" if source.is_dir() else source)
    out = Path(_require(args.out, "--out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = pretrain(load_source_pixels(manifest), cfg, MaskSpec(args.mask_ratio), steps=args.steps, lr=args.lr,
                      batch_size=args.batch_size, seed=args.seed)
    result.checkpoint.save(out)
    loss_path = out.with_name(out.name + ".loss.csv")
    loss_path.write_text("step,masked_mse\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(result.history)),
                         encoding="utf-8")
    print(f"checkpoint {out} sha256={result.checkpoint.hash} steps={args.steps} "
          f"time={time.perf_counter() - t0:.1f}s")
    return 0


def cmd_run(args):
    cfg = ExperimentConfig.load(_require(args.config, "--config"))
    if getattr(args, "seed_given", False):
        cfg.train.seed = args.seed
    if args.out:
        cfg.out = args.out
    record = Runner().run(cfg)
    sys.stdout.write(record.to_text())
    return 0


def _default_checkpoint(data, out, seed):
    """Pretrain on the suite's source corpus unless a checkpoint already exists there."""
    path = Path(out) / "minihsl.mhsl"
    if not path.exists():
        manifest = DatasetManifest.load_file(Path(data) / "source" / "manifest.txt")
        log.info("pretraining backbone on %s", manifest.root)
        result = pretrain(load_source_pixels(manifest), seed=seed)
        path.parent.mkdir(parents=True, exist_ok=True)
        result.checkpoint.save(path)
        path.with_name(path.name + ".loss.csv").write_text(
            "step,masked_mse\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(result.history)), encoding="utf-8")
    return str(path)


def cmd_benchmark(args):
    out = Path(_require(args.out, "--out"))
    if args.config:
        spec = MatrixSpec.load(args.config)
    else:
        data = _require(args.data, "--data (or --config)")
        fractions = list(FRACTIONS) if args.matrix == "segmentation" else [1.0]
        if args.fractions:
            fractions = [float(f) for f in kvfile.split_list(args.fractions)]
        spec = MatrixSpec(data=data, checkpoint=args.checkpoint, datasets=list(TARGETS),
                          models=MATRICES[args.matrix], fractions=fractions,
                          baseline="prgb-runet" if args.matrix == "modality" else (
                              "minirocket" if args.matrix == "spectral" else "runet"),
                          transfer="hsl-fc" if args.matrix == "spectral" else "hsl-runet")
    spec.train.setdefault("seed", str(args.seed))
    needs_ckpt = any(m in ("hsl-runet", "hsl-fc") for m in spec.models)
    if needs_ckpt and not spec.checkpoint:
        spec.checkpoint = _default_checkpoint(spec.data, out, args.seed)
    t0 = time.perf_counter()
    result = run_benchmark(spec, out, workers=args.threads, cache_store=args.cache)
    (out / "timing.txt").write_text(f"wall_time_s = {time.perf_counter() - t0:.3f}\n", encoding="utf-8")
    sys.stdout.write(result.table.to_text())
    return 0


def cmd_project(args):
    src = Path(_require(args.input, "input cube"))
    cube = read_cube(src)
    projected, method = project_cube(cube, ProjectionSpec(args.method))
    out = Path(args.out) if args.out else src.with_name(src.stem + ".prgb.hscb")
    write_cube(projected, out)
    log.info("projected %s with method=%s", src, method)
    print(f"method={method} -> {out}")
    return 0


def cmd_cache(args):
    ckpt = EncoderCheckpoint.load(_require(args.checkpoint, "--checkpoint"))
    encoder = ckpt.build().freeze()
    manifest = DatasetManifest.load_file(_require(args.manifest, "--manifest"))
    cache = FeatureCache(_require(args.store, "--store"))
    for e in manifest.entries:
        cache.get(encoder, manifest.load(e), ckpt.hash)
    total = cache.hits + cache.misses
    rate = 100.0 * cache.hits / total if total else 0.0
    print(f"cubes={total} hits={cache.hits} misses={cache.misses} hit_rate={rate:.1f}%")
    return 0


def cmd_eval(args):
    manifest = DatasetManifest.load_file(_require(args.manifest, "--manifest"))
    pred_dir = Path(_require(args.pred, "--pred"))
    entries = manifest.split(args.split)
    if not entries:
        raise EvaluationError(f"split {args.split!r} is empty")
    cm = ConfusionMatrix(manifest.n_classes)
    for e in entries:
        path = pred_dir / f"{Path(e.path).stem}.npy"
        if not path.exists():
            raise EvaluationError(f"missing prediction {path}")
        cube = manifest.load(e)
        cm.update(np.load(path, allow_pickle=False), cube.labels)
    report = MetricReport.from_confusion(cm, manifest.classes)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
        (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    sys.stdout.write(report.to_text())
    return 0


def cmd_plot(args):
    table = ComparisonTable.from_csv(Path(_require(args.table, "--table")).read_text(encoding="utf-8"))
    deltas = limited_data_deltas(table, args.transfer, args.baseline)
    if not deltas:
        raise ConfigError(f"table has no matching {args.transfer}/{args.baseline} rows")
    out = Path(args.out) if args.out else Path(args.table).with_name("limited_data.svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(deltas_svg(deltas), encoding="utf-8")
    out.with_suffix(".csv").write_text(deltas_csv(deltas), encoding="utf-8")
    sys.stdout.write(deltas_csv(deltas))
    return 0


# parser ---------------------------------------------------------------------------

class _SeedAction(argparse.Action):
    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, values)
        namespace.seed_given = True


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    # defaults live on the top-level parser; SUPPRESS keeps subparsers from resetting them
    common.add_argument("--seed", type=int, action=_SeedAction, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="hsxfer", description="Hyperspectral transfer-learning benchmark toolkit.")
    p.add_argument("--seed", type=int, action=_SeedAction, default=42, help="global seed (default 42)")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--out", default=None, help="output path")
    p.add_argument("--threads", type=int, default=1, help="worker processes for matrix cells")
    p.add_argument("-v", "--verbose", action="store_true", default=False)
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate the synthetic target datasets and source corpus")
    g.add_argument("--classes", type=int, default=0)
    g.add_argument("--cubes", type=int, default=0)
    g.add_argument("--size", type=int, default=0)
    g.add_argument("--targets", nargs="*", choices=TARGETS)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("pretrain", parents=[common], help="masked-reconstruction pretraining of the encoder")
    t.add_argument("--source", help="source corpus directory or manifest")
    t.add_argument("--steps", type=int, default=500)
    t.add_argument("--mask-ratio", type=float, default=0.95)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=64)
    t.set_defaults(func=cmd_pretrain)

    r = sub.add_parser("run", parents=[common], help="run one experiment config")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("benchmark", parents=[common], help="run an experiment matrix")
    b.add_argument("--data", help="suite directory from gen-data")
    b.add_argument("--checkpoint", help="encoder checkpoint (pretrained on the source corpus if omitted)")
    b.add_argument("--matrix", choices=sorted(MATRICES), default="segmentation")
    b.add_argument("--fractions", help="comma-separated training fractions")
    b.add_argument("--cache", help="feature cache directory")
    b.set_defaults(func=cmd_benchmark)

    j = sub.add_parser("project", parents=[common], help="project a cube to pseudo-RGB")
    j.add_argument("input")
    j.add_argument("--method", choices=("cie", "tri-band"), default="cie")
    j.set_defaults(func=cmd_project)

    c = sub.add_parser("cache", parents=[common], help="precompute frozen-encoder features for a manifest")
    c.add_argument("--checkpoint")
    c.add_argument("--manifest")
    c.add_argument("--store")
    c.set_defaults(func=cmd_cache)

    e = sub.add_parser("eval", parents=[common], help="score a directory of <stem>.npy predictions")
    e.add_argument("--pred")
    e.add_argument("--manifest")
    e.add_argument("--split", choices=SPLITS, default="test")
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("plot", parents=[common], help="limited-data mIoU deltas from a benchmark table")
    q.add_argument("--table")
    q.add_argument("--transfer", default="hsl-runet")
    q.add_argument("--baseline", default="runet")
    q.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except HSXError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return 3 if isinstance(exc, OSError) else 2


if __name__ == "__main__":
    sys.exit(main())

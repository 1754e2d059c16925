"""Acceptance criteria, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line (outside pytest's output
capture) before asserting. Criteria 5 to 7 share one default-suite fixture:
the default synthetic suite, the default pretraining run and two full
benchmark runs, built once per session.
"""
import math
import time

import numpy as np
import pytest

from hsxfer import tensor as T
from hsxfer.baselines import HDCConfig, KERNELS, hdc_transform, minirocket_fit, minirocket_transform
import hsxfer.bench as bench
from hsxfer.bench import ComparisonTable, ExperimentConfig, Runner, SplitGuard, train_config_for
from hsxfer.cli import main
from hsxfer.data import DatasetManifest, load_source_pixels
from hsxfer.data.cache import FeatureCache
from hsxfer.data.cube import HyperCube, cube_from_bytes, cube_to_bytes
from hsxfer.data.manifest import make_splits, split_sizes, subset_training
from hsxfer.encoder import EncoderCheckpoint, EncoderConfig, MaskSpec, MiniHSL, masked_mse, pretrain, sample_mask
from hsxfer.errors import DataError, FormatError
from hsxfer.heads import FCHead, FCHeadConfig, NeckConfig, RUNetConfig, SegmentationNet
from hsxfer.metrics import ConfusionMatrix, MetricReport, evaluate_maps
from hsxfer.rng import make_rng
from hsxfer.tokenizer import WavelengthGrid

from test_metrics import brute_metrics

# Regression pins, measured on the default suite under seed 42.
PINNED_CHECKPOINT_SHA256 = "5ae9bfdab66a418766b744d7dca6c062d10d6777a3bcfa0405b931e63a17f4ce"
PINNED_CROSS_DOMAIN_WINS_AT_10 = 0  # datasets where cross-domain RU-Net mIoU >= in-domain RU-Net mIoU
PINNED_DELTAS_AT_10 = {  # dataset -> cross-domain minus in-domain mIoU
    "hyko2": -0.04013078002665682,
    "hcv": -0.11484965232102984,
    "hsidrive": -0.06165230466261218,
}


@pytest.fixture
def verdict(capsys):
    def emit(n, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {title} -- {detail}")
        assert ok, detail
    return emit


# 1. gradients -----------------------------------------------------------------------

def _leaf(rng, *shape):
    return T.Tensor(rng.standard_normal(shape), requires_grad=True)


def _primitive_cases():
    mask = np.array([[1, 0, 1], [0, 1, 1]], bool)
    labels = np.array([0, 2, 65535, 1])
    return {
        "add": (lambda a, b: a + b, [(3, 4), (4,)]),
        "neg-sub": (lambda a, b: a - b, [(3, 4), (3, 4)]),
        "mul": (lambda a, b: a * b, [(3, 4), (3, 1)]),
        "div": (lambda a, b: a / (T.exp(b) + 1.0), [(2, 3), (2, 3)]),
        "exp-log": (lambda a: T.log(T.exp(a) + 2.0), [(3, 3)]),
        "relu": (lambda a: T.relu(a), [(4, 5)]),
        "gelu": (lambda a: T.gelu(a), [(4, 5)]),
        "sum-mean": (lambda a: T.tsum(a, axis=0) + T.tmean(a, axis=1, keepdims=True), [(3, 3)]),
        "reshape-transpose": (lambda a: T.transpose(T.reshape(a, (3, 2, 2)), (2, 0, 1)), [(3, 4)]),
        "take-concat": (lambda a, b: T.concat([a[:, 1:], b], axis=-1), [(2, 3), (2, 2)]),
        "matmul": (lambda a, b: a @ b, [(3, 4), (4, 2)]),
        "batched-matmul": (lambda a, b: a @ b, [(2, 3, 4), (2, 4, 2)]),
        "softmax": (lambda a: T.softmax(a), [(3, 4)]),
        "log_softmax": (lambda a: T.log_softmax(a), [(3, 4)]),
        "cross_entropy": (lambda a: T.cross_entropy(a, labels), [(4, 3)]),
        "mse-masked": (lambda a: T.mse(a, np.arange(6.0).reshape(2, 3) / 5, mask), [(2, 3)]),
        "layer_norm": (lambda a, g, b: T.layer_norm(a, g, b), [(3, 6), (6,), (6,)]),
        "batch_norm": (lambda a, g, b: T.batch_norm(a, g, b, np.zeros(3), np.ones(3), True),
                       [(2, 2, 2, 3), (3,), (3,)]),
        "conv2d": (lambda a, k, b: T.conv2d(a, k, b), [(1, 4, 4, 2), (3, 3, 2, 2), (2,)]),
        "conv1d": (lambda a, k: T.conv1d(a, k), [(2, 7, 2), (4, 2, 3)]),
        "maxpool2d": (lambda a: T.maxpool2d(a), [(1, 4, 4, 2)]),
        "maxpool1d": (lambda a: T.maxpool1d(a), [(2, 6, 2)]),
        "upsample2x": (lambda a: T.upsample2x(a), [(1, 2, 3, 2)]),
        "dropout-eval": (lambda a: T.dropout(a, 0.5, False), [(3, 3)]),
    }


def _runet_case(seed):
    net = SegmentationNet(5, 3, RUNetConfig(depth=1, base=4, dropout=0.0), NeckConfig(5, 4), seed=seed)
    rng = np.random.default_rng(seed)
    net.fit_input_stats([rng.standard_normal((4, 4, 5)) * 2 + 1])
    x = T.Tensor(rng.standard_normal((2, 4, 4, 5)))
    y = rng.integers(0, 3, size=(2, 4, 4))
    y[0, 0, 0] = 65535
    params = [net.neck.weight, net.down[0].conv1.weight, net.bottom.bn2.gamma, net.up[0].bn2.beta,
              net.classifier.weight]
    return (lambda *_: T.cross_entropy(net.logits(x).reshape(-1, 3), y)), params


def _fc_case(seed):
    enc = MiniHSL(EncoderConfig(layers=1, heads=2, d_model=8, d_ff=8), seed=seed).eval()
    head = FCHead(FCHeadConfig(8, 3), seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.random((4, 6))
    wl = np.sort(rng.uniform(450, 950, 6))
    y = rng.integers(0, 3, size=4)
    params = [head.fc.weight, head.fc.bias, enc.tokenizer.w_embed, enc.blocks[0].ff1.weight]
    return (lambda *_: T.cross_entropy(head(T.tmean(enc(x, wl), axis=1)), y)), params


def _mae_case(seed):
    m = MiniHSL(EncoderConfig(layers=1, heads=2, d_model=8, d_ff=8), seed=seed).train()
    rng = np.random.default_rng(seed)
    x = rng.random((2, 5))
    wl = np.sort(rng.uniform(450, 950, 5))
    mask = sample_mask(2, 5, MaskSpec(0.6), make_rng(seed, "mask"))
    params = [m.tokenizer.w_embed, m.mask_token, m.blocks[0].qkv.weight, m.ln_out.gamma, m.rec1.weight]
    return (lambda *_: T.mse(m.reconstruct_all(m(x, wl, mask)), x, mask)), params


def test_criterion_1_gradient_suite(verdict):
    t0 = time.process_time()
    worst, where = 0.0, ""
    with T.precision(64):
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            for name, (fn, shapes) in _primitive_cases().items():
                err = T.grad_check(fn, [_leaf(rng, *s) for s in shapes], seed=seed)
                if err > worst:
                    worst, where = err, name
            for name, case in (("runet-head", _runet_case), ("fc-head", _fc_case), ("masked-recon", _mae_case)):
                fn, params = case(seed)
                err = T.grad_check(fn, params, seed=seed)
                if err > worst:
                    worst, where = err, name
    cpu = time.process_time() - t0
    n = len(_primitive_cases()) + 3
    verdict(1, "gradient suite", worst <= 1e-4 and cpu < 120,
            f"{n} functions x 20 seeds, max rel err {worst:.2e} ({where}), cpu {cpu:.1f}s")


# 2. metric oracle -------------------------------------------------------------------

def test_criterion_2_metric_oracle(verdict):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(2, 6))
        shape = tuple(rng.integers(1, 7, size=2))
        present = rng.permutation(k)[: int(rng.integers(1, k + 1))]  # some classes never occur
        label = rng.choice(present, size=shape).astype(np.uint16)
        pred = np.where(rng.random(shape) < 0.5, label, rng.choice(present, size=shape)).astype(np.uint16)
        label[rng.random(shape) < 0.15] = 65535
        if (label == 65535).all():
            label.flat[0] = present[0]
        r = evaluate_maps([pred], [label], k)
        ref = brute_metrics(pred, label, k)
        worst = max(worst, float(np.max(np.abs(np.array([r.oa, r.aa, r.f1, r.miou]) - ref))))
    hand = evaluate_maps([np.array([0, 0, 0, 1, 1, 1, 1, 0])], [np.array([0, 0, 0, 0, 1, 1, 1, 1])], 2)
    cm = ConfusionMatrix(2, [[3, 1], [1, 3]])
    r = MetricReport.from_confusion(cm)
    exact = (r.oa, r.aa, r.f1, r.miou) == (0.75, 0.75, 0.75, 0.6) and hand.summary() == r.summary()
    verdict(2, "metric oracle", worst <= 1e-12 and exact,
            f"1000 pairs max |diff| {worst:.1e}; hand case {r.summary()}")


# 3. HDC / MiniROCKET ----------------------------------------------------------------

def oracle_features(model, spectra, weights_fn):
    """Direct formula per kernel, dilation and bias; convolution written tap by tap."""
    x = np.asarray(spectra, dtype=np.float64)
    n, length = x.shape
    feats = np.empty((n, model.n_features))
    j = 0
    for d, biases in zip(model.dilations, model.biases):
        d = int(d)
        for k in range(84):
            conv = np.zeros((n, length))
            for i in range(9):
                shift = (i - 4) * d
                for t in range(length):
                    if 0 <= t + shift < length:
                        conv[:, t] += KERNELS[k, i] * x[:, t + shift]
            for b in biases[k]:
                w = weights_fn(j, length)
                feats[:, j] = ((conv > b) * w).sum(axis=1) / length
                j += 1
    return feats


def test_criterion_3_reduction_equivalence(verdict):
    worst_eq, worst_naive, parts = 0.0, 0.0, []
    for c in (15, 25, 128):
        rng = make_rng(42, f"acc3-{c}")
        train = rng.random((64, c))
        x = rng.random((100, c))
        model = minirocket_fit(train, 1000, seed=42)
        mr = minirocket_transform(model, x)
        h0 = hdc_transform(model, HDCConfig(0.0), x)
        hs_cfg = HDCConfig(5.0)
        hs = hdc_transform(model, hs_cfg, x)
        theta = hs_cfg.angles(model.n_features)
        ones = oracle_features(model, x, lambda j, L: 1.0)
        cosw = oracle_features(model, x, lambda j, L: np.cos(5.0 * theta[j] * np.arange(L) / (L - 1)))
        worst_eq = max(worst_eq, float(np.abs(h0 - mr).max()))
        worst_naive = max(worst_naive, float(np.abs(mr - ones).max()), float(np.abs(h0 - ones).max()),
                          float(np.abs(hs - cosw).max()))
        parts.append(f"C={c}:{model.n_features}")
    verdict(3, "HDC(s=0) == MiniROCKET", worst_eq <= 1e-6 and worst_naive <= 1e-6,
            f"{' '.join(parts)} features; max |hdc0-mr| {worst_eq:.1e}, max |impl-oracle| {worst_naive:.1e}")


# shared default-suite fixture (criteria 4 to 7) -----------------------------------------

@pytest.fixture(scope="module")
def default_suite(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    assert main(["gen-data", "--out", str(root / "suite")]) == 0
    source = DatasetManifest.load_file(root / "suite" / "source" / "manifest.txt")
    pixels = load_source_pixels(source)
    t0, w0 = time.process_time(), time.perf_counter()
    result = pretrain(pixels, EncoderConfig(), MaskSpec(0.95), steps=500, seed=42)
    cpu, wall = time.process_time() - t0, time.perf_counter() - w0
    result.checkpoint.save(root / "ckpt.mhsl")
    return {"root": root, "pixels": pixels, "pretrain": result, "pretrain_time": max(cpu, wall)}


@pytest.fixture(scope="module")
def benchmark_runs(default_suite):
    root = default_suite["root"]
    times = []
    for name in ("bench_a", "bench_b"):
        t0, w0 = time.process_time(), time.perf_counter()
        code = main(["--seed", "42", "benchmark", "--data", str(root / "suite"),
                     "--checkpoint", str(root / "ckpt.mhsl"), "--out", str(root / name)])
        assert code == 0
        times.append(max(time.process_time() - t0, time.perf_counter() - w0))
    return {"a": root / "bench_a", "b": root / "bench_b", "times": times}


# 4. channel-agnostic encoding --------------------------------------------------------

def test_criterion_4_channel_agnostic(verdict, default_suite):
    ckpt = EncoderCheckpoint.load(default_suite["root"] / "ckpt.mhsl")
    enc = ckpt.build().freeze()
    rng = make_rng(42, "acc4")
    dims, worst = set(), 0.0
    for c, lo, hi in ((15, 470, 630), (25, 600, 975), (128, 450, 950)):
        wl = WavelengthGrid.linear(c, lo, hi).array()
        x = rng.random((8, c))
        e = enc.encode_pixels(x, wl)
        dims.add(e.shape[1])
        with T.precision(64):
            e64 = MiniHSL(enc.cfg).eval()
            e64.load_state_dict({k: v.astype(np.float64) for k, v in enc.state_dict().items()})
            ref = e64.encode_pixels(x, wl)
            for _ in range(3):
                p = rng.permutation(c)
                worst = max(worst, float(np.abs(e64.encode_pixels(x[:, p], wl[p]) - ref).max()))
        worst = max(worst, float(np.abs(enc.encode_pixels(x[:, p], wl[p]) - e).max()))
    verdict(4, "channel-agnostic encoding", dims == {enc.cfg.d_model} and worst <= 1e-5,
            f"grids 15/25/128 bands -> dim {sorted(dims)}, max permutation diff {worst:.1e}")


# 5. freeze soundness and caching ------------------------------------------------------

def _record(path):
    out = {}
    for line in path.read_text().splitlines():
        k, _, v = line.partition(" = ")
        out[k] = v
    return out


def test_criterion_5_freeze_and_cache(verdict, default_suite, benchmark_runs):
    runs = sorted((benchmark_runs["a"] / "runs").glob("*__hsl-runet__*"))
    hashes_ok = misses_ok = True
    for r in runs:
        rec = _record(r / "record.txt")
        hashes_ok &= rec["backbone_hash_before"] == rec["backbone_hash_after"]
        misses = [int(v) for v in rec["cache_misses"].split(", ")]
        hits = [int(v) for v in rec["cache_hits"].split(", ")]
        misses_ok &= misses == [0] * len(misses) and hits == [int(rec["n_train"])] * len(hits) and len(hits) > 0
    enc = EncoderCheckpoint.load(default_suite["root"] / "ckpt.mhsl")
    model = enc.build().freeze()
    m = DatasetManifest.load_file(default_suite["root"] / "suite" / "hyko2" / "manifest.txt")
    cache = FeatureCache(default_suite["root"] / "cache5")
    bitwise = True
    for e in m.entries[:4]:
        cube = m.load(e)
        first = cache.get(model, cube, enc.hash).features
        again = FeatureCache(default_suite["root"] / "cache5").get(model, cube, enc.hash).features
        fresh = model.encode_pixels(cube.reflectance.reshape(-1, cube.n_bands), cube.wavelengths)
        bitwise &= first.tobytes() == again.tobytes() == fresh.reshape(first.shape).tobytes()
    verdict(5, "freeze soundness", len(runs) == 9 and hashes_ok and misses_ok and bitwise,
            f"{len(runs)} cross-domain runs: backbone hash unchanged={hashes_ok}, "
            f"100% hits (one per cube) from epoch 2={misses_ok}, cached==fresh bitwise={bitwise}")


# 6. pretraining sanity ----------------------------------------------------------------

def test_criterion_6_pretraining(verdict, default_suite):
    res = default_suite["pretrain"]
    init = MiniHSL(EncoderConfig(), seed=42).eval()
    pixels = default_suite["pixels"]
    global_mean = float(np.mean(np.concatenate([p.ravel() for p, _ in pixels])))
    rng = make_rng(7, "acc6-eval")
    tot_init = tot_final = tot_mean = 0.0
    for spectra, wl in pixels:
        idx = rng.choice(spectra.shape[0], 256, replace=False)
        x = spectra[idx]
        mask = sample_mask(256, x.shape[1], MaskSpec(0.95), rng)
        tot_init += masked_mse(init, x, wl, mask)
        tot_final += masked_mse(res.model, x, wl, mask)
        tot_mean += float(((x - global_mean) ** 2)[mask].mean())
    n = len(pixels)
    i, f, b = tot_init / n, tot_final / n, tot_mean / n
    pinned = res.checkpoint.hash == PINNED_CHECKPOINT_SHA256
    t = default_suite["pretrain_time"]
    ok = f <= 0.5 * i and f <= b and t < 180 and pinned
    verdict(6, "pretraining sanity", ok,
            f"held-out masked MSE init {i:.4f} -> final {f:.4f} (mean baseline {b:.4f}); "
            f"train loss {res.history[0]:.4f} -> {np.mean(res.history[-20:]):.4f}; {t:.0f}s; "
            f"checkpoint {res.checkpoint.hash[:16]} pinned={pinned}")


# 7. end-to-end benchmark ------------------------------------------------------------

def test_criterion_7_benchmark(verdict, benchmark_runs):
    a, b = benchmark_runs["a"], benchmark_runs["b"]
    same_table = (a / "table.csv").read_bytes() == (b / "table.csv").read_bytes()
    same_runs = all((a / "runs" / r.name / f).read_bytes() == (r / f).read_bytes()
                    for r in (b / "runs").iterdir() for f in ("record.txt", "head.mhed"))
    csv = (a / "table.csv").read_text()
    table = ComparisonTable.from_csv(csv)
    body = csv.strip().splitlines()[1:]
    n_avg = sum(ln.startswith("Average,") for ln in body)
    n_worst = sum(ln.startswith("Worst-Case,") for ln in body)
    shape_ok = len(table.rows) == 27 and n_avg == 9 and n_worst == 9
    idx = {(r.dataset, r.model, r.fraction): r.metrics["mIoU"] for r in table.rows}
    deltas = {ds: idx[(ds, "hsl-runet", 0.1)] - idx[(ds, "runet", 0.1)] for ds in ("hyko2", "hcv", "hsidrive")}
    wins = sum(d >= 0 for d in deltas.values())
    pinned = wins == PINNED_CROSS_DOMAIN_WINS_AT_10 and all(
        abs(deltas[k] - v) <= 1e-6 for k, v in PINNED_DELTAS_AT_10.items()) and len(PINNED_DELTAS_AT_10) == 3
    times = benchmark_runs["times"]
    ok = max(times) < 900 and same_table and same_runs and shape_ok and pinned
    verdict(7, "end-to-end benchmark", ok,
            f"runs {times[0]:.0f}s/{times[1]:.0f}s, byte-identical={same_table and same_runs}, "
            f"27 rows + {n_avg} avg + {n_worst} worst; cross-domain >= in-domain at 10% on {wins}/3 "
            f"(deltas {', '.join(f'{k} {100 * v:+.2f}' for k, v in deltas.items())}; pinned={pinned})")


# 8. protocol invariants ----------------------------------------------------------------

def test_criterion_8_protocol(verdict, tmp_path):
    sizes = split_sizes(371, [0.5, 0.2, 0.3])
    entries = make_splits([f"c{i}" for i in range(371)], (0.5, 0.3, 0.2), seed=42)
    counts = [sum(e.split == t for e in entries) for t in ("train", "test", "val")]
    nested = True
    for seed in range(50):
        for n in (5, 38, 186, 957):
            a = set(subset_training(range(n), 0.10, seed))
            b = set(subset_training(range(n), 0.25, seed))
            nested &= a <= b <= set(range(n))
    # the guard: a run reads train/val during training and test only inside evaluation
    assert main(["gen-data", "--out", str(tmp_path / "s"), "--cubes", "6", "--size", "8",
                 "--targets", "hyko2"]) == 0
    guards = []
    real = bench.SplitGuard

    class Spy(real):
        def __init__(self, manifest):
            super().__init__(manifest)
            guards.append(self)

    bench.SplitGuard = Spy
    try:
        Runner().run(ExperimentConfig("runet", str(tmp_path / "s" / "hyko2" / "manifest.txt"),
                                      train=train_config_for("runet", {"max_epochs": "1"})))
    finally:
        bench.SplitGuard = real
    g = guards[0]
    test_paths = {e.path for e in g.manifest.split("test")}
    train_phase = [r for r in g.reads if r[0] == "train"]
    eval_phase = [r for r in g.reads if r[0] == "eval"]
    guard_ok = (not any(r[2] in test_paths for r in train_phase)
                and {r[2] for r in eval_phase} == test_paths)
    try:
        SplitGuard(g.manifest).load(g.manifest.split("test")[0])
        refused = False
    except DataError:
        refused = True
    ok = sizes == [186, 74, 111] and counts == [186, 74, 111] and nested and guard_ok and refused
    verdict(8, "protocol invariants", ok,
            f"split sizes {sizes}, nested 10%<=25% over 200 cases={nested}, "
            f"test unread in training={guard_ok}, premature test read refused={refused}")


# 9. file formats -----------------------------------------------------------------------

def test_criterion_9_file_formats(verdict):
    rng = np.random.default_rng(9)
    cube = HyperCube(rng.random((5, 7, 11)).astype(np.float32), np.linspace(400, 900, 11),
                     rng.integers(0, 4, (5, 7)).astype(np.uint16))
    buf = cube_to_bytes(cube)
    cube_rt = cube_to_bytes(cube_from_bytes(buf)) == buf
    ckpt = EncoderCheckpoint.from_model(MiniHSL(EncoderConfig(), seed=5), [1.0, 0.5])
    raw = ckpt.to_bytes()
    ckpt_rt = EncoderCheckpoint.from_bytes(raw).to_bytes() == raw
    corrupt_ok, crashes, n = True, 0, 0
    for blob, parse in ((buf, cube_from_bytes), (raw, EncoderCheckpoint.from_bytes)):
        for i in range(0, 40):
            for v in (0x00, 0xFF, 0x7F):
                bad = bytearray(blob)
                if bad[i] == v:
                    continue
                bad[i] = v
                n += 1
                try:
                    parse(bytes(bad))
                except FormatError as exc:
                    corrupt_ok &= exc.offset is not None
                except Exception:  # noqa: BLE001 - any other exception is a crash
                    crashes += 1
        for cut in (0, 3, 10, len(blob) // 2, len(blob) - 1):
            n += 1
            try:
                parse(blob[:cut])
                corrupt_ok = False
            except FormatError as exc:
                corrupt_ok &= exc.offset is not None
            except Exception:  # noqa: BLE001
                crashes += 1
    ok = cube_rt and ckpt_rt and corrupt_ok and crashes == 0
    verdict(9, "file formats", ok,
            f"HSCB round-trip={cube_rt}, checkpoint round-trip={ckpt_rt}; {n} corrupted inputs, "
            f"all FormatError with offset={corrupt_ok}, crashes={crashes}")


def test_pins_are_documented():
    # guards against leaving placeholder pins behind
    assert len(PINNED_CHECKPOINT_SHA256) == 64 and PINNED_CROSS_DOMAIN_WINS_AT_10 >= 0
    assert math.isfinite(sum(PINNED_DELTAS_AT_10.values()))

import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hsxfer.data import (PROFILES, DatasetManifest, SuiteSpec, generate_dataset, generate_suite)
from hsxfer.data.cache import FeatureCache, cache_key
from hsxfer.data.cube import IGNORE_LABEL, HyperCube, cube_from_bytes, cube_to_bytes, read_cube, write_cube
from hsxfer.data.manifest import Entry, make_splits, split_sizes, subset_training
from hsxfer.data.synthetic import (CONTINUUM, SyntheticSceneSpec, generate_endmembers, generate_scene,
                                   label_field)
from hsxfer.encoder import EncoderConfig, MiniHSL, freeze
from hsxfer.errors import ConfigError, DataError, FormatError, StateError


def _cube(h=3, w=4, c=5, labels=True, seed=0):
    rng = np.random.default_rng(seed)
    refl = rng.random((h, w, c)).astype(np.float32)
    wl = np.linspace(450, 900, c).astype(np.float32)
    lab = rng.integers(0, 3, size=(h, w)).astype(np.uint16) if labels else None
    return HyperCube(refl, wl, lab)


# ---------------------------------------------------------------- cube format

@pytest.mark.parametrize("labels", [True, False])
def test_cube_round_trip_bitwise(tmp_path, labels):
    cube = _cube(labels=labels)
    write_cube(cube, tmp_path / "a.hscb")
    back = read_cube(tmp_path / "a.hscb")
    assert back.equals(cube)
    assert cube_to_bytes(back) == cube_to_bytes(cube)


def test_cube_header_layout():
    buf = cube_to_bytes(_cube(2, 3, 4))
    assert buf[:4] == b"HSCB"
    assert struct.unpack_from("<IIIIB", buf, 4) == (1, 2, 3, 4, 1)
    assert len(buf) == 24 + 4 * 4 + 4 * 2 * 3 * 4 + 2 * 2 * 3


def _patched(buf, off, fmt, value):
    b = bytearray(buf)
    struct.pack_into(fmt, b, off, value)
    return bytes(b)


def test_cube_format_errors_carry_offsets():
    buf = cube_to_bytes(_cube())
    cases = [
        (buf[:10], 10),
        (b"XXXX" + buf[4:], 0),
        (_patched(buf, 4, "<I", 2), 4),
        (_patched(buf, 16, "<I", 0), 16),
        (_patched(buf, 20, "<B", 7), 20),
        (buf[:-1], len(buf) - 1),
        (buf + b"\0\0", len(buf)),
    ]
    for bad, offset in cases:
        with pytest.raises(FormatError) as info:
            cube_from_bytes(bad)
        assert info.value.offset == offset


def test_cube_invalid_contents_is_format_error():
    buf = bytearray(cube_to_bytes(_cube(c=5)))
    struct.pack_into("<f", buf, 24, np.nan)  # first wavelength
    with pytest.raises(FormatError):
        cube_from_bytes(bytes(buf))


def test_cube_validation():
    with pytest.raises(DataError):
        HyperCube(np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(DataError):
        HyperCube(np.zeros((2, 2, 3)), np.array([500.0, 600.0]))
    with pytest.raises(DataError):
        HyperCube(np.zeros((2, 2, 2)), np.array([500.0, 600.0]), np.zeros((3, 2)))
    cube = _cube()
    cube.labels[0, 0] = IGNORE_LABEL
    cube.check_labels(3)
    cube.labels[0, 1] = 3
    with pytest.raises(DataError):
        cube.check_labels(3)


def test_content_hash_ignores_labels_but_not_values():
    a = _cube()
    b = HyperCube(a.reflectance, a.wavelengths, None)
    assert a.content_hash() == b.content_hash()
    c = HyperCube(a.reflectance.copy(), a.wavelengths)
    c.reflectance[0, 0, 0] += 1e-3
    assert c.content_hash() != a.content_hash()


def test_hyko2_shaped_cube_matches_profile():
    p = PROFILES["hyko2"]
    wl = np.linspace(470, 630, 15)
    cube = HyperCube(np.zeros((254, 510, 15), np.float32), wl, np.zeros((254, 510), np.uint16))
    assert p.matches(cube)
    assert not p.matches(HyperCube(np.zeros((254, 510, 16), np.float32), np.linspace(470, 630, 16)))
    assert not p.matches(HyperCube(np.zeros((10, 10, 15), np.float32), wl))
    assert p.matches(HyperCube(np.zeros((10, 10, 15), np.float32), wl), full_size=False)


# ------------------------------------------------------------- splits/subsets

def test_split_sizes_largest_remainder():
    assert split_sizes(371, [0.5, 0.2, 0.3]) == [186, 74, 111]
    assert split_sizes(10, [1, 0, 0]) == [10, 0, 0]
    assert split_sizes(3, [1 / 3] * 3) == [1, 1, 1]
    with pytest.raises(ConfigError):
        split_sizes(10, [0.5, 0.6, -0.1])
    with pytest.raises(ConfigError):
        split_sizes(10, [0.5, 0.2])


@given(st.integers(0, 2000), st.lists(st.integers(0, 20), min_size=1, max_size=5).filter(lambda v: sum(v) > 0))
@settings(max_examples=200, deadline=None)
def test_split_sizes_sum_and_bounds(n, weights):
    ratios = [w / sum(weights) for w in weights]
    sizes = split_sizes(n, ratios)
    assert sum(sizes) == n
    for s, r in zip(sizes, ratios):
        assert math.floor(r * n + 1e-9) <= s <= math.floor(r * n + 1e-9) + 1


def test_make_splits_counts_and_determinism():
    paths = [f"c{i}" for i in range(371)]
    entries = make_splits(paths, PROFILES["hyko2"].ratios, seed=42)
    counts = {t: sum(e.split == t for e in entries) for t in ("train", "val", "test")}
    assert counts == {"train": 186, "val": 111, "test": 74}
    assert [e.path for e in entries] == paths
    assert make_splits(paths, PROFILES["hyko2"].ratios, seed=42) == entries
    assert make_splits(paths, PROFILES["hyko2"].ratios, seed=7) != entries


def test_make_splits_all_train():
    entries = make_splits(list("abcde"), [1, 0, 0])
    assert all(e.split == "train" for e in entries)


def test_subset_size_and_determinism():
    train = list(range(371))
    sub = subset_training(train, 0.10, seed=42)
    assert len(sub) == 38
    assert sub == subset_training(train, 0.10, seed=42)
    assert sub == sorted(sub)
    assert subset_training(train, 1.0) == train
    assert len(subset_training(list(range(10)), 0.1)) == 1
    with pytest.raises(ConfigError):
        subset_training(train, 0.0)
    with pytest.raises(DataError):
        subset_training([], 0.5)


@given(st.integers(1, 500), st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.integers(0, 1000))
@settings(max_examples=200, deadline=None)
def test_subsets_nest(n, f1, f2, seed):
    small, big = sorted([f1, f2])
    a = subset_training(range(n), small, seed)
    b = subset_training(range(n), big, seed)
    assert set(a) <= set(b)
    assert len(a) == math.ceil(small * n - 1e-9)


# ------------------------------------------------------------------ synthetic

def test_endmembers_are_separated():
    em = generate_endmembers(8, seed=3, min_distance=2.0)
    assert em.shape == (8, CONTINUUM.size)
    d = np.sqrt(((em[:, None] - em[None]) ** 2).sum(-1))
    assert d[~np.eye(8, dtype=bool)].min() >= 2.0
    np.testing.assert_array_equal(em, generate_endmembers(8, seed=3, min_distance=2.0))


def test_noise_free_scene_has_one_spectrum_per_class():
    spec = SyntheticSceneSpec(n_classes=4, noise=0.0, jitter=0.0, scene_seed=5)
    cube = generate_scene(spec)
    for k in np.unique(cube.labels):
        px = cube.reflectance[cube.labels == k]
        assert np.all(px == px[0])


def test_label_map_independent_of_sensor_grid():
    a = generate_scene(SyntheticSceneSpec(n_bands=15, wl_min=470, wl_max=630, scene_seed=9))
    b = generate_scene(SyntheticSceneSpec(n_bands=128, wl_min=450, wl_max=950, scene_seed=9))
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.n_bands == 15 and b.n_bands == 128


def test_label_field_uses_every_class_and_is_skewed():
    lab = label_field(SyntheticSceneSpec(n_classes=5, height=64, width=64, scene_seed=1))
    counts = np.bincount(lab.ravel(), minlength=5)
    assert counts.min() > 0
    assert counts[0] > counts[-1]


def test_scene_spec_rejects_single_class():
    with pytest.raises(ConfigError):
        SyntheticSceneSpec(n_classes=1)


# --------------------------------------------------------------------- suite

@pytest.fixture(scope="module")
def suite_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    generate_suite(out, SuiteSpec(n_cubes=6, height=8, width=8, source_cubes=2), seed=42)
    return out


def test_suite_band_counts_and_labels(suite_dir):
    for key, bands in (("hyko2", 15), ("hcv", 128), ("hsidrive", 25)):
        m = DatasetManifest.load_file(suite_dir / key / "manifest.txt")
        assert m.validate() == bands
        assert m.n_classes == PROFILES[key].n_classes
        cube = m.load(m.entries[0])
        assert PROFILES[key].matches(cube, full_size=False)
    src = DatasetManifest.load_file(suite_dir / "source" / "manifest.txt")
    assert all(src.load(e).labels is None for e in src.entries)


def test_suite_generation_is_deterministic(suite_dir, tmp_path):
    generate_dataset(PROFILES["hsidrive"], tmp_path, SuiteSpec(n_cubes=6, height=8, width=8), seed=42)
    ref = suite_dir / "hsidrive"
    assert (tmp_path / "manifest.txt").read_text() == (ref / "manifest.txt").read_text()
    for f in sorted((ref / "cubes").iterdir()):
        assert (tmp_path / "cubes" / f.name).read_bytes() == f.read_bytes()


def test_two_class_override(tmp_path):
    m = generate_dataset(PROFILES["hyko2"], tmp_path, SuiteSpec(n_cubes=3, height=8, width=8, n_classes=2))
    assert m.n_classes == 2
    for e in m.entries:
        assert set(np.unique(m.load(e).labels)) <= {0, 1, IGNORE_LABEL}


# ------------------------------------------------------------------ manifest

def test_manifest_round_trip(tmp_path):
    m = DatasetManifest("toy", ["a", "b", "c"], [Entry("x.hscb", "train"), Entry("y.hscb", "test")], 7, tmp_path)
    m.save(tmp_path / "m.txt")
    back = DatasetManifest.load_file(tmp_path / "m.txt")
    assert back == m
    assert back.root == tmp_path
    assert [e.path for e in back.split("test")] == ["y.hscb"]


def test_manifest_errors(tmp_path):
    with pytest.raises(DataError):
        DatasetManifest("x", ["a"], [Entry("p", "holdout")])
    with pytest.raises(ConfigError):
        DatasetManifest.from_text("classes = a\n")
    with pytest.raises(ConfigError):
        DatasetManifest.from_text("name = x\nclasses = a\n[other]\npath = p\n")
    write_cube(_cube(c=5), tmp_path / "a.hscb")
    write_cube(_cube(c=6), tmp_path / "b.hscb")
    m = DatasetManifest("x", ["a", "b", "c"], [Entry("a.hscb", "train"), Entry("b.hscb", "val")], root=tmp_path)
    with pytest.raises(DataError):
        m.validate()


# --------------------------------------------------------------------- cache

@pytest.fixture(scope="module")
def frozen_encoder():
    return freeze(MiniHSL(EncoderConfig(layers=1, d_model=16, d_ff=16), seed=3))


def test_cache_hits_and_bitwise_equality(frozen_encoder, tmp_path):
    cube = _cube(4, 4, 6, labels=False)
    cache = FeatureCache(tmp_path)
    a = cache.get(frozen_encoder, cube, "ck")
    b = cache.get(frozen_encoder, cube, "ck")
    assert (cache.hits, cache.misses) == (1, 1)
    assert a.key == b.key == cache_key("ck", cube.content_hash())
    assert a.features.tobytes() == b.features.tobytes()
    # a fresh process reads the persisted entry
    other = FeatureCache(tmp_path)
    c = other.get(frozen_encoder, cube, "ck")
    assert (other.hits, other.misses) == (1, 0)
    assert c.features.tobytes() == a.features.tobytes()
    direct = frozen_encoder.encode_pixels(cube.reflectance.reshape(-1, 6), cube.wavelengths)
    assert direct.reshape(4, 4, -1).tobytes() == a.features.tobytes()


def test_cache_invalidates_on_cube_or_checkpoint_change(frozen_encoder):
    cache = FeatureCache()
    cube = _cube(3, 3, 5, labels=False)
    k1 = cache.get(frozen_encoder, cube, "ck1").key
    k2 = cache.get(frozen_encoder, cube, "ck2").key
    edited = HyperCube(cube.reflectance.copy(), cube.wavelengths)
    edited.reflectance[1, 1, 1] = 0.5
    k3 = cache.get(frozen_encoder, edited, "ck1").key
    assert len({k1, k2, k3}) == 3
    assert cache.misses == 3 and cache.hits == 0


def test_cache_requires_frozen_encoder():
    with pytest.raises(StateError):
        FeatureCache().get(MiniHSL(EncoderConfig(layers=1, d_model=16, d_ff=16), seed=3), _cube(labels=False))

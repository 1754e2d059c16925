"""Default synthetic benchmark suite: three labelled target datasets and an unlabeled source corpus.

Target datasets copy the sensor geometry (band count and range) and split
ratios of the three driving-scene datasets at a reduced spatial size. The
source corpus uses a different endmember library and a mix of sensor grids,
dominated by a wide 128-band 450-950 nm grid.
"""
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..rng import make_rng
from .cube import HyperCube, write_cube
from .manifest import DatasetManifest, Entry, make_splits
from .synthetic import SyntheticSceneSpec, generate_endmembers, generate_scene


@dataclass(frozen=True)
class DatasetProfile:
    key: str
    name: str
    n_bands: int
    wl_min: float
    wl_max: float
    image_size: tuple  # real dataset, H x W
    n_images: int
    n_classes_real: int
    train_test_val: tuple  # percent, in the order the dataset table lists them
    # synthetic analog
    n_classes: int
    noise: float
    jitter: float

    @property
    def ratios(self):
        """(train, val, test) fractions."""
        tr, te, va = self.train_test_val
        return tr / 100.0, va / 100.0, te / 100.0

    def matches(self, cube: HyperCube, full_size=True):
        h, w, c = cube.shape
        if c != self.n_bands:
            return False
        if not (np.isclose(cube.wavelengths[0], self.wl_min) and np.isclose(cube.wavelengths[-1], self.wl_max)):
            return False
        return (h, w) == tuple(self.image_size) if full_size else True


PROFILES = {
    "hyko2": DatasetProfile("hyko2", "HyKo2-syn", 15, 470.0, 630.0, (254, 510), 371, 10, (50, 20, 30),
                            n_classes=6, noise=0.25, jitter=0.35),
    "hcv": DatasetProfile("hcv", "HCV-syn", 128, 450.0, 950.0, (1400, 1800), 1330, 19, (72, 8, 20),
                          n_classes=8, noise=0.25, jitter=0.35),
    "hsidrive": DatasetProfile("hsidrive", "HSI-Drive-syn", 25, 600.0, 975.0, (409, 216), 752, 9, (60, 20, 20),
                               n_classes=5, noise=0.35, jitter=0.35),
}
TARGETS = ("hyko2", "hcv", "hsidrive")


@dataclass(frozen=True)
class SuiteSpec:
    n_cubes: int = 40
    height: int = 32
    width: int = 32
    smoothness: float = 3.0
    source_cubes: int = 12
    source_classes: int = 16
    source_noise: float = 0.05
    n_classes: int = 0  # > 0 overrides every profile's class count


def derive_seed(seed, name):
    return int(make_rng(seed, name).integers(0, 2 ** 31 - 1))


def generate_dataset(profile: DatasetProfile, out_dir, suite: SuiteSpec = SuiteSpec(), seed=42):
    out_dir = Path(out_dir)
    (out_dir / "cubes").mkdir(parents=True, exist_ok=True)
    k = suite.n_classes or profile.n_classes
    em_seed = derive_seed(seed, f"{profile.key}-endmembers")
    endmembers = generate_endmembers(k, em_seed)
    base = SyntheticSceneSpec(n_classes=k, height=suite.height, width=suite.width, n_bands=profile.n_bands,
                              wl_min=profile.wl_min, wl_max=profile.wl_max, noise=profile.noise,
                              jitter=profile.jitter, smoothness=suite.smoothness, endmember_seed=em_seed)
    paths = []
    for i in range(suite.n_cubes):
        spec = replace(base, scene_seed=derive_seed(seed, f"{profile.key}-scene-{i}"))
        rel = f"cubes/{i:04d}.hscb"
        write_cube(generate_scene(spec, endmembers), out_dir / rel)
        paths.append(rel)
    entries = make_splits(paths, profile.ratios, seed)
    manifest = DatasetManifest(profile.name, [f"class{j}" for j in range(k)], entries, seed, out_dir)
    manifest.save(out_dir / "manifest.txt")
    return manifest


def source_grids(n, seed=42):
    """Sensor grids for the source corpus: every other cube uses 128 bands over 450-950 nm."""
    rng = make_rng(seed, "source-grids")
    grids = []
    for i in range(n):
        if i % 2 == 0:
            grids.append((128, 450.0, 950.0))
        else:
            c = int(rng.integers(8, 65))
            lo = float(rng.uniform(400.0, 700.0))
            hi = float(min(lo + rng.uniform(150.0, 300.0), 995.0))
            grids.append((c, lo, hi))
    return grids


def generate_source(out_dir, suite: SuiteSpec = SuiteSpec(), seed=42):
    out_dir = Path(out_dir)
    (out_dir / "cubes").mkdir(parents=True, exist_ok=True)
    em_seed = derive_seed(seed, "source-endmembers")
    endmembers = generate_endmembers(suite.source_classes, em_seed)
    entries = []
    for i, (c, lo, hi) in enumerate(source_grids(suite.source_cubes, seed)):
        spec = SyntheticSceneSpec(n_classes=suite.source_classes, height=suite.height, width=suite.width,
                                  n_bands=c, wl_min=lo, wl_max=hi, noise=suite.source_noise, jitter=0.5,
                                  smoothness=suite.smoothness, prior_skew=0.0, endmember_seed=em_seed,
                                  scene_seed=derive_seed(seed, f"source-scene-{i}"))
        cube = generate_scene(spec, endmembers)
        rel = f"cubes/{i:04d}.hscb"
        write_cube(HyperCube(cube.reflectance, cube.wavelengths, None), out_dir / rel)
        entries.append(Entry(rel, "train"))
    manifest = DatasetManifest("source-syn", ["unlabeled"], entries, seed, out_dir)
    manifest.save(out_dir / "manifest.txt")
    return manifest


def generate_suite(out_dir, suite: SuiteSpec = SuiteSpec(), seed=42, targets=TARGETS):
    out_dir = Path(out_dir)
    manifests = {key: generate_dataset(PROFILES[key], out_dir / key, suite, seed) for key in targets}
    manifests["source"] = generate_source(out_dir / "source", suite, seed)
    return manifests


def load_source_pixels(manifest: DatasetManifest):
    """List of (pixels N x C, wavelengths) pairs, one per source cube."""
    out = []
    for e in manifest.entries:
        cube = manifest.load(e)
        out.append((cube.reflectance.reshape(-1, cube.n_bands), cube.wavelengths.astype(np.float64)))
    return out

"""Dataset manifests, seeded splits and nested limited-data subsets."""
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import kvfile
from ..errors import ConfigError, DataError
from ..rng import make_rng
from .cube import read_cube

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Entry:
    path: str
    split: str


@dataclass
class DatasetManifest:
    name: str
    classes: list
    entries: list
    seed: int = 42
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        for e in self.entries:
            if e.split not in SPLITS:
                raise DataError(f"entry {e.path!r} has unknown split tag {e.split!r}")

    @property
    def n_classes(self):
        return len(self.classes)

    def split(self, tag):
        if tag not in SPLITS:
            raise DataError(f"unknown split {tag!r}")
        return [e for e in self.entries if e.split == tag]

    def resolve(self, entry):
        return self.root / entry.path

    def load(self, entry):
        cube = read_cube(self.resolve(entry))
        cube.check_labels(self.n_classes)
        return cube

    def validate(self):
        """Read every cube once; all must share a band count and carry valid labels."""
        bands = None
        for e in self.entries:
            cube = self.load(e)
            if bands is None:
                bands = cube.n_bands
            elif cube.n_bands != bands:
                raise DataError(f"{e.path}: {cube.n_bands} bands, expected {bands}")
        return bands

    def to_text(self):
        sections = [(None, {"name": self.name, "classes": ", ".join(self.classes), "seed": str(self.seed)})]
        sections += [("entry", {"path": e.path, "split": e.split}) for e in self.entries]
        return kvfile.dump(sections)

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text, root="."):
        sections = kvfile.parse(text)
        head = sections[0][1]
        for key in ("name", "classes"):
            if key not in head:
                raise ConfigError(f"manifest is missing '{key}'")
        entries = []
        for name, values in sections[1:]:
            if name != "entry":
                raise ConfigError(f"unexpected manifest section [{name}]")
            if "path" not in values or "split" not in values:
                raise ConfigError("each [entry] needs 'path' and 'split'")
            entries.append(Entry(values["path"], values["split"]))
        return cls(head["name"], kvfile.split_list(head["classes"]), entries,
                   int(head.get("seed", 42)), Path(root))

    @classmethod
    def load_file(cls, path):
        path = Path(path)
        return cls.from_text(path.read_text(encoding="utf-8"), root=path.parent)


def split_sizes(n, ratios):
    """Largest-remainder apportionment of ``n`` items over ``ratios``."""
    ratios = [float(r) for r in ratios]
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    quotas = [r * n for r in ratios]
    sizes = [math.floor(q + 1e-9) for q in quotas]
    rest = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:rest]:
        sizes[i] += 1
    return sizes


def make_splits(paths, ratios, seed=42, tags=SPLITS):
    """Seeded shuffle, then contiguous assignment of ``tags`` with largest-remainder sizes.

    Returns entries in the input order.
    """
    paths = list(paths)
    sizes = split_sizes(len(paths), ratios)
    perm = make_rng(seed, "splits").permutation(len(paths))
    tag_of = {}
    start = 0
    for tag, size in zip(tags, sizes):
        for i in perm[start: start + size]:
            tag_of[int(i)] = tag
        start += size
    return [Entry(p, tag_of[i]) for i, p in enumerate(paths)]


def subset_training(train, fraction, seed=42):
    """``ceil(fraction * N)`` items drawn as a prefix of one seeded permutation.

    Prefixes of the same permutation make smaller fractions subsets of larger
    ones. Items keep their original order.
    """
    if not 0 < fraction <= 1:
        raise ConfigError(f"subset fraction must be in (0, 1], got {fraction}")
    train = list(train)
    if not train:
        raise DataError("cannot subset an empty training split")
    n = math.ceil(fraction * len(train) - 1e-9)
    perm = make_rng(seed, "subset").permutation(len(train))
    keep = np.sort(perm[:n])
    return [train[i] for i in keep]

"""Per-pixel backbone features, computed once per (checkpoint, cube) pair.

Entries are keyed by ``sha256(checkpoint hash + cube content hash)`` so any
change to either the weights or the cube yields a fresh key. Entries live in
memory and, when a store directory is given, as ``<key>.npy`` files written via
rename, so concurrent writers of the same key leave one intact file.
"""
import hashlib
import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import StateError


@dataclass
class FeatureCacheEntry:
    key: str
    features: np.ndarray  # H x W x D


def cache_key(checkpoint_hash, cube_hash):
    return hashlib.sha256(f"{checkpoint_hash}:{cube_hash}".encode()).hexdigest()


class FeatureCache:
    def __init__(self, store=None):
        self.store = Path(store) if store is not None else None
        if self.store is not None:
            self.store.mkdir(parents=True, exist_ok=True)
        self._mem = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def reset_counters(self):
        self.hits = self.misses = 0

    def _path(self, key):
        return self.store / f"{key}.npy"

    def lookup(self, key):
        with self._lock:
            if key in self._mem:
                return self._mem[key]
        if self.store is not None and self._path(key).exists():
            arr = np.load(self._path(key), allow_pickle=False)
            with self._lock:
                self._mem[key] = arr
            return arr
        return None

    def _write(self, key, arr):
        with self._lock:
            self._mem[key] = arr
        if self.store is None:
            return
        fd, tmp = tempfile.mkstemp(dir=self.store, suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            np.save(fh, arr, allow_pickle=False)
        os.replace(tmp, self._path(key))

    def get(self, encoder, cube, checkpoint_hash=None) -> FeatureCacheEntry:
        """Embeddings for ``cube`` under a frozen ``encoder``; encodes only on a miss."""
        if not getattr(encoder, "frozen", False):
            raise StateError("feature caching requires a frozen encoder")
        if checkpoint_hash is None:
            from ..encoder import EncoderCheckpoint
            checkpoint_hash = EncoderCheckpoint.from_model(encoder).hash
        key = cache_key(checkpoint_hash, cube.content_hash())
        arr = self.lookup(key)
        if arr is not None:
            self.hits += 1
            return FeatureCacheEntry(key, arr)
        self.misses += 1
        h, w, c = cube.reflectance.shape
        arr = encoder.encode_pixels(cube.reflectance.reshape(-1, c), cube.wavelengths).reshape(h, w, -1)
        self._write(key, arr)
        return FeatureCacheEntry(key, arr)


def cache_features(encoder, cube, store: FeatureCache, checkpoint_hash=None):
    return store.get(encoder, cube, checkpoint_hash)

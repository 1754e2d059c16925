from .cache import FeatureCache, FeatureCacheEntry, cache_features, cache_key
from .cube import IGNORE_LABEL, HyperCube, cube_from_bytes, cube_to_bytes, read_cube, write_cube
from .manifest import DatasetManifest, Entry, make_splits, split_sizes, subset_training
from .synthetic import SyntheticSceneSpec, band_matrix, generate_endmembers, generate_scene

__all__ = [
    "IGNORE_LABEL", "HyperCube", "read_cube", "write_cube", "cube_to_bytes", "cube_from_bytes",
    "DatasetManifest", "Entry", "make_splits", "split_sizes", "subset_training",
    "SyntheticSceneSpec", "generate_endmembers", "generate_scene", "band_matrix",
    "FeatureCache", "FeatureCacheEntry", "cache_features", "cache_key",
]

from .suite import PROFILES, TARGETS, DatasetProfile, SuiteSpec, generate_dataset, generate_source, generate_suite, load_source_pixels  # noqa: E402

__all__ += ["PROFILES", "TARGETS", "DatasetProfile", "SuiteSpec", "generate_dataset", "generate_source",
            "generate_suite", "load_source_pixels"]

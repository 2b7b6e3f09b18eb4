"""Dataset loaders, surrogate generators and the canonical on-disk format."""

from .foursquare import (
    CheckinData,
    IngestError,
    SubsetConfig,
    TimeBucketScheme,
    load_foursquare,
    synth_checkins,
)
from .io import DatasetManifest, data_hash, load_dataset, read_jsonl, save_dataset, write_jsonl
from .movielens import (
    FoldingSplit,
    MovieLensData,
    build_folding_split,
    folding_violations,
    load_movielens,
    movielens_extra,
    movielens_from_saved,
    synth_movielens,
)
from .synthetic import SyntheticConfig, SyntheticData, synth_low_overlap

__all__ = [
    "CheckinData", "DatasetManifest", "FoldingSplit", "IngestError", "MovieLensData",
    "SubsetConfig", "SyntheticConfig", "SyntheticData", "TimeBucketScheme",
    "build_folding_split", "data_hash", "folding_violations", "load_dataset", "load_foursquare",
    "load_movielens", "movielens_extra", "movielens_from_saved", "read_jsonl", "save_dataset",
    "synth_checkins", "synth_low_overlap", "synth_movielens", "write_jsonl",
]

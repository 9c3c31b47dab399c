"""Bayes linear reconstruction of coupled climate fields."""

from ._core import (
    CoexError,
    InvalidBeliefs,
    InvalidInput,
    IoError,
    SchemaError,
    __version__,
    adjust,
    adjust_hierarchy,
    ensemble_shrinkage,
    first_update_field,
    fit,
    ispline,
    kron_matvec,
    nearest_kron_psd,
    pinv,
    run_config,
    second_update_field,
    wendland,
)

__all__ = [
    "CoexError",
    "InvalidBeliefs",
    "InvalidInput",
    "IoError",
    "SchemaError",
    "__version__",
    "adjust",
    "adjust_hierarchy",
    "ensemble_shrinkage",
    "first_update_field",
    "fit",
    "ispline",
    "kron_matvec",
    "nearest_kron_psd",
    "pinv",
    "run_config",
    "second_update_field",
    "wendland",
]

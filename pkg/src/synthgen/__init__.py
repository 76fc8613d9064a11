"""Synthetic mixed-type tabular data from a variational autoencoder.

Continuous columns are de-skewed (Box-Cox) and de-bimodalized (sgn-power)
before training; known sub-groups are handled by propensity-weighted
rejection sampling on a grid over the 2-D latent space.
"""

__version__ = "0.1.0"

from synthgen.dataset import (
    Binary,
    ColumnSchema,
    Continuous,
    Dataset,
    ScalingParams,
    ingest_csv,
    minmax_scale,
    minmax_unscale,
    write_csv,
)

__all__ = [
    "Binary",
    "ColumnSchema",
    "Continuous",
    "Dataset",
    "ScalingParams",
    "ingest_csv",
    "minmax_scale",
    "minmax_unscale",
    "write_csv",
    "__version__",
]

"""featuregate: collaborative feature engineering with streaming acceptance.

Declarative feature definitions compose into an executable fit/transform
pipeline; candidate contributions pass a software-quality validation battery
and an information-theoretic streaming selection gate before joining the
shared pipeline.
"""

from .errors import FeatureGateError
from .table import Schema, ColumnSpec, Table, Column, SplitPair, load_table, serialize_table, split, subsample

__version__ = "0.1.0"

__all__ = [
    "FeatureGateError",
    "Schema",
    "ColumnSpec",
    "Table",
    "Column",
    "SplitPair",
    "load_table",
    "serialize_table",
    "split",
    "subsample",
    "__version__",
]

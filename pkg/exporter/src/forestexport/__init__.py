"""Training-side companion to regforest.

Fits random forests with scikit-learn and writes them out in the model
JSON format the inference side consumes, together with a sidecar of test
vectors for cross-checking. The two packages share nothing but those
files and the `regforest` command line.
"""

from .export import (
    DEPTH_GRID,
    SIDECAR_VECTORS,
    TREE_GRID,
    ExportError,
    ExportJob,
    ExportResult,
    export,
)

__version__ = "0.1.0"

__all__ = [
    "DEPTH_GRID",
    "SIDECAR_VECTORS",
    "TREE_GRID",
    "ExportError",
    "ExportJob",
    "ExportResult",
    "export",
]

"""Image search in many languages through a head trained on one of them.

Cross-lingual sentence embeddings are mapped into a frozen image-embedding
space by a small block-structured MLP trained with hard-negative metric
losses, then evaluated per language with Recall@K.
"""

from xlret.errors import DataError, FormatError, ManifestError, MiningError, ShapeError

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "FormatError",
    "ManifestError",
    "MiningError",
    "ShapeError",
    "__version__",
]

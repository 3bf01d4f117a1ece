"""Online in-batch hard-negative mining."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from xlret.errors import MiningError, ShapeError

# element budget for one chunk of the (anchors x images x dim) difference tensor
_CHUNK_ELEMS = 1 << 22


@dataclass
class MiningResult:
    negative_index: np.ndarray
    negative_distance: np.ndarray


def batch_sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs squared distances via explicit differences (no norm expansion).

    The expansion ``|a|^2 - 2ab + |b|^2`` is faster but loses the exact
    zero for identical rows and can reorder near-ties, so it is avoided.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"cannot compare shapes {a.shape} and {b.shape}")
    out = np.empty((a.shape[0], b.shape[0]))
    step = max(1, _CHUNK_ELEMS // max(1, b.shape[0] * b.shape[1]))
    for lo in range(0, a.shape[0], step):
        diff = a[lo : lo + step, None, :] - b[None, :, :]
        out[lo : lo + step] = np.sum(diff * diff, axis=2)
    return out


def mine_hard_negatives(
    projected_texts: np.ndarray,
    batch_images: np.ndarray,
    positive_image_ids: Sequence[str],
) -> MiningResult:
    """Nearest image whose id differs from the anchor's own positive image.

    Ties go to the lowest batch index.  The downstream triplet uses
    ``batch_images[neg]`` as the negative image and ``projected_texts[neg]``
    as the negative text.
    """
    texts = np.asarray(projected_texts, dtype=np.float64)
    images = np.asarray(batch_images, dtype=np.float64)
    ids = np.asarray(list(positive_image_ids), dtype=object)
    if texts.shape[0] != images.shape[0] or texts.shape[0] != len(ids):
        raise ShapeError(
            f"row counts differ: texts {texts.shape[0]}, images {images.shape[0]}, ids {len(ids)}"
        )
    return select_negatives(batch_sq_distances(texts, images), ids)


def select_negatives(dist: np.ndarray, positive_image_ids: Sequence[str]) -> MiningResult:
    """Row-wise argmin of an anchor-by-image distance matrix, skipping same-id images."""
    dist = np.asarray(dist, dtype=np.float64)
    ids = np.asarray(list(positive_image_ids), dtype=object)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1] or dist.shape[0] != len(ids):
        raise ShapeError(f"distance matrix {dist.shape} does not match {len(ids)} ids")
    eligible = ids[:, None] != ids[None, :]
    has_any = eligible.any(axis=1)
    if not has_any.all():
        anchor = int(np.argmin(has_any))
        raise MiningError(
            f"anchor {anchor} (image id {ids[anchor]!r}) has no eligible negative in the batch"
        )
    masked = np.where(eligible, dist, np.inf)
    # argmin returns the first occurrence, which is the lowest-index tie rule
    neg = np.argmin(masked, axis=1)
    return MiningResult(neg, masked[np.arange(len(neg)), neg])

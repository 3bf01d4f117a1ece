"""Recall@K retrieval evaluation and cross-lingual alignment diagnostics."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from xlret.data_io import (
    Checkpoint,
    EmbeddingSet,
    ManifestRecord,
    check_rows,
    checkpoint_id,
)
from xlret.errors import DataError, ManifestError, ShapeError
from xlret.mining import batch_sq_distances
from xlret.projection import l2_normalize
from xlret.trainer import project_texts

DISTANCES = ("sqeuclidean", "cosine")
DEFAULT_K = (1, 5, 10)

TextSource = tuple[EmbeddingSet, Sequence[ManifestRecord]]


def pairwise_distances(queries: np.ndarray, gallery: np.ndarray, metric: str = "sqeuclidean"):
    if metric == "sqeuclidean":
        return batch_sq_distances(queries, gallery)
    if metric == "cosine":
        return 1.0 - l2_normalize(queries) @ l2_normalize(gallery).T
    raise ValueError(f"unknown distance {metric!r}; choose from {DISTANCES}")


def true_ranks(dist: np.ndarray, true_rows: np.ndarray) -> np.ndarray:
    """0-based position of each query's true item under a stable ascending sort.

    A gallery row ranks ahead of the true row if it is strictly closer, or
    equally close with a smaller row index.
    """
    n_q, n_g = dist.shape
    d_true = dist[np.arange(n_q), true_rows]
    closer = np.sum(dist < d_true[:, None], axis=1)
    tied_before = np.sum(
        (dist == d_true[:, None]) & (np.arange(n_g)[None, :] < true_rows[:, None]), axis=1
    )
    return closer + tied_before


def _as_matrix(x) -> np.ndarray:
    return x.data if isinstance(x, EmbeddingSet) else np.asarray(x, dtype=np.float64)


def _check_retrieval_args(q: np.ndarray, g: np.ndarray, true_rows: np.ndarray) -> None:
    if q.ndim != 2 or g.ndim != 2 or q.shape[1] != g.shape[1]:
        raise ShapeError(f"query shape {q.shape} incompatible with gallery shape {g.shape}")
    if true_rows.shape != (q.shape[0],):
        raise ShapeError("need exactly one true gallery row per query")
    if true_rows.size and (true_rows.min() < 0 or true_rows.max() >= g.shape[0]):
        raise DataError(f"true gallery row out of range [0, {g.shape[0]})")


def recall_at_k(
    queries,
    gallery,
    true_gallery_row: Sequence[int],
    k: int,
    metric: str = "sqeuclidean",
) -> float:
    """Fraction of queries whose true gallery row is among the k nearest."""
    q, g = _as_matrix(queries), _as_matrix(gallery)
    true_rows = np.asarray(true_gallery_row, dtype=np.int64)
    _check_retrieval_args(q, g, true_rows)
    if not 1 <= k <= g.shape[0]:
        raise DataError(f"k={k} outside [1, {g.shape[0]}]")
    if q.shape[0] == 0:
        return 0.0
    ranks = true_ranks(pairwise_distances(q, g, metric), true_rows)
    return float(np.count_nonzero(ranks < k)) / q.shape[0]


def recall_curve(
    queries,
    gallery,
    true_gallery_row: Sequence[int],
    k_list: Sequence[int],
    metric: str = "sqeuclidean",
) -> dict[int, float]:
    """``recall_at_k`` for several K from a single ranking pass."""
    q, g = _as_matrix(queries), _as_matrix(gallery)
    true_rows = np.asarray(true_gallery_row, dtype=np.int64)
    _check_retrieval_args(q, g, true_rows)
    for k in k_list:
        if not 1 <= k <= g.shape[0]:
            raise DataError(f"k={k} outside [1, {g.shape[0]}]")
    if q.shape[0] == 0:
        return {int(k): 0.0 for k in k_list}
    ranks = true_ranks(pairwise_distances(q, g, metric), true_rows)
    return {int(k): float(np.count_nonzero(ranks < k)) / q.shape[0] for k in k_list}


@dataclass
class RecallRow:
    lang: str
    k: int
    recall: float
    query_count: int
    gallery_size: int


@dataclass
class RecallReport:
    checkpoint_id: str
    distance: str
    k_list: list[int]
    rows: list[RecallRow] = field(default_factory=list)

    def languages(self) -> list[str]:
        seen: list[str] = []
        for r in self.rows:
            if r.lang not in seen:
                seen.append(r.lang)
        return seen

    def recall(self, lang: str, k: int) -> float:
        for r in self.rows:
            if r.lang == lang and r.k == k:
                return r.recall
        raise KeyError((lang, k))

    def to_dict(self) -> dict:
        return {
            "checkpoint_id": self.checkpoint_id,
            "distance": self.distance,
            "k_list": list(self.k_list),
            "rows": [asdict(r) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("lang", "k", "recall", "query_count", "gallery_size"))
            for r in self.rows:
                w.writerow((r.lang, r.k, repr(r.recall), r.query_count, r.gallery_size))

    def format_table(self) -> str:
        """Languages as columns, one R@K line per K, recall in percent."""
        langs = self.languages()
        width = max([6] + [len(l) for l in langs])
        head = "metric".ljust(8) + "".join(l.rjust(width + 2) for l in langs)
        lines = [head, "-" * len(head)]
        for k in self.k_list:
            cells = "".join(f"{100 * self.recall(l, k):.1f}".rjust(width + 2) for l in langs)
            lines.append(f"R@{k}".ljust(8) + cells)
        return "\n".join(lines) + "\n"


def group_by_language(sources: Iterable[TextSource]) -> dict[str, tuple[np.ndarray, list[ManifestRecord]]]:
    """Collect rows per language in order of first appearance."""
    grouped: dict[str, tuple[list[np.ndarray], list[ManifestRecord]]] = {}
    for emb, manifest in sources:
        check_rows(manifest, emb, "text")
        for rec in manifest:
            rows, recs = grouped.setdefault(rec.lang, ([], []))
            rows.append(emb.data[rec.row])
            recs.append(rec)
    out = {}
    for lang, (rows, recs) in grouped.items():
        dim = rows[0].shape[0]
        out[lang] = (np.vstack(rows).reshape(-1, dim), recs)
    return out


def evaluate_zero_shot(
    ckpt: Checkpoint,
    text_sources: Sequence[TextSource],
    images: EmbeddingSet,
    image_manifest: Sequence[ManifestRecord],
    k_list: Sequence[int] = DEFAULT_K,
    distance: str = "sqeuclidean",
) -> RecallReport:
    """Per-language Recall@K of projected texts against one shared image gallery."""
    if distance not in DISTANCES:
        raise ValueError(f"unknown distance {distance!r}")
    check_rows(image_manifest, images, "image")
    if images.dim != ckpt.config.output_dim:
        raise ShapeError(f"image width {images.dim} != projection width {ckpt.config.output_dim}")
    k_list = [int(k) for k in k_list]
    for k in k_list:
        if not 1 <= k <= images.count:
            raise DataError(f"k={k} outside [1, {images.count}]")
    image_row = {r.id: r.row for r in image_manifest}
    report = RecallReport(checkpoint_id(ckpt), distance, k_list)

    for lang, (rows, recs) in group_by_language(text_sources).items():
        missing = [r.id for r in recs if r.image_id not in image_row]
        if missing:
            raise ManifestError(
                f"{len(missing)} {lang!r} texts have no image in the gallery (first: {missing[0]!r})"
            )
        true_rows = np.array([image_row[r.image_id] for r in recs], dtype=np.int64)
        projected = project_texts(ckpt, EmbeddingSet(rows))
        ranks = true_ranks(pairwise_distances(projected.data, images.data, distance), true_rows)
        for k in k_list:
            recall = float(np.count_nonzero(ranks < k)) / len(recs)
            report.rows.append(RecallRow(lang, k, recall, len(recs), images.count))
    return report


@dataclass
class AlignmentEntry:
    lang_a: str
    lang_b: str
    n: int
    paired_mean: float
    mismatched_mean: float
    ratio: float


def alignment_score(set_a, set_b) -> tuple[float, float, float]:
    """(paired_mean, mismatched_mean, ratio) for two row-paired sets.

    ``mismatched_mean`` averages d(A_i, B_j) over all ordered i != j, which
    makes the score exactly symmetric in its arguments.
    """
    a, b = _as_matrix(set_a), _as_matrix(set_b)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"alignment needs equal shapes, got {a.shape} and {b.shape}")
    n = a.shape[0]
    if n < 2:
        raise DataError("alignment needs at least 2 paired rows")
    diff = a - b
    paired = np.sum(diff * diff, axis=1)
    paired_sum = float(np.sum(paired))
    # sum_ij |a_i - b_j|^2 = n sum|a|^2 + n sum|b|^2 - 2 (sum a).(sum b)
    total = n * float(np.sum(a * a)) + n * float(np.sum(b * b)) - 2.0 * float(
        np.dot(a.sum(axis=0), b.sum(axis=0))
    )
    paired_mean = paired_sum / n
    mismatched_mean = max(total - paired_sum, 0.0) / (n * (n - 1))
    if paired_mean == 0.0:
        ratio = 0.0
    elif mismatched_mean == 0.0:
        ratio = float("inf")
    else:
        ratio = paired_mean / mismatched_mean
    return paired_mean, mismatched_mean, ratio


@dataclass
class AlignmentReport:
    space: str
    entries: list[AlignmentEntry] = field(default_factory=list)

    def to_json(self) -> str:
        body = {"space": self.space, "entries": [asdict(e) for e in self.entries]}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("lang_a", "lang_b", "n", "paired_mean", "mismatched_mean", "ratio"))
            for e in self.entries:
                w.writerow(
                    (e.lang_a, e.lang_b, e.n, repr(e.paired_mean), repr(e.mismatched_mean), repr(e.ratio))
                )

    def format_table(self) -> str:
        lines = [f"{'pair':<12}{'n':>7}{'paired':>14}{'mismatched':>14}{'ratio':>10}"]
        for e in self.entries:
            lines.append(
                f"{e.lang_a + '-' + e.lang_b:<12}{e.n:>7}{e.paired_mean:>14.4g}"
                f"{e.mismatched_mean:>14.4g}{e.ratio:>10.4f}"
            )
        return "\n".join(lines) + "\n"


def alignment_report(
    text_sources: Sequence[TextSource],
    ckpt: Checkpoint | None = None,
) -> AlignmentReport:
    """Alignment ratio for every language pair, pairing texts that share an image_id.

    With a checkpoint the comparison happens in the projected space,
    otherwise on the raw sentence embeddings.
    """
    grouped = group_by_language(text_sources)
    by_lang: dict[str, dict[str, np.ndarray]] = {}
    for lang, (rows, recs) in grouped.items():
        vecs = project_texts(ckpt, EmbeddingSet(rows)).data if ckpt is not None else rows
        table: dict[str, np.ndarray] = {}
        for vec, rec in zip(vecs, recs):
            if rec.image_id is not None and rec.image_id not in table:
                table[rec.image_id] = vec
        by_lang[lang] = table

    report = AlignmentReport("projected" if ckpt is not None else "input")
    for la, lb in combinations(by_lang, 2):
        shared = [i for i in by_lang[la] if i in by_lang[lb]]
        if len(shared) < 2:
            continue
        a = np.vstack([by_lang[la][i] for i in shared])
        b = np.vstack([by_lang[lb][i] for i in shared])
        pm, mm, ratio = alignment_score(a, b)
        report.entries.append(AlignmentEntry(la, lb, len(shared), pm, mm, ratio))
    return report


def export_projection_csv(
    ckpt: Checkpoint, text_sources: Sequence[TextSource], path: str | os.PathLike
) -> int:
    """Write ``id,lang,v0..v{d-1}`` for every text row; returns the row count."""
    dim = ckpt.config.output_dim
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "lang"] + [f"v{i}" for i in range(dim)])
        for emb, manifest in text_sources:
            check_rows(manifest, emb, "text")
            if not manifest:
                continue
            projected = project_texts(ckpt, emb.take([r.row for r in manifest])).data
            for rec, vec in zip(manifest, projected):
                w.writerow([rec.id, rec.lang] + ["%.9e" % x for x in vec])
                n += 1
    return n


def read_projection_csv(path: str | os.PathLike) -> tuple[list[str], list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        ids, langs, rows = [], [], []
        for row in reader:
            ids.append(row[0])
            langs.append(row[1])
            rows.append([float(x) for x in row[2:]])
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 2)
    return ids, langs, data

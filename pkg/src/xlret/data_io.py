"""Embedding, manifest and checkpoint files.

Embedding file (``.xemb``)::

    b"XEMB" | u32 version=1 | u32 dim | u32 count | count*dim float32, row-major

all little-endian.  Manifests are JSON lines with keys ``row``, ``id``,
``lang`` and optionally ``image_id`` and ``caption``.  Checkpoints are::

    b"XCKP" | u32 version=1 | u32 header_len | JSON header | per block W (out x in) then b

with parameters stored as little-endian float32.

Computation happens in float64; files hold float32.  Values are narrowed
exactly once, so ``read(write(read(write(x))))`` equals ``read(write(x))``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from xlret.config import LossConfig, ProjectionConfig, TrainConfig
from xlret.errors import FormatError, ManifestError, ShapeError
from xlret.projection import NetworkWeights

EMB_MAGIC = b"XEMB"
CKPT_MAGIC = b"XCKP"
FORMAT_VERSION = 1
_EMB_HEADER = struct.Struct("<4sIII")
_CKPT_PREFIX = struct.Struct("<4sII")
_F32 = np.dtype("<f4")


@dataclass
class EmbeddingSet:
    """Row-indexed embedding matrix; ``data`` is float64 of shape (count, dim)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeError(f"embedding data must be 2-D, got shape {data.shape}")
        if data.shape[1] < 1:
            raise ShapeError("embedding dim must be positive")
        self.data = data

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @classmethod
    def empty(cls, dim: int) -> "EmbeddingSet":
        return cls(np.zeros((0, dim)))

    def take(self, rows: Sequence[int]) -> "EmbeddingSet":
        return EmbeddingSet(self.data[np.asarray(rows, dtype=np.int64)].reshape(-1, self.dim))


def narrow(x: np.ndarray) -> np.ndarray:
    """Round to the nearest float32 and widen back to float64."""
    return np.asarray(x, dtype=np.float64).astype(np.float32).astype(np.float64)


def encode_embeddings(emb: EmbeddingSet) -> bytes:
    with np.errstate(over="ignore"):
        payload = np.ascontiguousarray(emb.data, dtype=_F32)
    if not np.all(np.isfinite(payload)):
        raise FormatError("embeddings are non-finite or overflow float32")
    header = _EMB_HEADER.pack(EMB_MAGIC, FORMAT_VERSION, emb.dim, emb.count)
    return header + payload.tobytes()


def decode_embeddings(buf: bytes, source: str = "<bytes>") -> EmbeddingSet:
    if len(buf) < _EMB_HEADER.size:
        raise FormatError(f"{source}: file shorter than the 16-byte header")
    magic, version, dim, count = _EMB_HEADER.unpack_from(buf)
    if magic != EMB_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {EMB_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    if dim < 1:
        raise FormatError(f"{source}: dim must be positive")
    expected = _EMB_HEADER.size + 4 * dim * count
    if len(buf) != expected:
        raise FormatError(
            f"{source}: payload length {len(buf)} bytes, header implies {expected}"
        )
    data = np.frombuffer(buf, dtype=_F32, offset=_EMB_HEADER.size).reshape(count, dim)
    if not np.all(np.isfinite(data)):
        bad = int(np.argwhere(~np.isfinite(data))[0][0])
        raise FormatError(f"{source}: non-finite value in row {bad}")
    return EmbeddingSet(data.astype(np.float64))


def read_embedding_file(path: str | os.PathLike) -> EmbeddingSet:
    return decode_embeddings(Path(path).read_bytes(), str(path))


def write_embedding_file(emb: EmbeddingSet, path: str | os.PathLike) -> None:
    Path(path).write_bytes(encode_embeddings(emb))


@dataclass(frozen=True)
class ManifestRecord:
    row: int
    id: str
    lang: str = ""
    image_id: str | None = None
    caption: str | None = None

    def to_json(self) -> str:
        rec: dict = {"row": self.row, "id": self.id, "lang": self.lang}
        if self.image_id is not None:
            rec["image_id"] = self.image_id
        if self.caption is not None:
            rec["caption"] = self.caption
        return json.dumps(rec, ensure_ascii=False)


def parse_manifest(lines: Iterable[str], source: str = "<manifest>") -> list[ManifestRecord]:
    records: list[ManifestRecord] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{source}:{lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ManifestError(f"{source}:{lineno}: expected an object")
        row, rid = obj.get("row"), obj.get("id")
        if not isinstance(row, int) or isinstance(row, bool) or row < 0:
            raise ManifestError(f"{source}:{lineno}: 'row' must be a non-negative integer")
        if not isinstance(rid, str) or not rid:
            raise ManifestError(f"{source}:{lineno}: 'id' must be a non-empty string")
        lang = obj.get("lang", "")
        image_id = obj.get("image_id")
        caption = obj.get("caption")
        for key, val in (("lang", lang), ("image_id", image_id), ("caption", caption)):
            if val is not None and not isinstance(val, str):
                raise ManifestError(f"{source}:{lineno}: {key!r} must be a string")
        unknown = set(obj) - {"row", "id", "lang", "image_id", "caption"}
        if unknown:
            raise ManifestError(f"{source}:{lineno}: unknown keys {sorted(unknown)}")
        if rid in seen:
            raise ManifestError(
                f"{source}:{lineno}: duplicate id {rid!r} (first seen on line {seen[rid]})"
            )
        seen[rid] = lineno
        records.append(ManifestRecord(row, rid, lang or "", image_id, caption))
    return records


def read_manifest(path: str | os.PathLike) -> list[ManifestRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh, str(path))


def write_manifest(records: Iterable[ManifestRecord], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def check_rows(records: Sequence[ManifestRecord], emb: EmbeddingSet, what: str) -> None:
    for rec in records:
        if not 0 <= rec.row < emb.count:
            raise ManifestError(
                f"{what} record {rec.id!r}: row {rec.row} out of range [0, {emb.count})"
            )


def concat_sources(
    sources: Sequence[tuple[EmbeddingSet, Sequence[ManifestRecord]]],
) -> tuple[EmbeddingSet, list[ManifestRecord]]:
    """Stack several (embeddings, manifest) pairs into one, renumbering rows."""
    if not sources:
        raise ManifestError("no text sources given")
    dims = {emb.dim for emb, _ in sources}
    if len(dims) != 1:
        raise ShapeError(f"text sources disagree in width: {sorted(dims)}")
    blocks, records, offset = [], [], 0
    for emb, manifest in sources:
        check_rows(manifest, emb, "text")
        blocks.append(emb.data)
        records.extend(
            ManifestRecord(r.row + offset, r.id, r.lang, r.image_id, r.caption) for r in manifest
        )
        offset += emb.count
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ManifestError("record ids repeat across text manifests")
    return EmbeddingSet(np.vstack(blocks)), records


@dataclass
class PairedDataset:
    text_embeddings: EmbeddingSet
    image_embeddings: EmbeddingSet
    pairs: list[tuple[int, int, str]]
    image_id_of: dict[int, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pairs)


def join_pairs(
    text_set: EmbeddingSet,
    text_manifest: Sequence[ManifestRecord],
    image_set: EmbeddingSet,
    image_manifest: Sequence[ManifestRecord],
    lang_filter: str | None = None,
) -> PairedDataset:
    """Link text rows to image rows through ``image_id``, in manifest order."""
    check_rows(text_manifest, text_set, "text")
    check_rows(image_manifest, image_set, "image")
    image_row = {rec.id: rec.row for rec in image_manifest}
    pairs: list[tuple[int, int, str]] = []
    image_id_of: dict[int, str] = {}
    for rec in text_manifest:
        if lang_filter is not None and rec.lang != lang_filter:
            continue
        if rec.image_id is None:
            raise ManifestError(f"text record {rec.id!r} has no image_id")
        if rec.image_id not in image_row:
            raise ManifestError(
                f"text record {rec.id!r}: image_id {rec.image_id!r} not in image manifest"
            )
        pairs.append((rec.row, image_row[rec.image_id], rec.lang))
        image_id_of[rec.row] = rec.image_id
    return PairedDataset(text_set, image_set, pairs, image_id_of)


@dataclass
class Checkpoint:
    config: ProjectionConfig
    loss_config: LossConfig
    train_config: TrainConfig
    weights: NetworkWeights
    epochs_trained: int = 0
    seed: int = 0

    def header(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "loss_config": self.loss_config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "epochs_trained": self.epochs_trained,
            "seed": self.seed,
            "shapes": [list(s) for s in self.weights.shapes()],
        }

    def equals(self, other: "Checkpoint") -> bool:
        return self.header() == other.header() and self.weights.equals(other.weights)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    header = json.dumps(ckpt.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_CKPT_PREFIX.pack(CKPT_MAGIC, FORMAT_VERSION, len(header)), header]
    for p in ckpt.weights.params():
        parts.append(np.ascontiguousarray(p, dtype=_F32).tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(buf) < _CKPT_PREFIX.size:
        raise FormatError(f"{source}: truncated checkpoint prefix")
    magic, version, hlen = _CKPT_PREFIX.unpack_from(buf)
    if magic != CKPT_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {CKPT_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    start = _CKPT_PREFIX.size
    if len(buf) < start + hlen:
        raise FormatError(f"{source}: truncated checkpoint header")
    try:
        header = json.loads(buf[start : start + hlen].decode("utf-8"))
        config = ProjectionConfig(**header["config"])
        loss_config = LossConfig(**header["loss_config"])
        train_config = TrainConfig(**header["train_config"])
        shapes = [tuple(int(d) for d in s) for s in header["shapes"]]
        epochs_trained = int(header["epochs_trained"])
        seed = int(header["seed"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{source}: invalid checkpoint header ({exc})") from None
    if shapes != config.layer_shapes():
        raise FormatError(f"{source}: header shapes {shapes} disagree with config")

    offset = start + hlen
    expected = offset + 4 * sum(o * i + o for o, i in shapes)
    if len(buf) != expected:
        raise FormatError(f"{source}: payload length {len(buf)} bytes, header implies {expected}")
    Ws, bs = [], []
    for out_dim, in_dim in shapes:
        w = np.frombuffer(buf, dtype=_F32, count=out_dim * in_dim, offset=offset)
        offset += 4 * out_dim * in_dim
        b = np.frombuffer(buf, dtype=_F32, count=out_dim, offset=offset)
        offset += 4 * out_dim
        Ws.append(w.reshape(out_dim, in_dim).astype(np.float64))
        bs.append(b.astype(np.float64))
    if not all(np.all(np.isfinite(p)) for p in Ws + bs):
        raise FormatError(f"{source}: non-finite weight")
    return Checkpoint(
        config, loss_config, train_config, NetworkWeights(Ws, bs), epochs_trained, seed
    )


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), str(path))


def checkpoint_id(ckpt: Checkpoint) -> str:
    """Short content hash of the serialised checkpoint."""
    return hashlib.sha256(encode_checkpoint(ckpt)).hexdigest()[:16]


def longest_caption_per_image(records: Sequence[ManifestRecord]) -> list[ManifestRecord]:
    """Keep one text record per image_id: the longest caption, first occurrence on ties.

    Records without a caption count as length 0.  Output follows the order in
    which each image_id first appears.
    """
    best: dict[str, ManifestRecord] = {}
    for rec in records:
        if rec.image_id is None:
            raise ManifestError(f"text record {rec.id!r} has no image_id")
        cur = best.get(rec.image_id)
        if cur is None or len(rec.caption or "") > len(cur.caption or ""):
            best[rec.image_id] = rec
    return list(best.values())

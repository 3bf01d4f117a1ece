"""Synthetic multi-language text/image embeddings with controllable misalignment.

Every item i has a latent ``z_i ~ N(0, I)``.  Language l sees the item as
``(A + gamma * D_l) z_i + sigma * noise`` and the image is
``c * (relu(B z_i) + sigma * noise)``.  ``A``, ``D_l`` and ``B`` have entries
drawn from ``N(0, 1/latent_dim)`` so every coordinate of ``A z`` and ``B z``
has roughly unit variance; ``sigma`` is therefore a relative noise level on
both sides.  The image scale ``c`` defaults to ``sqrt(2 / image_dim)``, which
gives images unit expected squared norm, the same order as the projection
head's output at initialisation.

Draw order from a single ``default_rng(seed)``:
A, B, D_l for each language in order, Z, text noise per language in order,
image noise.  The maps come first so they do not depend on ``n_items``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from xlret.data_io import EmbeddingSet, ManifestRecord, write_embedding_file, write_manifest


@dataclass
class SynthConfig:
    n_items: int = 1000
    latent_dim: int = 32
    text_dim: int = 512
    image_dim: int = 256
    languages: list[str] = field(default_factory=lambda: ["en", "xx"])
    gamma: float = 0.05
    sigma: float = 0.1
    seed: int = 0
    image_scale: float | None = None

    def __post_init__(self) -> None:
        if min(self.n_items, self.latent_dim, self.text_dim, self.image_dim) < 1:
            raise ValueError("n_items and all dimensions must be positive")
        if self.gamma < 0 or self.sigma < 0:
            raise ValueError("gamma and sigma must be non-negative")
        if self.image_scale is not None and not self.image_scale > 0:
            raise ValueError("image_scale must be positive")
        if not self.languages or len(set(self.languages)) != len(self.languages):
            raise ValueError("languages must be a non-empty list of distinct codes")


@dataclass
class SynthData:
    texts: dict[str, EmbeddingSet]
    text_manifests: dict[str, list[ManifestRecord]]
    images: EmbeddingSet
    image_manifest: list[ManifestRecord]
    config: SynthConfig

    def split(self, n_train: int) -> tuple["SynthData", "SynthData"]:
        """First ``n_train`` items vs the rest, with rows renumbered from 0."""
        if not 0 < n_train < self.config.n_items:
            raise ValueError(f"n_train must lie in (0, {self.config.n_items})")
        return self._slice(0, n_train), self._slice(n_train, self.config.n_items)

    def _slice(self, lo: int, hi: int) -> "SynthData":
        def cut(records: list[ManifestRecord]) -> list[ManifestRecord]:
            return [
                ManifestRecord(r.row - lo, r.id, r.lang, r.image_id, r.caption)
                for r in records[lo:hi]
            ]

        cfg = SynthConfig(**{**asdict(self.config), "n_items": hi - lo})
        return SynthData(
            texts={l: EmbeddingSet(s.data[lo:hi]) for l, s in self.texts.items()},
            text_manifests={l: cut(m) for l, m in self.text_manifests.items()},
            images=EmbeddingSet(self.images.data[lo:hi]),
            image_manifest=cut(self.image_manifest),
            config=cfg,
        )

    def combined_text(self) -> tuple[EmbeddingSet, list[ManifestRecord]]:
        """All languages stacked in language order into one set + manifest."""
        blocks, records = [], []
        offset = 0
        for lang in self.config.languages:
            blocks.append(self.texts[lang].data)
            for r in self.text_manifests[lang]:
                records.append(ManifestRecord(r.row + offset, r.id, r.lang, r.image_id, r.caption))
            offset += self.texts[lang].count
        return EmbeddingSet(np.vstack(blocks)), records


def generate(cfg: SynthConfig) -> SynthData:
    rng = np.random.default_rng(cfg.seed)
    scale = 1.0 / np.sqrt(cfg.latent_dim)
    A = rng.standard_normal((cfg.text_dim, cfg.latent_dim)) * scale
    B = rng.standard_normal((cfg.image_dim, cfg.latent_dim)) * scale
    D = {l: rng.standard_normal((cfg.text_dim, cfg.latent_dim)) * scale for l in cfg.languages}
    Z = rng.standard_normal((cfg.n_items, cfg.latent_dim))

    texts, manifests = {}, {}
    for lang in cfg.languages:
        noise = rng.standard_normal((cfg.n_items, cfg.text_dim))
        mapped = Z @ (A + cfg.gamma * D[lang]).T
        texts[lang] = EmbeddingSet(mapped + cfg.sigma * noise)
        manifests[lang] = [
            ManifestRecord(i, f"{lang}-{i:06d}", lang, f"img-{i:06d}") for i in range(cfg.n_items)
        ]
    image_noise = rng.standard_normal((cfg.n_items, cfg.image_dim))
    c = cfg.image_scale if cfg.image_scale is not None else np.sqrt(2.0 / cfg.image_dim)
    images = EmbeddingSet(c * (np.maximum(Z @ B.T, 0.0) + cfg.sigma * image_noise))
    image_manifest = [ManifestRecord(i, f"img-{i:06d}", "") for i in range(cfg.n_items)]
    return SynthData(texts, manifests, images, image_manifest, cfg)


def write_synth(data: SynthData, out_dir: str | os.PathLike, prefix: str = "") -> dict[str, str]:
    """Write text/image embeddings, manifests and a recipe file; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text, records = data.combined_text()
    paths = {
        "text_emb": out / f"{prefix}text.xemb",
        "text_manifest": out / f"{prefix}text.jsonl",
        "img_emb": out / f"{prefix}images.xemb",
        "img_manifest": out / f"{prefix}images.jsonl",
        "recipe": out / f"{prefix}recipe.json",
    }
    write_embedding_file(text, paths["text_emb"])
    write_manifest(records, paths["text_manifest"])
    write_embedding_file(data.images, paths["img_emb"])
    write_manifest(data.image_manifest, paths["img_manifest"])
    paths["recipe"].write_text(json.dumps(asdict(data.config), indent=2, sort_keys=True) + "\n")
    return {k: str(v) for k, v in paths.items()}

"""Mini-batch training loop: project, mine, score, backpropagate, Adam-update."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from xlret.config import LossConfig, ProjectionConfig, TrainConfig
from xlret.data_io import Checkpoint, EmbeddingSet, PairedDataset, narrow
from xlret.errors import DataError, ShapeError
from xlret.losses import TripletBatch, compute_loss
from xlret.mining import mine_hard_negatives
from xlret.projection import (
    AdamState,
    NetworkWeights,
    adam_step,
    backward,
    forward,
    init_weights,
    l2_normalize,
)

log = logging.getLogger(__name__)

LOSS_LOG_HEADER = ("epoch", "batch", "loss", "mean_neg_dist")


@dataclass
class LossLog:
    entries: list[tuple[int, int, float, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, epoch: int, batch: int, loss: float, mean_neg_dist: float) -> None:
        self.entries.append((epoch, batch, float(loss), float(mean_neg_dist)))

    def epoch_means(self) -> dict[int, float]:
        sums: dict[int, list[float]] = {}
        for epoch, _, loss, _ in self.entries:
            sums.setdefault(epoch, []).append(loss)
        return {e: sum(v) / len(v) for e, v in sums.items()}

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOSS_LOG_HEADER)
            for epoch, batch, loss, neg in self.entries:
                writer.writerow((epoch, batch, repr(loss), repr(neg)))

    @classmethod
    def read_csv(cls, path: str | os.PathLike) -> "LossLog":
        out = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if tuple(header or ()) != LOSS_LOG_HEADER:
                raise DataError(f"{path}: unexpected loss-log header {header}")
            for row in reader:
                out.append(int(row[0]), int(row[1]), float(row[2]), float(row[3]))
        return out


@dataclass
class BatchResult:
    loss: float
    grads: NetworkWeights
    negative_index: np.ndarray
    mean_neg_dist: float


def batch_objective(
    weights: NetworkWeights,
    config: ProjectionConfig,
    loss_cfg: LossConfig,
    texts: np.ndarray,
    images: np.ndarray,
    image_ids: Sequence[str],
    mode: str = "train",
    rng: np.random.Generator | None = None,
    masks: list[np.ndarray | None] | None = None,
) -> BatchResult:
    """Loss and parameter gradients for one mini-batch.

    Anchors and negative texts come out of the same forward pass; the
    negative-text gradient is scattered back onto the rows it was taken
    from, so a single backward pass covers both routes.
    """
    out, cache = forward(weights, config, texts, mode=mode, rng=rng, masks=masks)
    mined = mine_hard_negatives(out, images, image_ids)
    neg = mined.negative_index
    triplets = TripletBatch(out, images, images[neg], out[neg])
    res = compute_loss(triplets, loss_cfg)

    out_grad = res.grad_te_an.copy()
    if res.grad_te_n is not None:
        # unbuffered scatter-add, applied in ascending anchor order
        np.add.at(out_grad, neg, res.grad_te_n)
    grads, _ = backward(weights, config, cache, out_grad)
    return BatchResult(res.loss, grads, neg, float(np.mean(mined.negative_distance)))


def _prepare_inputs(texts: np.ndarray, normalize: bool) -> np.ndarray:
    return l2_normalize(texts) if normalize else texts


def train(
    dataset: PairedDataset,
    proj_cfg: ProjectionConfig,
    train_cfg: TrainConfig,
    on_epoch_end: Callable[[int, Checkpoint], None] | None = None,
) -> tuple[Checkpoint, LossLog]:
    """Train a projection head on ``dataset`` and return its checkpoint and loss log.

    Per epoch the pairs are shuffled with a seeded generator and cut into
    full batches of ``batch_size``; a trailing partial batch is dropped.
    """
    n_pairs = len(dataset)
    if n_pairs == 0:
        raise DataError("dataset has no pairs")
    if train_cfg.batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    if train_cfg.batch_size > n_pairs:
        raise DataError(f"batch_size {train_cfg.batch_size} exceeds pair count {n_pairs}")
    if dataset.text_embeddings.dim != proj_cfg.input_dim:
        raise ShapeError(
            f"text width {dataset.text_embeddings.dim} != input_dim {proj_cfg.input_dim}"
        )
    if dataset.image_embeddings.dim != proj_cfg.output_dim:
        raise ShapeError(
            f"image width {dataset.image_embeddings.dim} != last block dim {proj_cfg.output_dim}"
        )

    text_rows = np.array([p[0] for p in dataset.pairs], dtype=np.int64)
    image_rows = np.array([p[1] for p in dataset.pairs], dtype=np.int64)
    pair_ids = np.array([dataset.image_id_of[r] for r in text_rows.tolist()], dtype=object)
    texts_all = _prepare_inputs(dataset.text_embeddings.data, train_cfg.normalize_inputs)
    images_all = dataset.image_embeddings.data

    weights = init_weights(proj_cfg, train_cfg.seed)
    state = AdamState.zeros_like(
        weights,
        lr=train_cfg.lr,
        beta1=train_cfg.beta1,
        beta2=train_cfg.beta2,
        eps=train_cfg.adam_eps,
    )
    rng = np.random.default_rng([train_cfg.seed, 1])
    loss_log = LossLog()
    n_batches = n_pairs // train_cfg.batch_size

    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n_pairs)
        for bi in range(n_batches):
            idx = order[bi * train_cfg.batch_size : (bi + 1) * train_cfg.batch_size]
            result = batch_objective(
                weights,
                proj_cfg,
                train_cfg.loss,
                texts_all[text_rows[idx]],
                images_all[image_rows[idx]],
                pair_ids[idx].tolist(),
                mode="train",
                rng=rng,
            )
            adam_step(state, weights, result.grads)
            if bi % train_cfg.log_every == 0:
                loss_log.append(epoch, bi, result.loss, result.mean_neg_dist)
        log.info("epoch %d mean loss %.6g", epoch, loss_log.epoch_means().get(epoch, float("nan")))
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, _snapshot(weights, proj_cfg, train_cfg, epoch + 1))

    return _snapshot(weights, proj_cfg, train_cfg, train_cfg.epochs), loss_log


def _snapshot(
    weights: NetworkWeights, proj_cfg: ProjectionConfig, train_cfg: TrainConfig, epochs: int
) -> Checkpoint:
    # weights are stored as float32 on disk; narrow once so save/load is exact
    frozen = NetworkWeights([narrow(w) for w in weights.W], [narrow(v) for v in weights.b])
    return Checkpoint(
        config=proj_cfg,
        loss_config=train_cfg.loss,
        train_config=train_cfg,
        weights=frozen,
        epochs_trained=epochs,
        seed=train_cfg.seed,
    )


def project_texts(ckpt: Checkpoint, texts: EmbeddingSet) -> EmbeddingSet:
    """Eval-mode projection of every text row into the image space."""
    if texts.dim != ckpt.config.input_dim:
        raise ShapeError(f"text width {texts.dim} != checkpoint input_dim {ckpt.config.input_dim}")
    if texts.count == 0:
        return EmbeddingSet.empty(ckpt.config.output_dim)
    x = _prepare_inputs(texts.data, ckpt.train_config.normalize_inputs)
    out, _ = forward(ckpt.weights, ckpt.config, x, mode="eval")
    return EmbeddingSet(out)

"""Squared-distance metric losses for text-to-image alignment.

M3L, per triplet with u = d(anchor, pos_img), v = d(anchor, neg_img),
w = d(anchor, neg_text)::

    alpha1 * u**rho / (v**rho + eps) + alpha2 * u**rho / (w**rho + eps)

PATR, per triplet::

    d(anchor, pos_img) + max(0, eta - d(anchor, neg_img))

Batch losses are means over rows.  Image vectors are frozen, so gradients
are returned only for the projected text rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from xlret.config import LossConfig
from xlret.errors import ShapeError


@dataclass
class TripletBatch:
    te_an: np.ndarray
    im_p: np.ndarray
    im_n: np.ndarray
    te_n: np.ndarray

    def __post_init__(self) -> None:
        mats = [np.asarray(m, dtype=np.float64) for m in (self.te_an, self.im_p, self.im_n, self.te_n)]
        shapes = {m.shape for m in mats}
        if len(shapes) != 1 or mats[0].ndim != 2:
            raise ShapeError(f"triplet matrices must share one 2-D shape, got {sorted(shapes)}")
        self.te_an, self.im_p, self.im_n, self.te_n = mats

    @property
    def size(self) -> int:
        return self.te_an.shape[0]


@dataclass
class LossResult:
    loss: float
    per_row: np.ndarray
    grad_te_an: np.ndarray
    grad_te_n: np.ndarray | None


def squared_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray | float:
    """Sum of squared coordinate differences along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[-1:] != y.shape[-1:]:
        raise ShapeError(f"width mismatch: {x.shape[-1:]} vs {y.shape[-1:]}")
    diff = x - y
    out = np.sum(diff * diff, axis=-1)
    return float(out) if out.ndim == 0 else out


def _power(x: np.ndarray, p: float) -> np.ndarray:
    return np.power(x, p)


def _ratio_term(u: np.ndarray, d: np.ndarray, p: float, eps: float):
    """``u**p / (d**p + eps)`` and its partials in u and d.

    With eps == 0 the value is evaluated as ``(u/d)**p`` so that a common
    rescaling of u and d (which cancels exactly in the quotient) leaves the
    value bitwise unchanged.
    """
    up = _power(u, p)
    dp = _power(d, p)
    denom = dp + eps
    with np.errstate(divide="ignore", invalid="ignore"):
        if eps == 0.0:
            value = _power(u / d, p)
        else:
            value = up / denom
        # at u == 0 the chain factor (anchor - positive) is zero as well
        du = np.where(u > 0.0, p * _power(u, p - 1.0) / denom, 0.0)
        dd = np.where(d > 0.0, -p * up * _power(d, p - 1.0) / (denom * denom), 0.0)
    return value, du, dd


def m3l_per_row(u, v, w, cfg: LossConfig) -> np.ndarray:
    """M3L evaluated directly from the three squared distances."""
    u, v, w = (np.asarray(t, dtype=np.float64) for t in (u, v, w))
    t1, _, _ = _ratio_term(u, v, cfg.rho, cfg.denom_eps)
    t2, _, _ = _ratio_term(u, w, cfg.rho, cfg.denom_eps)
    return cfg.alpha1 * t1 + cfg.alpha2 * t2


def patr_per_row(u, v, cfg: LossConfig) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return u + np.maximum(0.0, cfg.eta - v)


def _mean(values: np.ndarray) -> float:
    # fixed ascending-row summation order
    total = 0.0
    for x in values.tolist():
        total += x
    return total / len(values) if len(values) else 0.0


def m3l_loss(batch: TripletBatch, cfg: LossConfig) -> LossResult:
    n = batch.size
    a_p = batch.te_an - batch.im_p
    a_n = batch.te_an - batch.im_n
    a_t = batch.te_an - batch.te_n
    u = np.sum(a_p * a_p, axis=1)
    v = np.sum(a_n * a_n, axis=1)
    w = np.sum(a_t * a_t, axis=1)

    t1, t1_du, t1_dv = _ratio_term(u, v, cfg.rho, cfg.denom_eps)
    t2, t2_du, t2_dw = _ratio_term(u, w, cfg.rho, cfg.denom_eps)
    per_row = cfg.alpha1 * t1 + cfg.alpha2 * t2

    dL_du = (cfg.alpha1 * t1_du + cfg.alpha2 * t2_du) / n
    dL_dv = cfg.alpha1 * t1_dv / n
    dL_dw = cfg.alpha2 * t2_dw / n
    grad_an = 2.0 * (dL_du[:, None] * a_p + dL_dv[:, None] * a_n + dL_dw[:, None] * a_t)
    grad_n = -2.0 * dL_dw[:, None] * a_t
    return LossResult(_mean(per_row), per_row, grad_an, grad_n)


def patr_loss(batch: TripletBatch, cfg: LossConfig) -> LossResult:
    n = batch.size
    a_p = batch.te_an - batch.im_p
    a_n = batch.te_an - batch.im_n
    u = np.sum(a_p * a_p, axis=1)
    v = np.sum(a_n * a_n, axis=1)
    per_row = u + np.maximum(0.0, cfg.eta - v)
    # hinge subgradient is 0 at the kink v == eta
    active = (cfg.eta - v) > 0.0
    grad_an = (2.0 / n) * (a_p - active[:, None] * a_n)
    return LossResult(_mean(per_row), per_row, grad_an, None)


def compute_loss(batch: TripletBatch, cfg: LossConfig) -> LossResult:
    if cfg.kind == "m3l":
        return m3l_loss(batch, cfg)
    return patr_loss(batch, cfg)

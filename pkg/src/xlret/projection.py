"""Text-side projection head with hand-written forward/backward and Adam.

Each block is ``x -> l2norm?(relu?(dropout(x @ W.T + b)))``.  All blocks
except the last carry the l2-norm so the final output lives on the same
(unnormalised, non-negative) scale as pooled CNN image features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from xlret.config import ProjectionConfig
from xlret.errors import ShapeError

NORM_EPS = 1e-12


@dataclass
class NetworkWeights:
    W: list[np.ndarray]
    b: list[np.ndarray]

    def copy(self) -> "NetworkWeights":
        return NetworkWeights([w.copy() for w in self.W], [v.copy() for v in self.b])

    def params(self) -> list[np.ndarray]:
        """Flat parameter list in serialisation order: W0, b0, W1, b1, ..."""
        out = []
        for w, v in zip(self.W, self.b):
            out.extend((w, v))
        return out

    def shapes(self) -> list[tuple[int, int]]:
        return [tuple(w.shape) for w in self.W]

    def equals(self, other: "NetworkWeights") -> bool:
        """Bitwise equality of every parameter."""
        mine, theirs = self.params(), other.params()
        return len(mine) == len(theirs) and all(
            a.shape == c.shape and a.tobytes() == c.tobytes() for a, c in zip(mine, theirs)
        )


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre_act: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray | None] = field(default_factory=list)
    dropped: list[np.ndarray] = field(default_factory=list)
    activated: list[np.ndarray] = field(default_factory=list)
    norms: list[np.ndarray | None] = field(default_factory=list)
    output: np.ndarray | None = None


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.99
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, weights: NetworkWeights, **hyper) -> "AdamState":
        params = weights.params()
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **hyper,
        )


def init_weights(config: ProjectionConfig, seed: int) -> NetworkWeights:
    """Uniform fan-in init in [-sqrt(6/fan_in), sqrt(6/fan_in)], zero biases.

    Draws are rounded to float32 so a freshly initialised network survives a
    checkpoint round-trip bit for bit.
    """
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for out_dim, in_dim in config.layer_shapes():
        bound = np.sqrt(6.0 / in_dim)
        w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        Ws.append(w.astype(np.float32).astype(np.float64))
        bs.append(np.zeros(out_dim))
    return NetworkWeights(Ws, bs)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Row-wise ``v / (||v|| + 1e-12)``; zero rows stay zero."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    return v / (norm + NORM_EPS)


def dropout_mask(shape: tuple[int, ...], rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: 0 for dropped units, 1/keep for kept ones."""
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def _check_weights(weights: NetworkWeights, config: ProjectionConfig) -> None:
    if len(weights.W) != config.n_blocks or len(weights.b) != config.n_blocks:
        raise ShapeError("weights do not match the configured number of blocks")
    for (out_dim, in_dim), w, v in zip(config.layer_shapes(), weights.W, weights.b):
        if w.shape != (out_dim, in_dim) or v.shape != (out_dim,):
            raise ShapeError(
                f"block weight {w.shape}/{v.shape} does not match config ({out_dim}, {in_dim})"
            )


def forward(
    weights: NetworkWeights,
    config: ProjectionConfig,
    batch: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    masks: list[np.ndarray | None] | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the block stack on a (n, input_dim) batch.

    In ``"train"`` mode dropout masks are drawn from ``rng`` unless ``masks``
    is given, in which case those exact multipliers are replayed (used by
    gradient checks).  Eval mode ignores both.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ShapeError(f"batch shape {x.shape} incompatible with input_dim {config.input_dim}")
    _check_weights(weights, config)
    if mode == "train" and masks is None and rng is None and any(config.dropout_rates):
        raise ValueError("train mode with dropout needs an rng or explicit masks")

    cache = ForwardCache()
    for k in range(config.n_blocks):
        cache.inputs.append(x)
        z = x @ weights.W[k].T + weights.b[k]
        cache.pre_act.append(z)

        mask = None
        if mode == "train":
            if masks is not None:
                mask = masks[k]
            elif config.dropout_rates[k] > 0.0:
                mask = dropout_mask(z.shape, config.dropout_rates[k], rng)
        a = z * mask if mask is not None else z
        cache.masks.append(mask)
        cache.dropped.append(a)

        r = np.maximum(a, 0.0) if config.relu_flags[k] else a
        cache.activated.append(r)

        if config.l2norm_flags[k]:
            norm = np.sqrt(np.sum(r * r, axis=1, keepdims=True))
            cache.norms.append(norm)
            x = r / (norm + NORM_EPS)
        else:
            cache.norms.append(None)
            x = r
    cache.output = x
    return x, cache


def backward(
    weights: NetworkWeights,
    config: ProjectionConfig,
    cache: ForwardCache,
    output_grad: np.ndarray,
) -> tuple[NetworkWeights, np.ndarray]:
    """Exact gradients of ``sum(output * output_grad)`` w.r.t. weights and input."""
    _check_weights(weights, config)
    if len(cache.inputs) != config.n_blocks or cache.output is None:
        raise ShapeError("cache does not belong to this network")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != cache.output.shape:
        raise ShapeError(f"output_grad shape {g.shape} != output shape {cache.output.shape}")

    dW: list[np.ndarray] = [None] * config.n_blocks  # type: ignore[list-item]
    db: list[np.ndarray] = [None] * config.n_blocks  # type: ignore[list-item]
    for k in reversed(range(config.n_blocks)):
        r = cache.activated[k]
        norm = cache.norms[k]
        if norm is not None:
            # d/dr [r / (|r| + e)] = I/(|r|+e) - r r^T / (|r| (|r|+e)^2)
            denom = norm + NORM_EPS
            proj = np.sum(r * g, axis=1, keepdims=True)
            safe = np.where(norm > 0.0, norm, 1.0)
            coef = np.where(norm > 0.0, proj / (safe * denom * denom), 0.0)
            g = g / denom - r * coef
        if config.relu_flags[k]:
            g = g * (cache.dropped[k] > 0.0)
        mask = cache.masks[k]
        if mask is not None:
            g = g * mask
        dW[k] = g.T @ cache.inputs[k]
        db[k] = g.sum(axis=0)
        g = g @ weights.W[k]
    return NetworkWeights(dW, db), g


def adam_step(
    state: AdamState, weights: NetworkWeights, grads: NetworkWeights
) -> tuple[AdamState, NetworkWeights]:
    """One bias-corrected Adam update, applied in place and returned."""
    params, gparams = weights.params(), grads.params()
    if len(params) != len(gparams) or len(params) != len(state.m):
        raise ShapeError("Adam state, weights and gradients disagree in parameter count")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, gparams, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"parameter shape {p.shape} vs gradient {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state, weights

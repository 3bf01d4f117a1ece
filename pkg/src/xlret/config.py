"""Configuration records shared by the network, losses, trainer and checkpoint format.

Defaults are the published hyperparameters: three blocks of width
[1024, 2048, 2048] with dropout [0.2, 0.1, 0.0], Adam at lr 1e-3 with
beta1 0.99, batch 128 for 50 epochs, M3L with rho=4, alpha1=0.5, alpha2=1
and PATR with eta=1100.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Literal, Sequence

LossKind = Literal["m3l", "patr"]


def _default_dims() -> list[int]:
    return [1024, 2048, 2048]


def _default_dropout() -> list[float]:
    return [0.2, 0.1, 0.0]


@dataclass
class ProjectionConfig:
    input_dim: int = 512
    block_dims: list[int] = field(default_factory=_default_dims)
    dropout_rates: list[float] = field(default_factory=_default_dropout)
    l2norm_flags: list[bool] | None = None
    relu_flags: list[bool] | None = None

    def __post_init__(self) -> None:
        self.block_dims = [int(d) for d in self.block_dims]
        self.dropout_rates = [float(p) for p in self.dropout_rates]
        n = len(self.block_dims)
        # l2-norm on every block except the last; ReLU everywhere
        if self.l2norm_flags is None:
            self.l2norm_flags = [True] * (n - 1) + [False] if n else []
        if self.relu_flags is None:
            self.relu_flags = [True] * n
        self.l2norm_flags = [bool(f) for f in self.l2norm_flags]
        self.relu_flags = [bool(f) for f in self.relu_flags]
        self.validate()

    @property
    def output_dim(self) -> int:
        return self.block_dims[-1]

    @property
    def n_blocks(self) -> int:
        return len(self.block_dims)

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(out_dim, in_dim) of each block's weight matrix."""
        ins = [self.input_dim] + self.block_dims[:-1]
        return list(zip(self.block_dims, ins))

    def validate(self) -> None:
        n = len(self.block_dims)
        if n < 1:
            raise ValueError("at least one block is required")
        lengths = {len(self.dropout_rates), len(self.l2norm_flags), len(self.relu_flags)}
        if lengths != {n}:
            raise ValueError(
                "block_dims, dropout_rates, l2norm_flags and relu_flags must have equal length"
            )
        if self.input_dim < 1 or any(d < 1 for d in self.block_dims):
            raise ValueError("dimensions must be positive")
        if any(not 0.0 <= p < 1.0 for p in self.dropout_rates):
            raise ValueError("dropout rates must lie in [0, 1)")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class LossConfig:
    kind: LossKind = "m3l"
    rho: float = 4.0
    alpha1: float = 0.5
    alpha2: float = 1.0
    eta: float = 1100.0
    denom_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.kind not in ("m3l", "patr"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.denom_eps < 0:
            raise ValueError("denom_eps must be non-negative")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("alpha1 and alpha2 must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    lr: float = 0.001
    beta1: float = 0.99
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    normalize_inputs: bool = False
    log_every: int = 1

    def __post_init__(self) -> None:
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def parse_int_list(text: str | Sequence[int]) -> list[int]:
    if isinstance(text, str):
        return [int(tok) for tok in text.split(",") if tok.strip()]
    return [int(v) for v in text]


def parse_float_list(text: str | Sequence[float]) -> list[float]:
    if isinstance(text, str):
        return [float(tok) for tok in text.split(",") if tok.strip()]
    return [float(v) for v in text]

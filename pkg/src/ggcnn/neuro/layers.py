"""Graph convolution, GRU cell and the gated graph convolution layer.

Weights are stored input-major, ``(fan_in, fan_out)``, so every affine map is
``x @ W + b``. All functions accept a single graph ``(N, F)`` or a batch of
slots ``(B, N, F)`` with matching operators ``(N, N)`` / ``(B, N, N)``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..errors import InputError, ShapeMismatch
from .autograd import Tensor, as_tensor, concat, parameter


class HiddenTooSmall(InputError):
    pass


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


@dataclass
class GcnLayerParams:
    W: Tensor

    @classmethod
    def init(cls, rng, f_in: int, f_out: int) -> "GcnLayerParams":
        return cls(parameter(glorot(rng, f_in, f_out), "W"))

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + "W": self.W}


def gcn_forward(op, X, params: GcnLayerParams) -> Tensor:
    """``op @ X @ W``; linear, no activation."""
    op, X = as_tensor(op), as_tensor(X)
    if op.shape[-1] != X.shape[-2] or X.shape[-1] != params.W.shape[0]:
        raise ShapeMismatch(f"gcn: op {op.shape}, X {X.shape}, W {params.W.shape}")
    return op @ (X @ params.W)


@dataclass
class GruParams:
    W_ir: Tensor
    W_iz: Tensor
    W_in: Tensor
    W_hr: Tensor
    W_hz: Tensor
    W_hn: Tensor
    b_ir: Tensor
    b_hr: Tensor
    b_iz: Tensor
    b_hz: Tensor
    b_in: Tensor
    b_hn: Tensor

    @property
    def input_size(self) -> int:
        return self.W_ir.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.W_hr.shape[0]

    @classmethod
    def init(cls, rng, f_in: int, hidden: int) -> "GruParams":
        ws = {}
        for name in ("W_ir", "W_iz", "W_in"):
            ws[name] = parameter(glorot(rng, f_in, hidden), name)
        for name in ("W_hr", "W_hz", "W_hn"):
            ws[name] = parameter(glorot(rng, hidden, hidden), name)
        for name in ("b_ir", "b_hr", "b_iz", "b_hz", "b_in", "b_hn"):
            ws[name] = parameter(np.zeros(hidden), name)
        return cls(**ws)

    @classmethod
    def zeros(cls, f_in: int, hidden: int) -> "GruParams":
        ws = {}
        for f in fields(cls):
            rows = f_in if f.name.startswith("W_i") else hidden
            shape = (rows, hidden) if f.name.startswith("W") else (hidden,)
            ws[f.name] = parameter(np.zeros(shape), f.name)
        return cls(**ws)

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + f.name: getattr(self, f.name) for f in fields(self)}


def gru_gates(x, h_prev, p: GruParams) -> tuple[Tensor, Tensor, Tensor]:
    """Reset gate, update gate and candidate state."""
    x, h_prev = as_tensor(x), as_tensor(h_prev)
    if x.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden_size:
        raise ShapeMismatch(f"gru: x {x.shape}, h {h_prev.shape}, params ({p.input_size}->{p.hidden_size})")
    r = (x @ p.W_ir + p.b_ir + h_prev @ p.W_hr + p.b_hr).sigmoid()
    z = (x @ p.W_iz + p.b_iz + h_prev @ p.W_hz + p.b_hz).sigmoid()
    n = (x @ p.W_in + p.b_in + r * (h_prev @ p.W_hn + p.b_hn)).tanh()
    return r, z, n


def gru_cell(x, h_prev, params: GruParams) -> Tensor:
    """``h = (1 - z) * n + z * h_prev``."""
    h_prev = as_tensor(h_prev)
    _, z, n = gru_gates(x, h_prev, params)
    return (1.0 - z) * n + z * h_prev


@dataclass
class GgcnnLayerParams:
    W: Tensor
    gru: GruParams
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise InputError("a gated layer needs at least one propagation step")

    @property
    def hidden_size(self) -> int:
        return self.gru.hidden_size

    @classmethod
    def init(cls, rng, hidden: int, steps: int) -> "GgcnnLayerParams":
        return cls(parameter(glorot(rng, hidden, hidden), "W"), GruParams.init(rng, hidden, hidden), steps)

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + "W": self.W}
        out.update(self.gru.named(prefix + "gru."))
        return out


def pad_features(X: Tensor, hidden: int) -> Tensor:
    """Initial node state: features followed by zeros up to ``hidden``."""
    F = X.shape[-1]
    if F > hidden:
        raise HiddenTooSmall(f"hidden size {hidden} is smaller than the {F} input features")
    if F == hidden:
        return X
    return concat([X, Tensor(np.zeros(X.shape[:-1] + (hidden - F,)))], axis=-1)


def ggcnn_layer(op, X, params: GgcnnLayerParams) -> Tensor:
    """Run ``params.steps`` rounds of message passing with a GRU state update.

    Messages are ``m_i = sum_j op[j, i] * (h_j @ W)``.
    """
    op, X = as_tensor(op), as_tensor(X)
    if op.shape[-1] != X.shape[-2] or op.shape[-2] != X.shape[-2]:
        raise ShapeMismatch(f"ggcnn: op {op.shape} does not match X {X.shape}")
    if params.steps < 1:
        raise InputError("a gated layer needs at least one propagation step")
    h = pad_features(X, params.hidden_size)
    op_t = op.transpose()
    for _ in range(params.steps):
        m = op_t @ (h @ params.W)
        h = gru_cell(m, h, params.gru)
    return h

"""Demand-correlation graphs and the normalized propagation operator."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import container
from .errors import InputError, LengthMismatch, NumericError

CHANNELS = ("in", "out", "sum")


class WindowTooLarge(InputError):
    pass


class NonFiniteEntry(NumericError):
    pass


class ZeroDegreeNode(NumericError):
    pass


def pearson(x, y) -> float:
    """Sample Pearson correlation; ``nan`` when either series is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"series shapes differ: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise LengthMismatch("pearson needs at least two observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return float("nan")
    dx = x - x.mean()
    dy = y - y.mean()
    r = np.dot(dx, dy) / np.sqrt(np.dot(dx, dx) * np.dot(dy, dy))
    return float(np.clip(r, -1.0, 1.0))


def _series(demand, channel: str) -> np.ndarray:
    values = getattr(demand, "values", demand)
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        return values
    if channel == "in":
        return values[..., 0]
    if channel == "out":
        return values[..., 1]
    if channel == "sum":
        return values[..., 0] + values[..., 1]
    raise InputError(f"unknown channel {channel!r}; expected one of {CHANNELS}")


def _corr_windows(windows: np.ndarray) -> np.ndarray:
    """Correlation matrices for a stack of ``(..., window, N)`` series blocks.

    Constant columns produce zero rows/columns; the diagonal is set to one.
    """
    centered = windows - windows.mean(axis=-2, keepdims=True)
    constant = np.all(windows == windows[..., :1, :], axis=-2)
    ss = np.einsum("...tn,...tn->...n", centered, centered)
    norm = np.sqrt(np.where(constant, 1.0, ss))
    z = centered / norm[..., None, :]
    z = np.where(constant[..., None, :], 0.0, z)
    corr = np.clip(np.einsum("...ti,...tj->...ij", z, z), -1.0, 1.0)
    corr = 0.5 * (corr + np.swapaxes(corr, -1, -2))
    n = corr.shape[-1]
    idx = np.arange(n)
    corr[..., idx, idx] = 1.0
    return corr


def _postprocess(adj: np.ndarray, clip_negative: bool, top_k: int | None) -> np.ndarray:
    if clip_negative:
        adj = np.maximum(adj, 0.0)
    if top_k is not None:
        adj = sparsify_top_k(adj, top_k)
    return adj


def sparsify_top_k(adj: np.ndarray, k: int) -> np.ndarray:
    """Keep the ``k`` strongest off-diagonal links per row (union, so symmetry holds)."""
    if k < 0:
        raise InputError("top_k must be non-negative")
    n = adj.shape[-1]
    off = adj.copy()
    idx = np.arange(n)
    off[..., idx, idx] = -np.inf
    k = min(k, n - 1)
    keep = np.zeros(adj.shape, dtype=bool)
    if k > 0:
        # stable sort so ties resolve by column index
        order = np.argsort(-off, axis=-1, kind="stable")[..., :k]
        np.put_along_axis(keep, order, True, axis=-1)
    keep = keep | np.swapaxes(keep, -1, -2)
    keep[..., idx, idx] = True
    return np.where(keep, adj, 0.0)


def static_adjacency(demand, channel: str = "out", clip_negative: bool = True, top_k: int | None = None) -> np.ndarray:
    """PCC adjacency over the full hourly series of every station pair."""
    series = _series(demand, channel)
    if series.shape[0] < 2:
        raise InputError("static adjacency needs at least two slots")
    return _postprocess(_corr_windows(series), clip_negative, top_k)


@dataclass(frozen=True)
class AdjacencySeries:
    """One adjacency matrix per slot, shape ``(slots, N, N)``.

    Slots before the first full window reuse the first full-window matrix.
    """

    matrices: np.ndarray
    window: int
    channel: str
    clip_negative: bool
    top_k: int | None = None

    def __len__(self) -> int:
        return self.matrices.shape[0]

    def __getitem__(self, t: int) -> np.ndarray:
        return self.matrices[t]

    @property
    def first_full(self) -> int:
        return self.window - 1

    def save(self, path: str | Path) -> None:
        container.write(
            path,
            self.matrices,
            {
                "kind": "adjacency",
                "N": int(self.matrices.shape[-1]),
                "n_slots": len(self),
                "window": self.window,
                "channel": self.channel,
                "clip_negative": self.clip_negative,
                "top_k": self.top_k,
            },
        )

    @classmethod
    def load(cls, path: str | Path) -> "AdjacencySeries":
        values, head = container.read(path)
        if head.get("kind") != "adjacency":
            raise container.ContainerError(f"{path}: not an adjacency series")
        return cls(values, head["window"], head["channel"], head["clip_negative"], head.get("top_k"))


def dynamic_adjacency(
    demand,
    window: int = 168,
    channel: str = "out",
    clip_negative: bool = True,
    top_k: int | None = None,
    chunk: int = 256,
) -> AdjacencySeries:
    """Per-slot PCC adjacency over the trailing ``window`` slots ending at each slot."""
    series = _series(demand, channel)
    T, _ = series.shape
    if window < 2:
        raise InputError("window must be at least 2")
    if window > T:
        raise WindowTooLarge(f"window {window} exceeds {T} available slots")
    views = np.lib.stride_tricks.sliding_window_view(series, window, axis=0)  # (T-w+1, N, w)
    full = []
    for lo in range(0, views.shape[0], chunk):
        block = np.swapaxes(views[lo : lo + chunk], -1, -2)
        full.append(_postprocess(_corr_windows(block), clip_negative, top_k))
    full = np.concatenate(full, axis=0)
    head = np.repeat(full[:1], window - 1, axis=0)
    return AdjacencySeries(np.concatenate([head, full], axis=0), window, channel, clip_negative, top_k)


def propagation_operator(adj: np.ndarray) -> np.ndarray:
    """``D^-1/2 A D^-1/2`` with ``D`` the row sums of ``adj``.

    ``adj`` is expected to carry its self-loops already (unit diagonal), so no
    extra identity is added. Works on a single matrix or a stack.
    """
    adj = np.asarray(adj, dtype=float)
    if not np.all(np.isfinite(adj)):
        raise NonFiniteEntry("adjacency contains NaN or Inf")
    deg = adj.sum(axis=-1)
    if np.any(deg <= 0):
        raise NonFiniteEntry("non-positive degree; the normalized operator is undefined")
    inv = 1.0 / np.sqrt(deg)
    op = adj * inv[..., :, None] * inv[..., None, :]
    return 0.5 * (op + np.swapaxes(op, -1, -2))


def laplacian(adj: np.ndarray) -> np.ndarray:
    """Symmetric normalized Laplacian ``I - D^-1/2 A D^-1/2`` (diagnostics only)."""
    adj = np.asarray(adj, dtype=float)
    deg = adj.sum(axis=-1)
    if np.any(deg == 0):
        raise ZeroDegreeNode(f"node(s) {np.flatnonzero(deg == 0).tolist()} have zero degree")
    inv = 1.0 / np.sqrt(deg)
    lap = np.eye(adj.shape[-1]) - adj * inv[:, None] * inv[None, :]
    return 0.5 * (lap + lap.T)

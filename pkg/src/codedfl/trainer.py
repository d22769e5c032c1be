"""Partial gradients, server aggregation and the model update."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .encoder import CompositeParity, LocalDataset

SERVER_PARITY = "server-parity"

# NMSE above which a run is declared divergent.
DIVERGENCE_NMSE = 1e6


class DivergenceError(FloatingPointError):
    """Raised when the model or a gradient stops being finite."""


@dataclass(frozen=True)
class ModelState:
    beta: np.ndarray
    learning_rate: float
    epoch: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")


@dataclass(frozen=True)
class PartialGradient:
    source: int | str
    vector: np.ndarray
    points_covered: int

    @property
    def present(self) -> bool:
        return self.points_covered > 0


def systematic_gradient(
    data: LocalDataset, systematic_set, beta, source: int | str = -1
) -> PartialGradient:
    """``sum_k x_k^T (x_k beta - y_k)`` over the rows in ``systematic_set``."""
    beta = np.asarray(beta, dtype=float)
    idx = np.asarray(systematic_set, dtype=int)
    if idx.size == 0:
        return PartialGradient(source, np.zeros_like(beta), 0)
    if idx.min() < 0 or idx.max() >= len(data):
        raise IndexError("systematic set refers to rows outside the dataset")
    if idx.size == len(data):
        X, y = data.X, data.y
    else:
        X, y = data.X[idx], data.y[idx]
    return PartialGradient(source, X.T @ (X @ beta - y), int(idx.size))


def parity_gradient(parity: CompositeParity | None, beta) -> PartialGradient:
    """``(1/c) X~^T (X~ beta - y~)``; absent (zero vector) when ``c == 0``."""
    beta = np.asarray(beta, dtype=float)
    if parity is None or parity.c == 0:
        return PartialGradient(SERVER_PARITY, np.zeros_like(beta), 0)
    Xt = parity.X_tilde
    g = Xt.T @ (Xt @ beta - parity.y_tilde) / parity.c
    return PartialGradient(SERVER_PARITY, g, parity.c)


def _check_finite(vec: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(vec)):
        raise DivergenceError(f"non-finite values in {what}")


def combine_gradients(
    received: Iterable[PartialGradient], parity_grad: PartialGradient | None = None
) -> np.ndarray:
    """Sum of the parity gradient and the received device gradients."""
    received = list(received)
    sources = [g.source for g in received]
    if len(set(sources)) != len(sources):
        raise ValueError("received more than one gradient from the same device")
    vectors = [g.vector for g in received]
    if parity_grad is not None:
        vectors.insert(0, parity_grad.vector)
    if not vectors:
        raise ValueError("nothing to combine")
    total = np.zeros_like(vectors[0], dtype=float)
    for v in vectors:
        if v.shape != total.shape:
            raise ValueError(f"gradient of shape {v.shape}, expected {total.shape}")
        _check_finite(v, "gradient")
        total += v
    return total


def aggregate_and_step(
    state: ModelState,
    received: Sequence[PartialGradient],
    parity_grad: PartialGradient | None,
    m: int,
) -> ModelState:
    """One update ``beta <- beta - (lr/m) * (parity + sum(received))``."""
    grad = combine_gradients(received, parity_grad) if (received or parity_grad) else (
        np.zeros_like(state.beta)
    )
    beta = state.beta - (state.learning_rate / m) * grad
    _check_finite(beta, "model")
    return replace(state, beta=beta, epoch=state.epoch + 1)


def nmse(beta_est, beta_true) -> float:
    """``||beta_est - beta_true||^2 / ||beta_true||^2``."""
    beta_est = np.asarray(beta_est, dtype=float)
    beta_true = np.asarray(beta_true, dtype=float)
    if beta_est.shape != beta_true.shape:
        raise ValueError(f"shape mismatch {beta_est.shape} vs {beta_true.shape}")
    denom = float(beta_true @ beta_true)
    if denom == 0:
        raise ValueError("true model is zero; NMSE is undefined")
    diff = beta_est - beta_true
    return float(diff @ diff) / denom


def batch_gradient_descent(
    datasets: Sequence[LocalDataset],
    beta0,
    learning_rate: float,
    n_epochs: int,
) -> list[np.ndarray]:
    """Plain synchronous gradient descent with no delays and no coding.

    The gradient is the outer sum of per-dataset inner sums, taken in order.
    Returns the iterate after every epoch.
    """
    beta = np.asarray(beta0, dtype=float).copy()
    m = sum(len(ds) for ds in datasets)
    path = []
    for _ in range(n_epochs):
        grad = np.zeros_like(beta)
        for ds in datasets:
            grad += ds.X.T @ (ds.X @ beta - ds.y)
        beta = beta - (learning_rate / m) * grad
        path.append(beta)
    return path

"""Symmetric cross-modal contrastive loss with a learnable temperature."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Value

CLIP_INFONCE = "clip-infonce"
LITERAL = "literal-stabilized"
VARIANTS = (CLIP_INFONCE, LITERAL)


class Temperature:
    """Positive scalar stored as its logarithm."""

    def __init__(self, initial: float = 3.1):
        if initial <= 0:
            raise ValueError("temperature must be positive")
        self.log_value = T.create((), "constant", value=math.log(initial), requires_grad=True, name="log_gamma")

    def value(self) -> Value:
        return T.exp(self.log_value)

    def __float__(self) -> float:
        return math.exp(float(self.log_value.item()))


def pairwise_similarity(r_a: Value, r_v: Value) -> Value:
    """``S[..., i, j] = <r_a[..., i, :], r_v[..., j, :]>``."""
    if r_a.shape != r_v.shape:
        raise ShapeError(f"paired representations differ in shape: {list(r_a.shape)} vs {list(r_v.shape)}")
    n = r_v.ndim
    return r_a @ T.transpose(r_v, tuple(range(n - 2)) + (n - 1, n - 2))


def scl_loss(sim: Value, gamma: Value, variant: str = CLIP_INFONCE) -> Value:
    """Symmetric contrastive loss of a square similarity matrix (or a batch of them).

    ``clip-infonce`` averages row-wise and column-wise cross-entropy of
    ``gamma * S`` against the diagonal. ``literal-stabilized`` is
    ``-gamma * (sum_i log sig(S_ii) - sum_{i!=j} log sig(S_ij))``. A batch of
    matrices is reduced by its mean.
    """
    if sim.ndim < 2 or sim.shape[-1] != sim.shape[-2]:
        raise ShapeError(f"similarity matrix must be square, got {list(sim.shape)}")
    n = sim.shape[-1]
    eye = Value._wrap(np.eye(n, dtype=sim.dtype))
    if variant == CLIP_INFONCE:
        logits = sim * gamma
        rows = T.log_softmax(logits, axis=-1)
        cols = T.log_softmax(logits, axis=-2)
        diag_rows = T.sum(rows * eye, axis=(-2, -1))
        diag_cols = T.sum(cols * eye, axis=(-2, -1))
        per_matrix = T.scalar_mul(diag_rows + diag_cols, -0.5 / n)
    elif variant == LITERAL:
        logsig = T.log_sigmoid(sim)
        signed = logsig * (2.0 * eye - 1.0)
        per_matrix = T.neg(T.sum(signed, axis=(-2, -1)) * gamma)
    else:
        raise ValueError(f"unknown contrastive variant {variant!r}")
    return T.mean(per_matrix)


def scl_from_representations(r_a: Value, r_v: Value, gamma: Value, variant: str = CLIP_INFONCE,
                             pool_batch: bool = False) -> Value:
    """Contrastive loss between paired representation sequences ``(B, N', C)``.

    Row ``i`` of ``r_a`` pairs with row ``i`` of ``r_v``. Rows are
    L2-normalised for ``clip-infonce``. By default each clip forms its own
    similarity matrix and the per-clip losses are averaged; with
    ``pool_batch`` every timestep of every clip joins one matrix, so other
    clips supply negatives too.
    """
    if variant == CLIP_INFONCE:
        r_a = T.l2_normalize(r_a, axis=-1)
        r_v = T.l2_normalize(r_v, axis=-1)
    if pool_batch and r_a.ndim == 3:
        r_a = r_a.reshape((1, -1, r_a.shape[-1]))
        r_v = r_v.reshape((1, -1, r_v.shape[-1]))
    return scl_loss(pairwise_similarity(r_a, r_v), gamma, variant)

"""Representation activation sequence learning.

Each encoder representation ``r_i`` is passed through a pointwise
convolution ``z_i = psi(r_i)`` and reduced by a bias-free linear layer to a
scalar activation ``s_i = sum_c w_c z_i[c]``. The activations weight the
representations before decoding and double as highlight scores.

The k-point contrastive loss enlarges the top-k activations, each weighted by
how dissimilar its projected representation is from the representation at
the same rank of the bottom-k set.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import InvalidArgumentError, ShapeError
from .nn import Block, as_batch, uniform_param
from .tensor import Value

KPOINT = "kpoint"
MEAN_TOPK = "mean-topk"


class ActivationHead(Block):
    """Parameters of the activation module for one modality branch."""

    def __init__(self, width: int, rng: np.random.Generator, out_width: int | None = None):
        out_width = out_width or width
        self.width = width
        self.out_width = out_width
        # pointwise (kernel size 1) convolution stored as a (C, C') matrix
        self.psi_weight = uniform_param((width, out_width), width, rng, "psi_weight")
        self.psi_bias = uniform_param((out_width,), width, rng, "psi_bias")
        self.w = uniform_param((out_width,), out_width, rng, "w")
        self.proj_top = uniform_param((out_width, out_width), out_width, rng, "proj_top")
        self.proj_bottom = uniform_param((out_width, out_width), out_width, rng, "proj_bottom")
        self.norm_gain = T.create((out_width,), "constant", value=1.0, requires_grad=True, name="norm_gain")
        self.norm_bias = T.create((out_width,), "zeros", requires_grad=True, name="norm_bias")


def compute_activations(r: Value, p: ActivationHead) -> tuple[Value, Value]:
    """Return ``(z, s)`` for representations ``r`` of shape ``(..., N', C)``."""
    if r.shape[-1] != p.width:
        raise ShapeError(f"representation width {r.shape[-1]} does not match head width {p.width}")
    z = r @ p.psi_weight + p.psi_bias
    s = z @ p.w
    return z, s


def select_topk(s, k: int) -> np.ndarray:
    """Original indices of the ``k`` largest activations, ordered ascending by value.

    Ties prefer the lower index, both for membership and for order.
    """
    s = np.asarray(s.data if isinstance(s, Value) else s).reshape(-1)
    _check_k(k, s.size)
    by_desc = np.lexsort((np.arange(s.size), -s))[:k]
    return by_desc[np.lexsort((by_desc, s[by_desc]))]


def select_bottomk(s, k: int) -> np.ndarray:
    """Original indices of the ``k`` smallest activations, ordered ascending by value."""
    s = np.asarray(s.data if isinstance(s, Value) else s).reshape(-1)
    _check_k(k, s.size)
    return np.lexsort((np.arange(s.size), s))[:k]


def _check_k(k: int, n: int) -> None:
    if k < 1:
        raise InvalidArgumentError("selection count must be at least 1")
    if k > n:
        raise InvalidArgumentError(f"cannot select {k} of {n} activations")


def select_sets(s: Value, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-row top-k and bottom-k index arrays for ``s`` of shape ``(B, N')``."""
    rows = s.data.reshape(-1, s.shape[-1])
    top = np.stack([select_topk(row, k) for row in rows])
    bottom = np.stack([select_bottomk(row, k) for row in rows])
    return top.reshape(s.shape[:-1] + (k,)), bottom.reshape(s.shape[:-1] + (k,))


def effective_k(k: int, length: int) -> int:
    """Clamp ``k`` so the top and bottom sets stay disjoint (``2k <= N'``)."""
    return max(1, min(k, length // 2))


def kpoint_eta(s: Value, z: Value, top: np.ndarray, bottom: np.ndarray, p: ActivationHead,
               variant: str = KPOINT) -> Value:
    """Per-clip ``eta`` of the k-point objective; shape ``(B,)``.

    Rank ``i`` of the top set is paired with rank ``i`` of the bottom set.
    The index sets are constants: gradients reach ``s`` and ``z`` only through
    the gathered entries.
    """
    sb, batched = (s, True) if s.ndim == 2 else (s.reshape((1,) + s.shape), False)
    zb, _ = as_batch(z)
    top = np.asarray(top).reshape(sb.shape[0], -1)
    bottom = np.asarray(bottom).reshape(sb.shape[0], -1)
    if top.shape != bottom.shape or top.shape[1] == 0:
        raise InvalidArgumentError("top and bottom selections must be non-empty and equally sized")
    s_top = T.take_along_axis(sb, top, axis=1)
    if variant == MEAN_TOPK:
        eta = T.mean(s_top, axis=-1)
    elif variant == KPOINT:
        z_top = T.take_along_axis(zb, top, axis=1)
        z_bottom = T.take_along_axis(zb, bottom, axis=1)
        a = T.layer_norm(z_top @ p.proj_top, p.norm_gain, p.norm_bias)
        b = T.layer_norm(z_bottom @ p.proj_bottom, p.norm_gain, p.norm_bias)
        weight = 1.0 - T.cosine_similarity(a, b, axis=-1)
        eta = T.mean(s_top * weight, axis=-1)
    else:
        raise ValueError(f"unknown activation-loss variant {variant!r}")
    return eta if batched else eta.reshape(())


def kpoint_contrastive_loss(s: Value, z: Value, top: np.ndarray, bottom: np.ndarray, p: ActivationHead,
                            variant: str = KPOINT) -> Value:
    """``-log(sigmoid(eta))`` averaged over the batch."""
    eta = kpoint_eta(s, z, top, bottom, p, variant)
    return T.mean(T.neg(T.log_sigmoid(eta)))


def weight_representations(s: Value, r: Value) -> Value:
    """Scale row ``i`` of ``r`` by ``s_i``."""
    if s.shape != r.shape[:-1]:
        raise ShapeError(f"activations {list(s.shape)} do not match representations {list(r.shape)}")
    return s.reshape(s.shape + (1,)) * r

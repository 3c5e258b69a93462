"""Intramodal self-attention and the strided convolutional autoencoder."""

from __future__ import annotations

import math
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .errors import LengthError, ShapeError
from .tensor import Value

KERNEL = 3
STRIDE = 2


def uniform_param(shape: Sequence[int], fan_in: int, rng: np.random.Generator, name: str) -> Value:
    """Parameter drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / math.sqrt(fan_in)
    seed = int(rng.integers(0, 2**63 - 1))
    return T.create(shape, "uniform", low=-bound, high=bound, seed=seed, requires_grad=True, name=name)


def as_batch(x: Value) -> tuple[Value, bool]:
    """Promote an ``(N, d)`` sequence to ``(1, N, d)``; report whether it was batched."""
    if x.ndim == 3:
        return x, True
    if x.ndim == 2:
        return x.reshape((1,) + x.shape), False
    raise ShapeError(f"expected an (N, d) or (B, N, d) sequence, got {list(x.shape)}")


class Block:
    """Anything owning named parameters."""

    def named_parameters(self) -> Iterator[tuple[str, Value]]:
        for key, val in vars(self).items():
            if isinstance(val, Value):
                yield key, val
            elif isinstance(val, Block):
                for sub, p in val.named_parameters():
                    yield f"{key}.{sub}", p
            elif isinstance(val, list) and val and isinstance(val[0], Block):
                for i, blk in enumerate(val):
                    for sub, p in blk.named_parameters():
                        yield f"{key}.{i}.{sub}", p


class SelfAttention(Block):
    """Single-head self-attention with a residual connection.

    ``out = x + softmax(x Wq (x Wk)^T / sqrt(d)) x Wv Wo``. There is no
    positional encoding, so the block is equivariant to permutations of the
    temporal axis.
    """

    def __init__(self, d: int, rng: np.random.Generator):
        self.d = d
        self.w_q = uniform_param((d, d), d, rng, "w_q")
        self.w_k = uniform_param((d, d), d, rng, "w_k")
        self.w_v = uniform_param((d, d), d, rng, "w_v")
        self.w_o = uniform_param((d, d), d, rng, "w_o")

    def __call__(self, x: Value) -> Value:
        return self_attention(x, self)


def self_attention(x: Value, p: SelfAttention) -> Value:
    if x.shape[-1] != p.d:
        raise ShapeError(f"feature width {x.shape[-1]} does not match attention width {p.d}")
    if x.shape[-2] < 1:
        raise LengthError("self-attention needs at least one timestep")
    q = x @ p.w_q
    k = x @ p.w_k
    v = x @ p.w_v
    kt = T.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    scores = T.scalar_mul(q @ kt, 1.0 / math.sqrt(p.d))
    attn = T.softmax(scores, axis=-1)
    return x + (attn @ v) @ p.w_o


class ConvLayer(Block):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, transposed: bool = False):
        self.c_in = c_in
        self.c_out = c_out
        self.transposed = transposed
        fan_in = c_in * KERNEL
        # transposed kernels use the (C_in, C_out, K) layout of their conv twin
        shape = (c_in, c_out, KERNEL) if transposed else (c_out, c_in, KERNEL)
        self.weight = uniform_param(shape, fan_in, rng, "weight")
        self.bias = uniform_param((c_out,), fan_in, rng, "bias")


def encoder_lengths(n: int, depth: int = 3) -> list[int]:
    """Temporal lengths through ``depth`` stride-2 'same' convolutions."""
    lengths = [n]
    for _ in range(depth):
        lengths.append(-(-lengths[-1] // STRIDE))
    return lengths


class ConvAutoencoder(Block):
    """Three stride-2 convolutions and three stride-2 transposed convolutions.

    Channel plan ``d -> c1 -> c2 -> c3`` for the encoder and the mirror image
    for the decoder. Every encoder layer is followed by ReLU; the decoder's
    last layer is linear so negative targets are reachable.
    """

    def __init__(self, d: int, channels: Sequence[int], rng: np.random.Generator):
        if len(channels) != 3:
            raise ValueError("the autoencoder has exactly three encoder widths")
        self.d = d
        self.channels = tuple(int(c) for c in channels)
        widths = (d,) + self.channels
        self.encoder = [ConvLayer(widths[i], widths[i + 1], rng) for i in range(3)]
        self.decoder = [ConvLayer(widths[3 - i], widths[2 - i], rng, transposed=True) for i in range(3)]

    @property
    def width(self) -> int:
        return self.channels[-1]

    def encode(self, x: Value) -> Value:
        return encode(x, self)

    def decode(self, h: Value, n: int) -> Value:
        return decode(h, self, n)


def encode(x: Value, p: ConvAutoencoder) -> Value:
    """``(B, N, d) -> (B, N', C)`` with ``N' = ceil(N / 8)``."""
    xb, batched = as_batch(x)
    if xb.shape[-1] != p.d:
        raise ShapeError(f"feature width {xb.shape[-1]} does not match encoder input {p.d}")
    if xb.shape[1] < 8:
        raise LengthError(f"sequence of {xb.shape[1]} timesteps is too short for three stride-2 layers")
    h = T.transpose(xb, (0, 2, 1))
    for layer in p.encoder:
        h = T.relu(T.conv1d(h, layer.weight, layer.bias, stride=STRIDE, padding="same"))
    r = T.transpose(h, (0, 2, 1))
    return r if batched else r.reshape(r.shape[1:])


def decode(h: Value, p: ConvAutoencoder, n: int) -> Value:
    """``(B, N', C) -> (B, n, d)``; each layer is cropped to invert the encoder geometry."""
    hb, batched = as_batch(h)
    lengths = encoder_lengths(n)
    if hb.shape[1] != lengths[-1] or hb.shape[-1] != p.width:
        raise ShapeError(
            f"representation {list(hb.shape[1:])} does not match encoder geometry [{lengths[-1]}, {p.width}]"
        )
    y = T.transpose(hb, (0, 2, 1))
    for i, layer in enumerate(p.decoder):
        target = lengths[2 - i]
        left, _ = T.same_padding(target, KERNEL, STRIDE)
        y = T.transposed_conv1d(y, layer.weight, layer.bias, stride=STRIDE)
        y = y[:, :, left : left + target]
        if i < 2:
            y = T.relu(y)
    out = T.transpose(y, (0, 2, 1))
    return out if batched else out.reshape(out.shape[1:])

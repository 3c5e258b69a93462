"""Dual-branch highlight model and its loss terms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .activation import ActivationHead, KPOINT, compute_activations, effective_k, kpoint_contrastive_loss, select_sets, weight_representations
from .contrastive import CLIP_INFONCE, Temperature, scl_from_representations
from .errors import InvalidArgumentError, NumericError, ShapeError
from .nn import Block, ConvAutoencoder, SelfAttention, as_batch, decode, encode, self_attention
from .tensor import Value

TERM_ORDER = ("e_v", "r_v", "au_v", "e_a", "r_a", "au_a", "s")


class Branch(Block):
    """Self-attention, autoencoder and activation head for one modality."""

    def __init__(self, d: int, channels, rng: np.random.Generator):
        self.attention = SelfAttention(d, rng)
        self.autoencoder = ConvAutoencoder(d, channels, rng)
        self.head = ActivationHead(self.autoencoder.width, rng)

    @property
    def d(self) -> int:
        return self.autoencoder.d


class HighlightModel(Block):
    """Visual and audio branches of identical architecture plus the shared temperature."""

    def __init__(self, d_v: int = 128, d_a: int = 128, channels=(64, 64, 64), gamma0: float = 3.1, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.visual = Branch(d_v, channels, rng)
        self.audio = Branch(d_a, channels, rng)
        self.temperature = Temperature(gamma0)

    def named_parameters(self) -> Iterator[tuple[str, Value]]:
        for prefix in ("visual", "audio"):
            for name, p in getattr(self, prefix).named_parameters():
                yield f"{prefix}.{name}", p
        yield "log_gamma", self.temperature.log_value

    def registry(self) -> dict[str, Value]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None


def reconstruction_loss(target, recon: Value) -> Value:
    """Mean absolute error over every entry."""
    target = target if isinstance(target, Value) else Value._wrap(np.asarray(target, dtype=recon.dtype))
    if target.shape != recon.shape:
        raise ShapeError(f"reconstruction {list(recon.shape)} does not match target {list(target.shape)}")
    return T.mean(T.abs(recon - target))


@dataclass
class BranchOutput:
    r: Value
    z: Value
    s: Value
    recon: Value
    loss_e: Value
    loss_r: Value | None
    loss_au: Value | None
    top: np.ndarray | None
    bottom: np.ndarray | None


@dataclass
class BranchOptions:
    k: int = 10
    use_sa: bool = True
    use_rasl: bool = True
    rasl_variant: str = KPOINT


def branch_forward(rho, branch: Branch, opts: BranchOptions = BranchOptions(), mask: np.ndarray | None = None) -> BranchOutput:
    """Self-attention, encoding, activations, selection, weighting and decoding.

    With ``mask`` (boolean, True = masked, shape ``(N,)`` or ``(B, N)``) the
    masked copy of the input is run through the same path in the same batch
    and ``loss_au`` compares its reconstruction with the unmasked input.
    """
    rho = rho if isinstance(rho, Value) else Value._wrap(np.asarray(rho, dtype=T.default_dtype()))
    rho_b, batched = as_batch(rho)
    b, n, d = rho_b.shape
    if d != branch.d:
        raise ShapeError(f"input width {d} does not match branch width {branch.d}")
    x = rho_b
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), (b, n))
        if np.any(mask.all(axis=1)):
            raise InvalidArgumentError("a fully masked sequence cannot be reconstructed")
        keep = (~mask).astype(rho_b.dtype)[..., None]
        x = T.concat([rho_b, Value._wrap(rho_b.data * keep)], axis=0)

    xbar = self_attention(x, branch.attention) if opts.use_sa else x
    r = encode(xbar, branch.autoencoder)
    z, s = compute_activations(r, branch.head)
    weights = s if opts.use_rasl else Value._wrap(np.ones(s.shape, dtype=s.dtype))
    recon = decode(weight_representations(weights, r), branch.autoencoder, n)

    if mask is not None:
        r_main, z_main, s_main, rec_main = r[:b], z[:b], s[:b], recon[:b]
        loss_au = reconstruction_loss(rho_b, recon[b:])
    else:
        r_main, z_main, s_main, rec_main = r, z, s, recon
        loss_au = None
    loss_e = reconstruction_loss(rho_b, rec_main)

    loss_r = top = bottom = None
    if opts.use_rasl:
        k = effective_k(opts.k, s_main.shape[-1])
        top, bottom = select_sets(s_main, k)
        loss_r = kpoint_contrastive_loss(s_main, z_main, top, bottom, branch.head, opts.rasl_variant)

    if not batched:
        r_main, z_main, s_main, rec_main = (v.reshape(v.shape[1:]) for v in (r_main, z_main, s_main, rec_main))
        top = top[0] if top is not None else None
        bottom = bottom[0] if bottom is not None else None
    return BranchOutput(r_main, z_main, s_main, rec_main, loss_e, loss_r, loss_au, top, bottom)


def masked_auxiliary_loss(rho, mask: np.ndarray, branch: Branch, opts: BranchOptions = BranchOptions()) -> Value:
    """Reconstruction error of the unmasked input from its masked copy."""
    return branch_forward(rho, branch, opts, mask=mask).loss_au


def total_loss(terms: dict[str, Value | None]) -> Value:
    """Unit-weight sum of the present terms, added in a fixed order.

    Missing or ``None`` terms are ablated and contribute nothing.
    """
    total = None
    for name in TERM_ORDER:
        term = terms.get(name)
        if term is None:
            continue
        val = float(term.item())
        if not math.isfinite(val):
            raise NumericError(f"loss term {name} is not finite ({val})")
        total = term if total is None else total + term
    if total is None:
        return Value._wrap(np.zeros((), dtype=T.default_dtype()))
    return total


@dataclass
class LossSwitches:
    """Which parts of the objective are active (the ablation knobs)."""

    k: int = 10
    use_sa: bool = True
    use_rasl: bool = True
    use_auxiliary: bool = True
    use_visual: bool = True
    use_audio: bool = True
    rasl_variant: str = KPOINT
    scl_variant: str = CLIP_INFONCE
    scl_pool_batch: bool = False

    def branch_options(self) -> BranchOptions:
        return BranchOptions(self.k, self.use_sa, self.use_rasl, self.rasl_variant)


def compute_terms(model: HighlightModel, visual, audio, mask: np.ndarray | None, sw: LossSwitches = LossSwitches()) -> dict[str, Value]:
    """Every loss term for one batch of paired windows ``(B, N, d)``."""
    opts = sw.branch_options()
    use_mask = mask if sw.use_auxiliary else None
    terms: dict[str, Value] = {}
    outs = {}
    for key, branch, data, active in (("v", model.visual, visual, sw.use_visual), ("a", model.audio, audio, sw.use_audio)):
        if not active:
            continue
        out = branch_forward(data, branch, opts, mask=use_mask)
        outs[key] = out
        terms[f"e_{key}"] = out.loss_e
        if out.loss_r is not None:
            terms[f"r_{key}"] = out.loss_r
        if out.loss_au is not None:
            terms[f"au_{key}"] = out.loss_au
    if "v" in outs and "a" in outs:
        terms["s"] = scl_from_representations(
            outs["a"].r, outs["v"].r, model.temperature.value(), sw.scl_variant, sw.scl_pool_batch
        )
    return terms

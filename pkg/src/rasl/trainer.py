"""RMSprop and the pretraining loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .activation import effective_k
from .config import TrainConfig
from .data import DatasetManifest, VideoPair, generate_mask, load_pairs, window_indices
from .errors import InvalidArgumentError, ShapeError, StateError
from .model import TERM_ORDER, HighlightModel, compute_terms, total_loss

log = logging.getLogger(__name__)


class RMSprop:
    """``v <- a*v + (1-a)*g^2``; ``theta <- theta - lr*g/(sqrt(v)+eps)``."""

    def __init__(self, params: dict[str, T.Value], lr: float = 0.001, alpha: float = 0.9, eps: float = 1e-8):
        self.lr = lr
        self.alpha = alpha
        self.eps = eps
        self.accumulators = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, params: dict[str, T.Value]) -> None:
        if params.keys() != self.accumulators.keys():
            raise StateError("parameter registry does not match optimizer state")
        for name, p in params.items():
            v = self.accumulators[name]
            if v.shape != p.shape:
                raise StateError(f"{name}: accumulator shape {v.shape} differs from parameter {p.shape}")
            g = p.grad
            a = p.dtype.type(self.alpha)
            if g is None:
                v *= a
                continue
            if g.shape != p.shape:
                raise StateError(f"{name}: gradient shape {g.shape} differs from parameter {p.shape}")
            v *= a
            v += (1 - a) * g * g
            p.data -= p.dtype.type(self.lr) * g / (np.sqrt(v) + p.dtype.type(self.eps))


def rmsprop_step(params: dict[str, T.Value], opt: RMSprop) -> None:
    opt.step(params)


@dataclass
class WindowSet:
    """All training windows stacked: ``visual``/``audio`` are ``(M, W, d)``."""

    visual: np.ndarray
    audio: np.ndarray | None
    owners: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.visual.shape[0]


def build_windows(pairs: Sequence[VideoPair], window: int) -> WindowSet:
    vis, aud, owners = [], [], []
    for pair in pairs:
        if pair.audio is not None and pair.audio.n != pair.visual.n:
            raise ShapeError(f"{pair.video_id}: audio and visual timelines differ")
        for idx in window_indices(pair.visual.n, window):
            vis.append(pair.visual.data[idx])
            if pair.audio is not None:
                aud.append(pair.audio.data[idx])
            owners.append(pair.video_id)
    if not vis:
        raise InvalidArgumentError("no training windows")
    audio = np.stack(aud) if aud else None
    if audio is not None and len(aud) != len(vis):
        raise InvalidArgumentError("every entry needs paired audio")
    return WindowSet(np.stack(vis), audio, owners)


def sample_step(windows: WindowSet, cfg: TrainConfig, step: int) -> tuple[np.ndarray, np.ndarray]:
    """Clip indices and masks for ``step``; a pure function of (seed, step)."""
    rng = np.random.default_rng([cfg.seed, step])
    m = len(windows)
    idx = rng.choice(m, size=cfg.batch, replace=m < cfg.batch)
    n = windows.visual.shape[1]
    masks = np.stack([generate_mask(n, cfg.mask_ratio, rng=rng) for _ in range(cfg.batch)])
    return idx, masks


def step_losses(model: HighlightModel, windows: WindowSet, cfg: TrainConfig, step: int) -> dict[str, T.Value]:
    idx, masks = sample_step(windows, cfg, step)
    vis = windows.visual[idx]
    aud = windows.audio[idx] if windows.audio is not None else None
    sw = cfg.switches()
    if aud is None:
        sw.use_audio = False
    terms = compute_terms(model, vis, aud, masks, sw)
    terms["total"] = total_loss(terms)
    return terms


@dataclass
class TrainResult:
    model: HighlightModel
    optimizer: RMSprop
    trace: list[dict[str, float]]
    step: int


def pretrain(
    data: DatasetManifest | Sequence[VideoPair] | WindowSet,
    cfg: TrainConfig,
    model: HighlightModel | None = None,
    optimizer: RMSprop | None = None,
    start_step: int = 0,
    stop_step: int | None = None,
    callback: Callable[[int, dict[str, float]], None] | None = None,
) -> TrainResult:
    """Run the pretraining loop from ``start_step`` up to ``cfg.steps`` (or ``stop_step``).

    Each step samples a batch, forms masks, evaluates every active loss term,
    backpropagates their sum and applies one RMSprop update. The returned
    trace holds the term values of each step, measured before that step's
    update.
    """
    if isinstance(data, DatasetManifest):
        data = load_pairs(data, with_audio=cfg.use_audio)
    windows = data if isinstance(data, WindowSet) else build_windows(data, cfg.window)
    d = windows.visual.shape[-1]
    if d != cfg.d_v:
        raise ShapeError(f"data width {d} differs from configured d_v={cfg.d_v}")
    if model is None:
        model = HighlightModel(cfg.d_v, cfg.d_a, cfg.channels, cfg.gamma0, cfg.seed)
    params = model.registry()
    if optimizer is None:
        optimizer = RMSprop(params, cfg.lr, cfg.rms_alpha, cfg.rms_eps)
    end = cfg.steps if stop_step is None else min(stop_step, cfg.steps)
    trace: list[dict[str, float]] = []
    history: list[float] = []
    step = start_step
    while step < end:
        T.reset_graph()
        model.zero_grad()
        terms = step_losses(model, windows, cfg, step)
        T.backward(terms["total"])
        optimizer.step(params)
        row = {"step": step}
        row.update({k: float(v.item()) for k, v in terms.items()})
        trace.append(row)
        if callback is not None:
            callback(step, row)
        step += 1
        if cfg.early_stop:
            history.append(row["total"])
            if _converged(history, cfg.early_stop_window, cfg.early_stop_tol):
                log.info("early stop at step %d", step)
                break
    return TrainResult(model, optimizer, trace, step)


def _converged(history: list[float], window: int, tol: float) -> bool:
    if len(history) < 2 * window or len(history) % window:
        return False
    prev = float(np.mean(history[-2 * window : -window]))
    cur = float(np.mean(history[-window:]))
    return prev - cur < tol * abs(prev)


def write_trace(trace: Sequence[dict[str, float]], path) -> None:
    cols = ["step"] + [c for c in TERM_ORDER + ("total",) if any(c in row for row in trace)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in trace:
            w.writerow([row["step"]] + [repr(row[c]) if c in row else "" for c in cols[1:]])


def count_params_flops(model: HighlightModel, n: int = 150, branches: Sequence[str] = ("visual", "audio"),
                       k: int = 10) -> tuple[int, int]:
    """Parameter total and forward multiply-add count for one window of ``n`` steps.

    The parameter count covers the whole registry. The multiply-adds cover one
    forward pass of each listed branch (attention, encoder, activation head,
    decoder); the k-point projections act only on 2k rows and are included.
    """
    from .nn import KERNEL, encoder_lengths

    params = int(sum(p.size for _, p in model.named_parameters()))
    macs = 0
    for name in branches:
        br = getattr(model, name)
        d = br.d
        macs += 4 * n * d * d + 2 * n * n * d
        lengths = encoder_lengths(n)
        widths = (d,) + br.autoencoder.channels
        for i in range(3):
            macs += lengths[i + 1] * widths[i + 1] * widths[i] * KERNEL
            macs += lengths[i + 1] * widths[i + 1] * widths[i] * KERNEL
        c = br.head.width
        c2 = br.head.out_width
        macs += lengths[3] * (c * c2 + c2)
        macs += lengths[3] * c
        macs += 2 * effective_k(k, lengths[3]) * c2 * c2
    return params, macs

"""Visual-only highlight inference and score segmentation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import FeatureVectorSequence, WINDOW, unwindow, window_indices
from .errors import InvalidArgumentError, ShapeError
from .model import Branch, BranchOptions, HighlightModel, branch_forward


@dataclass
class HighlightResult:
    video_id: str
    scores: np.ndarray
    segments: list[tuple[int, int, float]] = field(default_factory=list)
    raw: np.ndarray | None = None


def upsample(s: np.ndarray, length: int) -> np.ndarray:
    """Linear interpolation of ``s`` onto ``length`` points with endpoints aligned."""
    s = np.asarray(s, dtype=np.float64)
    if s.size == 1:
        return np.full(length, s[0])
    return np.interp(np.linspace(0.0, s.size - 1.0, length), np.arange(s.size), s)


def minmax(x: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant sequence maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def window_scores(branch: Branch, windows: np.ndarray, use_sa: bool = True) -> np.ndarray:
    """Raw activation sequences ``(M, N')`` for a stack of windows ``(M, W, d)``."""
    opts = BranchOptions(use_sa=use_sa, use_rasl=False)
    with T.no_grad():
        out = branch_forward(windows, branch, opts)
    return out.s.data.astype(np.float64)


def raw_scores(data: np.ndarray, branch: Branch, window: int = WINDOW, use_sa: bool = True) -> np.ndarray:
    """Un-normalised per-timestep scores for an ``(N, d)`` sequence."""
    if data.ndim != 2 or data.shape[1] != branch.d:
        raise ShapeError(f"expected an (N, {branch.d}) sequence, got {data.shape}")
    idx = window_indices(data.shape[0], window)
    s = window_scores(branch, np.stack([data[i] for i in idx]), use_sa)
    return unwindow([upsample(row, window) for row in s], idx, data.shape[0])


def infer(fvs: FeatureVectorSequence, model: HighlightModel, window: int = WINDOW, use_sa: bool = True,
          threshold: float | None = None, min_len: int = 1, branch: str = "visual") -> HighlightResult:
    """Highlight scores in [0, 1] for every timestep of ``fvs`` using one branch only."""
    br = getattr(model, branch)
    if fvs.d != br.d:
        raise ShapeError(f"input width {fvs.d} does not match the {branch} branch ({br.d})")
    raw = raw_scores(fvs.data, br, window, use_sa)
    scores = minmax(raw)
    segs = threshold_segments(scores, threshold, min_len) if threshold is not None else []
    return HighlightResult(fvs.source, scores, segs, raw)


def threshold_segments(scores, tau: float, min_len: int = 1) -> list[tuple[int, int, float]]:
    """Maximal runs with ``score >= tau`` as inclusive ``(start, end, peak)``, dropping short runs."""
    if not tau >= 0:
        raise InvalidArgumentError("threshold must be non-negative")
    scores = np.asarray(scores, dtype=np.float64)
    above = scores >= tau
    out = []
    i, n = 0, scores.size
    while i < n:
        if not above[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and above[j + 1]:
            j += 1
        if j - i + 1 >= min_len:
            out.append((i, j, float(scores[i : j + 1].max())))
        i = j + 1
    return out

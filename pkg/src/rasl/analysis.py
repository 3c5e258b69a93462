"""Window-MSE distinctiveness: how many similar neighbours each timestep has."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FeatureVectorSequence, SegmentLabels, VISUAL_TIMESTEP
from .errors import InvalidArgumentError, ShapeError


@dataclass
class DistinctivenessReport:
    counts: np.ndarray
    highlight_mean: float
    background_mean: float
    window: int
    threshold: float

    @property
    def ratio(self) -> float:
        """Highlight mean over background mean (``nan`` when the latter is 0)."""
        if self.background_mean == 0:
            return float("nan")
        return self.highlight_mean / self.background_mean

    def to_dict(self) -> dict:
        return {
            "highlight_mean_count": self.highlight_mean,
            "background_mean_count": self.background_mean,
            "ratio": self.ratio,
            "window": self.window,
            "threshold": self.threshold,
        }


def neighbour_counts(data: np.ndarray, window: int, threshold: float) -> np.ndarray:
    """For every row, the number of other rows in its window with row-wise MSE below ``threshold``.

    The window is a fixed span of ``window`` consecutive timesteps centred on
    the row and shifted inward at the video ends, so every row is compared
    against ``min(window, N) - 1`` others.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ShapeError(f"expected an (N, d) sequence, got shape {data.shape}")
    if window < 2:
        raise InvalidArgumentError("window must cover at least 2 timesteps")
    n = data.shape[0]
    span = min(window, n)
    sq = np.einsum("ij,ij->i", data, data)
    counts = np.zeros(n, dtype=np.int64)
    for t in range(n):
        lo = min(max(t - span // 2, 0), n - span)
        rows = data[lo : lo + span]
        mse = (sq[t] + sq[lo : lo + span] - 2.0 * rows @ data[t]) / data.shape[1]
        close = mse < threshold
        close[t - lo] = False
        counts[t] = int(close.sum())
    return counts


def distinctiveness_analysis(fvs: FeatureVectorSequence | np.ndarray, labels: SegmentLabels | np.ndarray,
                             window_s: float = 30.0, threshold: float = 0.5,
                             rate: float | None = None) -> DistinctivenessReport:
    """Mean similar-neighbour count for highlight and non-highlight timesteps.

    ``rate`` is in timesteps per second; by default it comes from the sequence
    timestep (5/s for visual features).
    """
    if isinstance(fvs, FeatureVectorSequence):
        data = fvs.data
        rate = 1.0 / fvs.timestep if rate is None else rate
    else:
        data = np.asarray(fvs)
        rate = 1.0 / VISUAL_TIMESTEP if rate is None else rate
    if not (window_s > 0 and rate > 0):
        raise InvalidArgumentError("window length and rate must be positive")
    window = int(round(window_s * rate))
    scores = labels.scores if isinstance(labels, SegmentLabels) else np.asarray(labels)
    if scores.shape[0] != data.shape[0]:
        raise ShapeError(f"{scores.shape[0]} labels for {data.shape[0]} timesteps")
    counts = neighbour_counts(data, window, threshold)
    positive = scores > 0.5
    hl = float(counts[positive].mean()) if positive.any() else float("nan")
    bg = float(counts[~positive].mean()) if (~positive).any() else float("nan")
    return DistinctivenessReport(counts, hl, bg, window, threshold)

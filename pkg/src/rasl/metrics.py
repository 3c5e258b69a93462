"""Average precision, mAP and top-5 mAP."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import SegmentLabels
from .errors import ShapeError

log = logging.getLogger(__name__)


def ranking(scores) -> np.ndarray:
    """Indices by descending score; ties keep the lower index first."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(scores.size), -scores))


def average_precision(scores, labels) -> float | None:
    """Mean of precision@rank over the positive items, in descending-score order.

    Returns ``None`` (with a warning) when there are no positives.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1) > 0
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores for {labels.size} labels")
    if not labels.any():
        warnings.warn("average precision undefined without positive labels", RuntimeWarning, stacklevel=2)
        return None
    hits = labels[ranking(scores)]
    precision = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision[hits].mean())


def top_n_average_precision(scores, labels, n: int = 5) -> float | None:
    """AP restricted to the ``n`` highest-scored items (retrieved set of size ``n``).

    Precision is averaged over the positives found among those items; no
    positives retrieved gives 0. ``None`` when the video has no positives.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1) > 0
    if not labels.any():
        return None
    hits = labels[ranking(scores)][:n]
    if not hits.any():
        return 0.0
    precision = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision[hits].mean())


def segment_average(values, bounds: Sequence[tuple[int, int]]) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return np.array([values[a : b + 1].mean() for a, b in bounds])


def binarize(importance: np.ndarray, positive_fraction: float = 0.25) -> np.ndarray:
    """Binary labels; already-binary input passes through, otherwise the top fraction is positive."""
    importance = np.asarray(importance, dtype=np.float64)
    uniq = np.unique(importance)
    if np.all(np.isin(uniq, (0.0, 1.0))):
        return importance > 0.5
    count = max(1, int(round(positive_fraction * importance.size)))
    out = np.zeros(importance.size, dtype=bool)
    out[ranking(importance)[:count]] = True
    return out


@dataclass
class EvalReport:
    per_video_ap: dict[str, float] = field(default_factory=dict)
    per_video_top5: dict[str, float] = field(default_factory=dict)
    mean_ap: float = float("nan")
    top5_map: float = float("nan")
    skipped: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mAP": self.mean_ap,
            "top5_mAP": self.top5_map,
            "per_video": {
                vid: {"AP": self.per_video_ap[vid], "top5_AP": self.per_video_top5.get(vid)}
                for vid in self.per_video_ap
            },
            "skipped": self.skipped,
            "config": self.config,
        }


def map_and_top5(
    scores: dict[str, np.ndarray],
    labels: dict[str, SegmentLabels | None],
    segment_level: bool = True,
    positive_fraction: float = 0.25,
    top_n: int = 5,
) -> EvalReport:
    """Dataset mAP and top-5 mAP.

    With ``segment_level`` both scores and importance are averaged within each
    labelled segment before ranking; importance is then binarised (see
    :func:`binarize`).
    """
    report = EvalReport(config={"segment_level": segment_level, "positive_fraction": positive_fraction, "top_n": top_n})
    for vid, s in scores.items():
        lab = labels.get(vid)
        if lab is None:
            log.warning("%s: no labels, skipped", vid)
            report.skipped.append(vid)
            continue
        s = np.asarray(s, dtype=np.float64)
        if s.size != len(lab):
            raise ShapeError(f"{vid}: {s.size} scores for {len(lab)} labels")
        if segment_level:
            bounds = lab.segment_bounds()
            s = segment_average(s, bounds)
            imp = segment_average(lab.scores, bounds)
        else:
            imp = lab.scores
        binary = binarize(imp, positive_fraction)
        if not binary.any():
            log.warning("%s: no positive labels, skipped", vid)
            report.skipped.append(vid)
            continue
        report.per_video_ap[vid] = average_precision(s, binary)
        report.per_video_top5[vid] = top_n_average_precision(s, binary, top_n)
    if report.per_video_ap:
        report.mean_ap = float(np.mean(list(report.per_video_ap.values())))
        report.top5_map = float(np.mean(list(report.per_video_top5.values())))
    return report

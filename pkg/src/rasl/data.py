"""Feature vector sequences: binary files, manifests, windowing and resampling.

FVS file layout (little-endian)::

    b"FVS1" | u8 modality | u32 N | u32 d | f32 timestep seconds | N*d f32 row-major

Modality codes are 0 (visual), 1 (audio) and 2 (labels). A label sidecar uses
the same header with ``d`` = 1 (per-timestep importance) or 2 (importance,
segment id).

A manifest is a text file with one ``id<TAB>visual<TAB>audio[<TAB>labels]``
line per video. Relative paths are resolved against the manifest's folder.
An optional first line ``#split<TAB>name`` carries the split tag.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, InvalidArgumentError, LengthError, NumericError, ShapeError

MAGIC = b"FVS1"
HEADER = struct.Struct("<4sBIIf")
MODALITIES = {"visual": 0, "audio": 1, "labels": 2}
_CODES = {v: k for k, v in MODALITIES.items()}

VISUAL_TIMESTEP = 0.2
WINDOW = 150


@dataclass
class FeatureVectorSequence:
    """An ``N x d`` sequence of per-timestep feature vectors for one modality."""

    data: np.ndarray
    modality: str = "visual"
    timestep: float = VISUAL_TIMESTEP
    source: str = ""

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ShapeError(f"an FVS must be a non-empty N x d array, got shape {self.data.shape}")
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        bad = np.argwhere(~np.isfinite(self.data))
        if bad.size:
            row, col = bad[0]
            raise NumericError(f"non-finite entry at row {row}, column {col}")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "FeatureVectorSequence":
        return FeatureVectorSequence(data, self.modality, self.timestep, self.source)


def _write(path, code: int, data: np.ndarray, timestep: float) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, code, data.shape[0], data.shape[1], timestep))
        fh.write(data.tobytes())


def _read(path) -> tuple[int, np.ndarray, float]:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, code, n, d, timestep = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if code not in _CODES:
        raise FormatError(f"{path}: unknown modality code {code}")
    expected = HEADER.size + 4 * n * d
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(n, d).astype(np.float32)
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        row, col = bad[0]
        raise NumericError(f"{path}: non-finite entry at row {row}, column {col}")
    return code, data, timestep


def save_fvs(fvs: FeatureVectorSequence, path) -> None:
    _write(path, MODALITIES[fvs.modality], fvs.data, fvs.timestep)


def load_fvs(path) -> FeatureVectorSequence:
    code, data, timestep = _read(path)
    if _CODES[code] == "labels":
        raise FormatError(f"{path}: is a label file, not an FVS")
    return FeatureVectorSequence(data, _CODES[code], float(timestep), source=Path(path).stem)


@dataclass
class SegmentLabels:
    """Per-timestep importance (or binary highlight flags) plus optional segment ids."""

    scores: np.ndarray
    segments: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float32).reshape(-1)
        if self.segments is not None:
            self.segments = np.asarray(self.segments, dtype=np.int64).reshape(-1)
            if self.segments.shape != self.scores.shape:
                raise ShapeError("segment ids must align with scores")

    def __len__(self) -> int:
        return self.scores.size

    def segment_bounds(self) -> list[tuple[int, int]]:
        """Inclusive ``(start, end)`` runs of equal segment id."""
        if self.segments is None:
            return [(i, i) for i in range(len(self))]
        change = np.flatnonzero(np.diff(self.segments)) + 1
        starts = np.concatenate([[0], change])
        ends = np.concatenate([change - 1, [len(self) - 1]])
        return list(zip(starts.tolist(), ends.tolist()))


def save_labels(labels: SegmentLabels, path, timestep: float = VISUAL_TIMESTEP) -> None:
    cols = [labels.scores]
    if labels.segments is not None:
        cols.append(labels.segments.astype(np.float32))
    _write(path, MODALITIES["labels"], np.stack(cols, axis=1), timestep)


def load_labels(path) -> SegmentLabels:
    code, data, _ = _read(path)
    if _CODES[code] != "labels":
        raise FormatError(f"{path}: not a label file")
    if data.shape[1] not in (1, 2):
        raise FormatError(f"{path}: label files have 1 or 2 columns")
    segments = data[:, 1].astype(np.int64) if data.shape[1] == 2 else None
    return SegmentLabels(data[:, 0], segments)


@dataclass
class ManifestEntry:
    video_id: str
    visual: Path
    audio: Path | None
    labels: Path | None = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    split: str = ""

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def save_manifest(manifest: DatasetManifest, path) -> None:
    base = Path(path).resolve().parent
    lines = [f"#split\t{manifest.split}"] if manifest.split else []
    for e in manifest.entries:
        cols = [e.video_id, _rel(e.visual, base), _rel(e.audio, base) if e.audio else ""]
        if e.labels is not None:
            cols.append(_rel(e.labels, base))
        lines.append("\t".join(cols))
    Path(path).write_text("\n".join(lines) + "\n")


def _rel(p: Path, base: Path) -> str:
    p = Path(p).resolve()
    try:
        return str(p.relative_to(base))
    except ValueError:
        return str(p)


def load_manifest(path) -> DatasetManifest:
    base = Path(path).resolve().parent
    manifest = DatasetManifest()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            head = line[1:].split("\t")
            if head[0] == "split" and len(head) > 1:
                manifest.split = head[1]
            continue
        cols = line.split("\t")
        if len(cols) < 3:
            raise FormatError(f"{path}:{lineno}: expected id, visual and audio columns")
        vid, vis, aud = cols[:3]
        lab = cols[3] if len(cols) > 3 and cols[3] else None
        manifest.entries.append(
            ManifestEntry(vid, base / vis, base / aud if aud else None, base / lab if lab else None)
        )
    return manifest


@dataclass
class Window:
    """A fixed-length window and the original timestep index of each row."""

    data: np.ndarray
    provenance: np.ndarray


def window_indices(n: int, length: int) -> list[np.ndarray]:
    """Provenance of each window: consecutive windows, repeat-padding the remainder."""
    if length < 1:
        raise InvalidArgumentError("window length must be at least 1")
    if n < 1:
        raise LengthError("cannot window an empty sequence")
    out = [np.arange(start, start + length) for start in range(0, n - length + 1, length)]
    done = len(out) * length
    if done < n:
        rest = n - done
        out.append(done + np.arange(length) % rest)
    return out


def window_clip(fvs: FeatureVectorSequence | np.ndarray, length: int = WINDOW) -> list[Window]:
    data = fvs.data if isinstance(fvs, FeatureVectorSequence) else np.asarray(fvs)
    return [Window(data[idx], idx) for idx in window_indices(data.shape[0], length)]


def unwindow(values: Sequence[np.ndarray], provenance: Sequence[np.ndarray], n: int) -> np.ndarray:
    """Scatter per-window values back onto the original timeline, averaging duplicates."""
    total = np.zeros(n, dtype=np.float64)
    count = np.zeros(n, dtype=np.float64)
    for vals, idx in zip(values, provenance):
        np.add.at(total, idx, vals)
        np.add.at(count, idx, 1.0)
    if np.any(count == 0):
        raise LengthError("provenance does not cover the whole sequence")
    return total / count


def pool_audio_temporal(fvs: FeatureVectorSequence, target: int) -> FeatureVectorSequence:
    """Mean-pool to ``target`` timesteps over non-overlapping bins.

    Bin ``i`` spans rows ``floor(i*N/target)`` to ``floor((i+1)*N/target)``,
    so bins are equal when ``target`` divides ``N`` and otherwise differ by
    one row; each bin is averaged over its actual width.
    """
    n = fvs.n
    if target < 1 or n < target:
        raise LengthError(f"cannot pool {n} timesteps down to {target}")
    edges = (np.arange(target + 1) * n) // target
    sums = np.add.reduceat(fvs.data.astype(np.float64), edges[:-1], axis=0)
    pooled = sums / np.diff(edges)[:, None]
    return FeatureVectorSequence(pooled, fvs.modality, fvs.timestep * n / target, fvs.source)


def resample_vector_length(fvs: FeatureVectorSequence, target: int) -> FeatureVectorSequence:
    """Linearly interpolate every row from ``d`` to ``target`` entries, endpoints aligned."""
    d = fvs.d
    if d < 2 or target < 2:
        raise InvalidArgumentError("vector resampling needs at least two entries on both sides")
    if target == d:
        return fvs.with_data(fvs.data.copy())
    pos = np.linspace(0.0, d - 1.0, target)
    lo = np.minimum(np.floor(pos).astype(np.int64), d - 2)
    frac = pos - lo
    data = fvs.data.astype(np.float64)
    out = data[:, lo] * (1 - frac) + data[:, lo + 1] * frac
    return fvs.with_data(out)


def generate_mask(n: int, ratio: float, seed=None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Boolean mask with exactly ``round(ratio * n)`` masked (True) positions."""
    if not 0 <= ratio < 1:
        raise InvalidArgumentError("mask ratio must lie in [0, 1)")
    rng = rng if rng is not None else np.random.default_rng(seed)
    count = int(np.floor(ratio * n + 0.5))
    mask = np.zeros(n, dtype=bool)
    if count:
        mask[rng.choice(n, size=count, replace=False)] = True
    return mask


@dataclass
class VideoPair:
    """A video's visual FVS and its audio FVS aligned to the visual timeline."""

    video_id: str
    visual: FeatureVectorSequence
    audio: FeatureVectorSequence | None
    labels: SegmentLabels | None = None


def align_audio(audio: FeatureVectorSequence, visual: FeatureVectorSequence) -> FeatureVectorSequence:
    """Pool audio to the visual length and resample its vectors to the visual width."""
    if audio.n != visual.n:
        audio = pool_audio_temporal(audio, visual.n)
    if audio.d != visual.d:
        audio = resample_vector_length(audio, visual.d)
    return audio


def load_pairs(manifest: DatasetManifest, with_audio: bool = True) -> list[VideoPair]:
    """Load every manifest entry, aligning audio and checking dimensions agree."""
    if not manifest.entries:
        raise InvalidArgumentError("manifest is empty")
    pairs = []
    width = None
    for e in manifest.entries:
        vis = load_fvs(e.visual)
        if width is None:
            width = vis.d
        elif vis.d != width:
            raise ShapeError(f"{e.video_id}: visual width {vis.d} differs from {width}")
        aud = None
        if with_audio:
            if e.audio is None:
                raise InvalidArgumentError(f"{e.video_id}: no paired audio")
            aud = align_audio(load_fvs(e.audio), vis)
        lab = load_labels(e.labels) if e.labels is not None else None
        if lab is not None and len(lab) != vis.n:
            raise ShapeError(f"{e.video_id}: {len(lab)} labels for {vis.n} timesteps")
        pairs.append(VideoPair(e.video_id, vis, aud, lab))
    return pairs

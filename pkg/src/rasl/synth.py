"""Synthetic paired visual/audio videos with planted highlights.

Ordinary content is redundant: each video is a sequence of scenes, each scene
reuses one of a few shared cluster centres, and every background timestep is
a small jitter around its scene's centre. A highlight is a run of timesteps
around a fresh isotropic direction drawn for that run alone, so it has few
similar neighbours. Both modalities are views of one latent sequence: visual rows
are the latent itself (optionally with highlights only partly visible) and
audio rows are a fixed random linear image of it plus noise, emitted at a
higher temporal rate so they must be pooled back to the visual timeline.

Optional activation outliers are runs of background rows with amplified
magnitude. They are large but carry no new direction, and are labelled as
non-highlights.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    DatasetManifest,
    FeatureVectorSequence,
    ManifestEntry,
    SegmentLabels,
    VideoPair,
    save_fvs,
    save_labels,
    save_manifest,
    VISUAL_TIMESTEP,
)
from .errors import InvalidArgumentError


@dataclass
class SynthSpec:
    videos: int = 20
    n_min: int = 300
    n_max: int = 600
    d_v: int = 128
    d_a: int = 128
    highlight_fraction: float = 0.2
    clusters: int = 3
    coupling: float = 1.0
    audio_noise: float = 0.1
    visual_noise: float = 0.1
    visual_highlight: float = 1.0
    highlight_scale: float = 1.0
    highlight_jitter: float | None = None
    audio_highlight: float = 1.0
    audio_rate: int = 2
    highlight_len: tuple[int, int] = (12, 30)
    scene_len: tuple[int, int] = (20, 60)
    outlier_fraction: float = 0.0
    outlier_gain: float = 3.0
    outlier_len: tuple[int, int] = (8, 16)
    segment_len: int = 10
    seed: int = 0
    world_seed: int | None = None

    def validate(self) -> None:
        if not 0 < self.highlight_fraction <= 0.5:
            raise InvalidArgumentError("highlight fraction must lie in (0, 0.5]")
        if self.clusters < 1:
            raise InvalidArgumentError("cluster count must be at least 1")
        if self.highlight_fraction * self.n_min < 1:
            raise InvalidArgumentError("highlight fraction leaves no highlight timesteps")
        if self.videos < 1 or self.n_min < 1 or self.n_max < self.n_min:
            raise InvalidArgumentError("invalid video count or length range")
        if not 0 <= self.outlier_fraction < 1 - self.highlight_fraction:
            raise InvalidArgumentError("outlier fraction too large")


@dataclass
class World:
    """Quantities shared by every video drawn from one spec: centres and audio map."""

    centers: np.ndarray
    audio_map: np.ndarray


def make_world(spec: SynthSpec) -> World:
    rng = np.random.default_rng(spec.world_seed if spec.world_seed is not None else [spec.seed, 0x5EED])
    centers = rng.normal(0.0, 1.0, size=(spec.clusters, spec.d_v))
    audio_map = rng.normal(0.0, 1.0, size=(spec.d_v, spec.d_a)) / np.sqrt(spec.d_v)
    return World(centers, audio_map)


def _runs(rng, n: int, total: int, length: tuple[int, int], taken: np.ndarray) -> np.ndarray:
    """Mark roughly ``total`` timesteps as runs of the given length range, avoiding ``taken``."""
    flags = np.zeros(n, dtype=bool)
    attempts = 0
    while flags.sum() < total and attempts < 1000:
        attempts += 1
        size = int(rng.integers(length[0], length[1] + 1))
        size = min(size, total - int(flags.sum())) if flags.sum() else size
        size = max(size, 1)
        start = int(rng.integers(0, max(n - size, 0) + 1))
        span = slice(start, start + size)
        lo, hi = max(start - 1, 0), min(start + size + 1, n)
        if taken[lo:hi].any() or flags[lo:hi].any():
            continue
        flags[span] = True
    return flags


def generate_video(spec: SynthSpec, world: World, rng: np.random.Generator, video_id: str) -> VideoPair:
    n = int(rng.integers(spec.n_min, spec.n_max + 1))
    scene = np.empty(n, dtype=np.int64)
    t = 0
    while t < n:
        size = int(rng.integers(spec.scene_len[0], spec.scene_len[1] + 1))
        scene[t : t + size] = rng.integers(spec.clusters)
        t += size
    background = world.centers[scene] + spec.visual_noise * rng.normal(size=(n, spec.d_v))

    target = max(1, int(round(spec.highlight_fraction * n)))
    highlight = _runs(rng, n, target, spec.highlight_len, np.zeros(n, dtype=bool))
    outlier = np.zeros(n, dtype=bool)
    if spec.outlier_fraction > 0:
        outlier = _runs(rng, n, int(round(spec.outlier_fraction * n)), spec.outlier_len, highlight)

    # one fresh isotropic direction per highlight run, jittered per timestep
    fresh = np.zeros((n, spec.d_v))
    starts = np.flatnonzero(np.diff(np.concatenate([[False], highlight])) > 0)
    for start in starts:
        stop = start
        while stop < n and highlight[stop]:
            stop += 1
        fresh[start:stop] = spec.highlight_scale * rng.normal(size=spec.d_v)
    jitter = spec.visual_noise if spec.highlight_jitter is None else spec.highlight_jitter
    fresh += jitter * rng.normal(size=(n, spec.d_v))
    latent = background.copy()
    latent[highlight] = fresh[highlight]
    latent[outlier] *= spec.outlier_gain

    visual = background.copy()
    a = spec.visual_highlight
    visual[highlight] = (1 - a) * background[highlight] + a * fresh[highlight]
    visual[outlier] *= spec.outlier_gain

    audio_latent = background.copy()
    b = spec.audio_highlight
    audio_latent[highlight] = (1 - b) * background[highlight] + b * fresh[highlight]
    audio_latent[outlier] *= spec.outlier_gain
    rate = spec.audio_rate
    audio = np.repeat(audio_latent @ world.audio_map, rate, axis=0) * spec.coupling
    if spec.audio_noise > 0:
        audio = audio + spec.audio_noise * rng.normal(size=audio.shape)

    segments = np.arange(n) // spec.segment_len
    labels = SegmentLabels(highlight.astype(np.float32), segments)
    return VideoPair(
        video_id,
        FeatureVectorSequence(visual, "visual", VISUAL_TIMESTEP, video_id),
        FeatureVectorSequence(audio, "audio", VISUAL_TIMESTEP / rate, video_id),
        labels,
    )


def synth_pairs(spec: SynthSpec, split: str = "train", offset: int = 0) -> list[VideoPair]:
    """Generate ``spec.videos`` videos in memory.

    ``split``/``offset`` select an independent stream of videos from the same
    world, which is how held-out sets are made.
    """
    spec.validate()
    world = make_world(spec)
    rng = np.random.default_rng([spec.seed, _split_code(split), offset])
    return [generate_video(spec, world, rng, f"{split}{offset + i:04d}") for i in range(spec.videos)]


def _split_code(split: str) -> int:
    return int.from_bytes(split.encode()[:8].ljust(8, b"\0"), "little")


def synth_generate(spec: SynthSpec, out_dir, split: str = "train") -> tuple[DatasetManifest, list[SegmentLabels]]:
    """Write a synthetic dataset (FVS files, label sidecars, manifest) to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = synth_pairs(spec, split)
    manifest = DatasetManifest(split=split)
    labels = []
    for pair in pairs:
        vis = out / f"{pair.video_id}.visual.fvs"
        aud = out / f"{pair.video_id}.audio.fvs"
        lab = out / f"{pair.video_id}.labels.fvs"
        save_fvs(pair.visual, vis)
        save_fvs(pair.audio, aud)
        save_labels(pair.labels, lab)
        manifest.entries.append(ManifestEntry(pair.video_id, vis, aud, lab))
        labels.append(pair.labels)
    save_manifest(manifest, out / f"{split}.tsv")
    return manifest, labels

"""Command-line front end: ``rasl <subcommand> ...``.

Exit status is 0 on success, 1 on a usage error and 2 on a data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .analysis import distinctiveness_analysis
from .checkpoint import checkpoint_load, checkpoint_save
from .config import TrainConfig
from .data import load_fvs, load_labels, load_manifest, load_pairs
from .errors import RaslError
from .inference import HighlightResult, infer, minmax, raw_scores
from .metrics import map_and_top5
from .model import HighlightModel
from .synth import SynthSpec, synth_generate
from .trainer import count_params_flops, pretrain, write_trace

log = logging.getLogger("rasl")

ABLATIONS = {
    "full": {},
    "no-rasl": {"use_rasl": False},
    "no-sa": {"use_sa": False},
    "no-auxiliary": {"use_auxiliary": False},
    "vision-only": {"use_audio": False},
    "audio-only": {"use_visual": False},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags; their defaults are suppressed so a
    # flag given before the subcommand is not overwritten
    def default(value):
        return argparse.SUPPRESS if suppress else value

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=default(None), help="TrainConfig file of 'key = value' lines")
    common.add_argument("--seed", type=int, default=default(None), help="seed (unsigned 64-bit) overriding the config")
    common.add_argument("--threads", type=int, default=default(None), help="BLAS thread limit; 1 gives bitwise determinism")
    common.add_argument("--out", type=Path, default=default(Path(".")), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=default(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rasl", description="Unsupervised audio-visual highlight detection.",
                     parents=[_global_flags(False)])
    common = _global_flags(True)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-synth", parents=[common], help="write a synthetic paired dataset")
    synth = SynthSpec()
    p.add_argument("--videos", type=int, default=synth.videos)
    p.add_argument("--n-min", type=int, default=synth.n_min)
    p.add_argument("--n-max", type=int, default=synth.n_max)
    p.add_argument("--d-v", type=int, default=synth.d_v)
    p.add_argument("--d-a", type=int, default=synth.d_a)
    p.add_argument("--highlight-fraction", type=float, default=synth.highlight_fraction)
    p.add_argument("--clusters", type=int, default=synth.clusters)
    p.add_argument("--coupling", type=float, default=synth.coupling)
    p.add_argument("--audio-noise", type=float, default=synth.audio_noise)
    p.add_argument("--visual-highlight", type=float, default=synth.visual_highlight,
                   help="share of the highlight signal visible in the visual rows")
    p.add_argument("--audio-highlight", type=float, default=synth.audio_highlight,
                   help="share of the highlight signal carried by the audio rows")
    p.add_argument("--outlier-fraction", type=float, default=synth.outlier_fraction)
    p.add_argument("--split", default="train")

    p = sub.add_parser("pretrain", parents=[common], help="train a model on a manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--steps", type=int, help="override the configured step count")
    p.add_argument("--resume", type=Path, help="continue from this checkpoint")

    p = sub.add_parser("infer", parents=[common], help="score visual FVS files with a checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("inputs", type=Path, nargs="*", help="visual FVS files")
    p.add_argument("--manifest", type=Path, help="score the visual entries of a manifest")
    p.add_argument("--threshold", type=float, help="segment scores at this level")
    p.add_argument("--min-len", type=int, default=1)
    p.add_argument("--svg", action="store_true", help="also write a score curve")
    p.add_argument("--no-sa", action="store_true", help="bypass self-attention (for models trained without it)")

    p = sub.add_parser("eval", parents=[common], help="mAP / top-5 mAP of score files")
    p.add_argument("scores", type=Path, nargs="+", help="score CSV files ('timestep,score')")
    p.add_argument("--labels", type=Path, nargs="*", help="label files, one per score file")
    p.add_argument("--manifest", type=Path, help="look labels up by video id instead")
    p.add_argument("--timestep-level", action="store_true", help="rank timesteps rather than labelled segments")
    p.add_argument("--positive-fraction", type=float, default=0.25)

    p = sub.add_parser("analyze", parents=[common], help="window-MSE distinctiveness statistic")
    p.add_argument("inputs", type=Path, nargs="*", help="FVS file followed by its label file")
    p.add_argument("--manifest", type=Path, help="analyse every labelled visual entry")
    p.add_argument("--window-s", type=float, default=30.0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--rate", type=float, help="timesteps per second (default: from the file)")

    p = sub.add_parser("ablate", parents=[common], help="train and compare ablation variants")
    p.add_argument("manifest", type=Path, help="training manifest")
    p.add_argument("--test", type=Path, help="labelled evaluation manifest (default: the training one)")
    p.add_argument("--variants", nargs="+", default=list(ABLATIONS), choices=list(ABLATIONS))
    p.add_argument("--steps", type=int)
    return parser


def _config(args) -> TrainConfig:
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "steps", None) is not None:
        cfg = cfg.replace(steps=args.steps)
    return cfg


def _video_id(path: Path) -> str:
    name = path.name
    for suffix in (".fvs", ".csv", ".visual", ".scores"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return name


def write_scores_csv(scores: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestep", "score"])
        for i, v in enumerate(scores):
            w.writerow([i, repr(float(v))])


def read_scores_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["timestep", "score"]:
        raise RaslError(f"{path}: expected a 'timestep,score' header")
    try:
        return np.array([float(r[1]) for r in rows[1:]], dtype=np.float64)
    except (IndexError, ValueError) as exc:
        raise RaslError(f"{path}: malformed score row ({exc})") from None


def write_svg(scores: np.ndarray, path, threshold: float | None = None, width: int = 800, height: int = 200) -> None:
    """Score curve as a polyline, with an optional horizontal threshold line."""
    n = max(len(scores) - 1, 1)
    pts = " ".join(f"{i * width / n:.2f},{(1 - v) * height:.2f}" for i, v in enumerate(scores))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="1.5"/>',
    ]
    if threshold is not None:
        y = (1 - threshold) * height
        parts.append(f'<line x1="0" y1="{y:.2f}" x2="{width}" y2="{y:.2f}" stroke="crimson" stroke-dasharray="4 3"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def cmd_gen_synth(args) -> int:
    spec = SynthSpec(
        videos=args.videos, n_min=args.n_min, n_max=args.n_max, d_v=args.d_v, d_a=args.d_a,
        highlight_fraction=args.highlight_fraction, clusters=args.clusters, coupling=args.coupling,
        audio_noise=args.audio_noise, visual_highlight=args.visual_highlight,
        audio_highlight=args.audio_highlight, outlier_fraction=args.outlier_fraction,
        seed=args.seed if args.seed is not None else 0,
    )
    manifest, _ = synth_generate(spec, args.out, args.split)
    print(f"wrote {len(manifest)} videos to {args.out / (args.split + '.tsv')}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    model = optimizer = None
    start = 0
    if args.resume:
        ck = checkpoint_load(args.resume)
        model, optimizer, start = ck.model, ck.optimizer, ck.step
        cfg = ck.config.replace(steps=cfg.steps) if args.steps is not None else ck.config
    pairs = load_pairs(load_manifest(args.manifest), with_audio=cfg.use_audio)
    result = pretrain(pairs, cfg, model, optimizer, start_step=start)
    args.out.mkdir(parents=True, exist_ok=True)
    checkpoint_save(result.model, result.optimizer, args.out / "model.ckpt", cfg, result.step)
    write_trace(result.trace, args.out / "trace.csv")
    params, macs = count_params_flops(result.model, cfg.window, k=cfg.k)
    # published full-size reference: 8.53M parameters, 0.82G FLOPs
    print(f"parameters {params / 1e6:.2f}M, forward multiply-adds per window {macs / 1e9:.3f}G "
          f"(reference 8.53M / 0.82G at unpublished widths)")
    if result.trace:
        last = result.trace[-1]
        print(f"step {result.step}: L_total {last['total']:.6f}")
    print(f"wrote {args.out / 'model.ckpt'}")
    return 0


def _result_json(res: HighlightResult) -> dict:
    return {
        "video_id": res.video_id,
        "scores": [float(v) for v in res.scores],
        "segments": [{"start": a, "end": b, "peak": p} for a, b, p in res.segments],
    }


def cmd_infer(args) -> int:
    ck = checkpoint_load(args.checkpoint)
    if args.manifest:
        jobs = [(e.video_id, e.visual) for e in load_manifest(args.manifest)]
    else:
        jobs = [(_video_id(p), p) for p in args.inputs]
    if not jobs:
        raise UsageError("infer needs FVS inputs or --manifest")
    if args.threshold is not None and not args.threshold >= 0:
        raise UsageError("--threshold must be non-negative")
    args.out.mkdir(parents=True, exist_ok=True)
    use_sa = ck.config.use_sa and not args.no_sa
    for vid, path in jobs:
        fvs = load_fvs(path)
        res = infer(fvs, ck.model, ck.config.window, use_sa, args.threshold, args.min_len)
        res.video_id = vid
        write_scores_csv(res.scores, args.out / f"{vid}.scores.csv")
        _write_json(_result_json(res), args.out / f"{vid}.json")
        if args.svg:
            write_svg(res.scores, args.out / f"{vid}.svg", args.threshold)
        print(f"{vid}: {len(res.scores)} scores, {len(res.segments)} segments")
    return 0


def cmd_eval(args) -> int:
    scores = {_video_id(p): read_scores_csv(p) for p in args.scores}
    if args.manifest:
        by_id = {e.video_id: e.labels for e in load_manifest(args.manifest)}
        labels = {vid: load_labels(by_id[vid]) if by_id.get(vid) else None for vid in scores}
    elif args.labels:
        if len(args.labels) != len(args.scores):
            raise UsageError("give one label file per score file")
        labels = {vid: load_labels(p) for vid, p in zip(scores, args.labels)}
    else:
        raise UsageError("eval needs --labels or --manifest")
    report = map_and_top5(scores, labels, not args.timestep_level, args.positive_fraction)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_json(report.to_dict(), args.out / "eval.json")
    print(f"mAP {report.mean_ap:.4f}")
    print(f"top5_mAP {report.top5_map:.4f}")
    return 0


def cmd_analyze(args) -> int:
    if args.manifest:
        jobs = [(e.video_id, e.visual, e.labels) for e in load_manifest(args.manifest) if e.labels]
    elif len(args.inputs) == 2:
        jobs = [(_video_id(args.inputs[0]), args.inputs[0], args.inputs[1])]
    else:
        raise UsageError("analyze needs an FVS file and its label file, or --manifest")
    per_video = {}
    hl, bg = [], []
    for vid, fvs_path, lab_path in jobs:
        rep = distinctiveness_analysis(load_fvs(fvs_path), load_labels(lab_path), args.window_s, args.threshold, args.rate)
        per_video[vid] = rep.to_dict()
        positive = load_labels(lab_path).scores > 0.5
        hl.extend(rep.counts[positive].tolist())
        bg.extend(rep.counts[~positive].tolist())
    summary = {
        "highlight_mean_count": float(np.mean(hl)) if hl else float("nan"),
        "background_mean_count": float(np.mean(bg)) if bg else float("nan"),
    }
    summary["ratio"] = summary["highlight_mean_count"] / summary["background_mean_count"] if bg and np.mean(bg) else float("nan")
    args.out.mkdir(parents=True, exist_ok=True)
    _write_json({"summary": summary, "per_video": per_video}, args.out / "analysis.json")
    print(f"highlight {summary['highlight_mean_count']:.3f}  background {summary['background_mean_count']:.3f}  ratio {summary['ratio']:.3f}")
    return 0


def evaluate_branch(model: HighlightModel, pairs, cfg: TrainConfig, branch: str = "visual") -> dict:
    """mAP report of one branch's scores over labelled pairs."""
    scores, labels = {}, {}
    for pair in pairs:
        fvs = pair.visual if branch == "visual" else pair.audio
        scores[pair.video_id] = minmax(raw_scores(fvs.data, getattr(model, branch), cfg.window, cfg.use_sa))
        labels[pair.video_id] = pair.labels
    return map_and_top5(scores, labels).to_dict()


def cmd_ablate(args) -> int:
    base = _config(args)
    train = load_pairs(load_manifest(args.manifest), with_audio=True)
    test = load_pairs(load_manifest(args.test or args.manifest), with_audio=True)
    rows = {}
    for name in args.variants:
        cfg = base.replace(**ABLATIONS[name])
        result = pretrain(train, cfg)
        branch = "audio" if not cfg.use_visual else "visual"
        rep = evaluate_branch(result.model, test, cfg, branch)
        rows[name] = {"branch": branch, "mAP": rep["mAP"], "top5_mAP": rep["top5_mAP"], "steps": result.step}
        print(f"{name:13s} {branch:6s} mAP {rep['mAP']:.4f}  top5 {rep['top5_mAP']:.4f}")
    args.out.mkdir(parents=True, exist_ok=True)
    _write_json({"config": base.to_text(), "variants": rows}, args.out / "ablation.json")
    return 0


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "pretrain": cmd_pretrain,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "ablate": cmd_ablate,
}


def _thread_limit(n):
    if n is None:
        return nullcontext()
    if n < 1:
        raise UsageError("--threads must be at least 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        with _thread_limit(args.threads):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (RaslError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

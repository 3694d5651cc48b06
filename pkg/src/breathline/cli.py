"""``breathline`` command line: simulate, label, track, train, detect, eval, e2e.

Exit codes: 0 success (a "no-estimate" result included), 1 usage/parameter
error, 2 I/O error, 3 data-format error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .audio import (
    BandpassSpec,
    ConsistencySpec,
    ThresholdSpec,
    label_audio,
    read_wav,
)
from .core import (
    BreathlineError,
    InvalidSpecError,
    RespirationEstimate,
    frames_from_labels,
    read_label_csv,
    write_label_csv,
)
from .detector import (
    brightness_baseline,
    extract_feature_matrix,
    load_external_predictions,
    load_model,
    read_pgm,
    save_model,
    train_linear,
)
from .evaluate import (
    DegenerateInputError,
    UndefinedAlphaError,
    confusion,
    error_rows,
    krippendorff_alpha,
    percent_agreement,
    read_error_rows,
    read_ratings_csv,
    relative_error,
    weighted_report,
)
from .simulate import InvalidConfigError, ScenarioConfig, generate, load_config, write_scenario
from .tracker import predict_respiration_rate

log = logging.getLogger("breathline")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunManifest:
    command: str
    config_digest: str
    input_paths: list = field(default_factory=list)
    output_paths: list = field(default_factory=list)
    seed: Optional[int] = None
    tool_version: str = __version__
    resolved: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def config_digest(resolved: dict) -> str:
    return hashlib.sha256(json.dumps(resolved, sort_keys=True).encode("utf-8")).hexdigest()


def _manifest(command, resolved, inputs, outputs, seed=None) -> RunManifest:
    return RunManifest(
        command=command,
        config_digest=config_digest(resolved),
        input_paths=[str(p) for p in inputs],
        output_paths=[str(p) for p in outputs],
        seed=seed,
        resolved=resolved,
    )


def _dump_json(payload, path: Optional[Path]) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


# -- simulate -----------------------------------------------------------------

_CONFIG_FLAGS = {
    "duration_s": float,
    "fps": float,
    "sample_rate_hz": int,
    "rate_bpm": float,
    "exhalation_fraction": float,
    "period_jitter_frac": float,
    "exhale_amp": float,
    "background_amp": float,
    "bubble_brightness": float,
    "frame_size": int,
    "label_lag_frames": int,
}


def _resolve_config(args) -> ScenarioConfig:
    # flag > config file > default
    base = load_config(args.config) if args.config else ScenarioConfig()
    overrides = {k: getattr(args, k) for k in _CONFIG_FLAGS if getattr(args, k, None) is not None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    return replace(base, **overrides) if overrides else base


def cmd_simulate(args) -> int:
    config = _resolve_config(args)
    scenario = generate(config, render_frames=not args.no_frames)
    out = Path(args.out)
    paths = write_scenario(scenario, out)
    (out / "scenario.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")
    inputs = [args.config] if args.config else []
    _manifest("simulate", config.to_dict(), inputs, paths, config.seed).write(out / "manifest.json")
    log.info("wrote %d frames to %s", len(scenario.frames), out)
    return EXIT_OK


# -- label --------------------------------------------------------------------


def _label_specs(args):
    low, high = (400.0, 600.0) if args.narrow_band else (args.low_hz, args.high_hz)
    return (
        BandpassSpec(low, high, args.taps),
        ThresholdSpec(args.threshold, args.statistic),
        ConsistencySpec(args.delta),
    )


def _covered_frames(n_samples: int, fs: int, fps: float) -> int:
    count = int(n_samples * fps / fs)
    while count > 0 and round(count * fs / fps) > n_samples:
        count -= 1
    return count


def cmd_label(args) -> int:
    track = read_wav(args.wav)
    bp, th, cs = _label_specs(args)
    frame_count = args.frame_count or _covered_frames(len(track), track.sample_rate_hz, args.fps)
    if frame_count <= 0:
        raise UsageError("audio does not cover a single frame")
    stream = label_audio(track, args.fps, frame_count, bp, th, cs)
    out = Path(args.out)
    write_label_csv(out, stream)
    resolved = {
        "fps": args.fps,
        "frame_count": frame_count,
        "bandpass": asdict(bp),
        "threshold": {"threshold": th.threshold, "statistic": th.statistic.value},
        "consistency": asdict(cs),
    }
    _manifest("label", resolved, [args.wav], [out]).write(_manifest_path(out))
    return EXIT_OK


# -- track ------------------------------------------------------------------------


def cmd_track(args) -> int:
    stream = read_label_csv(args.labels)
    estimate = predict_respiration_rate(stream, args.min_gap_s)
    report = estimate.to_dict()
    report["display"] = estimate.display()
    out = Path(args.out) if args.out else None
    _dump_json(report, out)
    if out is not None:
        _manifest("track", {"min_gap_s": args.min_gap_s}, [args.labels], [out]).write(_manifest_path(out))
    return EXIT_OK


# -- train / detect ---------------------------------------------------------------


def _frame_paths(frames_dir) -> list[Path]:
    d = Path(frames_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"frames directory not found: {d}")
    return sorted(d.glob("*.pgm"))


def cmd_train(args) -> int:
    paths = _frame_paths(args.frames_dir)
    labels = read_label_csv(args.labels)
    if len(paths) != len(labels):
        raise DegenerateInputError(f"{len(paths)} frames but {len(labels)} labels")
    X = extract_feature_matrix([read_pgm(p) for p in paths])
    model = train_linear(
        X, [f.label for f in labels], args.epochs, args.learning_rate, args.lam, args.seed
    )
    out = Path(args.model)
    save_model(out, model)
    resolved = {"epochs": args.epochs, "learning_rate": args.learning_rate, "lambda": args.lam}
    _manifest("train", resolved, [args.frames_dir, args.labels], [out], args.seed).write(_manifest_path(out))
    return EXIT_OK


def cmd_detect(args) -> int:
    out = Path(args.out)
    if args.predictions:
        stream = load_external_predictions(args.predictions)
        inputs = [args.predictions]
        resolved = {"source": "predictions"}
    else:
        if not args.frames_dir:
            raise UsageError("detect needs --frames-dir or --predictions")
        paths = _frame_paths(args.frames_dir)
        frames = [read_pgm(p) for p in paths]
        if args.baseline:
            labels = [brightness_baseline(f, args.cutoff, args.fraction) for f in frames]
            resolved = {"source": "baseline", "cutoff": args.cutoff, "fraction": args.fraction, "fps": args.fps}
            inputs = [args.frames_dir]
        else:
            if not args.model:
                raise UsageError("detect needs --model (or --baseline)")
            model = load_model(args.model)
            scores = model.decision_function(extract_feature_matrix(frames)) if frames else np.empty(0)
            labels = [int(s > 0) for s in scores]
            resolved = {"source": "model", "fps": args.fps}
            inputs = [args.frames_dir, args.model]
        stream = frames_from_labels(labels, args.fps)
    write_label_csv(out, stream)
    _manifest("detect", resolved, inputs, [out]).write(_manifest_path(out))
    return EXIT_OK


# -- eval -------------------------------------------------------------------------


def cmd_eval(args) -> int:
    report: dict = {}
    inputs = []
    if args.pred or args.truth:
        if not (args.pred and args.truth):
            raise UsageError("--pred and --truth go together")
        pred, truth = read_label_csv(args.pred), read_label_csv(args.truth)
        if len(pred) != len(truth):
            raise DegenerateInputError(f"prediction has {len(pred)} frames, truth has {len(truth)}")
        report["confusion"] = asdict(confusion(pred, truth))
        report["classification"] = weighted_report(pred, truth)
        inputs += [args.pred, args.truth]
    if args.ratings:
        ratings = read_ratings_csv(args.ratings)
        report["percent_agreement"] = percent_agreement(ratings)
        try:
            report["krippendorff_alpha"] = krippendorff_alpha(ratings)
            report["alpha_status"] = "ok"
        except UndefinedAlphaError as exc:
            report["krippendorff_alpha"] = None
            report["alpha_status"] = f"undefined: {exc}"
        inputs.append(args.ratings)
    if args.errors:
        report["error_with_observer"] = error_rows(read_error_rows(args.errors))
        inputs.append(args.errors)
    if args.estimate:
        if args.obs_mean is None:
            raise UsageError("--estimate needs --obs-mean")
        est_payload = json.loads(Path(args.estimate).read_text(encoding="utf-8"))
        est = RespirationEstimate(
            est_payload.get("rate_bpm"),
            est_payload.get("std_bpm"),
            int(est_payload.get("cycle_count", 0)),
            tuple(est_payload.get("transition_times_s", ())),
        )
        rep = relative_error(est, args.obs_mean, args.obs_std)
        report["estimate_error"] = None if rep is None else rep.to_dict()
        inputs.append(args.estimate)
    if not report:
        raise UsageError("eval needs at least one of --pred/--truth, --ratings, --errors, --estimate")
    out = Path(args.out) if args.out else None
    _dump_json(report, out)
    if out is not None:
        _manifest("eval", {"obs_mean": args.obs_mean, "obs_std": args.obs_std}, inputs, [out]).write(
            _manifest_path(out)
        )
    return EXIT_OK


# -- e2e ------------------------------------------------------------------------


def cmd_e2e(args) -> int:
    config = _resolve_config(args)
    out = Path(args.out)
    scenario = generate(config, render_frames=not args.no_frames)
    paths = write_scenario(scenario, out)
    track = read_wav(out / "audio.wav")
    bp, th, cs = _label_specs(args)
    stream = label_audio(track, config.fps, config.frame_count, bp, th, cs)
    write_label_csv(out / "labels.csv", stream)
    estimate = predict_respiration_rate(stream)
    truth_estimate = predict_respiration_rate(scenario.truth_labels)
    report = {
        "configured_rate_bpm": config.rate_bpm,
        "truth_estimate": truth_estimate.to_dict(),
        "estimate": estimate.to_dict(),
        "abs_error_bpm": abs(estimate.rate_bpm - config.rate_bpm) if estimate.ok else None,
        "relative_error": None,
    }
    rel = relative_error(estimate, config.rate_bpm, 0.0)
    if rel is not None:
        report["relative_error"] = rel.to_dict()
    try:
        report["classification"] = weighted_report(stream, scenario.truth_labels)
        report["confusion"] = asdict(confusion(stream, scenario.truth_labels))
    except DegenerateInputError as exc:
        report["classification"] = f"undefined: {exc}"
    _dump_json(report, out / "e2e.json")
    _dump_json(report, None)
    outputs = paths + [out / "labels.csv", out / "e2e.json"]
    _manifest("e2e", config.to_dict(), [args.config] if args.config else [], outputs, config.seed).write(
        out / "manifest.json"
    )
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def _add_config_flags(p):
    p.add_argument("--config", help="scenario.json (flags override its values)")
    p.add_argument("--seed", type=int)
    for name, typ in _CONFIG_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    p.add_argument("--no-frames", action="store_true", help="skip frame rendering")


def _add_label_flags(p):
    p.add_argument("--low-hz", type=float, default=325.0)
    p.add_argument("--high-hz", type=float, default=600.0)
    p.add_argument("--narrow-band", action="store_true", help="use the 400-600 Hz band")
    p.add_argument("--taps", type=int, default=BandpassSpec.taps)
    p.add_argument("--threshold", type=float, default=0.01)
    p.add_argument("--statistic", choices=["peak", "rms"], default="peak")
    p.add_argument("--delta", type=int, default=6)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="breathline", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("label", help="label frames from audio")
    p.add_argument("wav")
    p.add_argument("--fps", type=float, default=29.94)
    p.add_argument("--frame-count", type=int)
    _add_label_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("track", help="estimate respiration rate from a label CSV")
    p.add_argument("labels")
    p.add_argument("--min-gap-s", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("train", help="train the linear detector on PGM frames")
    p.add_argument("--frames-dir", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--learning-rate", type=float, default=0.001)
    p.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="label frames with a detector")
    p.add_argument("--frames-dir")
    p.add_argument("--model")
    p.add_argument("--baseline", action="store_true")
    p.add_argument("--cutoff", type=float, default=0.6)
    p.add_argument("--fraction", type=float, default=0.02)
    p.add_argument("--predictions", help="external predictions JSONL")
    p.add_argument("--fps", type=float, default=29.94)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="classification, reliability and rate-error metrics")
    p.add_argument("--pred")
    p.add_argument("--truth")
    p.add_argument("--ratings")
    p.add_argument("--errors", help="CSV: item,pred_rate,pred_std,obs_mean,obs_std[,denominator]")
    p.add_argument("--estimate", help="tracker JSON report")
    p.add_argument("--obs-mean", type=float)
    p.add_argument("--obs-std", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("e2e", help="simulate -> label -> track -> eval")
    _add_config_flags(p)
    _add_label_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_e2e)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("BREATHLINE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, InvalidSpecError, InvalidConfigError) as exc:
        print(f"breathline {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"breathline {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (BreathlineError, json.JSONDecodeError) as exc:
        print(f"breathline {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

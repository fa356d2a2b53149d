"""
Command-line interface: ``cst-seld <command> [options]``.

Commands: synth, features, train, finetune-vtm, infer, eval, analyze.
Exit status is 0 on success, 2 for configuration errors, 3 for data errors
and 4 for numeric failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Any, Optional, Sequence

from cst_seld.analysis import analyze, write_analysis
from cst_seld.checkpoint import load_checkpoint, save_checkpoint
from cst_seld.config import (
    RunConfig,
    load_run_config,
    run_config_from_mapping,
    write_config_file,
)
from cst_seld.decode import events_to_csv
from cst_seld.errors import SeldError
from cst_seld.evalmetrics import evaluate_files
from cst_seld.features import MultichannelAudio, extract_features, save_feature_cache
from cst_seld.hashing import calculate_file_hash, resolve_path
from cst_seld.infertools import infer_clip, write_multi_accdoa
from cst_seld.model import make_predictor
from cst_seld.objective import read_label_csv
from cst_seld.reporting import format_label_value_pairs
from cst_seld.synth import list_clips, read_scene_csv, synthesize, synthesize_dataset
from cst_seld.training import (
    FEATURE_CACHE_DIR,
    finetune_vtm,
    load_training_set,
    train,
    weak_active_count,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# command-line flag -> configuration key
_RUN_FLAGS = {
    "preset": "preset",
    "multiscale": "multiscale",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "lr_peak": "lr_peak",
    "max_steps": "max_steps",
    "seed": "seed",
    "data_dir": "data_dir",
    "checkpoint_dir": "checkpoint_dir",
    "report_dir": "report_dir",
    "n_jobs": "n_jobs",
    "precision": "precision",
}
_INFER_FLAGS = {
    "io": "io",
    "ctai": "ctai",
    "acs_count": "acs_count",
    "ctai_threshold": "ctai_threshold",
    "seq_len": "seq_len_s",
    "io_hop": "io_hop_s",
}


def _overrides(args: argparse.Namespace, flags: dict[str, str]) -> dict[str, Any]:
    return {key: getattr(args, flag, None) for flag, key in flags.items()}


def _run_config(args: argparse.Namespace, flags: dict[str, str]) -> RunConfig:
    return load_run_config(args.config, _overrides(args, flags))


def with_overrides(config: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Re-resolve ``config`` with the non-None ``overrides`` applied."""
    values = dict(config.to_pairs())
    values.update({k: v for k, v in overrides.items() if v is not None})
    return run_config_from_mapping(values)


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> None:
    out = resolve_path(args.out)
    if args.scene is not None:
        scene = read_scene_csv(args.scene, args.duration, n_tracks=args.tracks)
        synthesize(scene, out, args.name, seed=args.seed)
        return
    names = synthesize_dataset(
        out, args.clips, args.seed, args.duration, args.classes, args.events, args.tracks
    )
    logger.info("Synthesised %d clip(s) into %s", len(names), out)


def cmd_features(args: argparse.Namespace) -> None:
    root = resolve_path(args.data_dir)
    names = list_clips(root)
    cache = root / FEATURE_CACHE_DIR
    cache.mkdir(parents=True, exist_ok=True)
    for name in names:
        features = extract_features(MultichannelAudio.read(root / f"{name}.wav"))
        save_feature_cache(features, cache / name)
    logger.info("Cached features for %d clip(s) in %s", len(names), cache)


def cmd_train(args: argparse.Namespace) -> None:
    config = _run_config(args, _RUN_FLAGS)
    data = load_training_set(config.data_dir, config)
    out = resolve_path(config.checkpoint_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config_file(config, out / "run_config.txt")
    result = train(config, data, checkpoint_dir=out)
    save_checkpoint(out / "final", result.params, config)
    logger.info("Training finished after %d step(s)", result.steps)


def cmd_finetune_vtm(args: argparse.Namespace) -> None:
    params, stored = load_checkpoint(args.checkpoint)
    config = with_overrides(stored, {**_overrides(args, _RUN_FLAGS), "loss": "vtm"})
    data = load_training_set(config.data_dir, config)
    out = resolve_path(args.out)
    before = weak_active_count(params, config, data)
    result = finetune_vtm(config, data, args.checkpoint, out)
    after = weak_active_count(result.params, config, data)
    logger.info("Weak active predictions: %d before, %d after finetuning", before, after)


def _inference_config(args: argparse.Namespace):
    expected = load_run_config(args.config) if args.config else None
    params, stored = load_checkpoint(args.checkpoint, expected=expected)
    config = with_overrides(stored, _overrides(args, _INFER_FLAGS))
    return params, config


def cmd_infer(args: argparse.Namespace) -> None:
    params, config = _inference_config(args)
    predictor = make_predictor(params, config.model)
    out = resolve_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.audio:
        audio_path = resolve_path(path)
        stem = audio_path.name.rsplit(".", 1)[0]
        features = extract_features(MultichannelAudio.read(audio_path)).data
        result = infer_clip(features.astype(params.dtype), predictor, config)
        events_to_csv(result.events, out / f"{stem}.csv")
        write_multi_accdoa(result.output, out / f"{stem}.accdoa.csv")
        header = [
            ("audio", str(audio_path)),
            ("audio_sha256", calculate_file_hash(audio_path)),
        ]
        if result.ctai is not None:
            header.append(("ctai_survivors", result.ctai.n_survivors))
        header.append(("events", len(result.events)))
        pairs = ["[inference]", *header, "", "[run]", *config.to_pairs()]
        text = format_label_value_pairs(pairs)
        (out / f"{stem}.run.txt").write_text(text + "\n")
        logger.info("%s: %d event(s)", stem, len(result.events))


def cmd_eval(args: argparse.Namespace) -> None:
    report = evaluate_files(args.pred, args.ref, args.classes)
    header = [("pred", str(args.pred)), ("ref", str(args.ref))]
    report.save(args.out, header=header)
    logger.info("SELD score %.4f", report.seld_score)


def cmd_analyze(args: argparse.Namespace) -> None:
    params, config = _inference_config(args)
    audio_path = resolve_path(args.audio)
    features = extract_features(MultichannelAudio.read(audio_path)).data
    labels = read_label_csv(args.labels) if args.labels else None
    result = analyze(params, config.model, features, labels)
    header = [
        ("audio", str(audio_path)),
        ("audio_sha256", calculate_file_hash(audio_path)),
    ]
    write_analysis(result, args.out, header + config.to_pairs())


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--preset", choices=["micro", "small", "base", "large", "huge"])
    p.add_argument("--multiscale", action="store_true", default=None)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr-peak", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--data-dir")
    p.add_argument("--checkpoint-dir")
    p.add_argument("--report-dir")
    p.add_argument("--n-jobs", type=int)
    p.add_argument("--precision", choices=["float32", "float64"])


def _add_infer_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="configuration the checkpoint must match")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--io", action="store_true", default=None, help="inference overlapping")
    p.add_argument("--io-hop", type=int, help="IO hop in seconds")
    p.add_argument("--ctai", action="store_true", default=None, help="clustered-track TTA")
    p.add_argument("--acs-count", type=int)
    p.add_argument("--ctai-threshold", type=float)
    p.add_argument("--seq-len", type=int, choices=[5, 10, 20])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cst-seld", description=__doc__.splitlines()[1])
    parser.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"]
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic FoA scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--scene", help="scene CSV; a random dataset is drawn when omitted")
    p.add_argument("--name", default="scene")
    p.add_argument("--clips", type=int, default=8)
    p.add_argument("--duration", type=float, default=5.0)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--events", type=int, default=3)
    p.add_argument("--tracks", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="cache features for every clip of a directory")
    p.add_argument("--data-dir", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a model")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune-vtm", help="finetune a checkpoint with the VTM loss")
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune_vtm)

    p = sub.add_parser("infer", help="detect and localize events in WAV files")
    _add_infer_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("audio", nargs="+")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--classes", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="export channel-attention analysis")
    _add_infer_flags(p)
    p.add_argument("--audio", required=True)
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)
    return parser


def configure_logging(level: str) -> None:
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    package = logging.getLogger("cst_seld")
    package.handlers[:] = [handler]
    package.setLevel(level)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        args.func(args)
    except SeldError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

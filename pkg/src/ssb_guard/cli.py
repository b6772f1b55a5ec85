"""
ssb-guard command line: gen, train, calibrate, detect and eval

Exit codes: 0 on success, 1 on a pipeline error, 2 on a usage error.
"""

import argparse
import csv
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import torch

from ssb_guard import __version__
from ssb_guard.config import PipelineSettings, TrainConfig, get_logging_settings, load_settings
from ssb_guard.dataset import (
    balance_classes,
    file_sha256,
    generate_dataset,
    ingest_iq_csv,
    load_dataset,
    manifest_path,
    save_dataset,
    split_observations,
    write_manifest,
)
from ssb_guard.detector import (
    calibrate,
    detect_batch,
    load_thresholds,
    save_thresholds,
    score_ratios,
    second_stage_training_set,
)
from ssb_guard.dnn import TrainResult, cascade_train, load_model, predict_scores, save_model, train
from ssb_guard.evaluation import (
    Variant,
    confusion,
    read_decisions_csv,
    roc_curve,
    single_threshold_verdicts,
    sjnr_miss_profile,
    slice_detection_rate,
    write_confusion_csv,
    write_decisions_csv,
    write_roc_csv,
    write_sjnr_miss_csv,
)
from ssb_guard.exceptions import FileMissingException, SsbGuardException, ValidationException
from ssb_guard.features import Observation, labels_of, stack_tensors
from ssb_guard.logger import get_logger, log_command, setup_logging

logger = get_logger(__name__)

# SJNR slice where the cascade is expected to beat DNN-1 alone
HIGH_SJNR_SLICE_DB = (15.0, 30.0)


def _probability(raw: str) -> float:
    value = float(raw)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {raw}")
    return value


def _positive_int(raw: str) -> int:
    value = int(raw)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {raw}")
    return value


def companion_path(path: Path, tag: str, suffix: str | None = None) -> Path:
    """<stem>-<tag><suffix> next to path, e.g. model.bin -> model-dnn2.bin"""
    return path.with_name(f"{path.stem}-{tag}{path.suffix if suffix is None else suffix}")


def _settings(args: argparse.Namespace, extra: dict[str, Any] | None = None) -> PipelineSettings:
    overrides: dict[str, Any] = dict(extra or {})
    if args.seed is not None:
        overrides["scenario.master_seed"] = args.seed
        overrides["train.seed"] = args.seed
    return load_settings(args.config, overrides)


def _load_observations(path: Path, args: argparse.Namespace) -> list[Observation]:
    """Dataset file, or a single IQ CSV capture routed through ingestion"""
    if path.suffix.lower() == ".csv":
        settings = _settings(args)
        return [ingest_iq_csv(path, settings.scenario, settings.sync)]
    return load_dataset(path).observations


def write_train_log(path: Path, result: TrainResult, cfg: TrainConfig) -> None:
    """Per-iteration log CSV preceded by a '#' line of hyperparameters"""
    hyper = ", ".join(f"{key}={value}" for key, value in cfg.model_dump().items())
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# {hyper}\n")
        writer = csv.writer(f)
        writer.writerow(["stage", "epoch", "iteration", "train_loss", "validation_accuracy"])
        for entry in result.log:
            accuracy = "" if entry.validation_accuracy is None else entry.validation_accuracy
            writer.writerow(
                [entry.stage, entry.epoch, entry.iteration, entry.train_loss, accuracy]
            )


# ============================================================================
# Commands
# ============================================================================


def cmd_gen(args: argparse.Namespace) -> int:
    extra = {}
    if args.obs_per_class is not None:
        extra["scenario.n_obs_per_class"] = args.obs_per_class
    settings = _settings(args, extra)
    scenario = settings.scenario
    out = Path(args.out)

    with log_command("gen", out=str(out), n_obs_per_class=scenario.n_obs_per_class):
        dataset = generate_dataset(scenario, workers=args.threads)
        count = save_dataset(dataset.observations, out, n_fft=scenario.n_fft)
        manifest = manifest_path(out)
        write_manifest(manifest, scenario, dataset.draws, file_sha256(out))

    print(f"wrote {count} observations to {out} (manifest {manifest.name})")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    extra: dict[str, Any] = {}
    if args.epochs is not None:
        extra["train.max_epochs"] = args.epochs
    settings = _settings(args, extra)
    cfg, layout = settings.train, settings.layout
    cutoff = (
        args.sjnr_cutoff if args.sjnr_cutoff is not None else settings.detector.sjnr_cutoff_db
    )
    out = Path(args.out)

    with log_command("train", data=str(args.data), cascade=args.cascade):
        dataset = load_dataset(args.data)
        # calibration gets calibration_fraction of the validation share
        holdout = cfg.validation_fraction * settings.detector.calibration_fraction
        observations, calibration = split_observations(dataset.observations, holdout, cfg.seed)
        observations = balance_classes(observations, cfg.augment_segments, cfg.seed)
        calibration_path = companion_path(out, "calibration")
        save_dataset(calibration, calibration_path, n_fft=dataset.n_fft)
        print(f"held out {len(calibration)} observations for calibration in {calibration_path}")

        result = train(stack_tensors(observations), labels_of(observations), cfg, layout)
        save_model(result.model, out)
        write_train_log(companion_path(out, "log", ".csv"), result, cfg)
        print(f"DNN-1 validation accuracy {result.final_validation_accuracy}")

        if args.cascade:
            subset = second_stage_training_set(observations, cutoff, cfg.seed)
            second = cascade_train(stack_tensors(subset), labels_of(subset), cfg, layout)
            model2_path = companion_path(out, "dnn2")
            save_model(second.model, model2_path)
            write_train_log(companion_path(model2_path, "log", ".csv"), second, cfg)
            print(f"DNN-2 validation accuracy {second.final_validation_accuracy}")
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    settings = _settings(args)
    delta_fa = args.delta_fa if args.delta_fa is not None else settings.detector.delta_fa

    with log_command("calibrate", data=str(args.data), delta_fa=delta_fa):
        model1, model2 = load_model(args.models[0]), load_model(args.models[1])
        observations = load_dataset(args.data).observations
        tensors, labels = stack_tensors(observations), labels_of(observations)

        thresholds = calibrate(model1, model2, tensors, labels, delta_fa)
        save_thresholds(thresholds, args.out)
        _, summary = detect_batch(tensors, model1, model2, thresholds)

    print(
        f"gamma1={thresholds.gamma1:.9g} gamma2={thresholds.gamma2:.9g} "
        f"gamma_second={thresholds.gamma_second:.9g} delta_fa={thresholds.delta_fa:.9g}"
    )
    print(f"deferral fraction {summary.deferral_fraction:.4f} on {summary.total} observations")
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    with log_command("detect", input=str(args.input)):
        model1, model2 = load_model(args.models[0]), load_model(args.models[1])
        thresholds = load_thresholds(args.thresholds)
        observations = _load_observations(Path(args.input), args)
        decisions, summary = detect_batch(observations, model1, model2, thresholds)
        write_decisions_csv(args.out, decisions, [obs.label for obs in observations])

    print(
        f"{summary.total} decisions, deferral fraction {summary.deferral_fraction:.4f}, "
        f"written to {args.out}"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    settings = _settings(args)
    bins = settings.evaluation.sjnr_bin_edges_db
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with log_command("eval", data=str(args.data), out_dir=str(out_dir)):
        test = load_dataset(args.data).observations
        labels = labels_of(test)

        if args.decisions is not None:
            decisions = read_decisions_csv(args.decisions)
            if len(decisions) != len(test):
                raise ValidationException(
                    "decisions", f"{len(decisions)} decisions for {len(test)} observations"
                )
            verdicts = {Variant.DTDDNN: [int(d.verdict) for d in decisions]}
        else:
            if args.models is None or args.thresholds is None or args.calibration is None:
                raise ValidationException(
                    "eval", "Needs --decisions, or --models, --thresholds and --calibration"
                )
            model1, model2 = load_model(args.models[0]), load_model(args.models[1])
            thresholds = load_thresholds(args.thresholds)
            decisions, _ = detect_batch(test, model1, model2, thresholds)
            ratio1 = score_ratios(predict_scores(model1, stack_tensors(test)))
            verdicts = {
                Variant.SINGLE: single_threshold_verdicts(ratio1).tolist(),
                Variant.DTDDNN: [int(d.verdict) for d in decisions],
            }
            calibration = load_dataset(args.calibration).observations
            points = roc_curve(
                model1, model2, thresholds, calibration, test, settings.evaluation.fa_grid
            )
            write_roc_csv(out_dir / "roc.csv", points)

        matrices = {str(v): confusion(verdicts[v], labels) for v in verdicts}
        write_confusion_csv(out_dir / "confusion.csv", matrices)
        write_sjnr_miss_csv(
            out_dir / "sjnr_miss.csv",
            {str(v): sjnr_miss_profile(verdicts[v], test, bins) for v in verdicts},
        )

    low, high = HIGH_SJNR_SLICE_DB
    for variant, values in verdicts.items():
        matrix = matrices[str(variant)]
        rate = slice_detection_rate(values, test, low, high)
        print(
            f"{variant}: accuracy {matrix.accuracy:.4f}, P_D {matrix.p_d:.4f}, "
            f"P_FA {matrix.p_fa:.4f}, P_D[{low:g}-{high:g} dB] {rate:.4f}"
        )
    return 0


# ============================================================================
# Parser
# ============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssb-guard",
        description="SSB jamming detection with a double-threshold double-DNN cascade",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, help="key=value configuration file")
    parser.add_argument("--seed", type=int, help="overrides scenario and training seeds")
    parser.add_argument("--threads", type=_positive_int, default=1, help="worker count")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR")
    parser.add_argument("--log-format", choices=["json", "text"], default=None)

    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="generate a labeled dataset")
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--obs-per-class", type=_positive_int)
    gen.set_defaults(handler=cmd_gen)

    train_cmd = commands.add_parser("train", help="train DNN-1 (and DNN-2 with --cascade)")
    train_cmd.add_argument("data", type=Path)
    train_cmd.add_argument("--out", type=Path, required=True)
    train_cmd.add_argument("--cascade", action="store_true")
    train_cmd.add_argument("--sjnr-cutoff", type=float)
    train_cmd.add_argument("--epochs", type=_positive_int)
    train_cmd.set_defaults(handler=cmd_train)

    cal = commands.add_parser("calibrate", help="set the cascade thresholds")
    cal.add_argument("data", type=Path)
    cal.add_argument("--models", type=Path, nargs=2, required=True, metavar=("DNN1", "DNN2"))
    cal.add_argument("--delta-fa", type=_probability)
    cal.add_argument("--out", type=Path, required=True)
    cal.set_defaults(handler=cmd_calibrate)

    det = commands.add_parser("detect", help="classify a dataset or an IQ CSV capture")
    det.add_argument("input", type=Path)
    det.add_argument("--models", type=Path, nargs=2, required=True, metavar=("DNN1", "DNN2"))
    det.add_argument("--thresholds", type=Path, required=True)
    det.add_argument("--out", type=Path, required=True)
    det.set_defaults(handler=cmd_detect)

    ev = commands.add_parser("eval", help="confusion, ROC and SJNR miss metrics")
    ev.add_argument("data", type=Path)
    ev.add_argument("--decisions", type=Path)
    ev.add_argument("--models", type=Path, nargs=2, metavar=("DNN1", "DNN2"))
    ev.add_argument("--thresholds", type=Path)
    ev.add_argument("--calibration", type=Path)
    ev.add_argument("--out-dir", type=Path, required=True)
    ev.set_defaults(handler=cmd_eval)

    return parser


def _abort(exc: SsbGuardException) -> int:
    logger.error("Command aborted", extra={"error": exc.to_dict()})
    print(f"error: {exc.message}", file=sys.stderr)
    return 1


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    log_settings = get_logging_settings()
    setup_logging(
        level=args.log_level or log_settings.level,
        log_format=args.log_format or log_settings.format,
        service_name=log_settings.service_name,
    )
    torch.set_num_threads(args.threads)

    try:
        return int(args.handler(args))
    except FileNotFoundError as exc:
        return _abort(FileMissingException(exc.filename or exc.strerror))
    except SsbGuardException as exc:
        return _abort(exc)


if __name__ == "__main__":
    sys.exit(main())

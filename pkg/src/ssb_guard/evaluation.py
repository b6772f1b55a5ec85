"""
Detection metrics: confusion matrices, ROC sweeps, SJNR miss profiles and
their CSV files

Reports keep the convention where the non-jammed class is the positive one:
TP counts H0 observations kept as H0 and TN counts detected jammers.
"""

import csv
import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path

import numpy as np

from ssb_guard.detector import (
    DetectionDecision,
    Stage,
    ThresholdSet,
    decide,
    gamma_second_threshold,
    score_ratios,
)
from ssb_guard.dnn import JammingCNN, predict_scores
from ssb_guard.exceptions import ParseException, ValidationException
from ssb_guard.features import Hypothesis, Observation, labels_of, stack_tensors
from ssb_guard.logger import get_logger
from ssb_guard.validators import validate_same_length

logger = get_logger(__name__)

CONFUSION_LEGEND = (
    "TP = non-jammed kept as H0, TN = jammed detected as H1, "
    "FP = jammed missed, FN = non-jammed flagged"
)

DECISION_FIELDS = ["index", "verdict", "stage", "gamma_ratio_1", "gamma_ratio_2"]


class Variant(StrEnum):
    SINGLE = "single"
    DTDDNN = "dtddnn"


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def n_h0(self) -> int:
        return self.tp + self.fn

    @property
    def n_h1(self) -> int:
        return self.tn + self.fp

    def rates(self) -> dict[str, float]:
        """Counts normalized by their true class, nan for an empty class"""

        def ratio(count: int, total: int) -> float:
            return count / total if total else math.nan

        return {
            "tp_rate": ratio(self.tp, self.n_h0),
            "fn_rate": ratio(self.fn, self.n_h0),
            "fp_rate": ratio(self.fp, self.n_h1),
            "tn_rate": ratio(self.tn, self.n_h1),
        }

    @property
    def p_fa(self) -> float:
        return self.rates()["fn_rate"]

    @property
    def p_d(self) -> float:
        return self.rates()["tn_rate"]

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else math.nan


@dataclass(frozen=True)
class RocPoint:
    p_fa: float
    p_d: float
    variant: Variant


@dataclass(frozen=True)
class SjnrMissProfile:
    bin_edges_db: tuple[float, ...]
    misses: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.misses)


def _as_verdicts(verdicts: Sequence[Hypothesis | DetectionDecision | int]) -> np.ndarray:
    return np.array(
        [int(v.verdict) if isinstance(v, DetectionDecision) else int(v) for v in verdicts],
        dtype=np.int64,
    )


# ============================================================================
# Confusion
# ============================================================================


def confusion(
    verdicts: Sequence[Hypothesis | DetectionDecision | int],
    labels: Sequence[int] | np.ndarray,
) -> ConfusionMatrix:
    """
    2x2 counts of verdicts against ground truth

    Raises:
        ValidationException: On a length mismatch
    """
    validate_same_length(verdicts, labels, "labels")
    v = _as_verdicts(verdicts)
    y = np.asarray(labels, dtype=np.int64)
    return ConfusionMatrix(
        tp=int(np.sum((y == Hypothesis.H0) & (v == Hypothesis.H0))),
        tn=int(np.sum((y == Hypothesis.H1) & (v == Hypothesis.H1))),
        fp=int(np.sum((y == Hypothesis.H1) & (v == Hypothesis.H0))),
        fn=int(np.sum((y == Hypothesis.H0) & (v == Hypothesis.H1))),
    )


def single_threshold_verdicts(ratios: np.ndarray, threshold: float = 1.0) -> np.ndarray:
    """DNN-1 alone: H1 when its ratio reaches threshold (1 is the argmax rule)"""
    return (np.asarray(ratios) >= threshold).astype(np.int64)


# ============================================================================
# ROC
# ============================================================================


def _empirical_point(verdicts: np.ndarray, labels: np.ndarray, variant: Variant) -> RocPoint:
    matrix = confusion(verdicts.tolist(), labels)
    return RocPoint(p_fa=matrix.p_fa, p_d=matrix.p_d, variant=variant)


def monotone_closure(points: list[RocPoint]) -> list[RocPoint]:
    """Sort by P_FA and replace P_D with its running maximum"""
    ordered = sorted(points, key=lambda p: (p.p_fa, p.p_d))
    closed = []
    best = 0.0
    for point in ordered:
        best = max(best, point.p_d)
        closed.append(RocPoint(p_fa=point.p_fa, p_d=best, variant=point.variant))
    return closed


def roc_from_ratios(
    ratio1: np.ndarray,
    ratio2: np.ndarray,
    labels: np.ndarray,
    gamma1: float,
    gamma2: float,
    calibration_h0_ratio1: np.ndarray,
    calibration_h0_ratio2: np.ndarray,
    fa_grid: Sequence[float],
) -> list[RocPoint]:
    """
    Both ROC curves from precomputed test and calibration ratios

    For every target false-alarm rate the DNN-2 threshold (cascade) and the
    single DNN-1 threshold are set from the H0 calibration ratios, then the
    test set is scored. Each curve gets its never-alarm (0, 0) and
    always-alarm (1, 1) endpoints and is closed monotonically.

    Raises:
        ValidationException: If the test labels lack a class
    """
    ratio1 = np.asarray(ratio1, dtype=np.float64)
    ratio2 = np.asarray(ratio2, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    validate_same_length(ratio1, labels, "labels")
    validate_same_length(ratio2, labels, "ratio2")
    if not (np.any(labels == Hypothesis.H0) and np.any(labels == Hypothesis.H1)):
        raise ValidationException("labels", "ROC needs both H0 and H1 test observations")

    cascade = []
    single = []
    for delta_fa in fa_grid:
        thresholds = ThresholdSet(
            gamma1=gamma1,
            gamma2=gamma2,
            gamma_second=gamma_second_threshold(calibration_h0_ratio2, delta_fa),
            delta_fa=delta_fa,
        )
        verdicts = np.array(
            [int(decide(r1, r2, thresholds).verdict) for r1, r2 in zip(ratio1, ratio2)]
        )
        cascade.append(_empirical_point(verdicts, labels, Variant.DTDDNN))

        threshold = gamma_second_threshold(calibration_h0_ratio1, delta_fa)
        single.append(
            _empirical_point(single_threshold_verdicts(ratio1, threshold), labels, Variant.SINGLE)
        )

    curves = []
    for variant, points in ((Variant.SINGLE, single), (Variant.DTDDNN, cascade)):
        endpoints = [RocPoint(0.0, 0.0, variant), RocPoint(1.0, 1.0, variant)]
        curves.extend(monotone_closure(points + endpoints))
    return curves


def roc_curve(
    model1: JammingCNN,
    model2: JammingCNN,
    thresholds_base: ThresholdSet,
    calibration: list[Observation],
    test: list[Observation],
    fa_grid: Sequence[float],
) -> list[RocPoint]:
    """
    Score calibration and test sets with both models and sweep fa_grid

    thresholds_base supplies gamma1 and gamma2; the DNN-2 threshold is
    recalibrated at every grid point.
    """
    test_labels = labels_of(test)
    calibration_h0 = stack_tensors([obs for obs in calibration if obs.label == Hypothesis.H0])
    if len(calibration_h0) == 0:
        raise ValidationException("calibration", "Needs H0 observations")

    test_tensors = stack_tensors(test)
    points = roc_from_ratios(
        score_ratios(predict_scores(model1, test_tensors)),
        score_ratios(predict_scores(model2, test_tensors)),
        test_labels,
        thresholds_base.gamma1,
        thresholds_base.gamma2,
        score_ratios(predict_scores(model1, calibration_h0)),
        score_ratios(predict_scores(model2, calibration_h0)),
        fa_grid,
    )
    logger.info("ROC computed", extra={"n_points": len(points), "n_test": len(test)})
    return points


# ============================================================================
# SJNR profiles
# ============================================================================


def _jammed_sjnr(observations: list[Observation]) -> np.ndarray:
    values = []
    for i, obs in enumerate(observations):
        if obs.label == Hypothesis.H1 and obs.sjnr_db is None:
            raise ValidationException("observations", f"Jammed observation {i} has no sjnr_db")
        values.append(math.nan if obs.sjnr_db is None else obs.sjnr_db)
    return np.array(values, dtype=np.float64)


def sjnr_miss_profile(
    verdicts: Sequence[Hypothesis | DetectionDecision | int],
    observations: list[Observation],
    bin_edges_db: Sequence[float],
) -> SjnrMissProfile:
    """
    Missed jammed observations per SJNR bin

    SJNR values outside the edges are clipped into the first or last bin, so
    the bins add up to the total miss count.
    """
    validate_same_length(verdicts, observations, "observations")
    edges = np.asarray(bin_edges_db, dtype=np.float64)
    v = _as_verdicts(verdicts)
    labels = np.array([-1 if obs.label is None else int(obs.label) for obs in observations])
    sjnr = _jammed_sjnr(observations)

    missed = (labels == Hypothesis.H1) & (v == Hypothesis.H0)
    counts, _ = np.histogram(np.clip(sjnr[missed], edges[0], edges[-1]), bins=edges)
    return SjnrMissProfile(
        bin_edges_db=tuple(float(e) for e in edges),
        misses=tuple(int(c) for c in counts),
    )


def slice_detection_rate(
    verdicts: Sequence[Hypothesis | DetectionDecision | int],
    observations: list[Observation],
    low_db: float,
    high_db: float,
) -> float:
    """Fraction of jammed observations with low_db <= sjnr <= high_db decided H1"""
    validate_same_length(verdicts, observations, "observations")
    v = _as_verdicts(verdicts)
    sjnr = _jammed_sjnr(observations)
    labels = np.array([-1 if obs.label is None else int(obs.label) for obs in observations])

    in_slice = (labels == Hypothesis.H1) & (sjnr >= low_db) & (sjnr <= high_db)
    if not in_slice.any():
        return math.nan
    return float(np.mean(v[in_slice] == Hypothesis.H1))


# ============================================================================
# CSV files
# ============================================================================


def _number(value: float) -> str:
    return format(value, ".17g")


def write_roc_csv(path: str | Path, points: list[RocPoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["p_fa", "p_d", "variant"])
        for point in points:
            writer.writerow([_number(point.p_fa), _number(point.p_d), str(point.variant)])


def write_confusion_csv(path: str | Path, matrices: dict[str, ConfusionMatrix]) -> None:
    """One row per variant, preceded by a legend comment line"""
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# {CONFUSION_LEGEND}\n")
        writer = csv.writer(f)
        rate_names = ["tp_rate", "fn_rate", "fp_rate", "tn_rate"]
        writer.writerow(["variant", "tp", "tn", "fp", "fn", *rate_names])
        for variant, matrix in matrices.items():
            rates = matrix.rates()
            writer.writerow(
                [variant, matrix.tp, matrix.tn, matrix.fp, matrix.fn]
                + [_number(rates[name]) for name in rate_names]
            )


def write_sjnr_miss_csv(path: str | Path, profiles: dict[str, SjnrMissProfile]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "bin_low_db", "bin_high_db", "misses"])
        for variant, profile in profiles.items():
            edges = profile.bin_edges_db
            for low, high, count in zip(edges, edges[1:], profile.misses):
                writer.writerow([variant, _number(low), _number(high), count])


def write_decisions_csv(
    path: str | Path,
    decisions: list[DetectionDecision],
    labels: Sequence[Hypothesis | None] | None = None,
) -> None:
    """
    One row per decision; a `correct` column is added when every label is known
    """
    with_labels = labels is not None and all(label is not None for label in labels)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(DECISION_FIELDS + (["correct"] if with_labels else []))
        for index, decision in enumerate(decisions):
            ratio2 = "" if decision.gamma_ratio_2 is None else _number(decision.gamma_ratio_2)
            row = [
                index,
                decision.verdict.name,
                str(decision.stage),
                _number(decision.gamma_ratio_1),
                ratio2,
            ]
            if with_labels and labels is not None:
                row.append(int(decision.verdict == labels[index]))
            writer.writerow(row)


def read_decisions_csv(path: str | Path) -> list[DetectionDecision]:
    """
    Raises:
        ParseException: Missing columns or malformed values
    """
    path = Path(path)
    decisions = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = [name for name in DECISION_FIELDS if name not in (reader.fieldnames or [])]
        if missing:
            raise ParseException(path, 1, f"missing columns {missing}")
        for number, row in enumerate(reader, start=2):
            try:
                ratio2 = row["gamma_ratio_2"]
                decisions.append(
                    DetectionDecision(
                        verdict=Hypothesis[row["verdict"]],
                        stage=Stage(row["stage"]),
                        gamma_ratio_1=float(row["gamma_ratio_1"]),
                        gamma_ratio_2=float(ratio2) if ratio2 else None,
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ParseException(path, number, f"bad decision row {row}") from exc
    return decisions

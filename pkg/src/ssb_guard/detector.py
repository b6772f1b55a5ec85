"""
Double-threshold double-DNN detection

DNN-1 decides alone when its score ratio falls outside (gamma1, gamma2);
anything in between is deferred to the cascade-trained DNN-2, whose ratio is
compared with a threshold set for a target false-alarm probability.
"""

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ssb_guard.constants import PROBABILITY_FLOOR
from ssb_guard.dnn import JammingCNN, ScorePair, predict_scores, score_pair
from ssb_guard.exceptions import ParseException, ValidationException
from ssb_guard.features import Hypothesis, Observation, stack_tensors
from ssb_guard.logger import get_logger
from ssb_guard.validators import validate_probability, validate_same_length

logger = get_logger(__name__)

THRESHOLD_KEYS = ("gamma1", "gamma2", "gamma_second", "delta_fa")


class Stage(StrEnum):
    DNN1 = "DNN1"
    DNN2 = "DNN2"


class ThresholdSet(BaseModel):
    """Calibrated thresholds of the cascade"""

    model_config = ConfigDict(frozen=True)

    gamma1: float
    gamma2: float
    gamma_second: float
    delta_fa: float = Field(gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _ordered(self) -> "ThresholdSet":
        if self.gamma1 > self.gamma2:
            raise ValueError(f"gamma1={self.gamma1} exceeds gamma2={self.gamma2}")
        return self


@dataclass(frozen=True)
class DetectionDecision:
    verdict: Hypothesis
    stage: Stage
    gamma_ratio_1: float
    gamma_ratio_2: float | None = None


@dataclass
class DetectionSummary:
    """Decision counts per (stage, verdict)"""

    counts: Counter[tuple[Stage, Hypothesis]] = field(default_factory=Counter)
    total: int = 0

    @property
    def deferred(self) -> int:
        return sum(n for (stage, _), n in self.counts.items() if stage == Stage.DNN2)

    @property
    def deferral_fraction(self) -> float:
        return self.deferred / self.total if self.total else 0.0


# ============================================================================
# Ratios and thresholds
# ============================================================================


def score_ratio(scores: ScorePair) -> float:
    """zeta_h1 / zeta_h0 with zeta_h0 floored at 1e-12"""
    return scores.zeta_h1 / max(scores.zeta_h0, PROBABILITY_FLOOR)


def score_ratios(scores: np.ndarray) -> np.ndarray:
    """Vectorized score_ratio over an (N, 2) score array"""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1, 2)
    return scores[:, 1] / np.maximum(scores[:, 0], PROBABILITY_FLOOR)


def double_thresholds(ratios: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """
    (gamma1, gamma2) from calibration ratios

    In descending ratio order, gamma2 is the last ratio of the longest prefix
    holding only H1 observations and gamma1 the first ratio of the longest
    suffix holding only H0 observations. An empty prefix gives +inf, an empty
    suffix -inf. Decisions strictly outside (gamma1, gamma2) are then correct
    on every calibration observation.

    Raises:
        ValidationException: If the calibration set lacks either class
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    labels = np.asarray(labels)
    validate_same_length(ratios, labels, "labels")
    if not (np.any(labels == Hypothesis.H0) and np.any(labels == Hypothesis.H1)):
        raise ValidationException("labels", "Calibration needs both H0 and H1 observations")

    order = np.argsort(-ratios, kind="stable")
    ranked, ranked_labels = ratios[order], labels[order]

    is_h1 = ranked_labels == Hypothesis.H1
    prefix = int(np.argmin(is_h1)) if not is_h1.all() else is_h1.size
    suffix = int(np.argmin(~is_h1[::-1])) if is_h1.any() else is_h1.size

    gamma2 = float(ranked[prefix - 1]) if prefix else math.inf
    gamma1 = float(ranked[ranked.size - suffix]) if suffix else -math.inf
    if gamma1 > gamma2:
        gamma1 = gamma2
    return gamma1, gamma2


def gamma_second_threshold(ratios: np.ndarray, delta_fa: float) -> float:
    """
    Ratio at 1-based rank floor(delta_fa * N) of the descending H0 ratios

    Rank 0 gives +inf, so DNN-2 never raises an alarm. When H0 ratios tie
    across the rank the threshold moves just above them, so at most rank H0
    ratios reach it.

    Raises:
        ValidationException: Empty ratios or delta_fa outside (0, 1)
    """
    validate_probability(delta_fa, "delta_fa")
    ratios = np.sort(np.asarray(ratios, dtype=np.float64))[::-1]
    if ratios.size == 0:
        raise ValidationException("h0_calibration", "Must contain at least one observation")

    rank = int(math.floor(delta_fa * ratios.size + 1e-9))
    if rank == 0:
        logger.warning(
            "False-alarm target below one observation, DNN-2 threshold disabled",
            extra={"delta_fa": delta_fa, "n_h0": int(ratios.size)},
        )
        return math.inf
    gamma = float(ratios[rank - 1])
    if rank < ratios.size and ratios[rank] == gamma:
        # ties straddle the rank; alarms at >= gamma would exceed it
        gamma = float(np.nextafter(gamma, math.inf))
    return gamma


def calibrate_double_threshold(
    model1: JammingCNN,
    tensors: np.ndarray,
    labels: np.ndarray,
) -> tuple[float, float]:
    """Score the calibration set with DNN-1 and derive (gamma1, gamma2)"""
    gamma1, gamma2 = double_thresholds(score_ratios(predict_scores(model1, tensors)), labels)
    logger.info("Calibrated DNN-1 thresholds", extra={"gamma1": gamma1, "gamma2": gamma2})
    return gamma1, gamma2


def calibrate_gamma2(model2: JammingCNN, h0_tensors: np.ndarray, delta_fa: float) -> float:
    """Score H0 calibration observations with DNN-2 and set the false-alarm threshold"""
    validate_probability(delta_fa, "delta_fa")
    if len(h0_tensors) == 0:
        raise ValidationException("h0_calibration", "Must contain at least one observation")
    if len(h0_tensors) < 1.0 / delta_fa:
        logger.warning(
            "Fewer H0 calibration observations than 1 / delta_fa",
            extra={"n_h0": len(h0_tensors), "delta_fa": delta_fa},
        )
    gamma = gamma_second_threshold(score_ratios(predict_scores(model2, h0_tensors)), delta_fa)
    logger.info("Calibrated DNN-2 threshold", extra={"gamma_second": gamma, "delta_fa": delta_fa})
    return gamma


def calibrate(
    model1: JammingCNN,
    model2: JammingCNN,
    tensors: np.ndarray,
    labels: np.ndarray,
    delta_fa: float,
) -> ThresholdSet:
    """Both calibrations on one labeled calibration set"""
    labels = np.asarray(labels)
    gamma1, gamma2 = calibrate_double_threshold(model1, tensors, labels)
    h0 = np.asarray(tensors)[labels == Hypothesis.H0]
    gamma_second = calibrate_gamma2(model2, h0, delta_fa)
    return ThresholdSet(gamma1=gamma1, gamma2=gamma2, gamma_second=gamma_second, delta_fa=delta_fa)


def second_stage_training_set(
    observations: list[Observation],
    sjnr_cutoff_db: float,
    seed: int,
) -> list[Observation]:
    """
    DNN-2 training subset: jammed observations at or above the SJNR cutoff
    plus an equally sized random sample of H0 observations
    """
    h1 = [
        obs
        for obs in observations
        if obs.label == Hypothesis.H1 and obs.sjnr_db is not None and obs.sjnr_db >= sjnr_cutoff_db
    ]
    h0 = [obs for obs in observations if obs.label == Hypothesis.H0]
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(h0), size=min(len(h1), len(h0)), replace=False) if h0 else []
    subset = h1 + [h0[i] for i in sorted(picked)]

    logger.info(
        "Selected DNN-2 training set",
        extra={"n_h1": len(h1), "n_h0": len(subset) - len(h1), "sjnr_cutoff_db": sjnr_cutoff_db},
    )
    return subset


# ============================================================================
# Decisions
# ============================================================================


def decide(ratio1: float, ratio2: float | None, thresholds: ThresholdSet) -> DetectionDecision:
    """
    The cascade rule on precomputed ratios

    ratio2 is only consulted when ratio1 lies in [gamma1, gamma2].
    """
    if ratio1 < thresholds.gamma1:
        return DetectionDecision(Hypothesis.H0, Stage.DNN1, ratio1)
    if ratio1 > thresholds.gamma2:
        return DetectionDecision(Hypothesis.H1, Stage.DNN1, ratio1)
    if ratio2 is None:
        raise ValidationException("ratio2", "Deferred decision needs the DNN-2 ratio")
    verdict = Hypothesis.H1 if ratio2 >= thresholds.gamma_second else Hypothesis.H0
    return DetectionDecision(verdict, Stage.DNN2, ratio1, ratio2)


def _ratios(model: JammingCNN, tensors: np.ndarray) -> np.ndarray:
    return score_ratios(predict_scores(model, tensors))


def detect(
    obs: Observation,
    model1: JammingCNN,
    model2: JammingCNN,
    thresholds: ThresholdSet,
) -> DetectionDecision:
    """Online decision for one observation"""
    tensor = obs.tensor[np.newaxis]
    ratio1 = score_ratio(score_pair(predict_scores(model1, tensor)[0]))
    ratio2 = None
    if thresholds.gamma1 <= ratio1 <= thresholds.gamma2:
        ratio2 = score_ratio(score_pair(predict_scores(model2, tensor)[0]))
    return decide(ratio1, ratio2, thresholds)


def detect_batch(
    observations: list[Observation] | np.ndarray,
    model1: JammingCNN,
    model2: JammingCNN,
    thresholds: ThresholdSet,
) -> tuple[list[DetectionDecision], DetectionSummary]:
    """
    Order-preserving detect over observations (or their stacked tensors), with
    DNN-2 run only on deferrals

    Returns:
        Decisions and their (stage, verdict) counts
    """
    if isinstance(observations, list):
        tensors = stack_tensors(observations)
    else:
        tensors = np.asarray(observations)
    summary = DetectionSummary()
    if len(tensors) == 0:
        return [], summary

    ratios1 = _ratios(model1, tensors)
    deferred = (ratios1 >= thresholds.gamma1) & (ratios1 <= thresholds.gamma2)
    ratios2 = np.full(ratios1.shape, np.nan)
    if deferred.any():
        ratios2[deferred] = _ratios(model2, tensors[deferred])

    decisions = []
    for i, ratio1 in enumerate(ratios1):
        ratio2 = float(ratios2[i]) if deferred[i] else None
        decision = decide(float(ratio1), ratio2, thresholds)
        decisions.append(decision)
        summary.counts[(decision.stage, decision.verdict)] += 1
    summary.total = len(decisions)

    logger.info(
        "Detection finished",
        extra={"n_obs": summary.total, "deferral_fraction": summary.deferral_fraction},
    )
    return decisions, summary


# ============================================================================
# Threshold file
# ============================================================================


def save_thresholds(thresholds: ThresholdSet, path: str | Path) -> None:
    """key=value lines with 17 significant digits, sentinels as inf/-inf"""
    values = thresholds.model_dump()
    lines = [f"{key}={format(float(values[key]), '.17g')}" for key in THRESHOLD_KEYS]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_thresholds(path: str | Path) -> ThresholdSet:
    """
    Parse a threshold file

    Raises:
        ParseException: Malformed line, unknown or missing key, bad value
    """
    path = Path(path)
    values: dict[str, float] = {}
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep or key not in THRESHOLD_KEYS:
            raise ParseException(path, number, f"expected one of {THRESHOLD_KEYS} as key=value")
        try:
            values[key] = float(raw.strip())
        except ValueError as exc:
            raise ParseException(path, number, f"not a number: {raw.strip()!r}") from exc

    missing = [key for key in THRESHOLD_KEYS if key not in values]
    if missing:
        raise ParseException(path, 0, f"missing keys {missing}")
    try:
        return ThresholdSet(**values)
    except ValueError as exc:
        raise ParseException(path, 0, str(exc)) from exc

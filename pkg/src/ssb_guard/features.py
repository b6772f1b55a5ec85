"""
Observation tensors: PSS correlations, two-stage Haar DWT and null-RE energy
"""

from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Any

import numpy as np
import pywt
from scipy import signal as sp_signal

from ssb_guard.constants import EPSILON_FLOOR, FEATURE_ROWS, N_ID2_VALUES, SSB_SUBCARRIERS
from ssb_guard.exceptions import ValidationException
from ssb_guard.validators import (
    validate_even_length,
    validate_length,
    validate_n_id2,
    validate_positive_integer,
)
from ssb_guard.waveform import ResourceGrid, null_subcarriers, pss_waveform


class Hypothesis(IntEnum):
    """H0: no jammer, H1: jammer present"""

    H0 = 0
    H1 = 1


@dataclass(frozen=True, eq=False)
class CorrelationSignal:
    n_id2: int
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class Observation:
    """
    One 5 x (n_fft/2) feature tensor

    Rows 0-2 are the compressed PSS correlations for n_id2 = 0, 1, 2 and rows
    3-4 repeat the log null-RE energy. label is None for unlabeled captures.
    """

    tensor: np.ndarray
    label: Hypothesis | None = None
    sjnr_db: float | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def epsilon(self) -> float:
        return float(self.tensor[3, 0])


def pss_correlate(y_pss: np.ndarray, n_id2: int, n_fft: int | None = None) -> CorrelationSignal:
    """
    |cross-correlation| of one received symbol with the PSS reference

    The 2N-1 full-correlation lags get one trailing zero, giving exactly
    2 * n_fft values; a matched, aligned PSS peaks at index n_fft - 1.

    Raises:
        ValidationException: If y_pss is not n_fft long or not a power-of-two length
    """
    validate_n_id2(n_id2)
    y_pss = np.asarray(y_pss)
    if n_fft is not None:
        validate_length(y_pss, n_fft, "y_pss")
    reference = pss_waveform(n_id2, int(y_pss.shape[0]))

    corr = np.abs(sp_signal.correlate(y_pss, reference, mode="full", method="fft"))
    return CorrelationSignal(n_id2=n_id2, values=np.append(corr, 0.0))


def haar_dwt_stage(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    One orthonormal Haar stage

    approx[n] = (x[2n] + x[2n+1]) / sqrt(2), detail[n] = (x[2n] - x[2n+1]) / sqrt(2)

    Raises:
        ValidationException: Odd or shorter than 2
    """
    x = np.asarray(x, dtype=np.float64)
    validate_even_length(x, "x")
    approx, detail = pywt.dwt(x, "haar", mode="periodization")
    return approx, detail


def two_stage_dwt(corr: CorrelationSignal, n_fft: int | None = None) -> np.ndarray:
    """
    Approximation-of-approximation of a correlation, a quarter of its length

    Raises:
        ValidationException: If the length is not 2 * n_fft (or not divisible by 4)
    """
    values = corr.values
    if n_fft is not None:
        validate_length(values, 2 * n_fft, "corr")
    if values.size % 4:
        raise ValidationException("corr", f"Length {values.size} is not divisible by 4")
    approx, _ = haar_dwt_stage(values)
    approx, _ = haar_dwt_stage(approx)
    return approx


def epnre(grid: ResourceGrid) -> tuple[float, float]:
    """
    Mean |Y|^2 over the 113 null REs of symbol 0 and its log2

    E below 2^-60 is clamped before the log so epsilon >= -60.

    Returns:
        (E, epsilon)
    """
    validate_length(grid.cells[0], SSB_SUBCARRIERS, "grid")
    energy = float(np.mean(np.abs(grid.cells[0, null_subcarriers()]) ** 2))
    epsilon = float(np.log2(max(energy, 2.0**EPSILON_FLOOR)))
    return energy, epsilon


def assemble_observation(
    corrs: list[np.ndarray],
    epsilon: float,
    label: Hypothesis | None,
    sjnr_db: float | None = None,
    meta: dict[str, Any] | None = None,
) -> Observation:
    """Stack three compressed correlations over two epsilon rows"""
    validate_length(corrs, len(N_ID2_VALUES), "corrs")
    width = len(corrs[0])
    for row in corrs:
        validate_length(row, width, "corrs")

    tensor = np.empty((FEATURE_ROWS, width), dtype=np.float64)
    for i, row in enumerate(corrs):
        tensor[i] = row
    tensor[3:] = epsilon
    return Observation(tensor=tensor, label=label, sjnr_db=sjnr_db, meta=dict(meta or {}))


def circular_shift_augment(obs: Observation, n_segments: int, seed: int) -> Observation:
    """
    Permute equal-length segments of the correlation rows

    The same seeded permutation applies to rows 0-2; the epsilon rows, label
    and metadata are kept.

    Raises:
        ValidationException: If n_segments does not divide the row length
    """
    validate_positive_integer(n_segments, "n_segments")
    width = obs.tensor.shape[1]
    if width % n_segments:
        raise ValidationException("n_segments", f"{n_segments} does not divide {width}")

    order = np.random.default_rng(seed).permutation(n_segments)
    tensor = obs.tensor.copy()
    rows = tensor[:3].reshape(3, n_segments, width // n_segments)
    tensor[:3] = rows[:, order, :].reshape(3, width)
    return replace(obs, tensor=tensor, meta={**obs.meta, "augmented": True})


def observe(
    y_pss: np.ndarray,
    grid: ResourceGrid,
    label: Hypothesis | None,
    sjnr_db: float | None = None,
    meta: dict[str, Any] | None = None,
) -> Observation:
    """
    Full per-capture feature pipeline

    Args:
        y_pss: Received PSS symbol (n_fft samples, CP removed)
        grid: Received 240x4 SSB grid
        label: Ground truth, None for captures
        sjnr_db: Scenario SJNR for jammed observations
        meta: Scenario descriptors kept with the observation
    """
    n_fft = int(np.asarray(y_pss).shape[0])
    rows = [two_stage_dwt(pss_correlate(y_pss, n_id2, n_fft), n_fft) for n_id2 in N_ID2_VALUES]
    _, epsilon = epnre(grid)
    return assemble_observation(rows, epsilon, label, sjnr_db=sjnr_db, meta=meta)


def stack_tensors(observations: list[Observation]) -> np.ndarray:
    """(N, 5, n_fft/2) float32 array"""
    if not observations:
        return np.zeros((0, FEATURE_ROWS, 0), dtype=np.float32)
    return np.stack([obs.tensor for obs in observations]).astype(np.float32)


def labels_of(observations: list[Observation]) -> np.ndarray:
    """Integer labels; unlabeled observations are rejected"""
    labels = [obs.label for obs in observations]
    if any(label is None for label in labels):
        raise ValidationException("observations", "All observations must be labeled")
    return np.array([int(label) for label in labels if label is not None], dtype=np.int64)

"""
Carrier-frequency-offset and CP-based timing recovery for IQ captures
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal as sp_signal

from ssb_guard.constants import (
    CFO_REFINE_FACTOR,
    DEFAULT_CFO_GRID_POINTS,
    N_ID2_VALUES,
    SSB_SUBCARRIERS,
    SSB_SYMBOLS,
    TIMING_TIE_RTOL,
)
from ssb_guard.exceptions import ValidationException
from ssb_guard.logger import get_logger
from ssb_guard.validators import validate_positive_integer, validate_positive_real
from ssb_guard.waveform import ResourceGrid, TimeSignal, ofdm_demodulate, pss_waveform

logger = get_logger(__name__)


@dataclass(frozen=True)
class CfoEstimate:
    """Best CFO candidate and where its PSS correlation peaks"""

    frequency_hz: float
    n_id2: int
    peak_index: int
    peak_value: float


def inject_cfo(signal: TimeSignal, f_off: float) -> TimeSignal:
    """Multiply by exp(j 2 pi f_off n / fs), n counted from the first sample"""
    n = np.arange(len(signal))
    rotation = np.exp(2j * np.pi * f_off * n / signal.sample_rate_hz)
    return signal.with_samples(signal.samples * rotation)


def derotate(signal: TimeSignal, f_off: float) -> TimeSignal:
    return inject_cfo(signal, -f_off)


def default_cfo_grid(scs_hz: float, n_points: int = DEFAULT_CFO_GRID_POINTS) -> np.ndarray:
    """n_points candidates evenly spanning +-scs_hz / 2"""
    validate_positive_real(scs_hz, "scs_hz")
    validate_positive_integer(n_points, "n_points")
    return np.linspace(-scs_hz / 2.0, scs_hz / 2.0, n_points)


def _correlation_peak(samples: np.ndarray, reference: np.ndarray) -> tuple[int, float]:
    corr = np.abs(sp_signal.correlate(samples, reference, mode="valid", method="fft"))
    index = int(np.argmax(corr))
    return index, float(corr[index])


def _scan(signal: TimeSignal, reference: np.ndarray, grid: np.ndarray) -> tuple[float, int, float]:
    # candidates visited by increasing |f|; argmax keeps the first maximum
    order = np.argsort(np.abs(grid), kind="stable")
    best = (0.0, 0, -1.0)
    for f in grid[order]:
        index, value = _correlation_peak(derotate(signal, float(f)).samples, reference)
        if value > best[2]:
            best = (float(f), index, value)
    return best


def estimate_cfo(signal: TimeSignal, reference: np.ndarray, grid: np.ndarray) -> float:
    """
    Frequency candidate maximizing the PSS cross-correlation peak

    Args:
        signal: Capture
        reference: Time-domain PSS reference (see waveform.pss_waveform)
        grid: Candidate offsets in Hz

    Returns:
        The winning candidate; ties go to the smallest |f|

    Raises:
        ValidationException: Empty grid or reference longer than the capture
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValidationException("grid", "Must contain at least one candidate")
    if len(reference) > len(signal):
        raise ValidationException(
            "reference", f"Length {len(reference)} exceeds capture length {len(signal)}"
        )
    return _scan(signal, np.asarray(reference), grid)[0]


def search_cfo(
    signal: TimeSignal,
    scs_hz: float,
    n_points: int = DEFAULT_CFO_GRID_POINTS,
    refine_factor: int = CFO_REFINE_FACTOR,
) -> CfoEstimate:
    """
    Coarse-then-fine CFO search over all three sector references

    The coarse pass scans +-scs/2 with n_points candidates for each n_id2; the
    winner is refined once with a grid of step coarse_step / refine_factor
    spanning one coarse step either side.
    """
    n_fft = signal.n_fft
    if n_fft > len(signal):
        raise ValidationException("signal", f"Capture shorter than one {n_fft}-point symbol")

    coarse = default_cfo_grid(scs_hz, n_points)
    candidates = []
    for n_id2 in N_ID2_VALUES:
        f, index, value = _scan(signal, pss_waveform(n_id2, n_fft), coarse)
        candidates.append(
            CfoEstimate(frequency_hz=f, n_id2=n_id2, peak_index=index, peak_value=value)
        )
    best = max(candidates, key=lambda c: c.peak_value)

    if coarse.size > 1 and refine_factor > 1:
        step = float(coarse[1] - coarse[0])
        fine = np.linspace(
            best.frequency_hz - step, best.frequency_hz + step, 2 * refine_factor + 1
        )
        f, index, value = _scan(signal, pss_waveform(best.n_id2, n_fft), fine)
        if value > best.peak_value:
            best = CfoEstimate(frequency_hz=f, n_id2=best.n_id2, peak_index=index, peak_value=value)

    logger.debug(
        "CFO search finished",
        extra={"cfo_hz": best.frequency_hz, "n_id2": best.n_id2, "peak_index": best.peak_index},
    )
    return best


# ============================================================================
# Timing
# ============================================================================


def _window_sums(values: np.ndarray, window_len: int) -> np.ndarray:
    return sliding_window_view(values, window_len).sum(axis=-1)


def _correlation_terms(
    signal: TimeSignal, window_len: int, lag: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    validate_positive_integer(window_len, "window_len")
    validate_positive_integer(lag, "lag")
    y = signal.samples
    if len(y) < lag + window_len + 1:
        raise ValidationException(
            "window_len",
            f"Window {window_len} at lag {lag} needs {lag + window_len + 1} samples, "
            f"have {len(y)}",
        )

    lead = y[: len(y) - lag]
    lagged = y[lag:]
    p = _window_sums(np.conj(lead) * lagged, window_len)
    r = _window_sums(np.real(np.conj(lagged) * lagged), window_len)
    e = _window_sums(np.real(np.conj(lead) * lead), window_len)
    return p, r, e


def schmidl_cox_metric(signal: TimeSignal, window_len: int, lag: int) -> np.ndarray:
    """
    M(t) = |P(t)|^2 / R(t)^2

    P(t) = sum_m y*(t+m) y(t+m+lag) and R(t) = sum_m |y(t+m+lag)|^2 over
    m = 0..window_len-1. Positions with R(t) = 0 give 0.

    Raises:
        ValidationException: If the window and lag do not fit in the signal
    """
    p, r, _ = _correlation_terms(signal, window_len, lag)
    metric = np.zeros(r.shape)
    live = r > 0.0
    metric[live] = np.abs(p[live]) ** 2 / r[live] ** 2
    return metric


def balanced_metric(signal: TimeSignal, window_len: int, lag: int) -> np.ndarray:
    """
    |P(t)|^2 / (R(t) E(t)) with E(t) the energy of the leading window

    Equals M(t) where both windows carry the same energy and is bounded by 1,
    so zero-padded edges cannot outrank a true CP match.
    """
    p, r, e = _correlation_terms(signal, window_len, lag)
    metric = np.zeros(r.shape)
    denom = r * e
    live = denom > 0.0
    metric[live] = np.abs(p[live]) ** 2 / denom[live]
    return metric


def estimate_timing(
    signal: TimeSignal,
    n_fft: int,
    cp_length: int,
    search: tuple[int, int] | None = None,
    balanced: bool = False,
) -> int:
    """
    Start of the CP-OFDM symbol whose cyclic prefix best repeats n_fft later

    Every CP start of a burst scores close to the maximum, so the earliest
    position within TIMING_TIE_RTOL of the maximum is returned.

    Args:
        signal: Capture
        n_fft: Repetition lag
        cp_length: Window length
        search: Optional [start, stop) range of candidate offsets
        balanced: Rank by balanced_metric instead of schmidl_cox_metric

    Returns:
        Sample offset of the first CP start

    Raises:
        ValidationException: If the capture is shorter than one symbol
    """
    if len(signal) < n_fft + cp_length:
        raise ValidationException(
            "signal", f"Need at least {n_fft + cp_length} samples, have {len(signal)}"
        )
    score = balanced_metric if balanced else schmidl_cox_metric
    metric = score(signal, cp_length, n_fft)

    start, stop = (0, metric.size) if search is None else search
    start, stop = max(start, 0), min(stop, metric.size)
    if start >= stop:
        raise ValidationException("search", f"Empty search range {search}")
    window = metric[start:stop]
    near_peak = window >= window.max() * (1.0 - TIMING_TIE_RTOL)
    return start + int(np.flatnonzero(near_peak)[0])


def extract_ssb(
    signal: TimeSignal,
    t_off: int,
    f_off: float,
    n_fft: int,
    cp_length: int,
) -> ResourceGrid:
    """
    Derotate by f_off, then demodulate the four SSB symbols starting at t_off

    Raises:
        ValidationException: If the four symbols overrun the capture
    """
    needed = t_off + SSB_SYMBOLS * (n_fft + cp_length)
    if t_off < 0 or needed > len(signal):
        raise ValidationException(
            "t_off", f"SSB at {t_off} needs {needed} samples, have {len(signal)}"
        )
    aligned = derotate(signal, f_off) if f_off else signal
    framed = TimeSignal(
        samples=aligned.samples,
        sample_rate_hz=signal.sample_rate_hz,
        n_fft=n_fft,
        cp_lengths=(cp_length,) * SSB_SYMBOLS,
    )
    return ofdm_demodulate(framed, SSB_SUBCARRIERS, SSB_SYMBOLS, start=t_off)

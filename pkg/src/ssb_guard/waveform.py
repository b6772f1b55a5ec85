"""
PSS m-sequences, SSB resource grids and CP-OFDM modulation

Subcarriers are mapped band-centered: local index k of an n-subcarrier grid
lands in FFT bin (k - n // 2) mod n_fft. A 240-wide SSB placed at the middle
of a wider band therefore occupies the same FFT bins as an SSB-only grid.
"""

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from ssb_guard.constants import (
    M_SEQUENCE_INIT,
    MODULATION_ORDERS,
    NORMAL_CP_RATIO,
    PBCH_SYMBOL2_RANGES,
    PSS_FIRST_SUBCARRIER,
    PSS_LAST_SUBCARRIER,
    PSS_LENGTH,
    PSS_SECTOR_SHIFT,
    SSB_SUBCARRIERS,
    SSB_SYMBOLS,
    SSS_SYMBOL,
)
from ssb_guard.exceptions import ValidationException
from ssb_guard.validators import (
    validate_n_id2,
    validate_non_negative_integer,
    validate_positive_integer,
    validate_positive_real,
    validate_power_of_two,
)


@dataclass(frozen=True, eq=False)
class PssSequence:
    """One of the three length-127 BPSK sector sequences"""

    n_id2: int
    symbols: np.ndarray


@dataclass(frozen=True, eq=False)
class ResourceGrid:
    """Frequency-domain cells indexed [symbol l, subcarrier k]"""

    cells: np.ndarray

    @property
    def n_symbols(self) -> int:
        return int(self.cells.shape[0])

    @property
    def n_subcarriers(self) -> int:
        return int(self.cells.shape[1])


@dataclass(frozen=True, eq=False)
class TimeSignal:
    """Complex baseband samples and the OFDM numerology that produced them"""

    samples: np.ndarray
    sample_rate_hz: float
    n_fft: int
    cp_lengths: tuple[int, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def symbol_length(self) -> int:
        """Samples per CP-OFDM symbol, taken from the first CP"""
        cp = self.cp_lengths[0] if self.cp_lengths else 0
        return self.n_fft + cp

    def with_samples(self, samples: np.ndarray) -> "TimeSignal":
        return replace(self, samples=samples)


# ============================================================================
# Sequences
# ============================================================================


def m_sequence(length: int) -> np.ndarray:
    """
    Degree-7 m-sequence s(i+7) = (s(i+4) + s(i)) mod 2

    Args:
        length: Number of terms to produce, at least the 7 initial ones

    Returns:
        int8 array s(0..length-1)

    Raises:
        ValidationException: If length < 7
    """
    if isinstance(length, bool) or not isinstance(length, int) or length < len(M_SEQUENCE_INIT):
        raise ValidationException("length", f"Must be an integer >= 7, got: {length}")

    s = np.zeros(length, dtype=np.int8)
    s[: len(M_SEQUENCE_INIT)] = M_SEQUENCE_INIT
    for i in range(length - 7):
        s[i + 7] = (s[i + 4] + s[i]) % 2
    return s


@lru_cache(maxsize=1)
def _base_sequence() -> np.ndarray:
    s = m_sequence(PSS_LENGTH)
    s.flags.writeable = False
    return s


def pss_sequence(n_id2: int) -> PssSequence:
    """
    PSS symbols 1 - 2 s((k + 43 n_id2) mod 127) for k = 0..126

    Raises:
        ValidationException: If n_id2 is not 0, 1 or 2
    """
    validate_n_id2(n_id2)
    k = np.arange(PSS_LENGTH)
    symbols = 1.0 - 2.0 * _base_sequence()[(k + PSS_SECTOR_SHIFT * n_id2) % PSS_LENGTH]
    return PssSequence(n_id2=n_id2, symbols=symbols)


def _square_qam(order: int) -> np.ndarray:
    side = int(round(np.sqrt(order)))
    levels = 2.0 * np.arange(side) - (side - 1)
    points = (levels[:, None] + 1j * levels[None, :]).ravel()
    return points


def constellation(modulation: str) -> np.ndarray:
    """
    Unit-average-power constellation points

    Square QAM for QPSK/16QAM/64QAM/256QAM, antipodal BPSK, and a 4x2
    rectangular 8QAM.

    Raises:
        ValidationException: On an unknown modulation name
    """
    name = modulation.upper()
    if name not in MODULATION_ORDERS:
        raise ValidationException(
            "modulation", f"Must be one of {sorted(MODULATION_ORDERS)}, got: {modulation}"
        )

    if name == "BPSK":
        points = np.array([-1.0 + 0j, 1.0 + 0j])
    elif name == "8QAM":
        i_levels = np.array([-3.0, -1.0, 1.0, 3.0])
        points = (i_levels[:, None] + 1j * np.array([-1.0, 1.0])[None, :]).ravel()
    else:
        points = _square_qam(MODULATION_ORDERS[name])

    return points / np.sqrt(np.mean(np.abs(points) ** 2))


def modulate_symbols(modulation: str, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw count uniformly random constellation symbols"""
    validate_non_negative_integer(count, "count")
    points = constellation(modulation)
    return points[rng.integers(0, points.size, size=count)]


# ============================================================================
# Grids
# ============================================================================


def pss_subcarriers() -> np.ndarray:
    """k = 56..182 within the SSB band"""
    return np.arange(PSS_FIRST_SUBCARRIER, PSS_LAST_SUBCARRIER + 1)


def null_subcarriers() -> np.ndarray:
    """Complement of the PSS in symbol 0: {0..55} U {183..239}"""
    return np.concatenate(
        [np.arange(0, PSS_FIRST_SUBCARRIER), np.arange(PSS_LAST_SUBCARRIER + 1, SSB_SUBCARRIERS)]
    )


def build_ssb_grid(n_id2: int, seed: int = 0) -> ResourceGrid:
    """
    240x4 SSB grid with the PSS in symbol 0

    Symbols 1 and 3 are filled across all 240 subcarriers, symbol 2 at the SSS
    positions and the two PBCH flanks, all with seeded QPSK placeholders.
    """
    validate_n_id2(n_id2)
    rng = np.random.default_rng(seed)

    cells = np.zeros((SSB_SYMBOLS, SSB_SUBCARRIERS), dtype=np.complex128)
    cells[0, pss_subcarriers()] = pss_sequence(n_id2).symbols

    cells[1, :] = modulate_symbols("QPSK", SSB_SUBCARRIERS, rng)
    cells[SSS_SYMBOL, pss_subcarriers()] = modulate_symbols("QPSK", PSS_LENGTH, rng)
    for start, stop in PBCH_SYMBOL2_RANGES:
        cells[SSS_SYMBOL, start:stop] = modulate_symbols("QPSK", stop - start, rng)
    cells[3, :] = modulate_symbols("QPSK", SSB_SUBCARRIERS, rng)

    return ResourceGrid(cells=cells)


def centered_ssb_offset(band_subcarriers: int) -> int:
    """Offset that puts the SSB at the middle of the band"""
    return (band_subcarriers - SSB_SUBCARRIERS) // 2


def embed_in_band(
    ssb: ResourceGrid,
    band_subcarriers: int,
    ssb_offset: int,
    data_modulation: str,
    seed: int,
) -> ResourceGrid:
    """
    Copy an SSB into a full-band grid and fill the rest with random data

    Args:
        ssb: SSB-band grid (240 subcarriers)
        band_subcarriers: Width of the full band, e.g. 106 * 12 = 1272
        ssb_offset: Absolute subcarrier of the SSB's local k = 0
        data_modulation: Constellation for the surrounding data REs
        seed: Seed for the data symbols

    Raises:
        ValidationException: If the SSB does not fit at the offset
    """
    validate_positive_integer(band_subcarriers, "band_subcarriers")
    validate_non_negative_integer(ssb_offset, "ssb_offset")
    if ssb_offset + ssb.n_subcarriers > band_subcarriers:
        raise ValidationException(
            "ssb_offset",
            f"SSB of {ssb.n_subcarriers} subcarriers at {ssb_offset} overflows a "
            f"{band_subcarriers}-subcarrier band",
        )

    rng = np.random.default_rng(seed)
    cells = modulate_symbols(data_modulation, ssb.n_symbols * band_subcarriers, rng)
    cells = cells.reshape(ssb.n_symbols, band_subcarriers)
    cells[:, ssb_offset : ssb_offset + ssb.n_subcarriers] = ssb.cells
    return ResourceGrid(cells=cells)


# ============================================================================
# OFDM
# ============================================================================


def default_cp_length(n_fft: int) -> int:
    """Normal CP: 144 samples per 2048-point symbol"""
    return int(round(n_fft * NORMAL_CP_RATIO))


def fft_bins(n_subcarriers: int, n_fft: int) -> np.ndarray:
    """FFT bin of every local subcarrier under band-centered mapping"""
    return (np.arange(n_subcarriers) - n_subcarriers // 2) % n_fft


def ofdm_modulate(
    grid: ResourceGrid,
    n_fft: int,
    cp_length: int,
    scs_hz: float = 30_000.0,
) -> TimeSignal:
    """
    IFFT every symbol and prepend its cyclic prefix

    Args:
        grid: Cells to transmit
        n_fft: FFT size (power of two, at least the grid width)
        cp_length: Cyclic-prefix samples per symbol
        scs_hz: Subcarrier spacing, sets the sample rate n_fft * scs_hz

    Returns:
        TimeSignal of n_symbols * (n_fft + cp_length) samples
    """
    validate_power_of_two(n_fft, "n_fft")
    validate_non_negative_integer(cp_length, "cp_length")
    validate_positive_real(scs_hz, "scs_hz")
    if n_fft < grid.n_subcarriers:
        raise ValidationException(
            "n_fft", f"{n_fft} bins cannot hold {grid.n_subcarriers} subcarriers"
        )
    if cp_length > n_fft:
        raise ValidationException("cp_length", f"{cp_length} exceeds n_fft={n_fft}")

    freq = np.zeros((grid.n_symbols, n_fft), dtype=np.complex128)
    freq[:, fft_bins(grid.n_subcarriers, n_fft)] = grid.cells
    body = np.fft.ifft(freq, axis=1)
    symbols = np.concatenate([body[:, n_fft - cp_length :], body], axis=1)

    return TimeSignal(
        samples=symbols.ravel(),
        sample_rate_hz=n_fft * scs_hz,
        n_fft=n_fft,
        cp_lengths=(cp_length,) * grid.n_symbols,
    )


def ofdm_demodulate(
    signal: TimeSignal,
    n_subcarriers: int,
    n_symbols: int,
    start: int = 0,
) -> ResourceGrid:
    """
    Strip CPs, FFT consecutive symbols from start and keep the centered subcarriers

    Raises:
        ValidationException: If the requested symbols run past the signal
    """
    validate_positive_integer(n_subcarriers, "n_subcarriers")
    validate_positive_integer(n_symbols, "n_symbols")
    validate_non_negative_integer(start, "start")

    n_fft = signal.n_fft
    cp = signal.cp_lengths[0] if signal.cp_lengths else default_cp_length(n_fft)
    if n_subcarriers > n_fft:
        raise ValidationException("n_subcarriers", f"{n_subcarriers} exceeds n_fft={n_fft}")

    stop = start + n_symbols * (n_fft + cp)
    if stop > len(signal):
        raise ValidationException(
            "start", f"{n_symbols} symbols from {start} need {stop} samples, have {len(signal)}"
        )

    frames = signal.samples[start:stop].reshape(n_symbols, n_fft + cp)[:, cp:]
    spectrum = np.fft.fft(frames, axis=1)
    return ResourceGrid(cells=spectrum[:, fft_bins(n_subcarriers, n_fft)])


@lru_cache(maxsize=16)
def _pss_waveform(n_id2: int, n_fft: int) -> np.ndarray:
    freq = np.zeros(n_fft, dtype=np.complex128)
    local = np.zeros(SSB_SUBCARRIERS, dtype=np.complex128)
    local[pss_subcarriers()] = pss_sequence(n_id2).symbols
    freq[fft_bins(SSB_SUBCARRIERS, n_fft)] = local
    waveform = np.fft.ifft(freq)
    waveform.flags.writeable = False
    return waveform


def pss_waveform(n_id2: int, n_fft: int) -> np.ndarray:
    """Time-domain PSS symbol without CP, the correlator reference (read-only array)"""
    validate_n_id2(n_id2)
    validate_power_of_two(n_fft, "n_fft")
    if n_fft < SSB_SUBCARRIERS:
        raise ValidationException("n_fft", f"{n_fft} bins cannot hold the SSB")
    return _pss_waveform(n_id2, n_fft)


def measure_power(samples: np.ndarray, span: tuple[int, int] | None = None) -> float:
    """Mean |x|^2 over span (whole array when None), 0 for an empty span"""
    if span is not None:
        samples = samples[span[0] : span[1]]
    if samples.size == 0:
        return 0.0
    return float(np.mean(np.abs(samples) ** 2))


def scale_to_power(signal: TimeSignal, power: float) -> TimeSignal:
    """Rescale so the mean sample power equals power; silent signals are returned as-is"""
    current = measure_power(signal.samples)
    if current == 0.0:
        return signal
    return signal.with_samples(signal.samples * np.sqrt(power / current))

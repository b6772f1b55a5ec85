"""
Path loss, tapped-delay-line multipath, thermal noise and jamming
"""

from dataclasses import dataclass

import numpy as np
from scipy import constants, signal as sp_signal

from ssb_guard.config import ChannelConfig, ChannelProfile, JammerConfig, JammerCoverage, JammerKind
from ssb_guard.constants import LOS_K_FACTOR_DB, SSB_SUBCARRIERS, TAP_SPAN_DELAY_SPREADS
from ssb_guard.exceptions import ValidationException
from ssb_guard.logger import get_logger
from ssb_guard.validators import validate_positive_real
from ssb_guard.waveform import TimeSignal, measure_power, modulate_symbols

logger = get_logger(__name__)

# Subcarrier offsets (relative to band center) of a centered SSB, inclusive
SSB_BAND = (-(SSB_SUBCARRIERS // 2), SSB_SUBCARRIERS - SSB_SUBCARRIERS // 2 - 1)


@dataclass(frozen=True, eq=False)
class TapSet:
    """Integer sample delays and complex gains of one channel realization"""

    delays: np.ndarray
    gains: np.ndarray

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.gains) ** 2))

    def impulse_response(self) -> np.ndarray:
        h = np.zeros(int(self.delays.max()) + 1, dtype=np.complex128)
        np.add.at(h, self.delays, self.gains)
        return h


# ============================================================================
# Path loss
# ============================================================================


def fspl_db(wavelength_m: float, distance_m: float) -> float:
    """
    Distance attenuation 20 log10(lambda^2 / (4 pi^2 d^2)) in dB

    Raises:
        ValidationException: If either argument is not positive
    """
    validate_positive_real(wavelength_m, "wavelength_m")
    validate_positive_real(distance_m, "distance_m")
    return float(20.0 * np.log10(wavelength_m**2 / (4.0 * np.pi**2 * distance_m**2)))


def fspl_power_gain(wavelength_m: float, distance_m: float) -> float:
    """Linear power gain lambda^2 / (4 pi^2 d^2), i.e. 10^(fspl_db / 20)"""
    return float(10.0 ** (fspl_db(wavelength_m, distance_m) / 20.0))


def wavelength(carrier_hz: float) -> float:
    validate_positive_real(carrier_hz, "carrier_hz")
    return float(constants.c / carrier_hz)


# ============================================================================
# Multipath
# ============================================================================


def tapped_delay_line(cfg: ChannelConfig, sample_rate_hz: float) -> TapSet:
    """
    Draw one seeded channel realization

    Taps sit on integer sample delays spread over three RMS delay spreads with
    an exponential power-delay profile. The LOS-dominant profile gives tap 0 a
    Rician gain with a fixed-phase LOS part; all other taps are Rayleigh. The
    realized gains are normalized to unit energy.
    """
    validate_positive_real(sample_rate_hz, "sample_rate_hz")
    rng = np.random.default_rng(cfg.seed)

    spread_s = cfg.delay_spread_ns * 1e-9
    if spread_s == 0.0:
        delays = np.zeros(1, dtype=np.int64)
        powers = np.ones(1)
    else:
        span = TAP_SPAN_DELAY_SPREADS * spread_s * sample_rate_hz
        delays = np.unique(np.round(np.linspace(0.0, span, cfg.n_taps)).astype(np.int64))
        powers = np.exp(-(delays / sample_rate_hz) / spread_s)
    powers = powers / powers.sum()

    scatter = complex_gaussian(delays.size, 1.0, rng)
    gains = np.sqrt(powers) * scatter

    if cfg.profile == ChannelProfile.LOS_DOMINANT:
        k = 10.0 ** (LOS_K_FACTOR_DB / 10.0)
        gains[0] = np.sqrt(powers[0]) * (np.sqrt(k / (k + 1.0)) + scatter[0] / np.sqrt(k + 1.0))

    gains = gains / np.sqrt(np.sum(np.abs(gains) ** 2))
    return TapSet(delays=delays, gains=gains)


def convolve_taps(samples: np.ndarray, taps: TapSet, amplitude: float = 1.0) -> np.ndarray:
    """Causal filtering by the tap set; the output keeps the input length"""
    if samples.size == 0:
        return samples.astype(np.complex128)
    return amplitude * sp_signal.lfilter(taps.impulse_response(), [1.0], samples)


def apply_channel(
    signal: TimeSignal,
    cfg: ChannelConfig,
    taps: TapSet | None = None,
) -> TimeSignal:
    """
    Multipath plus path loss

    Args:
        signal: Transmitted samples
        cfg: Channel template (profile, delay spread, seed, carrier, distance)
        taps: Explicit tap set overriding the seeded draw

    Returns:
        Received samples scaled by the FSPL power gain
    """
    if len(signal) == 0:
        raise ValidationException("signal", "Must not be empty")

    if taps is None:
        taps = tapped_delay_line(cfg, signal.sample_rate_hz)
    gain = fspl_power_gain(wavelength(cfg.carrier_hz), cfg.distance_m)

    logger.debug(
        "Applied channel",
        extra={"n_taps": int(taps.delays.size), "fspl_gain": gain, "distance_m": cfg.distance_m},
    )
    return signal.with_samples(convolve_taps(signal.samples, taps, amplitude=np.sqrt(gain)))


# ============================================================================
# Noise
# ============================================================================


def thermal_noise_power(temperature_k: float, bandwidth_hz: float) -> float:
    """k_B T B in watts"""
    validate_positive_real(temperature_k, "temperature_k")
    validate_positive_real(bandwidth_hz, "bandwidth_hz")
    return float(constants.k * temperature_k * bandwidth_hz)


def complex_gaussian(n: int, power: float, rng: np.random.Generator) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples of the given mean power"""
    return np.sqrt(power / 2.0) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def add_thermal_noise(
    signal: TimeSignal,
    temperature_k: float,
    bandwidth_hz: float,
    seed: int,
) -> TimeSignal:
    """Add k_B T B complex white noise, deterministic per seed"""
    power = thermal_noise_power(temperature_k, bandwidth_hz)
    rng = np.random.default_rng(seed)
    return signal.with_samples(signal.samples + complex_gaussian(len(signal), power, rng))


# ============================================================================
# Jamming
# ============================================================================


def _raw_jammer(
    kind: JammerKind, n: int, samples_per_symbol: int, rng: np.random.Generator
) -> np.ndarray:
    if kind == JammerKind.AWGN:
        return complex_gaussian(n, 1.0, rng)
    n_symbols = -(-n // samples_per_symbol)
    symbols = modulate_symbols(str(kind), n_symbols, rng)
    return np.repeat(symbols, samples_per_symbol)[:n]


def _band_limit(
    samples: np.ndarray,
    band: tuple[int, int],
    sample_rate_hz: float,
    n_fft: int,
) -> np.ndarray:
    # keep FFT components whose frequency falls inside the subcarrier range
    scs_hz = sample_rate_hz / n_fft
    offsets = np.fft.fftfreq(samples.size, d=1.0 / sample_rate_hz) / scs_hz
    mask = (offsets >= band[0] - 0.5) & (offsets <= band[1] + 0.5)
    return np.fft.ifft(np.fft.fft(samples) * mask)


def jammer_power_for(sjnr_db: float, reference_power: float, noise_power: float) -> float:
    """
    Jammer power giving reference / (jammer + noise) = 10^(sjnr_db / 10)

    Raises:
        ValidationException: If noise alone already exceeds the SJNR budget
    """
    power = reference_power / 10.0 ** (sjnr_db / 10.0) - noise_power
    if power <= 0.0:
        raise ValidationException(
            "sjnr_db",
            f"{sjnr_db} dB unreachable: noise power {noise_power:.3e} leaves no room for a jammer "
            f"against reference power {reference_power:.3e}",
        )
    return power


def synthesize_jammer(
    signal: TimeSignal,
    cfg: JammerConfig,
    ssb_span: tuple[int, int] | None,
    ssb_band: tuple[int, int] | None,
    reference_power: float,
    noise_power: float = 0.0,
) -> np.ndarray:
    """
    The jamming waveform alone, aligned with signal

    Smart-SSB jammers are band-limited to ssb_band and zero outside ssb_span.
    Barrage jammers cover every sample and the whole band. In both cases the
    power is set over the SSB span (the whole signal when no span is given).

    Raises:
        ValidationException: Missing span/band for smart-SSB coverage, or an
            unreachable SJNR
    """
    smart = cfg.coverage == JammerCoverage.SMART_SSB
    if smart and (ssb_span is None or ssb_band is None):
        raise ValidationException("ssb_span", "Smart-SSB coverage needs both ssb_span and ssb_band")
    band = ssb_band if ssb_band is not None else SSB_BAND

    n = len(signal)
    span = ssb_span if ssb_span is not None else (0, n)
    if not 0 <= span[0] < span[1] <= n:
        raise ValidationException("ssb_span", f"{span} is not a sample range of {n} samples")

    rng = np.random.default_rng(cfg.seed)
    jammer = np.zeros(n, dtype=np.complex128)

    if smart:
        length = span[1] - span[0]
        burst = _raw_jammer(cfg.kind, length, cfg.samples_per_symbol, rng)
        jammer[span[0] : span[1]] = _band_limit(burst, band, signal.sample_rate_hz, signal.n_fft)
    else:
        jammer[:] = _raw_jammer(cfg.kind, n, cfg.samples_per_symbol, rng)

    target = jammer_power_for(cfg.sjnr_db, reference_power, noise_power)
    measured = measure_power(jammer, span)
    if measured > 0.0:
        jammer *= np.sqrt(target / measured)
    return jammer


def inject_jammer(
    signal: TimeSignal,
    cfg: JammerConfig,
    ssb_span: tuple[int, int] | None,
    ssb_band: tuple[int, int] | None,
    reference_power: float,
    noise_power: float = 0.0,
) -> TimeSignal:
    """
    Add a jammer scaled to the requested SJNR over the SSB span

    Args:
        signal: Received samples (channel output, noise included)
        cfg: Jammer kind, coverage, SJNR and seed
        ssb_span: (start, stop) sample range of the SSB symbols
        ssb_band: Inclusive subcarrier offsets around band center, e.g. SSB_BAND
        reference_power: Received SSB signal power over the span
        noise_power: Thermal noise power counted against the SJNR

    Returns:
        signal + synthesize_jammer(...)
    """
    jammer = synthesize_jammer(signal, cfg, ssb_span, ssb_band, reference_power, noise_power)
    logger.debug(
        "Injected jammer",
        extra={"kind": str(cfg.kind), "coverage": str(cfg.coverage), "sjnr_db": cfg.sjnr_db},
    )
    return signal.with_samples(signal.samples + jammer)

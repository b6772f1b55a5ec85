"""
Unit tests for channel module
"""
import math

import numpy as np
import pytest

from ssb_guard import channel
from ssb_guard.config import ChannelConfig, ChannelProfile, JammerConfig, JammerCoverage, JammerKind
from ssb_guard.exceptions import ValidationException
from ssb_guard.waveform import TimeSignal, build_ssb_grid, measure_power, ofdm_modulate

FS = 512 * 30_000.0


def ssb_signal(seed: int = 0) -> TimeSignal:
    return ofdm_modulate(build_ssb_grid(0, seed=seed), 512, 36)


class TestPathLoss:
    """Test free-space path loss"""

    def test_formula(self):
        """Test the dB value at a known point"""
        lam, d = 0.1, 10.0
        expected = 20 * math.log10(lam**2 / (4 * math.pi**2 * d**2))
        assert channel.fspl_db(lam, d) == pytest.approx(expected)

    def test_distance_doubling(self):
        """Test doubling the distance costs 40 log10(2) dB"""
        a = channel.fspl_db(0.1, 10.0)
        b = channel.fspl_db(0.1, 20.0)
        assert a - b == pytest.approx(40 * math.log10(2))

    def test_power_gain_consistent(self):
        """Test the linear gain is lambda^2 / (4 pi^2 d^2)"""
        gain = channel.fspl_power_gain(0.1, 10.0)
        assert gain == pytest.approx(0.01 / (4 * math.pi**2 * 100.0))

    def test_non_positive_rejected(self):
        """Test zero distance raises"""
        with pytest.raises(ValidationException):
            channel.fspl_db(0.1, 0.0)

    def test_wavelength(self):
        """Test the 3.5 GHz wavelength"""
        assert channel.wavelength(3.5e9) == pytest.approx(0.0857, rel=1e-3)


class TestTappedDelayLine:
    """Test multipath tap draws"""

    def test_unit_energy(self):
        """Test realized taps are normalized to unit energy"""
        taps = channel.tapped_delay_line(ChannelConfig(delay_spread_ns=300.0, seed=2), FS)
        assert taps.energy == pytest.approx(1.0)

    def test_seeded(self):
        """Test the same seed gives the same taps"""
        cfg = ChannelConfig(delay_spread_ns=300.0, seed=4)
        a = channel.tapped_delay_line(cfg, FS)
        b = channel.tapped_delay_line(cfg, FS)
        np.testing.assert_array_equal(a.gains, b.gains)
        np.testing.assert_array_equal(a.delays, b.delays)

    def test_zero_spread_single_tap(self):
        """Test zero delay spread collapses to one tap"""
        taps = channel.tapped_delay_line(ChannelConfig(delay_spread_ns=0.0), FS)
        assert taps.delays.tolist() == [0]
        assert abs(taps.gains[0]) == pytest.approx(1.0)

    def test_delays_sorted_unique(self):
        """Test delays are increasing integers starting at 0"""
        taps = channel.tapped_delay_line(ChannelConfig(delay_spread_ns=600.0, n_taps=16), FS)
        assert taps.delays[0] == 0
        assert np.all(np.diff(taps.delays) > 0)

    def test_los_first_tap_dominates(self):
        """Test the LOS profile keeps most energy on the first tap for every seed"""
        for seed in range(20):
            cfg = ChannelConfig(profile=ChannelProfile.LOS_DOMINANT, seed=seed)
            taps = channel.tapped_delay_line(cfg, FS)
            assert abs(taps.gains[0]) ** 2 > 0.5


class TestApplyChannel:
    """Test channel application"""

    def test_length_preserved(self):
        """Test the output keeps the input length"""
        signal = ssb_signal()
        out = channel.apply_channel(signal, ChannelConfig(delay_spread_ns=300.0))
        assert len(out) == len(signal)

    def test_single_tap_scales_power(self):
        """Test a unit single tap only applies the path-loss gain"""
        signal = ssb_signal()
        taps = channel.TapSet(delays=np.array([0]), gains=np.array([1.0 + 0j]))
        cfg = ChannelConfig(distance_m=20.0)
        out = channel.apply_channel(signal, cfg, taps=taps)
        gain = channel.fspl_power_gain(channel.wavelength(cfg.carrier_hz), 20.0)
        np.testing.assert_allclose(out.samples, signal.samples * np.sqrt(gain))

    def test_empty_rejected(self):
        """Test an empty signal raises"""
        empty = TimeSignal(samples=np.zeros(0, dtype=complex), sample_rate_hz=FS, n_fft=512)
        with pytest.raises(ValidationException):
            channel.apply_channel(empty, ChannelConfig())


class TestNoise:
    """Test thermal noise"""

    def test_ktb(self):
        """Test kTB at 290 K over 1 Hz"""
        assert channel.thermal_noise_power(290.0, 1.0) == pytest.approx(4.0e-21, rel=1e-2)

    def test_added_noise_power(self):
        """Test the empirical added noise power matches kTB"""
        zeros = TimeSignal(samples=np.zeros(200_000, dtype=complex), sample_rate_hz=FS, n_fft=512)
        noisy = channel.add_thermal_noise(zeros, 290.0, FS, seed=1)
        expected = channel.thermal_noise_power(290.0, FS)
        assert measure_power(noisy.samples) == pytest.approx(expected, rel=0.02)

    def test_seeded(self):
        """Test noise is deterministic per seed"""
        signal = ssb_signal()
        a = channel.add_thermal_noise(signal, 290.0, FS, seed=3)
        b = channel.add_thermal_noise(signal, 290.0, FS, seed=3)
        np.testing.assert_array_equal(a.samples, b.samples)


class TestJammer:
    """Test jammer synthesis and injection"""

    def test_sjnr_met_over_span(self):
        """Test reference / (jammer + noise) hits the target over the span"""
        signal = ssb_signal()
        cfg = JammerConfig(kind=JammerKind.AWGN, sjnr_db=5.0, seed=1)
        jam = channel.synthesize_jammer(signal, cfg, (0, len(signal)), channel.SSB_BAND, 1.0, 0.01)
        sjnr = 10 * np.log10(1.0 / (measure_power(jam) + 0.01))
        assert sjnr == pytest.approx(5.0, abs=1e-9)

    def test_inject_adds_jammer(self):
        """Test injection is signal plus the synthesized jammer"""
        signal = ssb_signal()
        cfg = JammerConfig(kind=JammerKind.BPSK, sjnr_db=0.0, seed=2)
        span = (0, len(signal))
        jam = channel.synthesize_jammer(signal, cfg, span, channel.SSB_BAND, 1.0)
        out = channel.inject_jammer(signal, cfg, span, channel.SSB_BAND, 1.0)
        np.testing.assert_array_equal(out.samples, signal.samples + jam)

    def test_smart_jammer_gated_to_span(self):
        """Test a smart-SSB jammer is zero outside its span"""
        signal = ssb_signal()
        cfg = JammerConfig(kind=JammerKind.QAM8, coverage=JammerCoverage.SMART_SSB, seed=3)
        jam = channel.synthesize_jammer(signal, cfg, (548, 1096), channel.SSB_BAND, 1.0)
        assert np.all(jam[:548] == 0)
        assert np.all(jam[1096:] == 0)
        assert measure_power(jam, (548, 1096)) > 0

    def test_smart_jammer_band_limited(self):
        """Test a smart-SSB jammer leaves the FFT bins outside the SSB empty"""
        signal = ssb_signal()
        cfg = JammerConfig(kind=JammerKind.AWGN, seed=5)
        jam = channel.synthesize_jammer(signal, cfg, (0, len(signal)), channel.SSB_BAND, 1.0)
        spectrum = np.abs(np.fft.fft(jam))
        offsets = np.fft.fftfreq(jam.size, d=1.0 / FS) / 30_000.0
        outside = (offsets < -121.0) | (offsets > 120.0)
        assert spectrum[outside].max() < 1e-9 * spectrum.max()

    def test_barrage_covers_everything(self):
        """Test a barrage jammer is on at every sample"""
        signal = ssb_signal()
        cfg = JammerConfig(coverage=JammerCoverage.BARRAGE, seed=6)
        jam = channel.synthesize_jammer(signal, cfg, None, None, 1.0)
        assert np.all(np.abs(jam) > 0)

    def test_smart_needs_span(self):
        """Test smart-SSB coverage without a span raises"""
        with pytest.raises(ValidationException):
            channel.synthesize_jammer(ssb_signal(), JammerConfig(), None, None, 1.0)

    def test_unreachable_sjnr(self):
        """Test noise above the SJNR budget raises"""
        cfg = JammerConfig(sjnr_db=30.0)
        signal = ssb_signal()
        with pytest.raises(ValidationException):
            channel.synthesize_jammer(signal, cfg, (0, len(signal)), channel.SSB_BAND, 1.0, 0.01)

    def test_jammer_power_for(self):
        """Test the jammer power arithmetic"""
        assert channel.jammer_power_for(10.0, 1.0, 0.05) == pytest.approx(0.05)

"""
Unit tests for waveform module
"""
import numpy as np
import pytest

from ssb_guard import waveform
from ssb_guard.constants import NULL_RE_COUNT, PSS_LENGTH
from ssb_guard.exceptions import ValidationException


def brute_force_m_sequence() -> list[int]:
    s = [0, 1, 1, 0, 1, 1, 1]
    while len(s) < 127:
        i = len(s) - 7
        s.append((s[i + 4] + s[i]) % 2)
    return s


class TestMSequence:
    """Test the degree-7 m-sequence"""

    def test_matches_recurrence(self):
        """Test all 127 terms against a direct evaluation of the recurrence"""
        assert waveform.m_sequence(127).tolist() == brute_force_m_sequence()

    def test_initial_state(self):
        """Test the first seven terms are the initial state"""
        assert waveform.m_sequence(7).tolist() == [0, 1, 1, 0, 1, 1, 1]

    def test_period_127(self):
        """Test the sequence repeats with period 127"""
        s = waveform.m_sequence(254)
        np.testing.assert_array_equal(s[:127], s[127:])

    def test_balance(self):
        """Test a maximal-length sequence has 64 ones and 63 zeros"""
        assert int(waveform.m_sequence(127).sum()) == 64

    def test_too_short_rejected(self):
        """Test lengths below the initial state raise"""
        with pytest.raises(ValidationException):
            waveform.m_sequence(6)


class TestPssSequence:
    """Test PSS sector sequences"""

    def test_values_are_bpsk(self):
        """Test every symbol is +1 or -1"""
        for n_id2 in (0, 1, 2):
            assert set(np.unique(waveform.pss_sequence(n_id2).symbols)) == {-1.0, 1.0}

    def test_first_symbols_sector_0(self):
        """Test the sector-0 sequence starts at s(0)"""
        symbols = waveform.pss_sequence(0).symbols
        expected = [1 - 2 * v for v in brute_force_m_sequence()[:5]]
        assert symbols[:5].tolist() == expected

    def test_sector_shift(self):
        """Test sector 1 is sector 0 shifted by 43"""
        d0 = waveform.pss_sequence(0).symbols
        d1 = waveform.pss_sequence(1).symbols
        np.testing.assert_array_equal(d1, np.roll(d0, -43))

    def test_autocorrelation(self):
        """Test the circular autocorrelation peaks at 127 and is -1 elsewhere"""
        for n_id2 in (0, 1, 2):
            d = waveform.pss_sequence(n_id2).symbols
            corr = np.array([np.dot(d, np.roll(d, lag)) for lag in range(PSS_LENGTH)])
            assert corr[0] == PSS_LENGTH
            assert np.all(np.abs(corr[1:]) == 1)

    def test_invalid_sector(self):
        """Test n_id2 outside 0..2 raises"""
        with pytest.raises(ValidationException):
            waveform.pss_sequence(3)


class TestConstellation:
    """Test constellations"""

    def test_unit_average_power(self):
        """Test every constellation has unit average power"""
        for name in ("BPSK", "QPSK", "8QAM", "16QAM", "64QAM", "256QAM"):
            points = waveform.constellation(name)
            assert np.mean(np.abs(points) ** 2) == pytest.approx(1.0)

    def test_sizes(self):
        """Test constellation sizes"""
        assert waveform.constellation("8QAM").size == 8
        assert waveform.constellation("64QAM").size == 64

    def test_unknown_modulation(self):
        """Test unknown modulation names raise"""
        with pytest.raises(ValidationException):
            waveform.constellation("1024QAM")

    def test_modulate_symbols_seeded(self):
        """Test symbol draws are reproducible per seed"""
        a = waveform.modulate_symbols("16QAM", 50, np.random.default_rng(1))
        b = waveform.modulate_symbols("16QAM", 50, np.random.default_rng(1))
        np.testing.assert_array_equal(a, b)


class TestSsbGrid:
    """Test SSB grid construction"""

    def test_shape(self):
        """Test the grid is 4 x 240"""
        grid = waveform.build_ssb_grid(0)
        assert (grid.n_symbols, grid.n_subcarriers) == (4, 240)

    def test_pss_placement(self):
        """Test the PSS occupies k = 56..182 of symbol 0"""
        grid = waveform.build_ssb_grid(2)
        np.testing.assert_array_equal(
            grid.cells[0, 56:183], waveform.pss_sequence(2).symbols
        )

    def test_null_res_are_zero(self):
        """Test the 113 null REs of symbol 0 are empty"""
        grid = waveform.build_ssb_grid(1)
        nulls = waveform.null_subcarriers()
        assert nulls.size == NULL_RE_COUNT
        assert np.all(grid.cells[0, nulls] == 0)

    def test_symbol_2_gaps(self):
        """Test symbol 2 is empty between the PBCH flanks and the SSS"""
        grid = waveform.build_ssb_grid(0, seed=4)
        assert np.all(grid.cells[2, 48:56] == 0)
        assert np.all(grid.cells[2, 183:192] == 0)
        assert np.all(grid.cells[2, 56:183] != 0)

    def test_seeded(self):
        """Test the same seed gives the same placeholders"""
        a = waveform.build_ssb_grid(0, seed=9)
        b = waveform.build_ssb_grid(0, seed=9)
        np.testing.assert_array_equal(a.cells, b.cells)


class TestEmbedInBand:
    """Test band embedding"""

    def test_centered_offset(self):
        """Test the centered offset of a 106-RB band"""
        assert waveform.centered_ssb_offset(1272) == 516

    def test_ssb_copied(self):
        """Test the SSB lands at the offset untouched"""
        ssb = waveform.build_ssb_grid(1)
        band = waveform.embed_in_band(ssb, 1272, 516, "QPSK", seed=0)
        np.testing.assert_array_equal(band.cells[:, 516:756], ssb.cells)
        assert band.n_subcarriers == 1272

    def test_overflow_rejected(self):
        """Test an SSB that does not fit raises"""
        ssb = waveform.build_ssb_grid(0)
        with pytest.raises(ValidationException):
            waveform.embed_in_band(ssb, 300, 100, "QPSK", seed=0)


class TestOfdm:
    """Test CP-OFDM modulation"""

    def test_default_cp(self):
        """Test the normal CP length"""
        assert waveform.default_cp_length(2048) == 144
        assert waveform.default_cp_length(512) == 36

    def test_length_and_rate(self):
        """Test output length and sample rate"""
        signal = waveform.ofdm_modulate(waveform.build_ssb_grid(0), 512, 36, scs_hz=30_000.0)
        assert len(signal) == 4 * (512 + 36)
        assert signal.sample_rate_hz == 512 * 30_000.0

    def test_cyclic_prefix(self):
        """Test each CP repeats the end of its symbol"""
        signal = waveform.ofdm_modulate(waveform.build_ssb_grid(0), 512, 36)
        frames = signal.samples.reshape(4, 548)
        np.testing.assert_allclose(frames[:, :36], frames[:, -36:])

    def test_round_trip(self):
        """Test modulate then demodulate reproduces random grids"""
        rng = np.random.default_rng(0)
        for _ in range(50):
            cells = rng.normal(size=(4, 240)) + 1j * rng.normal(size=(4, 240))
            grid = waveform.ResourceGrid(cells=cells)
            signal = waveform.ofdm_modulate(grid, 512, 36)
            back = waveform.ofdm_demodulate(signal, 240, 4)
            np.testing.assert_allclose(back.cells, cells, rtol=1e-9, atol=1e-9)

    def test_wide_band_ssb_shares_bins(self):
        """Test a centered SSB inside a wider band demodulates to the SSB grid"""
        ssb = waveform.build_ssb_grid(0)
        band = waveform.embed_in_band(ssb, 480, waveform.centered_ssb_offset(480), "QPSK", 2)
        signal = waveform.ofdm_modulate(band, 512, 36)
        back = waveform.ofdm_demodulate(signal, 240, 4)
        np.testing.assert_allclose(back.cells, ssb.cells, atol=1e-9)

    def test_non_power_of_two_rejected(self):
        """Test non power-of-two FFT sizes raise"""
        with pytest.raises(ValidationException):
            waveform.ofdm_modulate(waveform.build_ssb_grid(0), 500, 36)

    def test_demodulate_past_end(self):
        """Test demodulating past the end of the signal raises"""
        signal = waveform.ofdm_modulate(waveform.build_ssb_grid(0), 512, 36)
        with pytest.raises(ValidationException):
            waveform.ofdm_demodulate(signal, 240, 4, start=10)


class TestPssWaveform:
    """Test the time-domain PSS reference"""

    def test_matches_symbol_0(self):
        """Test the reference equals the useful part of an SSB's first symbol"""
        grid = waveform.ResourceGrid(cells=np.zeros((1, 240), dtype=complex))
        grid.cells[0, 56:183] = waveform.pss_sequence(1).symbols
        signal = waveform.ofdm_modulate(grid, 512, 36)
        np.testing.assert_allclose(waveform.pss_waveform(1, 512), signal.samples[36:], atol=1e-12)

    def test_read_only(self):
        """Test the cached reference cannot be modified"""
        ref = waveform.pss_waveform(0, 512)
        with pytest.raises(ValueError):
            ref[0] = 1.0


class TestPower:
    """Test power helpers"""

    def test_measure_power_span(self):
        """Test power over a span"""
        x = np.array([1.0, 1.0, 2.0, 2.0])
        assert waveform.measure_power(x) == pytest.approx(2.5)
        assert waveform.measure_power(x, (2, 4)) == pytest.approx(4.0)
        assert waveform.measure_power(x, (1, 1)) == 0.0

    def test_scale_to_power(self):
        """Test rescaling hits the target power"""
        signal = waveform.ofdm_modulate(waveform.build_ssb_grid(0), 512, 36)
        scaled = waveform.scale_to_power(signal, 1000.0)
        assert waveform.measure_power(scaled.samples) == pytest.approx(1000.0)

import numpy as np
import pytest

from dampid import features, tensorio


def direct_dft_oracle(x, window_len, hop, fs):
    """Brute-force per-bin evaluation of the windowed transform."""
    grid = features.log_freq_grid()
    g = features.hann_window(window_len)
    n_frames = (len(x) - window_len) // hop + 1
    out = np.empty((grid.size, n_frames), dtype=complex)
    for m in range(n_frames):
        for h, f in enumerate(grid):
            k = np.arange(window_len)
            idx = m * hop + k
            out[h, m] = np.sum(x[idx] * g * np.exp(-2j * np.pi * f * idx / fs))
    return out


class TestFreqGrid:
    def test_first_values(self):
        grid = features.log_freq_grid()
        np.testing.assert_allclose(
            grid[:4], [0.0, 0.1, 0.11220184543, 0.12589254118], rtol=1e-9
        )

    def test_endpoints(self):
        grid = features.log_freq_grid()
        assert grid[0] == 0.0
        assert grid[1] == pytest.approx(0.1, abs=1e-15)
        assert grid[41] == pytest.approx(10.0, abs=1e-12)

    def test_length_and_monotonic(self):
        grid = features.log_freq_grid()
        assert grid.size == 42
        assert np.all(np.diff(grid) > 0)

    def test_one_hz_on_grid(self):
        # 10^(20/20 - 1) = 1 exactly
        assert features.log_freq_grid()[21] == pytest.approx(1.0, abs=1e-12)


class TestStft:
    def test_frame_count(self):
        x = np.zeros(3001)
        assert features.stft(x).shape == (42, 11)

    def test_frame_formula(self):
        assert features.expected_frame_count() == pytest.approx(11.0)

    def test_constant_signal_dc_bin(self):
        c = 2.5
        spec = features.stft(np.full(3001, c))
        g_sum = features.hann_window(2000).sum()
        np.testing.assert_allclose(spec[0].real, c * g_sum, rtol=1e-12)
        np.testing.assert_allclose(spec[0].imag, 0.0, atol=1e-9)

    def test_sinusoid_peaks_at_its_bin(self):
        t = np.arange(3001) / 1000.0
        x = np.sin(2 * np.pi * 1.0 * t)
        spec = features.stft(x)
        assert np.argmax(np.abs(spec[:, 0])) == 21  # the 1 Hz bin

    def test_matches_direct_oracle(self, rng):
        x = rng.standard_normal(3001)
        fast = features.stft(x)
        slow = direct_dft_oracle(x, 2000, 100, 1000.0)
        scale = np.abs(slow).max()
        np.testing.assert_allclose(fast, slow, atol=1e-9 * scale)

    def test_linearity(self, rng):
        x1 = rng.standard_normal(3001)
        x2 = rng.standard_normal(3001)
        a = 2.7
        lhs = features.stft(a * x1 + x2)
        rhs = a * features.stft(x1) + features.stft(x2)
        scale = np.abs(rhs).max()
        np.testing.assert_allclose(lhs, rhs, atol=1e-10 * scale)

    def test_short_signal_rejected(self):
        with pytest.raises(ValueError, match="window length"):
            features.stft(np.zeros(1000))


class TestFeaturizePair:
    def test_shape(self, rng):
        f = features.featurize_pair(rng.standard_normal(3001), rng.standard_normal(3001))
        assert f.shape == (168, 11)

    def test_zero_output_blocks(self, rng):
        u = rng.standard_normal(3001)
        f = features.featurize_pair(u, np.zeros(3001))
        np.testing.assert_array_equal(f[42:84], 0.0)  # real(output)
        np.testing.assert_array_equal(f[126:168], 0.0)  # phase(output), phase(0) = 0
        assert np.abs(f[:42]).max() > 0

    def test_positive_scaling(self, rng):
        u = rng.standard_normal(3001)
        y = rng.standard_normal(3001)
        f1 = features.featurize_pair(u, y)
        f2 = features.featurize_pair(3.0 * u, y)
        np.testing.assert_allclose(f2[:42], 3.0 * f1[:42], rtol=1e-10)
        np.testing.assert_allclose(f2[84:126], f1[84:126], atol=1e-12)

    def test_phase_range(self, rng):
        f = features.featurize_pair(rng.standard_normal(3001), rng.standard_normal(3001))
        phases = f[84:]
        assert np.all(phases > -np.pi - 1e-12)
        assert np.all(phases <= np.pi + 1e-12)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            features.featurize_pair(np.zeros(3001), np.zeros(3000))

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError, match="3001"):
            features.featurize_pair(np.zeros(2000), np.zeros(2000))

    def test_serialization_roundtrip_bit_exact(self, rng, tmp_path):
        f = features.featurize_pair(
            rng.standard_normal(3001), rng.standard_normal(3001)
        ).astype(np.float32)
        path = tmp_path / "f.dsid"
        tensorio.save_tensor(path, f)
        np.testing.assert_array_equal(tensorio.load_tensor(path), f)


class TestFeaturizeWindows:
    def test_matches_featurize_pair(self, rng):
        u = rng.standard_normal(5000)
        y = rng.standard_normal(5000)
        starts = np.array([0, 123, 1999])
        batch = features.featurize_windows(u, y, starts, out_dtype=np.float64)
        for i, s in enumerate(starts):
            single = features.featurize_pair(u[s : s + 3001], y[s : s + 3001])
            np.testing.assert_allclose(batch[i], single, rtol=1e-12, atol=1e-12)

    def test_empty_starts(self):
        out = features.featurize_windows(np.zeros(3001), np.zeros(3001), np.array([]))
        assert out.shape == (0, 168, 11)

    def test_out_of_range_start_rejected(self):
        with pytest.raises(ValueError, match="range"):
            features.featurize_windows(np.zeros(3001), np.zeros(3001), np.array([1]))


def test_phase_angle_zero_convention():
    z = np.array([0.0 + 0.0j, 1e-320 + 0.0j, 1.0 + 1.0j])
    ang = features.phase_angle(z)
    assert ang[0] == 0.0
    assert ang[1] == 0.0
    assert ang[2] == pytest.approx(np.pi / 4)

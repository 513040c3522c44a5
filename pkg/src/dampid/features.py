"""Short-time Fourier features on a logarithmic frequency grid.

A 3001-sample input/output window pair is turned into a 168 x 11 real
tensor: the STFT of each signal is evaluated at 42 frequencies (0 Hz plus
41 points spaced exponentially from 0.1 to 10 Hz), using a 2000-sample
window hopped by 100 samples (11 frames), and the real parts and phase
angles of both spectrograms are stacked row-wise.

The grid is non-uniform, so the transform is evaluated by direct
summation against precomputed complex kernels rather than an FFT.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

FREQ_COUNT = 42
WINDOW_SAMPLES = 3001  # 3 s at 1 kHz, endpoints inclusive
STFT_WINDOW = 2000  # 2 s at 1 kHz
STFT_HOP = 100  # 95% overlap
FRAME_COUNT = 11
FEATURE_ROWS = 4 * FREQ_COUNT
SAMPLE_RATE = 1000.0

# |z| below this is treated as zero when extracting the phase angle
_PHASE_EPS = 1e-300


def log_freq_grid() -> np.ndarray:
    """42 analysis frequencies: 0 Hz, then 10^((h-1)/20 - 1) Hz for h=1..41."""
    grid = np.empty(FREQ_COUNT)
    grid[0] = 0.0
    grid[1:] = 10.0 ** (np.arange(FREQ_COUNT - 1) / 20.0 - 1.0)
    return grid


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


@lru_cache(maxsize=4)
def _kernel(length: int, fs: float, rectangular: bool = False) -> np.ndarray:
    """(FREQ_COUNT, length) kernel g[k] * exp(-j*2*pi*f*k/fs)."""
    grid = log_freq_grid()
    g = np.ones(length) if rectangular else hann_window(length)
    k = np.arange(length)
    return g * np.exp(-2j * np.pi * np.outer(grid, k) / fs)


def stft(
    x: np.ndarray,
    *,
    window_len: int = STFT_WINDOW,
    hop: int = STFT_HOP,
    fs: float = SAMPLE_RATE,
    rectangular: bool = False,
) -> np.ndarray:
    """Complex spectrogram (FREQ_COUNT, frames) on the log-frequency grid.

    Frame m covers samples m*hop .. m*hop+window_len-1 of x; the complex
    exponential uses the absolute sample index within x, so
    X[m, h] = sum_k x[m*hop + k] * g[k] * exp(-j*2*pi*f[h]*(m*hop+k)/fs).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("signal must be 1-D")
    if x.size < window_len:
        raise ValueError(f"signal length {x.size} < window length {window_len}")
    if hop < 1:
        raise ValueError(f"hop must be >= 1, got {hop}")
    n_frames = (x.size - window_len) // hop + 1
    kernel = _kernel(window_len, fs, rectangular)
    frames = np.lib.stride_tricks.sliding_window_view(x, window_len)[::hop][:n_frames]
    spec = kernel @ frames.T  # (FREQ_COUNT, n_frames)
    # shift each frame's phase reference to the absolute start of x
    grid = log_freq_grid()
    shift = np.exp(-2j * np.pi * np.outer(grid, hop * np.arange(n_frames)) / fs)
    return spec * shift


def phase_angle(z: np.ndarray) -> np.ndarray:
    """Phase in (-pi, pi]; exact zeros (and denormals) map to 0."""
    ang = np.arctan2(z.imag, z.real)
    ang[np.abs(z) < _PHASE_EPS] = 0.0
    return ang


@dataclass(frozen=True)
class StftConfig:
    """Featurization parameters, recorded in dataset manifests."""

    window_len: int = STFT_WINDOW
    hop: int = STFT_HOP
    fs: float = SAMPLE_RATE
    rectangular: bool = False
    phase_convention: str = "absolute-time"

    def to_dict(self) -> dict:
        return {
            "window_len": self.window_len,
            "hop": self.hop,
            "fs": self.fs,
            "rectangular": self.rectangular,
            "phase_convention": self.phase_convention,
        }


def featurize_pair(
    u_win: np.ndarray,
    y_win: np.ndarray,
    config: StftConfig = StftConfig(),
) -> np.ndarray:
    """Stack [real(U); real(Y); phase(U); phase(Y)] into a (168, 11) tensor."""
    u_win = np.asarray(u_win, dtype=float)
    y_win = np.asarray(y_win, dtype=float)
    if u_win.shape != y_win.shape:
        raise ValueError(
            f"input/output window length mismatch: {u_win.shape} vs {y_win.shape}"
        )
    if u_win.size != WINDOW_SAMPLES:
        raise ValueError(f"window must have {WINDOW_SAMPLES} samples, got {u_win.size}")
    spec_u = stft(u_win, window_len=config.window_len, hop=config.hop,
                  fs=config.fs, rectangular=config.rectangular)
    spec_y = stft(y_win, window_len=config.window_len, hop=config.hop,
                  fs=config.fs, rectangular=config.rectangular)
    return np.concatenate(
        [spec_u.real, spec_y.real, phase_angle(spec_u), phase_angle(spec_y)]
    )


def featurize_windows(
    u: np.ndarray,
    y: np.ndarray,
    starts: np.ndarray,
    config: StftConfig = StftConfig(),
    out_dtype=np.float32,
) -> np.ndarray:
    """Featurize many windows of one trajectory in a single pass.

    Equivalent to stacking featurize_pair over u[s:s+3001], y[s:s+3001]
    for each start s, but shares one kernel matmul across all windows.
    Returns (len(starts), 168, 11).
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    starts = np.asarray(starts, dtype=np.intp)
    if starts.size == 0:
        return np.empty((0, FEATURE_ROWS, FRAME_COUNT), dtype=out_dtype)
    if starts.min() < 0 or starts.max() + WINDOW_SAMPLES > u.size:
        raise ValueError("window start out of range")
    kernel = _kernel(config.window_len, config.fs, config.rectangular)
    grid = log_freq_grid()
    shift = np.exp(
        -2j * np.pi * np.outer(grid, config.hop * np.arange(FRAME_COUNT)) / config.fs
    )
    # frame start indices, shape (n_windows, FRAME_COUNT)
    frame_starts = starts[:, None] + config.hop * np.arange(FRAME_COUNT)[None, :]
    out = np.empty((starts.size, FEATURE_ROWS, FRAME_COUNT), dtype=out_dtype)
    for sig_idx, signal in enumerate((u, y)):
        segs = np.lib.stride_tricks.sliding_window_view(signal, config.window_len)
        frames = segs[frame_starts.ravel()]  # (n_windows*FRAME_COUNT, window_len)
        spec = (kernel @ frames.T).reshape(FREQ_COUNT, starts.size, FRAME_COUNT)
        spec = spec.transpose(1, 0, 2) * shift[None, :, :]
        out[:, sig_idx * FREQ_COUNT : (sig_idx + 1) * FREQ_COUNT] = spec.real
        out[:, (2 + sig_idx) * FREQ_COUNT : (3 + sig_idx) * FREQ_COUNT] = phase_angle(spec)
    return out


def expected_frame_count(k: float = 2.0 / 3.0, p: float = 0.95) -> float:
    """Frame count implied by window fraction k and overlap ratio p."""
    return (1.0 - k) / (k * (1.0 - p)) + 1.0

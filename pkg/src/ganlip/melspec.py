"""Log-mel-spectrogram windows centered on video frames.

The audio condition for a frame is an n_mels x MEL_WINDOW_COLS slice of the
full log-mel spectrogram, centered on the spectrogram column nearest the
frame's timestamp (half the columns before, half after). Columns that fall
outside the audio are filled with the configured log floor.

Conventions: Hann analysis window, reflect-padded centered STFT with columns
at multiples of the hop, HTK mel scale 2595*log10(1 + f/700), filter centers
equally spaced in mel between fmin and fmax, log power ln(power + e^floor)
clamped at the floor.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .media_io import AudioSignal

MEL_WINDOW_COLS = 27


class MelError(ValueError):
    pass


@dataclass
class MelConfig:
    sample_rate: int = 16000
    fft_size: int = 800
    hop: int = 200
    win_length: int = 800
    n_mels: int = 80
    fmin: float = 55.0
    fmax: float = 7600.0
    log_floor: float = math.log(1e-5)

    def __post_init__(self):
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise MelError("need 0 <= fmin < fmax <= sample_rate/2")
        if not (0 < self.hop <= self.win_length <= self.fft_size):
            raise MelError("need 0 < hop <= win_length <= fft_size")
        if self.n_mels < 1:
            raise MelError("n_mels must be >= 1")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass
class MelSpectrogram:
    n_mels: int
    n_frames: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64).reshape(
            self.n_mels, self.n_frames
        )
        if not np.all(np.isfinite(self.data)):
            raise MelError("mel values must be finite")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window: endpoints do not double up when hopped."""
    k = np.arange(n, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


def stft_magnitude(signal: AudioSignal, cfg: MelConfig) -> np.ndarray:
    """Short-time magnitude spectra, shape (fft_size/2 + 1, 1 + len // hop).

    The signal is reflect-padded by fft_size/2 on each side so column t is
    the windowed DFT magnitude of the slice centered on sample t*hop.
    """
    x = signal.samples
    if x.size < cfg.win_length:
        raise MelError(
            f"signal of {x.size} samples shorter than win_length {cfg.win_length}"
        )
    window = hann_window(cfg.win_length)
    if cfg.win_length < cfg.fft_size:
        lpad = (cfg.fft_size - cfg.win_length) // 2
        window = np.pad(window, (lpad, cfg.fft_size - cfg.win_length - lpad))

    half = cfg.fft_size // 2
    padded = np.pad(x, (half, half), mode="reflect")
    n_cols = 1 + x.size // cfg.hop
    starts = np.arange(n_cols) * cfg.hop
    idx = starts[:, None] + np.arange(cfg.fft_size)[None, :]
    frames = padded[idx] * window[None, :]
    return np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)).T


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape (n_mels, fft_size/2+1).

    Filter k rises linearly from mel point k to k+1 and falls to k+2, with the
    n_mels + 2 points equally spaced in mel between fmin and fmax, evaluated
    at the FFT bin center frequencies.
    """
    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_hz = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.fft_size

    bin_of_center = np.round(hz_pts * cfg.fft_size / cfg.sample_rate).astype(int)
    if np.any(np.diff(bin_of_center) < 1):
        raise MelError(
            f"n_mels={cfg.n_mels} too large for fft_size={cfg.fft_size}: "
            "adjacent filter centers collapse onto the same FFT bin"
        )

    left = hz_pts[:-2][:, None]
    center = hz_pts[1:-1][:, None]
    right = hz_pts[2:][:, None]
    up = (bin_hz[None, :] - left) / (center - left)
    down = (right - bin_hz[None, :]) / (right - center)
    return np.maximum(0.0, np.minimum(up, down))


def filter_centers_hz(cfg: MelConfig) -> np.ndarray:
    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(mel_pts[1:-1])


def log_mel_spectrogram(signal: AudioSignal, cfg: MelConfig) -> np.ndarray:
    """Full log-mel spectrogram, shape (n_mels, n_columns)."""
    mag = stft_magnitude(signal, cfg)
    power = mel_filterbank(cfg) @ (mag**2)
    eps = math.exp(cfg.log_floor)
    return np.maximum(np.log(power + eps), cfg.log_floor)


def window_columns(full: np.ndarray, center_col: int, n_cols: int, fill: float) -> np.ndarray:
    """n_cols columns of full centered on center_col, out-of-range filled."""
    half = n_cols // 2
    out = np.full((full.shape[0], n_cols), fill, dtype=np.float64)
    lo = center_col - half
    src_lo = max(lo, 0)
    src_hi = min(lo + n_cols, full.shape[1])
    if src_lo < src_hi:
        out[:, src_lo - lo : src_hi - lo] = full[:, src_lo:src_hi]
    return out


def frame_center_column(frame_index: int, fps: float, cfg: MelConfig) -> int:
    return int(round(frame_index / fps * cfg.sample_rate / cfg.hop))


def mel_window_for_frame(signal: AudioSignal, frame_index: int, fps: float,
                         cfg: MelConfig, n_cols: int = MEL_WINDOW_COLS) -> MelSpectrogram:
    """Log-mel window of n_cols columns centered on the frame's timestamp."""
    if signal.samples.size == 0:
        raise MelError("empty audio signal")
    if frame_index < 0 or fps <= 0:
        raise MelError("frame_index must be >= 0 and fps positive")
    if frame_index / fps > signal.duration:
        raise MelError(
            f"frame {frame_index} at {frame_index / fps:.3f}s is past the "
            f"{signal.duration:.3f}s of audio"
        )
    full = log_mel_spectrogram(signal, cfg)
    center = frame_center_column(frame_index, fps, cfg)
    data = window_columns(full, center, n_cols, cfg.log_floor)
    return MelSpectrogram(n_mels=cfg.n_mels, n_frames=n_cols, data=data)


# ---------------------------------------------------------------------------
# MEL1 file format

MEL1_MAGIC = b"MEL1"


def write_mel1(path, mel: MelSpectrogram):
    with open(path, "wb") as fh:
        fh.write(MEL1_MAGIC)
        fh.write(struct.pack("<II", mel.n_mels, mel.n_frames))
        fh.write(np.ascontiguousarray(mel.data, dtype="<f4").tobytes())


def read_mel1(path) -> MelSpectrogram:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MEL1_MAGIC:
            raise MelError(f"bad magic {magic!r} in {path}")
        m, t = struct.unpack("<II", fh.read(8))
        raw = fh.read(4 * m * t)
        if len(raw) != 4 * m * t:
            raise MelError(f"truncated mel file {path}")
        data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(m, t)
    return MelSpectrogram(n_mels=m, n_frames=t, data=data)

"""Procedural desk-scale corpus where audio genuinely predicts the mouth.

Each synthetic video has a fixed smooth base pattern (its "face"). A scalar
phoneme signal phi in [-1, 1], periodic per video, drives two things at once:
the lower half of every frame is shifted by MOUTH_DEFORM * phi (kept inside
[0, 1] without clipping, so lower-half mean intensity is exactly affine in
phi), and
the matching mel window is a Gaussian ridge whose row position encodes phi.
A model that reads the audio can therefore reconstruct the mouth region, and
frames with equal phi have bit-identical lower halves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..media_io import DEFAULT_ALPHA_MAX, FramePair, ImageTensor, make_frame_pairs
from ..melspec import MelSpectrogram

TOY_MEL_SHAPE = (16, 9)
# toy mels live in [0, 1]; the nets see 2*mel - 1
TOY_AUDIO_SCALE = 2.0
TOY_AUDIO_SHIFT = -1.0
MOUTH_DEFORM = 0.2


@dataclass
class ToyVideo:
    video_id: str
    frames: list
    mels: list
    phonemes: np.ndarray


def _phoneme_mel(phi: float) -> np.ndarray:
    m, t = TOY_MEL_SHAPE
    center = (m - 1) * (phi + 1.0) / 2.0
    rows = np.exp(-((np.arange(m) - center) ** 2) / (2.0 * 1.5**2))
    envelope = 1.0 - np.abs(np.arange(t) - t // 2) / (t // 2 + 1.0)
    return rows[:, None] * envelope[None, :]


def make_toy_dataset(n_videos: int = 20, frames_per_video: int = 30,
                     image_size: int = 16, seed: int = 0,
                     channels: int = 1) -> list[ToyVideo]:
    if image_size < 8:
        raise ValueError("image_size must be >= 8")
    h = w = image_size
    yy, xx = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")

    videos = []
    for vid in range(n_videos):
        rng = np.random.default_rng([seed, vid])
        base2d = 0.45 + 0.2 * np.sin(
            2.0 * np.pi * (rng.integers(1, 3) * yy + rng.integers(1, 3) * xx)
            + rng.uniform(0.0, 2.0 * np.pi)
        )
        base = np.repeat(base2d[:, :, None], channels, axis=2)
        # odd periods only: with |shift| <= 6 < period, sin never repeats a
        # value inside a pair, so a reference frame never ties its target
        period = 2 * int(rng.integers(4, 8)) + 1
        phase = int(rng.integers(period))

        frames, mels, phis = [], [], []
        for t in range(frames_per_video):
            phi = float(np.sin(2.0 * np.pi * ((t + phase) % period) / period))
            frame = base.copy()
            frame[h // 2 :, :, :] += MOUTH_DEFORM * phi
            frames.append(ImageTensor(height=h, width=w, channels=channels, data=frame))
            mel = _phoneme_mel(phi)
            mels.append(MelSpectrogram(n_mels=mel.shape[0], n_frames=mel.shape[1], data=mel))
            phis.append(phi)
        videos.append(ToyVideo(video_id=f"toy{vid:03d}", frames=frames,
                               mels=mels, phonemes=np.array(phis)))
    return videos


def toy_frame_pairs(videos: list, alpha_max: int = DEFAULT_ALPHA_MAX,
                    seed: int = 0) -> list:
    """(video_id, FramePair) tuples over all videos, one shared rng."""
    rng = np.random.default_rng([seed, 982451653])
    out = []
    for video in videos:
        for pair in make_frame_pairs(video.frames, video.mels, alpha_max, rng):
            out.append((video.video_id, pair))
    return out


def assemble_batch(pairs: list, audio_scale: float = TOY_AUDIO_SCALE,
                   audio_shift: float = TOY_AUDIO_SHIFT) -> dict:
    """FramePairs to flat arrays in net ranges: images to [-1, 1] via 2x-1."""
    pairs = [p[1] if isinstance(p, tuple) else p for p in pairs]
    first = pairs[0]
    image_shape = (first.target.height, first.target.width, first.target.channels)
    mel_shape = (first.audio.n_mels, first.audio.n_frames)
    s = np.stack([2.0 * p.target.data.reshape(-1) - 1.0 for p in pairs])
    s_prime = np.stack([2.0 * p.reference.data.reshape(-1) - 1.0 for p in pairs])
    audio = np.stack([p.audio.data.reshape(-1) * audio_scale + audio_shift
                      for p in pairs])
    return {"s": s, "s_prime": s_prime, "audio": audio,
            "image_shape": image_shape, "mel_shape": mel_shape}


def batch_stream(pairs: list, batch_size: int, epochs: int, seed: int,
                 audio_scale: float = TOY_AUDIO_SCALE,
                 audio_shift: float = TOY_AUDIO_SHIFT) -> list:
    """Deterministic epoch-shuffled batches; singleton remainders are dropped
    because the unsynced-audio pairing needs at least two rows."""
    if not pairs:
        raise ValueError("no pairs to batch")
    rng = np.random.default_rng([seed, 15485863])
    batches = []
    n = len(pairs)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            chunk = [pairs[k] for k in order[lo : lo + batch_size]]
            if len(chunk) < 2:
                continue
            batches.append(assemble_batch(chunk, audio_scale, audio_shift))
    return batches

"""Shared builders for synthetic on-disk corpora used by the io and cli tests."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from ganlip.media_io import AudioSignal, ImageTensor, save_frame, save_wav


def moving_blob_frame(t: int, size: int, channels: int = 3) -> ImageTensor:
    """Gradient background with a bright square that slides across frames."""
    y, x = np.mgrid[0:size, 0:size]
    base = 0.2 + 0.3 * (x + y) / (2.0 * (size - 1))
    img = np.repeat(base[:, :, None], channels, axis=2)
    cx = (2 * t + 3) % max(size - 4, 1)
    img[2:6, cx : cx + 4, :] = 0.9
    return ImageTensor(height=size, width=size, channels=channels, data=img)


def build_raw_corpus(root: Path, n_videos: int = 2, n_frames: int = 8,
                     size: int = 24, fps: float = 25.0, rate: int = 16000,
                     with_bboxes: bool = False) -> Path:
    """Writes PNG frames, WAV audio and a JSONL manifest; returns the manifest path."""
    root = Path(root)
    lines = []
    for v in range(n_videos):
        vdir = root / f"vid{v:02d}"
        vdir.mkdir(parents=True, exist_ok=True)
        for t in range(n_frames):
            save_frame(moving_blob_frame(t + v, size), vdir / f"frame_{t:05d}.png")
        if with_bboxes:
            with open(vdir / "bboxes.csv", "w", newline="\n") as fh:
                fh.write("frame_index,x,y,w,h\n")
                for t in range(n_frames):
                    fh.write(f"{t},2,2,{size - 4},{size - 4}\n")
        n_samples = int(rate * n_frames / fps)
        tt = np.arange(n_samples) / rate
        tone = 0.4 * np.sin(2 * math.pi * (220 + 55 * v) * tt)
        wav_path = root / f"vid{v:02d}.wav"
        save_wav(AudioSignal(samples=tone, sample_rate=rate), wav_path)
        lines.append({
            "video_id": f"vid{v:02d}", "speaker_id": f"s{v % 2}",
            "frame_dir": str(vdir), "wav": str(wav_path),
            "n_frames": n_frames, "fps": fps,
        })
    manifest = root / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for obj in lines:
            fh.write(json.dumps(obj) + "\n")
    return manifest


@pytest.fixture
def raw_corpus(tmp_path):
    return build_raw_corpus(tmp_path / "raw")

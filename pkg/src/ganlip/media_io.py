"""Frame and audio ingestion, face crop/resize, frame-shift pairing, splits.

Frames arrive pre-extracted as 8-bit PNGs; bounding boxes come from an
optional sidecar CSV (full frame otherwise). Images are stored in [0, 1].
Target/reference pairing draws a signed shift of 1..alpha_max frames; near the
ends of a video the sign is flipped, then the shift redrawn from whatever
offsets remain feasible.
"""

from __future__ import annotations

import csv
import json
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

DEFAULT_ALPHA_MAX = 6
DEFAULT_SAMPLE_RATE = 16000


class MediaError(ValueError):
    pass


@dataclass
class ImageTensor:
    """H x W x C image, values in [0, 1], row-major."""

    height: int
    width: int
    channels: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64).reshape(
            self.height, self.width, self.channels
        )
        if self.channels not in (1, 3):
            raise MediaError(f"unsupported channel count {self.channels}")
        if self.data.min() < -1e-12 or self.data.max() > 1.0 + 1e-12:
            raise MediaError("image values must lie in [0, 1]")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageTensor":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(height=h, width=w, channels=c, data=arr)


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise MediaError("sample_rate must be positive")
        if self.samples.size and np.abs(self.samples).max() > 1.0 + 1e-12:
            raise MediaError("samples must lie in [-1, 1]")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class FramePair:
    """Target frame S, shifted reference S', the shift, and the audio window."""

    target: ImageTensor
    reference: ImageTensor
    alpha: int
    frame_index: int
    audio: "object" = None  # MelSpectrogram; kept loose to avoid an import cycle

    def __post_init__(self):
        if not 1 <= abs(self.alpha) <= DEFAULT_ALPHA_MAX:
            raise MediaError(f"|alpha| must be in 1..{DEFAULT_ALPHA_MAX}, got {self.alpha}")
        ts = (self.target.height, self.target.width, self.target.channels)
        rs = (self.reference.height, self.reference.width, self.reference.channels)
        if ts != rs:
            raise MediaError("target and reference dimensions differ")


@dataclass
class ManifestEntry:
    video_id: str
    speaker_id: str
    frame_dir: str
    wav: str
    n_frames: int
    fps: float


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        ids = [e.video_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise MediaError("manifest video_ids must be unique")
        for e in self.entries:
            if e.n_frames < 1:
                raise MediaError(f"{e.video_id}: n_frames must be >= 1")
            if e.fps <= 0:
                raise MediaError(f"{e.video_id}: fps must be positive")

    def by_speaker(self) -> dict[str, list[ManifestEntry]]:
        groups: dict[str, list[ManifestEntry]] = {}
        for e in self.entries:
            groups.setdefault(e.speaker_id, []).append(e)
        return groups


@dataclass
class DatasetSplit:
    name: str
    video_ids: set[str]
    role: str  # train | test


# ---------------------------------------------------------------------------
# images


def load_frame(path) -> ImageTensor:
    """8-bit RGB or grayscale raster image, scaled to [0, 1] by /255."""
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise MediaError(f"unreadable image {path}: {exc}") from exc
    if img.mode not in ("RGB", "L"):
        if img.mode in ("RGBA", "P", "LA", "I;16"):
            raise MediaError(f"unsupported image mode {img.mode} in {path}")
        raise MediaError(f"unsupported image mode {img.mode} in {path}")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return ImageTensor.from_array(arr)


def save_frame(img: ImageTensor, path):
    arr = np.round(img.data * 255.0).astype(np.uint8)
    if img.channels == 1:
        pil = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr, mode="RGB")
    pil.save(path, format="PNG")


def crop_and_resize(img: ImageTensor, bbox: tuple[int, int, int, int], out_size: int) -> ImageTensor:
    """Crop bbox=(x, y, w, h) and bilinearly resize to out_size x out_size.

    Sampling uses half-pixel centers: output pixel i maps to source coordinate
    (i + 0.5) * scale - 0.5 inside the crop, clamped at the crop edges. With
    bbox equal to the full image and out_size equal to the source size this is
    an exact copy.
    """
    x, y, w, h = bbox
    if w < 2 or h < 2:
        raise MediaError(f"degenerate bbox {bbox}")
    if x < 0 or y < 0 or x + w > img.width or y + h > img.height:
        raise MediaError(f"bbox {bbox} outside image {img.width}x{img.height}")
    if out_size < 2:
        raise MediaError("output size must be >= 2")

    crop = img.data[y : y + h, x : x + w, :]
    out = np.empty((out_size, out_size, img.channels), dtype=np.float64)

    def sample_coords(n_out, n_src):
        scale = n_src / n_out
        c = (np.arange(n_out) + 0.5) * scale - 0.5
        c = np.clip(c, 0.0, n_src - 1.0)
        lo = np.floor(c).astype(int)
        hi = np.minimum(lo + 1, n_src - 1)
        frac = c - lo
        return lo, hi, frac

    ylo, yhi, fy = sample_coords(out_size, h)
    xlo, xhi, fx = sample_coords(out_size, w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = crop[ylo][:, xlo, :] * (1 - fx) + crop[ylo][:, xhi, :] * fx
    bot = crop[yhi][:, xlo, :] * (1 - fx) + crop[yhi][:, xhi, :] * fx
    out[:] = top * (1 - fy) + bot * fy
    return ImageTensor(height=out_size, width=out_size, channels=img.channels, data=out)


# ---------------------------------------------------------------------------
# pairing


def draw_shift(i: int, n_frames: int, alpha_max: int, rng: np.random.Generator):
    """Signed frame shift for index i, or None when no shift stays in range."""
    alpha = int(rng.integers(1, alpha_max + 1))
    sign = 1 if rng.random() < 0.5 else -1
    if 0 <= i + sign * alpha < n_frames:
        return sign * alpha
    sign = -sign
    if 0 <= i + sign * alpha < n_frames:
        return sign * alpha
    feasible = [
        s * a
        for a in range(1, alpha_max + 1)
        for s in (1, -1)
        if 0 <= i + s * a < n_frames
    ]
    if not feasible:
        return None
    return feasible[int(rng.integers(len(feasible)))]


def make_frame_pairs(frames, mels, alpha_max: int = DEFAULT_ALPHA_MAX,
                     rng: np.random.Generator | None = None) -> list[FramePair]:
    """One pair per frame that has a feasible shifted reference.

    frames and mels are index-aligned; the drawn shift selects the reference
    frame while the audio window stays with the target index.
    """
    if len(frames) == 0:
        raise MediaError("empty frame list")
    if mels is not None and len(mels) != len(frames):
        raise MediaError("frames and mels must be aligned by index")
    if alpha_max < 1:
        raise MediaError("alpha_max must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)

    pairs = []
    for i in range(len(frames)):
        shift = draw_shift(i, len(frames), alpha_max, rng)
        if shift is None:
            continue
        pairs.append(
            FramePair(
                target=frames[i],
                reference=frames[i + shift],
                alpha=shift,
                frame_index=i,
                audio=mels[i] if mels is not None else None,
            )
        )
    return pairs


# ---------------------------------------------------------------------------
# splits


def split_dataset(manifest: CorpusManifest, per_speaker: dict,
                  rng: np.random.Generator | None = None) -> list[DatasetSplit]:
    """Per-speaker draw of test videos first, then nested train subsets.

    per_speaker carries counts for 'small', 'full' and 'test'. The small split
    is a subset of the full split so dataset-size comparisons stay monotone;
    the test split never overlaps either.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    n_small = int(per_speaker["small"])
    n_full = int(per_speaker["full"])
    n_test = int(per_speaker["test"])
    if n_small > n_full:
        raise MediaError("small split cannot exceed full split")

    small_ids: set[str] = set()
    full_ids: set[str] = set()
    test_ids: set[str] = set()
    for speaker, entries in sorted(manifest.by_speaker().items()):
        vids = sorted(e.video_id for e in entries)
        if len(vids) < n_full + n_test:
            raise MediaError(
                f"speaker {speaker} has {len(vids)} videos, needs {n_full + n_test}"
            )
        order = rng.permutation(len(vids))
        picked = [vids[k] for k in order]
        test_ids.update(picked[:n_test])
        train_pool = picked[n_test:]
        full_ids.update(train_pool[:n_full])
        small_ids.update(train_pool[:n_small])

    return [
        DatasetSplit(name="GRIDSmall", video_ids=small_ids, role="train"),
        DatasetSplit(name="GRIDFull", video_ids=full_ids, role="train"),
        DatasetSplit(name="GRIDTest", video_ids=test_ids, role="test"),
    ]


# ---------------------------------------------------------------------------
# audio


def load_wav(path, expected_rate: int = DEFAULT_SAMPLE_RATE) -> AudioSignal:
    """PCM 16-bit mono WAV at the configured rate, scaled to [-1, 1] by /32768."""
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            comptype = wf.getcomptype()
            n = wf.getnframes()
            raw = wf.readframes(n)
    except wave.Error as exc:
        raise MediaError(f"not a readable WAV file {path}: {exc}") from exc
    if comptype != "NONE":
        raise MediaError(f"compressed WAV not supported: {path}")
    if n_channels != 1:
        raise MediaError(f"expected mono audio, got {n_channels} channels: {path}")
    if sampwidth != 2:
        raise MediaError(f"expected 16-bit samples, got {8 * sampwidth}-bit: {path}")
    if rate != expected_rate:
        raise MediaError(f"sample rate {rate} != configured {expected_rate}: {path}")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioSignal(samples=samples, sample_rate=rate)


def save_wav(signal: AudioSignal, path):
    data = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(signal.sample_rate)
        wf.writeframes(data.tobytes())


# ---------------------------------------------------------------------------
# manifest and sidecar files


def read_manifest(path) -> CorpusManifest:
    """JSON Lines, one video per line."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MediaError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            try:
                entries.append(
                    ManifestEntry(
                        video_id=str(obj["video_id"]),
                        speaker_id=str(obj["speaker_id"]),
                        frame_dir=str(obj["frame_dir"]),
                        wav=str(obj["wav"]),
                        n_frames=int(obj["n_frames"]),
                        fps=float(obj["fps"]),
                    )
                )
            except KeyError as exc:
                raise MediaError(f"{path}:{line_no}: missing field {exc}") from exc
    return CorpusManifest(entries=entries)


def write_manifest(manifest: CorpusManifest, path):
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            fh.write(
                json.dumps(
                    {
                        "video_id": e.video_id,
                        "speaker_id": e.speaker_id,
                        "frame_dir": e.frame_dir,
                        "wav": e.wav,
                        "n_frames": e.n_frames,
                        "fps": e.fps,
                    }
                )
                + "\n"
            )


def read_bboxes(path) -> dict[int, tuple[int, int, int, int]]:
    """Per-video sidecar CSV with columns frame_index,x,y,w,h."""
    boxes = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            boxes[int(row["frame_index"])] = (
                int(row["x"]),
                int(row["y"]),
                int(row["w"]),
                int(row["h"]),
            )
    return boxes


def frame_path(frame_dir, index: int) -> Path:
    return Path(frame_dir) / f"frame_{index:05d}.png"

"""Dense conditional generator and discriminator, plus checkpoint I/O.

Both nets are per-sample MLPs over flattened inputs: the generator maps
(reference frame, audio window) to a frame in tanh range [-1, 1]; the
discriminator maps (frame, audio window) to an unbounded scalar score. The
discriminator deliberately contains no operation that mixes rows of a batch,
which the gradient-penalty machinery and its tests rely on.

Checkpoints use a tagged binary format ("CKPT"): u32 tensor count, then per
tensor name length, name bytes, rank, dims and float32 data, all little
endian, tensors sorted by name. Model geometry and the audio feature affine
ride along in a reserved "__meta__" tensor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..media_io import ImageTensor
from ..melspec import MelSpectrogram

HIDDEN_UNITS = 256
META_NAME = "__meta__"


class ModelError(ValueError):
    pass


def _init_dense(rng: np.random.Generator, fan_in: int, fan_out: int):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias."""
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = np.zeros(fan_out)
    return w, b


@dataclass
class ToyGenerator:
    """(S', A) -> S_hat in [-1, 1]; two relu hidden layers, tanh output."""

    image_shape: tuple[int, int, int]
    mel_shape: tuple[int, int]
    hidden: int = HIDDEN_UNITS
    noise_dim: int = 0
    audio_scale: float = 1.0
    audio_shift: float = 0.0
    params: dict = field(default_factory=dict)

    @property
    def image_dim(self) -> int:
        h, w, c = self.image_shape
        return h * w * c

    @property
    def audio_dim(self) -> int:
        m, t = self.mel_shape
        return m * t

    @classmethod
    def create(cls, image_shape, mel_shape, seed: int, hidden: int = HIDDEN_UNITS,
               noise_dim: int = 0, audio_scale: float = 1.0,
               audio_shift: float = 0.0) -> "ToyGenerator":
        g = cls(image_shape=tuple(image_shape), mel_shape=tuple(mel_shape),
                hidden=hidden, noise_dim=noise_dim,
                audio_scale=audio_scale, audio_shift=audio_shift)
        rng = np.random.default_rng(seed)
        d_in = g.image_dim + g.audio_dim + noise_dim
        w1, b1 = _init_dense(rng, d_in, hidden)
        w2, b2 = _init_dense(rng, hidden, hidden)
        w3, b3 = _init_dense(rng, hidden, g.image_dim)
        g.params = {"g_w1": w1, "g_b1": b1, "g_w2": w2, "g_b2": b2,
                    "g_w3": w3, "g_b3": b3}
        return g

    def bind(self, tape: ad.Tape) -> dict:
        return {name: tape.leaf(arr) for name, arr in sorted(self.params.items())}

    def apply(self, bound: dict, s_prime: ad.Value, audio: ad.Value,
              z: ad.Value | None = None) -> ad.Value:
        """Tape forward pass on batches: (N, image_dim) x (N, audio_dim)."""
        if s_prime.shape[1] != self.image_dim or audio.shape[1] != self.audio_dim:
            raise ModelError(
                f"input dims {s_prime.shape[1]}/{audio.shape[1]} do not match "
                f"generator {self.image_dim}/{self.audio_dim}"
            )
        parts = [s_prime, audio]
        if self.noise_dim:
            if z is None or z.shape[1] != self.noise_dim:
                raise ModelError(f"generator expects noise of dim {self.noise_dim}")
            parts.append(z)
        x = ad.concat_cols(parts)
        h = ad.relu(ad.affine(x, bound["g_w1"], bound["g_b1"]))
        h = ad.relu(ad.affine(h, bound["g_w2"], bound["g_b2"]))
        return ad.tanh(ad.affine(h, bound["g_w3"], bound["g_b3"]))

    def forward(self, s_prime: np.ndarray, audio: np.ndarray,
                z: np.ndarray | None = None) -> np.ndarray:
        """Plain numpy forward pass, identical arithmetic to apply()."""
        parts = [np.atleast_2d(s_prime), np.atleast_2d(audio)]
        if self.noise_dim:
            if z is None:
                raise ModelError(f"generator expects noise of dim {self.noise_dim}")
            parts.append(np.atleast_2d(z))
        x = np.concatenate(parts, axis=1)
        p = self.params
        h = np.maximum(x @ p["g_w1"] + p["g_b1"], 0.0)
        h = np.maximum(h @ p["g_w2"] + p["g_b2"], 0.0)
        return np.tanh(h @ p["g_w3"] + p["g_b3"])

    def audio_features(self, mel: MelSpectrogram) -> np.ndarray:
        if (mel.n_mels, mel.n_frames) != self.mel_shape:
            raise ModelError(
                f"mel shape {(mel.n_mels, mel.n_frames)} does not match "
                f"generator {self.mel_shape}"
            )
        return mel.data.reshape(-1) * self.audio_scale + self.audio_shift

    def save(self, path):
        h, w, c = self.image_shape
        m, t = self.mel_shape
        meta = np.array([h, w, c, m, t, self.hidden, self.noise_dim,
                         self.audio_scale, self.audio_shift])
        write_ckpt(path, {**self.params, META_NAME: meta})

    @classmethod
    def load(cls, path) -> "ToyGenerator":
        tensors = read_ckpt(path)
        meta = tensors.pop(META_NAME, None)
        if meta is None or meta.size != 9:
            raise ModelError(f"checkpoint {path} lacks generator metadata")
        h, w, c, m, t, hidden, noise_dim = (int(round(v)) for v in meta[:7])
        g = cls(image_shape=(h, w, c), mel_shape=(m, t), hidden=hidden,
                noise_dim=noise_dim, audio_scale=float(meta[7]),
                audio_shift=float(meta[8]), params=tensors)
        expected = {"g_w1", "g_b1", "g_w2", "g_b2", "g_w3", "g_b3"}
        if set(tensors) != expected:
            raise ModelError(f"checkpoint {path} has tensors {sorted(tensors)}, "
                             f"expected {sorted(expected)}")
        if tensors["g_w3"].shape != (hidden, h * w * c):
            raise ModelError(f"checkpoint {path} geometry does not match metadata")
        return g


@dataclass
class ToyDiscriminator:
    """(S, A) -> scalar score; leaky relu hidden layers, linear output.

    Acts on each batch row independently: no batch normalization or any
    other cross-row statistic anywhere in the forward pass.
    """

    image_shape: tuple[int, int, int]
    mel_shape: tuple[int, int]
    hidden: int = HIDDEN_UNITS
    params: dict = field(default_factory=dict)

    @property
    def image_dim(self) -> int:
        h, w, c = self.image_shape
        return h * w * c

    @property
    def audio_dim(self) -> int:
        m, t = self.mel_shape
        return m * t

    @classmethod
    def create(cls, image_shape, mel_shape, seed: int,
               hidden: int = HIDDEN_UNITS) -> "ToyDiscriminator":
        d = cls(image_shape=tuple(image_shape), mel_shape=tuple(mel_shape),
                hidden=hidden)
        rng = np.random.default_rng(seed)
        d_in = d.image_dim + d.audio_dim
        w1, b1 = _init_dense(rng, d_in, hidden)
        w2, b2 = _init_dense(rng, hidden, hidden)
        w3, b3 = _init_dense(rng, hidden, 1)
        d.params = {"d_w1": w1, "d_b1": b1, "d_w2": w2, "d_b2": b2,
                    "d_w3": w3, "d_b3": b3}
        return d

    def bind(self, tape: ad.Tape) -> dict:
        return {name: tape.leaf(arr) for name, arr in sorted(self.params.items())}

    def apply(self, bound: dict, faces: ad.Value, audio: ad.Value) -> ad.Value:
        """Tape forward pass: (N, image_dim) x (N, audio_dim) -> scores (N,)."""
        if faces.shape[1] != self.image_dim or audio.shape[1] != self.audio_dim:
            raise ModelError(
                f"input dims {faces.shape[1]}/{audio.shape[1]} do not match "
                f"discriminator {self.image_dim}/{self.audio_dim}"
            )
        x = ad.concat_cols([faces, audio])
        h = ad.leaky_relu(ad.affine(x, bound["d_w1"], bound["d_b1"]))
        h = ad.leaky_relu(ad.affine(h, bound["d_w2"], bound["d_b2"]))
        out = ad.affine(h, bound["d_w3"], bound["d_b3"])
        return ad.reshape(out, (faces.shape[0],))

    def forward(self, faces: np.ndarray, audio: np.ndarray) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(faces), np.atleast_2d(audio)], axis=1)
        p = self.params
        h = x @ p["d_w1"] + p["d_b1"]
        h = np.where(h > 0, h, 0.2 * h)
        h = h @ p["d_w2"] + p["d_b2"]
        h = np.where(h > 0, h, 0.2 * h)
        return (h @ p["d_w3"] + p["d_b3"]).reshape(-1)

    def save(self, path):
        h, w, c = self.image_shape
        m, t = self.mel_shape
        meta = np.array([h, w, c, m, t, self.hidden, 0, 1.0, 0.0])
        write_ckpt(path, {**self.params, META_NAME: meta})

    @classmethod
    def load(cls, path) -> "ToyDiscriminator":
        tensors = read_ckpt(path)
        meta = tensors.pop(META_NAME, None)
        if meta is None or meta.size != 9:
            raise ModelError(f"checkpoint {path} lacks discriminator metadata")
        h, w, c, m, t, hidden = (int(round(v)) for v in meta[:6])
        d = cls(image_shape=(h, w, c), mel_shape=(m, t), hidden=hidden,
                params=tensors)
        expected = {"d_w1", "d_b1", "d_w2", "d_b2", "d_w3", "d_b3"}
        if set(tensors) != expected:
            raise ModelError(f"checkpoint {path} has tensors {sorted(tensors)}, "
                             f"expected {sorted(expected)}")
        return d


def generate(g: ToyGenerator, s_prime: ImageTensor, mel: MelSpectrogram) -> ImageTensor:
    """One frame: [0,1] reference in, [0,1] output via the tanh range."""
    h, w, c = g.image_shape
    if (s_prime.height, s_prime.width, s_prime.channels) != (h, w, c):
        raise ModelError(
            f"reference frame {s_prime.height}x{s_prime.width}x{s_prime.channels}"
            f" does not match generator {h}x{w}x{c}"
        )
    x = 2.0 * s_prime.data.reshape(1, -1) - 1.0
    a = g.audio_features(mel).reshape(1, -1)
    y = g.forward(x, a)
    out = (y.reshape(h, w, c) + 1.0) / 2.0
    return ImageTensor(height=h, width=w, channels=c, data=out)


# ---------------------------------------------------------------------------
# CKPT checkpoint format

CKPT_MAGIC = b"CKPT"


def write_ckpt(path, tensors: dict):
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_ckpt(path) -> dict:
    def take(fh, n):
        raw = fh.read(n)
        if len(raw) != n:
            raise ModelError(f"truncated checkpoint {path}")
        return raw

    tensors = {}
    with open(path, "rb") as fh:
        if take(fh, 4) != CKPT_MAGIC:
            raise ModelError(f"bad checkpoint magic in {path}")
        (count,) = struct.unpack("<I", take(fh, 4))
        for _ in range(count):
            (name_len,) = struct.unpack("<I", take(fh, 4))
            name = take(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", take(fh, 4))
            shape = struct.unpack(f"<{rank}I", take(fh, 4 * rank)) if rank else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(take(fh, 4 * n), dtype="<f4").astype(np.float64)
            tensors[name] = data.reshape(shape)
    return tensors

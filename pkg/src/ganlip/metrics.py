"""Image quality metrics and distribution distance used for model comparison.

SSIM follows the standard 11x11 Gaussian-window formulation (sigma 1.5,
k1=0.01, k2=0.03) on [0, 1] images; PSNR uses max_val=1.0 with an infinity
sentinel for identical inputs. The Frechet distance between Gaussian fits of
embedding sets is computed through a symmetric PSD matrix square root, so the
trace term never needs the square root of an asymmetric product.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .media_io import ImageTensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class MetricsError(ValueError):
    pass


@dataclass
class GaussianStats:
    """Mean and covariance of an embedding set."""

    dim: int
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.mean.shape != (self.dim,) or self.cov.shape != (self.dim, self.dim):
            raise MetricsError("GaussianStats: mean/cov shape does not match dim")
        if not np.allclose(self.cov, self.cov.T, atol=1e-9):
            raise MetricsError("GaussianStats: covariance not symmetric")


@dataclass
class EmbeddingSet:
    vectors: np.ndarray  # (n, dim)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 2:
            raise MetricsError("EmbeddingSet needs at least two vectors")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class MetricsSummary:
    """Boxplot-style reduction of a score list (Tukey fences at 1.5 IQR)."""

    mean: float
    median: float
    max: float
    min: float
    q1: float
    q3: float
    lower_fence: float
    upper_fence: float
    n: int
    n_outliers: int

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "median": self.median,
            "max": self.max,
            "min": self.min,
            "q1": self.q1,
            "q3": self.q3,
            "lower_fence": self.lower_fence,
            "upper_fence": self.upper_fence,
            "n": self.n,
            "n_outliers": self.n_outliers,
        }


def _check_same_dims(a: ImageTensor, b: ImageTensor):
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels):
        raise MetricsError(
            f"image dimensions differ: {(a.height, a.width, a.channels)} vs"
            f" {(b.height, b.width, b.channels)}"
        )


def psnr(a: ImageTensor, b: ImageTensor, max_val: float = 1.0) -> float:
    """10*log10(max_val^2 / MSE) over all pixels and channels; inf when MSE=0."""
    _check_same_dims(a, b)
    if max_val <= 0:
        raise MetricsError("max_val must be positive")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val**2 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _local_windows(channel: np.ndarray, size: int) -> np.ndarray:
    # (H-size+1, W-size+1, size, size) view of every fully interior window
    return np.lib.stride_tricks.sliding_window_view(channel, (size, size))


def ssim(a: ImageTensor, b: ImageTensor, data_range: float = 1.0) -> float:
    """Mean local SSIM with an 11x11 Gaussian window; channels are averaged.

    Only windows that fit entirely inside the image contribute, which keeps the
    map free of padding artifacts and easy to cross-check against a direct
    per-pixel evaluation.
    """
    _check_same_dims(a, b)
    if min(a.height, a.width) < SSIM_WINDOW:
        raise MetricsError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    w = gaussian_window()

    scores = []
    for ch in range(a.channels):
        x = _local_windows(a.data[:, :, ch], SSIM_WINDOW)
        y = _local_windows(b.data[:, :, ch], SSIM_WINDOW)
        mu_x = np.einsum("ijkl,kl->ij", x, w)
        mu_y = np.einsum("ijkl,kl->ij", y, w)
        xx = np.einsum("ijkl,kl->ij", x * x, w)
        yy = np.einsum("ijkl,kl->ij", y * y, w)
        xy = np.einsum("ijkl,kl->ij", x * y, w)
        var_x = xx - mu_x**2
        var_y = yy - mu_y**2
        cov_xy = xy - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov_xy + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


def gaussian_stats(e: EmbeddingSet) -> GaussianStats:
    """Sample mean and unbiased (n-1) covariance, symmetrized."""
    mu = e.vectors.mean(axis=0)
    centered = e.vectors - mu
    cov = centered.T @ centered / (e.n - 1)
    cov = (cov + cov.T) / 2.0
    return GaussianStats(dim=e.dim, mean=mu, cov=cov)


def matrix_sqrt_psd(a: np.ndarray, sym_tol: float = 1e-8) -> np.ndarray:
    """Symmetric square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues below 1e-8 * max_eigenvalue are treated as zero, which absorbs
    the small negative values that round-off produces on genuinely PSD inputs.
    """
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise MetricsError("matrix_sqrt_psd: non-finite entries")
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.T).max() > sym_tol * scale:
        raise MetricsError("matrix_sqrt_psd: input not symmetric within tolerance")
    a = (a + a.T) / 2.0
    lam, q = np.linalg.eigh(a)
    lam = np.where(lam < 1e-8 * max(lam.max(), 0.0), np.maximum(lam, 0.0), lam)
    lam = np.maximum(lam, 0.0)
    r = (q * np.sqrt(lam)) @ q.T
    return (r + r.T) / 2.0


def frechet_distance(g1: GaussianStats, g2: GaussianStats) -> float:
    """||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), clamped at 0.

    The cross term is evaluated as Tr((S1^(1/2) S2 S1^(1/2))^(1/2)), which is
    trace-equal to the square root of the product but stays in symmetric PSD
    territory throughout.
    """
    if g1.dim != g2.dim:
        raise MetricsError("frechet_distance: dimension mismatch")
    diff = g1.mean - g2.mean
    s1_half = matrix_sqrt_psd(g1.cov)
    inner = s1_half @ g2.cov @ s1_half
    tr_cross = float(np.trace(matrix_sqrt_psd(inner)))
    d = float(diff @ diff + np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * tr_cross)
    return max(d, 0.0)


def summarize(scores, omit_outliers_in_quartile_plot: bool = True) -> MetricsSummary:
    """Mean/median/max/min plus linear-interpolation quartiles and Tukey fences."""
    arr = np.asarray(list(scores), dtype=np.float64)
    if arr.size == 0:
        raise MetricsError("summarize: empty score list")
    if not np.all(np.isfinite(arr)):
        raise MetricsError("summarize: non-finite scores; filter sentinels upstream")
    q1, med, q3 = np.percentile(arr, [25, 50, 75], method="linear")
    iqr = q3 - q1
    lo = q1 - 1.5 * iqr
    hi = q3 + 1.5 * iqr
    n_out = int(np.sum((arr < lo) | (arr > hi)))
    return MetricsSummary(
        mean=float(arr.mean()),
        median=float(med),
        max=float(arr.max()),
        min=float(arr.min()),
        q1=float(q1),
        q3=float(q3),
        lower_fence=float(lo),
        upper_fence=float(hi),
        n=int(arr.size),
        n_outliers=n_out,
    )


# ---------------------------------------------------------------------------
# embeddings

EMB1_MAGIC = b"EMB1"
TOY_EMBED_DIM = 64
TOY_EMBED_SEED = 7


def toy_embed(images, dim: int = TOY_EMBED_DIM, seed: int = TOY_EMBED_SEED) -> EmbeddingSet:
    """Fixed seeded random projection of flattened images.

    Self-contained stand-in for a pretrained feature extractor; scores are only
    comparable between runs of this same embedder.
    """
    flats = [img.data.reshape(-1) for img in images]
    in_dim = flats[0].size
    if any(f.size != in_dim for f in flats):
        raise MetricsError("toy_embed: images must share dimensions")
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((in_dim, dim)) / math.sqrt(in_dim)
    return EmbeddingSet(np.stack(flats) @ proj)


def toy_embedder_label(dim: int = TOY_EMBED_DIM, seed: int = TOY_EMBED_SEED) -> str:
    return f"toy-randproj-{dim}-seed{seed}"


def write_emb1(path, e: EmbeddingSet):
    with open(path, "wb") as fh:
        fh.write(EMB1_MAGIC)
        fh.write(struct.pack("<II", e.n, e.dim))
        fh.write(e.vectors.astype("<f4").tobytes())


def read_emb1(path) -> EmbeddingSet:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EMB1_MAGIC:
            raise MetricsError(f"not an EMB1 file: {path}")
        n, dim = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(4 * n * dim), dtype="<f4")
        if data.size != n * dim:
            raise MetricsError(f"truncated EMB1 file: {path}")
    return EmbeddingSet(data.reshape(n, dim).astype(np.float64))

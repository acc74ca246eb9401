"""SSIM, PSNR, Fréchet distance and score summaries against direct oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ganlip.media_io import ImageTensor
from ganlip.metrics import (
    EmbeddingSet,
    GaussianStats,
    MetricsError,
    SSIM_K1,
    SSIM_K2,
    SSIM_SIGMA,
    SSIM_WINDOW,
    frechet_distance,
    gaussian_stats,
    gaussian_window,
    matrix_sqrt_psd,
    psnr,
    read_emb1,
    ssim,
    summarize,
    toy_embed,
    toy_embedder_label,
    write_emb1,
)


def image(arr: np.ndarray) -> ImageTensor:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return ImageTensor(height=arr.shape[0], width=arr.shape[1],
                       channels=arr.shape[2], data=arr)


def ssim_direct(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Window-by-window SSIM with explicit python loops, no shared code paths."""
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    half = (SSIM_WINDOW - 1) / 2.0
    coords = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(coords**2) / (2.0 * SSIM_SIGMA**2))
    w = np.outer(g, g)
    w /= w.sum()

    h, width = a.shape
    vals = []
    for i in range(h - SSIM_WINDOW + 1):
        for j in range(width - SSIM_WINDOW + 1):
            x = a[i : i + SSIM_WINDOW, j : j + SSIM_WINDOW]
            y = b[i : i + SSIM_WINDOW, j : j + SSIM_WINDOW]
            mx = (w * x).sum()
            my = (w * y).sum()
            vx = (w * x * x).sum() - mx * mx
            vy = (w * y * y).sum() - my * my
            cxy = (w * x * y).sum() - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# ssim


def test_ssim_identical_images_is_one():
    rng = np.random.default_rng(3)
    img = image(rng.random((16, 16, 3)))
    assert abs(ssim(img, img) - 1.0) < 1e-9


def test_ssim_constant_images_closed_form():
    # zero variance everywhere: score reduces to (2 m1 m2 + c1)/(m1^2 + m2^2 + c1)
    m1, m2 = 0.2, 0.8
    a = image(np.full((12, 12), m1))
    b = image(np.full((12, 12), m2))
    c1 = (SSIM_K1 * 1.0) ** 2
    expected = (2 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1)
    got = ssim(a, b)
    assert abs(got - expected) < 1e-12
    assert abs(got - 0.47067) < 1e-4


def test_ssim_matches_direct_window_loop():
    rng = np.random.default_rng(11)
    for _ in range(5):
        a = rng.random((32, 32))
        b = np.clip(a + 0.15 * rng.standard_normal((32, 32)), 0.0, 1.0)
        assert abs(ssim(image(a), image(b)) - ssim_direct(a, b)) < 1e-6


def test_ssim_averages_channels():
    rng = np.random.default_rng(5)
    planes = [rng.random((14, 14)) for _ in range(3)]
    others = [np.clip(p + 0.1 * rng.standard_normal((14, 14)), 0, 1) for p in planes]
    per_channel = [ssim(image(p), image(q)) for p, q in zip(planes, others)]
    stacked = ssim(image(np.stack(planes, axis=-1)), image(np.stack(others, axis=-1)))
    assert abs(stacked - np.mean(per_channel)) < 1e-12


def test_ssim_rejects_images_smaller_than_window():
    small = image(np.zeros((SSIM_WINDOW - 1, SSIM_WINDOW - 1)))
    with pytest.raises(MetricsError):
        ssim(small, small)


def test_ssim_rejects_mismatched_dims():
    with pytest.raises(MetricsError):
        ssim(image(np.zeros((12, 12))), image(np.zeros((12, 13))))


def test_gaussian_window_normalized_and_symmetric():
    w = gaussian_window()
    assert abs(w.sum() - 1.0) < 1e-12
    assert np.allclose(w, w.T)
    assert w[5, 5] == w.max()


# ---------------------------------------------------------------------------
# psnr


def test_psnr_known_values():
    a = image(np.zeros((8, 8)))
    b = image(np.full((8, 8), 0.1))          # MSE = 0.01 -> 20 dB
    c = image(np.full((8, 8), 0.5))          # MSE = 0.25 -> 10*log10(4)
    assert abs(psnr(a, b) - 20.0) < 1e-9
    assert abs(psnr(a, c) - 10.0 * math.log10(4.0)) < 1e-9


def test_psnr_identical_is_infinite():
    a = image(np.full((8, 8), 0.3))
    assert psnr(a, a) == math.inf


def test_psnr_max_val_shifts_by_constant():
    rng = np.random.default_rng(2)
    a = image(rng.random((8, 8)))
    b = image(rng.random((8, 8)))
    assert abs(psnr(a, b, max_val=2.0) - (psnr(a, b) + 20.0 * math.log10(2.0))) < 1e-9


# ---------------------------------------------------------------------------
# frechet distance


def rand_embeddings(rng, n=200, dim=6):
    return EmbeddingSet(rng.standard_normal((n, dim)))


def test_frechet_distance_to_self_is_zero():
    rng = np.random.default_rng(17)
    g = gaussian_stats(rand_embeddings(rng))
    assert frechet_distance(g, g) < 1e-8


def test_frechet_pure_mean_shift():
    dim = 4
    cov = np.diag([0.5, 1.0, 1.5, 2.0])
    mu = np.zeros(dim)
    shift = np.array([3.0, 4.0, 0.0, 0.0])  # ||shift||^2 = 25
    g1 = GaussianStats(dim=dim, mean=mu, cov=cov)
    g2 = GaussianStats(dim=dim, mean=mu + shift, cov=cov.copy())
    assert abs(frechet_distance(g1, g2) - 25.0) < 1e-8


def test_frechet_commuting_diagonal_closed_form():
    # equal means, covs I and 4I in dim 2: sum (1 - 2)^2 over axes = 2
    g1 = GaussianStats(dim=2, mean=np.zeros(2), cov=np.eye(2))
    g2 = GaussianStats(dim=2, mean=np.zeros(2), cov=4.0 * np.eye(2))
    assert abs(frechet_distance(g1, g2) - 2.0) < 1e-6


def test_frechet_random_commuting_pairs():
    # shared eigenvectors make the closed form sum((sqrt(l)-sqrt(v))^2) exact
    rng = np.random.default_rng(23)
    for _ in range(10):
        dim = int(rng.integers(2, 7))
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        lam = rng.uniform(0.2, 3.0, dim)
        nu = rng.uniform(0.2, 3.0, dim)
        mu1 = rng.standard_normal(dim)
        mu2 = rng.standard_normal(dim)
        g1 = GaussianStats(dim=dim, mean=mu1, cov=(q * lam) @ q.T)
        g2 = GaussianStats(dim=dim, mean=mu2, cov=(q * nu) @ q.T)
        expected = float(((mu1 - mu2) ** 2).sum() + ((np.sqrt(lam) - np.sqrt(nu)) ** 2).sum())
        assert abs(frechet_distance(g1, g2) - expected) < 1e-6


def test_frechet_is_symmetric():
    rng = np.random.default_rng(29)
    g1 = gaussian_stats(rand_embeddings(rng))
    g2 = gaussian_stats(rand_embeddings(rng))
    assert abs(frechet_distance(g1, g2) - frechet_distance(g2, g1)) < 1e-8


def test_frechet_rejects_dim_mismatch():
    g1 = GaussianStats(dim=2, mean=np.zeros(2), cov=np.eye(2))
    g2 = GaussianStats(dim=3, mean=np.zeros(3), cov=np.eye(3))
    with pytest.raises(MetricsError):
        frechet_distance(g1, g2)


def test_gaussian_stats_unbiased_covariance():
    v = np.array([[1.0, 0.0], [3.0, 2.0], [5.0, 4.0]])
    g = gaussian_stats(EmbeddingSet(v))
    assert np.allclose(g.mean, [3.0, 2.0])
    assert np.allclose(g.cov, np.cov(v.T, ddof=1))


# ---------------------------------------------------------------------------
# matrix square root


def test_matrix_sqrt_reconstructs_spd_inputs():
    rng = np.random.default_rng(31)
    for _ in range(10):
        dim = int(rng.integers(2, 16))
        m = rng.standard_normal((dim, dim))
        a = m @ m.T + 0.1 * np.eye(dim)
        r = matrix_sqrt_psd(a)
        assert np.abs(r @ r - a).max() < 1e-8
        assert np.allclose(r, r.T)


def test_matrix_sqrt_handles_rank_deficiency():
    v = np.array([[1.0], [2.0]])
    a = v @ v.T  # rank one, PSD
    r = matrix_sqrt_psd(a)
    assert np.abs(r @ r - a).max() < 1e-10


def test_matrix_sqrt_rejects_asymmetric_input():
    with pytest.raises(MetricsError):
        matrix_sqrt_psd(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_matrix_sqrt_rejects_non_finite():
    with pytest.raises(MetricsError):
        matrix_sqrt_psd(np.array([[np.nan, 0.0], [0.0, 1.0]]))


# ---------------------------------------------------------------------------
# summaries


def test_summarize_worked_example():
    s = summarize([1, 2, 3, 4, 5, 6, 7, 8, 9, 100])
    assert s.mean == 14.5
    assert s.median == 5.5
    assert s.q1 == 3.25
    assert s.q3 == 7.75
    assert s.lower_fence == 3.25 - 1.5 * 4.5
    assert s.upper_fence == 14.5
    assert s.max == 100.0
    assert s.min == 1.0
    assert s.n == 10
    assert s.n_outliers == 1


def test_summarize_as_dict_keys():
    d = summarize([1.0, 2.0, 3.0]).as_dict()
    assert set(d) == {"mean", "median", "max", "min", "q1", "q3",
                      "lower_fence", "upper_fence", "n", "n_outliers"}


def test_summarize_rejects_empty_and_non_finite():
    with pytest.raises(MetricsError):
        summarize([])
    with pytest.raises(MetricsError):
        summarize([1.0, math.inf])
    with pytest.raises(MetricsError):
        summarize([1.0, math.nan])


@given(st.lists(st.floats(min_value=-100, max_value=100, allow_nan=False), min_size=1, max_size=30))
@settings(max_examples=50, deadline=None)
def test_summarize_permutation_invariant(values):
    a = summarize(values)
    b = summarize(list(reversed(values)))
    # the mean may move by an ulp with summation order; order statistics sort
    for key, av in a.as_dict().items():
        assert math.isclose(av, b.as_dict()[key], rel_tol=1e-12, abs_tol=1e-12), key
    assert a.min <= a.q1 <= a.median <= a.q3 <= a.max


# ---------------------------------------------------------------------------
# embeddings


def test_toy_embed_is_deterministic_and_shaped():
    rng = np.random.default_rng(41)
    imgs = [image(rng.random((8, 8))) for _ in range(5)]
    e1 = toy_embed(imgs)
    e2 = toy_embed(imgs)
    assert e1.vectors.shape == (5, 64)
    assert e1.vectors.tobytes() == e2.vectors.tobytes()


def test_toy_embed_rejects_ragged_inputs():
    with pytest.raises(MetricsError):
        toy_embed([image(np.zeros((8, 8))), image(np.zeros((9, 9)))])


def test_toy_embedder_label():
    assert toy_embedder_label() == "toy-randproj-64-seed7"


def test_emb1_round_trip(tmp_path):
    rng = np.random.default_rng(43)
    e = EmbeddingSet(rng.standard_normal((7, 5)).astype(np.float32).astype(np.float64))
    path = tmp_path / "e.emb1"
    write_emb1(path, e)
    back = read_emb1(path)
    assert back.vectors.shape == (7, 5)
    assert np.array_equal(back.vectors, e.vectors)  # exact at f32 precision


def test_emb1_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.emb1"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(MetricsError):
        read_emb1(path)


def test_emb1_rejects_truncation(tmp_path):
    rng = np.random.default_rng(47)
    e = EmbeddingSet(rng.standard_normal((4, 4)))
    path = tmp_path / "t.emb1"
    write_emb1(path, e)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(MetricsError):
        read_emb1(path)

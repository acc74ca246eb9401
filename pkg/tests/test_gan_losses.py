"""Adversarial objectives: closed-form values and parameter-gradient checks."""

import math

import numpy as np
import pytest

import ganlip.autodiff as ad
from ganlip.gan.losses import (
    GP_MODES,
    LossError,
    PROB_CLAMP,
    bce_mean,
    gradient_penalty,
    l1_reconstruction_loss,
    lipgan_adversarial_loss,
    lipgan_generator_loss,
    lipgan_losses,
    wgan_generator_loss,
    wgan_gp_loss,
)
from ganlip.gan.models import ToyDiscriminator

RNG = np.random.default_rng(77)


def small_critic(hidden: int = 4) -> ToyDiscriminator:
    """61-parameter critic on 2x2x1 faces and 2x2 mels."""
    return ToyDiscriminator.create((2, 2, 1), (2, 2), seed=5, hidden=hidden)


def linear_row_critic(w: np.ndarray):
    """Critic whose per-sample gradient is exactly w, ignoring audio."""
    def apply_c(faces, audio):
        # the tape has no broadcasting, so tile w up to the batch shape
        return ad.row_sum(faces * np.broadcast_to(w, faces.shape).copy())
    return apply_c


# ---------------------------------------------------------------------------
# reconstruction


def test_l1_loss_small_example():
    tape = ad.Tape()
    gen = tape.leaf(np.array([[1.0, 2.0], [3.0, 4.0]]))
    loss = l1_reconstruction_loss(gen, np.zeros((2, 2)))
    assert float(loss.data) == 5.0  # sum |.| = 10 over 2 samples


def test_l1_loss_is_symmetric_and_zero_at_match():
    tape = ad.Tape()
    x = RNG.normal(size=(3, 4))
    y = RNG.normal(size=(3, 4))
    a = l1_reconstruction_loss(tape.leaf(x), y)
    b = l1_reconstruction_loss(tape.leaf(y), x)
    assert abs(float(a.data) - float(b.data)) < 1e-12
    assert float(l1_reconstruction_loss(tape.leaf(x), x.copy()).data) == 0.0


def test_l1_loss_rejects_shape_mismatch_and_empty():
    tape = ad.Tape()
    with pytest.raises(LossError):
        l1_reconstruction_loss(tape.leaf(np.zeros((2, 3))), np.zeros((2, 4)))
    with pytest.raises(LossError):
        l1_reconstruction_loss(tape.leaf(np.zeros((0, 3))), np.zeros((0, 3)))


# ---------------------------------------------------------------------------
# gradient penalty


@pytest.mark.parametrize("mode", GP_MODES)
def test_penalty_for_fixed_gradient_norms(mode):
    # linear critic with ||w|| = 5: every per-sample gradient norm is 5,
    # so the penalty is (5 - 1)^2 = 16 regardless of the penalty points
    w = np.array([3.0, 4.0, 0.0, 0.0])
    tape = ad.Tape()
    penalty, norms = gradient_penalty(
        tape, linear_row_critic(w), RNG.normal(size=(6, 4)),
        RNG.normal(size=(6, 4)), RNG.normal(size=(6, 4)), mode,
        np.random.default_rng(1))
    assert abs(float(penalty.data) - 16.0) < 1e-9
    assert np.max(np.abs(norms - 5.0)) < 1e-9
    assert norms.shape == (6,)


def test_penalty_vanishes_at_unit_norm():
    w = np.array([1.0, 0.0, 0.0, 0.0])
    tape = ad.Tape()
    penalty, _ = gradient_penalty(
        tape, linear_row_critic(w), RNG.normal(size=(5, 4)),
        RNG.normal(size=(5, 4)), RNG.normal(size=(5, 4)), "interpolated",
        np.random.default_rng(2))
    assert abs(float(penalty.data)) < 1e-12


def test_penalty_modes_sample_different_points():
    d = small_critic()
    x_real = RNG.normal(size=(8, 4))
    x_fake = RNG.normal(size=(8, 4))
    audio = RNG.normal(size=(8, 4))

    def run(mode, seed):
        tape = ad.Tape()
        bound = d.bind(tape)
        p, _ = gradient_penalty(tape, lambda f, a: d.apply(bound, f, a),
                                x_real, x_fake, audio, mode,
                                np.random.default_rng(seed))
        return float(p.data)

    assert run("interpolated", 3) != run("generator_output", 3)
    assert run("interpolated", 3) == run("interpolated", 3)  # seed-reproducible
    assert run("generator_output", 3) == run("generator_output", 99)  # rng unused


def test_penalty_rejects_bad_mode_and_shapes():
    tape = ad.Tape()
    with pytest.raises(LossError):
        gradient_penalty(tape, linear_row_critic(np.ones(4)), np.zeros((2, 4)),
                         np.zeros((2, 4)), np.zeros((2, 4)), "nope",
                         np.random.default_rng(0))
    with pytest.raises(LossError):
        gradient_penalty(tape, linear_row_critic(np.ones(4)), np.zeros((2, 4)),
                         np.zeros((3, 4)), np.zeros((2, 4)), "interpolated",
                         np.random.default_rng(0))


def test_penalty_alone_has_zero_gradient_in_final_bias():
    # the critic's last bias shifts every score equally, so the input gradient
    # and hence the penalty cannot depend on it; grad flags it with zeros
    d = small_critic()
    tape = ad.Tape()
    bound = d.bind(tape)
    penalty, _ = gradient_penalty(
        tape, lambda f, a: d.apply(bound, f, a), RNG.normal(size=(4, 4)),
        RNG.normal(size=(4, 4)), RNG.normal(size=(4, 4)), "interpolated",
        np.random.default_rng(4))
    with pytest.warns(UserWarning, match="not an ancestor"):
        (g,) = ad.grad(penalty, [bound["d_b3"]])
    assert np.array_equal(g.data, np.zeros(1))


# ---------------------------------------------------------------------------
# objective arithmetic


def test_wgan_critic_loss_arithmetic():
    tape = ad.Tape()
    d_fake = tape.leaf(np.array([1.0, 3.0]))   # mean 2
    d_real = tape.leaf(np.array([0.0, 1.0]))   # mean 0.5
    gp = tape.leaf(0.25)
    loss = wgan_gp_loss(d_fake, d_real, gp, 10.0)
    assert abs(float(loss.data) - 4.0) < 1e-12
    plain = wgan_gp_loss(d_fake, d_real, 0.25, 0.0)
    assert abs(float(plain.data) - 1.5) < 1e-12  # lambda 0 drops the penalty


def test_wgan_generator_loss_arithmetic():
    tape = ad.Tape()
    d_fake = tape.leaf(np.array([2.0, 4.0]))  # mean 3
    l1 = tape.leaf(0.5)
    loss = wgan_generator_loss(d_fake, l1, 2.0)
    assert abs(float(loss.data) - (-3.0 + 1.0)) < 1e-12


def test_bce_at_half_is_log_two():
    tape = ad.Tape()
    p = tape.leaf(np.full(5, 0.5))
    assert abs(float(bce_mean(p, 1).data) - math.log(2.0)) < 1e-9
    assert abs(float(bce_mean(p, 0).data) - math.log(2.0)) < 1e-9
    with pytest.raises(LossError):
        bce_mean(p, 2)


def test_lipgan_losses_at_uninformative_critic():
    # zero logits everywhere: each BCE term is ln 2 and
    # loss_D = ln2 + (ln2 + ln2)/2 = 2 ln2
    tape = ad.Tape()
    s = tape.leaf(RNG.normal(size=(4, 6)))
    fake = tape.leaf(RNG.normal(size=(4, 6)))
    audio = tape.leaf(RNG.normal(size=(4, 3)))
    off = tape.leaf(RNG.normal(size=(4, 3)))
    zero_critic = lambda faces, a: ad.row_sum(faces * 0.0)
    out = lipgan_losses(zero_critic, s, fake, audio, off)
    for key in ("loss_real", "loss_face", "loss_audio"):
        assert abs(float(out[key].data) - math.log(2.0)) < 1e-9
    assert abs(float(out["loss_D"].data) - 2.0 * math.log(2.0)) < 1e-9


def test_lipgan_losses_match_direct_numpy():
    d = small_critic()
    s_real = RNG.normal(size=(5, 4))
    s_fake = RNG.normal(size=(5, 4))
    audio = RNG.normal(size=(5, 4))
    audio_off = np.roll(audio, 1, axis=0)

    tape = ad.Tape()
    bound = d.bind(tape)
    out = lipgan_losses(lambda f, a: d.apply(bound, f, a), tape.leaf(s_real),
                        tape.leaf(s_fake), tape.leaf(audio), tape.leaf(audio_off))

    def p_of(faces, aud):
        return np.clip(1.0 / (1.0 + np.exp(-d.forward(faces, aud))),
                       PROB_CLAMP, 1.0 - PROB_CLAMP)

    expected_real = -np.log(p_of(s_real, audio)).mean()
    expected_face = -np.log(1.0 - p_of(s_fake, audio)).mean()
    expected_audio = -np.log(1.0 - p_of(s_real, audio_off)).mean()
    assert abs(float(out["loss_real"].data) - expected_real) < 1e-9
    assert abs(float(out["loss_face"].data) - expected_face) < 1e-9
    assert abs(float(out["loss_audio"].data) - expected_audio) < 1e-9
    expected_d = expected_real + 0.5 * (expected_face + expected_audio)
    assert abs(float(out["loss_D"].data) - expected_d) < 1e-9


def test_probability_clamp_keeps_bce_finite():
    tape = ad.Tape()
    s = tape.leaf(np.ones((3, 2)))
    saturated = lambda faces, a: ad.row_sum(faces * 0.0) + 100.0  # p -> 1
    loss = lipgan_losses(saturated, s, s, s, s)
    expected = -math.log(PROB_CLAMP)  # from the two target-0 terms
    assert abs(float(loss["loss_face"].data) - expected) < 1e-9
    assert np.isfinite(float(loss["loss_D"].data))


def test_lipgan_generator_loss_combination():
    tape = ad.Tape()
    l1 = tape.leaf(0.7)
    adv = tape.leaf(0.3)
    assert abs(float(lipgan_generator_loss(l1, adv, 2.0).data) - 1.3) < 1e-12
    assert abs(float(lipgan_generator_loss(0.7, adv, 0.0).data) - 0.7) < 1e-12


def test_lipgan_adversarial_loss_matches_bce_of_fake_pairs():
    d = small_critic()
    s_fake = RNG.normal(size=(4, 4))
    audio = RNG.normal(size=(4, 4))
    tape = ad.Tape()
    bound = d.bind(tape)
    loss = lipgan_adversarial_loss(lambda f, a: d.apply(bound, f, a),
                                   tape.leaf(s_fake), tape.leaf(audio))
    p = np.clip(1.0 / (1.0 + np.exp(-d.forward(s_fake, audio))),
                PROB_CLAMP, 1.0 - PROB_CLAMP)
    assert abs(float(loss.data) - (-np.log(p).mean())) < 1e-9


# ---------------------------------------------------------------------------
# parameter gradients of the full objectives vs finite differences


def critic_objective(d: ToyDiscriminator, s_real, s_fake, audio, lambda_gp,
                     mode, gp_seed):
    tape = ad.Tape()
    bound = d.bind(tape)
    d_real = d.apply(bound, tape.leaf(s_real), tape.leaf(audio))
    d_fake = d.apply(bound, tape.leaf(s_fake), tape.leaf(audio))
    gp, _ = gradient_penalty(tape, lambda f, a: d.apply(bound, f, a),
                             s_real, s_fake, audio, mode,
                             np.random.default_rng(gp_seed))
    return wgan_gp_loss(d_fake, d_real, gp, lambda_gp), bound


def relative_error(a, b):
    # relative where gradients are O(1) or larger, absolute below that
    return np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a) + np.abs(b)))


@pytest.mark.parametrize("mode", GP_MODES)
def test_critic_parameter_gradients_match_finite_differences(mode):
    # double-backward path: d(loss)/d(theta) includes the derivative of the
    # input-gradient norms with respect to the critic parameters
    d = small_critic()
    rng = np.random.default_rng(910)
    s_real = rng.normal(size=(4, 4))
    s_fake = rng.normal(size=(4, 4))
    audio = rng.normal(size=(4, 4))

    loss, bound = critic_objective(d, s_real, s_fake, audio, 10.0, mode, 11)
    names = sorted(bound)
    analytic = {n: g.data for n, g in zip(names, ad.grad(loss, [bound[n] for n in names]))}

    eps = 1e-5
    for name in names:
        flat = d.params[name].reshape(-1)
        numeric = np.zeros_like(flat)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            hi, _ = critic_objective(d, s_real, s_fake, audio, 10.0, mode, 11)
            flat[k] = orig - eps
            lo, _ = critic_objective(d, s_real, s_fake, audio, 10.0, mode, 11)
            flat[k] = orig
            numeric[k] = (float(hi.data) - float(lo.data)) / (2 * eps)
        assert relative_error(analytic[name].reshape(-1), numeric) < 1e-4, name


def test_lipgan_discriminator_gradients_match_finite_differences():
    d = small_critic()
    rng = np.random.default_rng(911)
    s_real = rng.normal(size=(4, 4))
    s_fake = rng.normal(size=(4, 4))
    audio = rng.normal(size=(4, 4))
    audio_off = np.roll(audio, 1, axis=0)

    def objective():
        tape = ad.Tape()
        bound = d.bind(tape)
        out = lipgan_losses(lambda f, a: d.apply(bound, f, a),
                            tape.leaf(s_real), tape.leaf(s_fake),
                            tape.leaf(audio), tape.leaf(audio_off))
        return out["loss_D"], bound

    loss, bound = objective()
    names = sorted(bound)
    analytic = {n: g.data for n, g in zip(names, ad.grad(loss, [bound[n] for n in names]))}

    eps = 1e-5
    for name in names:
        flat = d.params[name].reshape(-1)
        numeric = np.zeros_like(flat)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            hi, _ = objective()
            flat[k] = orig - eps
            lo, _ = objective()
            flat[k] = orig
            numeric[k] = (float(hi.data) - float(lo.data)) / (2 * eps)
        assert relative_error(analytic[name].reshape(-1), numeric) < 1e-4, name

"""Training objectives for both adversarial regimes.

All functions build tape-recorded scalars so parameter gradients, including
the second-order path through the gradient penalty, come from the same
reverse-mode engine.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad

PROB_CLAMP = 1e-7
GP_MODES = ("interpolated", "generator_output")


class LossError(ValueError):
    pass


def l1_reconstruction_loss(generated: ad.Value, targets) -> ad.Value:
    """(1/N) * sum_i ||S_i - S_hat_i||_1 over a batch of flattened frames."""
    targets = ad.lift(generated.tape, targets)
    if generated.shape != targets.shape:
        raise LossError(
            f"batch shapes differ: {generated.shape} vs {targets.shape}"
        )
    if generated.shape[0] < 1:
        raise LossError("batch must be nonempty")
    n = generated.shape[0]
    return ad.sum_all(ad.absolute(ad.sub(targets, generated))) / float(n)


def gradient_penalty(tape: ad.Tape, apply_critic, x_real: np.ndarray,
                     x_fake: np.ndarray, audio: np.ndarray, mode: str,
                     rng: np.random.Generator):
    """Mean squared deviation of per-sample critic gradient norms from 1.

    apply_critic maps (faces Value (N,D), audio Value (N,A)) to scores (N,)
    and must treat batch rows independently; per-sample input gradients are
    then recovered from one backward pass of the summed scores. The penalty
    points are either per-sample uniform interpolates between real and fake
    or the raw fake batch, per mode. The gradient is taken with create_graph
    so the penalty itself is differentiable in the critic parameters.

    Returns (penalty Value, gradient norms as a detached array).
    """
    x_real = np.asarray(x_real, dtype=np.float64)
    x_fake = np.asarray(x_fake, dtype=np.float64)
    if x_real.shape != x_fake.shape:
        raise LossError(f"batch shapes differ: {x_real.shape} vs {x_fake.shape}")
    if mode == "interpolated":
        eps = rng.uniform(size=(x_real.shape[0], 1))
        x_hat = eps * x_real + (1.0 - eps) * x_fake
    elif mode == "generator_output":
        x_hat = x_fake.copy()
    else:
        raise LossError(f"unknown gradient penalty mode {mode!r}")

    x_hat_v = tape.leaf(x_hat)
    audio_v = audio if isinstance(audio, ad.Value) else tape.leaf(audio)
    scores = apply_critic(x_hat_v, audio_v)
    if scores.shape != (x_real.shape[0],):
        raise LossError(f"critic must return (N,) scores, got {scores.shape}")
    (g,) = ad.grad(ad.sum_all(scores), [x_hat_v], create_graph=True)
    norms = ad.l2_norm_rows(g)
    penalty = ad.mean_all((norms - 1.0) ** 2)
    return penalty, norms.data.copy()


def wgan_gp_loss(d_fake_scores: ad.Value, d_real_scores: ad.Value,
                 gp, lambda_gp: float) -> ad.Value:
    """Critic objective mean(fake) - mean(real) + lambda * penalty."""
    if d_fake_scores.size < 1 or d_real_scores.size < 1:
        raise LossError("score batches must be nonempty")
    loss = ad.sub(ad.mean_all(d_fake_scores), ad.mean_all(d_real_scores))
    if isinstance(gp, ad.Value):
        return ad.add(loss, gp * float(lambda_gp))
    return loss + float(lambda_gp) * float(gp)


def wgan_generator_loss(d_fake_scores: ad.Value, l1, l1_weight: float) -> ad.Value:
    """-mean(critic of fakes) plus weighted reconstruction."""
    if d_fake_scores.size < 1:
        raise LossError("score batch must be nonempty")
    loss = ad.neg(ad.mean_all(d_fake_scores))
    if isinstance(l1, ad.Value):
        return ad.add(loss, l1 * float(l1_weight))
    return loss + float(l1_weight) * float(l1)


def _clamped_probs(scores: ad.Value) -> ad.Value:
    return ad.clamp(ad.sigmoid(scores), PROB_CLAMP, 1.0 - PROB_CLAMP)


def bce_mean(p: ad.Value, target: int) -> ad.Value:
    """Mean binary cross entropy of probabilities against a constant label."""
    if target == 1:
        return ad.neg(ad.mean_all(ad.log(p)))
    if target == 0:
        return ad.neg(ad.mean_all(ad.log(1.0 - p)))
    raise LossError(f"target must be 0 or 1, got {target}")


def lipgan_losses(apply_d, s_real, s_fake, audio, audio_off) -> dict:
    """Sigmoid-BCE discriminator objective over three input pairings.

    Synced real pairs are pushed to probability 1; fake-face pairs and
    unsynced-audio pairs to 0. The two negative terms enter at half weight:
    loss_D = loss_real + (loss_face + loss_audio) / 2.
    """
    p_real = _clamped_probs(apply_d(s_real, audio))
    p_face = _clamped_probs(apply_d(s_fake, audio))
    p_audio = _clamped_probs(apply_d(s_real, audio_off))
    loss_real = bce_mean(p_real, 1)
    loss_face = bce_mean(p_face, 0)
    loss_audio = bce_mean(p_audio, 0)
    loss_d = ad.add(loss_real, (loss_face + loss_audio) * 0.5)
    return {"loss_D": loss_d, "loss_real": loss_real,
            "loss_face": loss_face, "loss_audio": loss_audio}


def lipgan_adversarial_loss(apply_d, s_fake, audio) -> ad.Value:
    """Generator-side BCE pushing fake pairs toward probability 1."""
    return bce_mean(_clamped_probs(apply_d(s_fake, audio)), 1)


def lipgan_generator_loss(l1, loss_adv, adv_weight: float) -> ad.Value:
    """Reconstruction plus weighted adversarial term."""
    if isinstance(l1, ad.Value) or isinstance(loss_adv, ad.Value):
        tape = l1.tape if isinstance(l1, ad.Value) else loss_adv.tape
        l1_v = ad.lift(tape, l1)
        adv_v = ad.lift(tape, loss_adv)
        return ad.add(l1_v, adv_v * float(adv_weight))
    return float(l1) + float(adv_weight) * float(loss_adv)

"""The two training protocols and their shared logging machinery.

Both trainers walk a prebuilt list of batches (one batch = one iteration) so
runs are pure functions of (config, batches). The adversarial-with-penalty
protocol updates the critic every iteration and the generator every
n_critic-th; the paired-classification protocol updates both nets every
iteration. Loss rows are logged at the first iteration, every loss_log_every
iterations, and the last, with all values recomputed at log time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..media_io import ImageTensor
from ..metrics import MetricsError, psnr, ssim
from .config import TrainConfig, derived_seed
from .losses import (
    LossError,
    gradient_penalty,
    l1_reconstruction_loss,
    lipgan_adversarial_loss,
    lipgan_losses,
    wgan_generator_loss,
    wgan_gp_loss,
)
from .models import ToyDiscriminator, ToyGenerator
from .optim import Adam, OptimError
from .toydata import assemble_batch

CSV_HEADER = "iter,loss_G,loss_D,loss_face,loss_audio,gp,ssim,psnr"


class TrainError(RuntimeError):
    pass


@dataclass
class LogRecord:
    iteration: int
    loss_G: float
    loss_D: float
    loss_face: float
    loss_audio: float
    gp: float
    ssim: float
    psnr: float
    l1: float  # kept for analysis; not a CSV column


@dataclass
class TrainLog:
    model: str
    records: list = field(default_factory=list)
    grad_norm_means: list = field(default_factory=list)
    n_critic_updates: int = 0
    n_generator_updates: int = 0
    config: dict = field(default_factory=dict)

    def append(self, record: LogRecord):
        if self.records and record.iteration <= self.records[-1].iteration:
            raise TrainError("log iterations must be strictly increasing")
        self.records.append(record)

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(CSV_HEADER + "\n")
            for r in self.records:
                cells = [str(r.iteration)] + [
                    _fmt(v) for v in (r.loss_G, r.loss_D, r.loss_face,
                                      r.loss_audio, r.gp, r.ssim, r.psnr)
                ]
                fh.write(",".join(cells) + "\n")


@dataclass
class TrainResult:
    log: TrainLog
    generator: ToyGenerator
    critic: ToyDiscriminator


def _fmt(v: float) -> str:
    if math.isnan(v):
        return "nan"
    return f"{v:.10g}"


def _normalize_batches(data) -> list:
    batches = []
    for batch in data:
        if isinstance(batch, dict):
            batches.append(batch)
        else:
            batches.append(assemble_batch(list(batch)))
    if not batches:
        raise TrainError("no batches to train on")
    return batches


def _build_models(batches, cfg, generator, critic, audio_transform):
    first = batches[0]
    image_shape = first.get("image_shape")
    if image_shape is None:
        image_shape = (1, first["s"].shape[1], 1)
    mel_shape = first.get("mel_shape")
    if mel_shape is None:
        mel_shape = (1, first["audio"].shape[1])
    scale, shift = audio_transform
    if generator is None:
        generator = ToyGenerator.create(
            image_shape, mel_shape, seed=derived_seed(cfg.seed, "generator_init"),
            audio_scale=scale, audio_shift=shift)
    if critic is None:
        critic = ToyDiscriminator.create(
            image_shape, mel_shape, seed=derived_seed(cfg.seed, "discriminator_init"))
    return generator, critic


def _sample_quality(fake_row: np.ndarray, real_row: np.ndarray, image_shape):
    """SSIM and PSNR of the first generated sample, mapped back to [0, 1]."""
    h, w, c = image_shape
    fake01 = np.clip((fake_row.reshape(h, w, c) + 1.0) / 2.0, 0.0, 1.0)
    real01 = np.clip((real_row.reshape(h, w, c) + 1.0) / 2.0, 0.0, 1.0)
    a = ImageTensor(height=h, width=w, channels=c, data=fake01)
    b = ImageTensor(height=h, width=w, channels=c, data=real01)
    p = psnr(a, b)
    try:
        s = ssim(a, b)
    except MetricsError:
        s = math.nan  # image smaller than the SSIM window
    return s, (p if math.isfinite(p) else math.inf)


def _is_log_iteration(i: int, total: int, every: int) -> bool:
    return i == 1 or i % every == 0 or i == total


def _wgan_generator_eval(generator, critic, batch, l1_weight):
    """Current generator objective on a batch, no update."""
    fake = generator.forward(batch["s_prime"], batch["audio"])
    scores = critic.forward(fake, batch["audio"])
    l1 = np.abs(batch["s"] - fake).sum() / batch["s"].shape[0]
    return -scores.mean() + l1_weight * l1, l1, fake


def train_l1wgan_gp(cfg: TrainConfig, data, generator: ToyGenerator | None = None,
                    critic: ToyDiscriminator | None = None,
                    audio_transform=(1.0, 0.0), sample_hook=None) -> TrainResult:
    """Critic with gradient penalty every iteration, generator every n_critic-th.

    sample_hook(iteration, generator), when given, fires every
    cfg.sample_every iterations and after the last one.
    """
    batches = _normalize_batches(data)
    generator, critic = _build_models(batches, cfg, generator, critic, audio_transform)
    adam_g = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2)
    adam_d = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2)
    gp_rng = np.random.default_rng(derived_seed(cfg.seed, "gp_epsilon"))

    log = TrainLog(model="l1wgan-gp", config=cfg.to_dict())
    total = len(batches)
    d_names = sorted(critic.params)
    g_names = sorted(generator.params)

    for i, batch in enumerate(batches, 1):
        try:
            # critic update; the generator only feeds data here
            fake_np = generator.forward(batch["s_prime"], batch["audio"])
            tape = ad.Tape()
            d_bound = critic.bind(tape)
            audio_v = tape.leaf(batch["audio"])
            d_real = critic.apply(d_bound, tape.leaf(batch["s"]), audio_v)
            d_fake = critic.apply(d_bound, tape.leaf(fake_np), audio_v)
            gp, norms = gradient_penalty(
                tape, lambda f, a: critic.apply(d_bound, f, a),
                batch["s"], fake_np, batch["audio"], cfg.gp_input_mode, gp_rng)
            loss_d = wgan_gp_loss(d_fake, d_real, gp, cfg.lambda_gp)
            d_grads = ad.grad(loss_d, [d_bound[n] for n in d_names])
            adam_d.step(critic.params, {n: g.data for n, g in zip(d_names, d_grads)})
            log.n_critic_updates += 1
            log.grad_norm_means.append(float(norms.mean()))

            loss_g_val = math.nan
            l1_val = math.nan
            if i % cfg.n_critic == 0:
                tape2 = ad.Tape()
                g_bound = generator.bind(tape2)
                d_bound2 = critic.bind(tape2)
                audio_v2 = tape2.leaf(batch["audio"])
                fake = generator.apply(g_bound, tape2.leaf(batch["s_prime"]), audio_v2)
                scores = critic.apply(d_bound2, fake, audio_v2)
                l1 = l1_reconstruction_loss(fake, batch["s"])
                loss_g = wgan_generator_loss(scores, l1, cfg.l1_weight)
                g_grads = ad.grad(loss_g, [g_bound[n] for n in g_names])
                adam_g.step(generator.params,
                            {n: g.data for n, g in zip(g_names, g_grads)})
                log.n_generator_updates += 1
                loss_g_val = float(loss_g.data)
                l1_val = float(l1.data)
        except (ad.AutodiffError, OptimError, LossError) as exc:
            raise TrainError(f"non-finite training state at iteration {i}: {exc}") from exc

        if _is_log_iteration(i, total, cfg.loss_log_every):
            loss_g_val, l1_val, fake_now = _wgan_generator_eval(
                generator, critic, batch, cfg.l1_weight)
            s_val, p_val = _sample_quality(fake_now[0], batch["s"][0],
                                           generator.image_shape)
            log.append(LogRecord(
                iteration=i, loss_G=float(loss_g_val), loss_D=float(loss_d.data),
                loss_face=math.nan, loss_audio=math.nan, gp=float(gp.data),
                ssim=s_val, psnr=p_val, l1=float(l1_val)))
        if sample_hook is not None and (i % cfg.sample_every == 0 or i == total):
            sample_hook(i, generator)
    return TrainResult(log=log, generator=generator, critic=critic)


def train_lipgan(cfg: TrainConfig, data, generator: ToyGenerator | None = None,
                 critic: ToyDiscriminator | None = None,
                 audio_transform=(1.0, 0.0), sample_hook=None) -> TrainResult:
    """Paired-classification discriminator and generator, both every iteration.

    The unsynced audio batch is the synced batch rolled by one row, so every
    face meets audio from a different pair.
    """
    batches = _normalize_batches(data)
    generator, critic = _build_models(batches, cfg, generator, critic, audio_transform)
    adam_g = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2)
    adam_d = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2)

    log = TrainLog(model="lipgan", config=cfg.to_dict())
    total = len(batches)
    d_names = sorted(critic.params)
    g_names = sorted(generator.params)

    for i, batch in enumerate(batches, 1):
        audio_off = np.roll(batch["audio"], 1, axis=0)
        try:
            fake_np = generator.forward(batch["s_prime"], batch["audio"])
            tape = ad.Tape()
            d_bound = critic.bind(tape)
            audio_v = tape.leaf(batch["audio"])
            parts = lipgan_losses(
                lambda f, a: critic.apply(d_bound, f, a),
                tape.leaf(batch["s"]), tape.leaf(fake_np),
                audio_v, tape.leaf(audio_off))
            d_grads = ad.grad(parts["loss_D"], [d_bound[n] for n in d_names])
            adam_d.step(critic.params, {n: g.data for n, g in zip(d_names, d_grads)})
            log.n_critic_updates += 1

            tape2 = ad.Tape()
            g_bound = generator.bind(tape2)
            d_bound2 = critic.bind(tape2)
            audio_v2 = tape2.leaf(batch["audio"])
            fake = generator.apply(g_bound, tape2.leaf(batch["s_prime"]), audio_v2)
            l1 = l1_reconstruction_loss(fake, batch["s"])
            adv = lipgan_adversarial_loss(
                lambda f, a: critic.apply(d_bound2, f, a), fake, audio_v2)
            loss_g = ad.add(l1, adv * cfg.adv_weight)
            g_grads = ad.grad(loss_g, [g_bound[n] for n in g_names])
            adam_g.step(generator.params, {n: g.data for n, g in zip(g_names, g_grads)})
            log.n_generator_updates += 1
        except (ad.AutodiffError, OptimError, LossError) as exc:
            raise TrainError(f"non-finite training state at iteration {i}: {exc}") from exc

        if _is_log_iteration(i, total, cfg.loss_log_every):
            fake_now = generator.forward(batch["s_prime"], batch["audio"])
            l1_now = float(np.abs(batch["s"] - fake_now).sum() / batch["s"].shape[0])
            p_fake = np.clip(1.0 / (1.0 + np.exp(-critic.forward(fake_now, batch["audio"]))),
                             1e-7, 1.0 - 1e-7)
            loss_g_now = l1_now + cfg.adv_weight * float(-np.log(p_fake).mean())
            s_val, p_val = _sample_quality(fake_now[0], batch["s"][0],
                                           generator.image_shape)
            log.append(LogRecord(
                iteration=i, loss_G=loss_g_now, loss_D=float(parts["loss_D"].data),
                loss_face=float(parts["loss_face"].data),
                loss_audio=float(parts["loss_audio"].data),
                gp=math.nan, ssim=s_val, psnr=p_val, l1=l1_now))
        if sample_hook is not None and (i % cfg.sample_every == 0 or i == total):
            sample_hook(i, generator)
    return TrainResult(log=log, generator=generator, critic=critic)

"""Command-line harness: preprocess, train, evaluate, report.

Exit codes: 0 on success, 1 on internal or numeric failure (non-finite
training state, metric breakdown), 2 on usage or input errors (bad flags,
missing or malformed files). All randomness flows from one root seed through
fixed offsets, so reruns with equal inputs produce byte-identical outputs.
GANLIP_THREADS caps evaluation parallelism.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .autodiff import AutodiffError
from .gan.config import ConfigError, TrainConfig, derived_seed
from .gan.losses import LossError
from .gan.models import ModelError, ToyGenerator, generate
from .gan.optim import OptimError
from .gan.toydata import (
    TOY_AUDIO_SCALE,
    TOY_AUDIO_SHIFT,
    batch_stream,
    make_toy_dataset,
    toy_frame_pairs,
)
from .gan.train import TrainError, train_l1wgan_gp, train_lipgan
from .media_io import (
    FramePair,
    ImageTensor,
    MediaError,
    crop_and_resize,
    frame_path,
    load_frame,
    load_wav,
    make_frame_pairs,
    read_bboxes,
    read_manifest,
    save_frame,
    write_manifest,
)
from .melspec import (
    MEL_WINDOW_COLS,
    MelConfig,
    MelError,
    frame_center_column,
    log_mel_spectrogram,
    read_mel1,
    window_columns,
    write_mel1,
    MelSpectrogram,
)
from .metrics import (
    EmbeddingSet,
    MetricsError,
    frechet_distance,
    gaussian_stats,
    psnr,
    read_emb1,
    ssim,
    summarize,
    toy_embed,
    toy_embedder_label,
    write_emb1,
)

TOY_TRAIN_FRACTION = 0.8
# log-mel values from a preprocessed store are mapped to roughly [0, 1.5]
STORE_AUDIO_SCALE = 0.1


class UsageError(ValueError):
    pass


def eval_threads() -> int:
    env = os.environ.get("GANLIP_THREADS")
    if env is not None:
        try:
            n = int(env)
        except ValueError as exc:
            raise UsageError(f"GANLIP_THREADS must be an integer, got {env!r}") from exc
    else:
        n = min(8, os.cpu_count() or 1)
    return max(1, n)


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.10g}" if isinstance(v, float) else str(v)


# ---------------------------------------------------------------------------
# preprocess


def cmd_preprocess(args) -> int:
    manifest = read_manifest(args.manifest)
    if not manifest.entries:
        raise UsageError(f"manifest {args.manifest} lists no videos")
    mel_cfg = MelConfig(
        sample_rate=args.sample_rate, fft_size=args.fft_size, hop=args.hop,
        win_length=args.win_length, n_mels=args.n_mels, fmin=args.fmin,
        fmax=args.fmax)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pair_rng = np.random.default_rng(derived_seed(args.seed, "pairing"))

    new_entries = []
    for entry in manifest.entries:
        vdir = out / entry.video_id
        vdir.mkdir(parents=True, exist_ok=True)
        bbox_file = Path(entry.frame_dir) / "bboxes.csv"
        bboxes = read_bboxes(bbox_file) if bbox_file.exists() else {}

        signal = load_wav(entry.wav, expected_rate=mel_cfg.sample_rate)
        full_mel = log_mel_spectrogram(signal, mel_cfg)

        frames, mels = [], []
        for i in range(entry.n_frames):
            raw = load_frame(frame_path(entry.frame_dir, i))
            box = bboxes.get(i, (0, 0, raw.width, raw.height))
            face = crop_and_resize(raw, box, args.size)
            save_frame(face, vdir / f"frame_{i:05d}.png")
            center = frame_center_column(i, entry.fps, mel_cfg)
            mel = MelSpectrogram(
                n_mels=mel_cfg.n_mels, n_frames=MEL_WINDOW_COLS,
                data=window_columns(full_mel, center, MEL_WINDOW_COLS,
                                    mel_cfg.log_floor))
            write_mel1(vdir / f"mel_{i:05d}.mel1", mel)
            frames.append(face)
            mels.append(mel)

        pairs = make_frame_pairs(frames, mels, args.alpha_max, pair_rng)
        with open(vdir / "pairs.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("frame_index,alpha\n")
            for p in pairs:
                fh.write(f"{p.frame_index},{p.alpha}\n")
        entry.frame_dir = str(vdir)
        new_entries.append(entry)

    write_manifest(manifest, out / "manifest.jsonl")
    meta = {"size": args.size, "seed": args.seed, "alpha_max": args.alpha_max,
            "mel": {"sample_rate": mel_cfg.sample_rate, "fft_size": mel_cfg.fft_size,
                    "hop": mel_cfg.hop, "win_length": mel_cfg.win_length,
                    "n_mels": mel_cfg.n_mels, "fmin": mel_cfg.fmin,
                    "fmax": mel_cfg.fmax, "log_floor": mel_cfg.log_floor}}
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"preprocessed {len(new_entries)} videos into {out}")
    return 0


def load_store_pairs(data_dir) -> tuple[list, tuple[float, float]]:
    """(video_id, FramePair) list from a preprocessed store, plus the audio
    feature affine implied by its mel log floor."""
    data_dir = Path(data_dir)
    meta_path = data_dir / "meta.json"
    if not meta_path.exists():
        raise UsageError(f"{data_dir} is not a preprocessed store (no meta.json)")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    manifest = read_manifest(data_dir / "manifest.jsonl")

    out = []
    for entry in manifest.entries:
        vdir = Path(entry.frame_dir)
        frames = {}

        def frame_at(i):
            if i not in frames:
                frames[i] = load_frame(vdir / f"frame_{i:05d}.png")
            return frames[i]

        with open(vdir / "pairs.csv", "r", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                i = int(row["frame_index"])
                alpha = int(row["alpha"])
                pair = FramePair(
                    target=frame_at(i), reference=frame_at(i + alpha),
                    alpha=alpha, frame_index=i,
                    audio=read_mel1(vdir / f"mel_{i:05d}.mel1"))
                out.append((entry.video_id, pair))
    log_floor = float(meta["mel"]["log_floor"])
    transform = (STORE_AUDIO_SCALE, -STORE_AUDIO_SCALE * log_floor)
    return out, transform


# ---------------------------------------------------------------------------
# train


def _toy_videos(args, seed: int):
    return make_toy_dataset(
        n_videos=args.toy_videos, frames_per_video=args.toy_frames,
        image_size=args.toy_size, seed=derived_seed(seed, "toy_corpus"))


def _toy_split(videos):
    cut = max(1, int(len(videos) * TOY_TRAIN_FRACTION))
    return videos[:cut], videos[cut:]


def _resolve_config(args) -> TrainConfig:
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = {
        "seed": args.seed, "epochs": args.epochs, "batch_size": args.batch_size,
        "n_critic": args.n_critic, "lambda_gp": args.lambda_gp,
        "learning_rate": args.learning_rate, "beta1": args.beta1,
        "beta2": args.beta2, "l1_weight": args.l1_weight,
        "adv_weight": args.adv_weight, "loss_log_every": args.loss_log_every,
        "sample_every": args.sample_every,
    }
    if args.gp_mode is not None:
        overrides["gp_input_mode"] = {
            "interp": "interpolated", "gen": "generator_output"}[args.gp_mode]
    changes = {k: v for k, v in overrides.items() if v is not None}
    return cfg.replaced(**changes) if changes else cfg


def build_mosaic(gen: ToyGenerator, sample_pairs: list, per_row: int = 5) -> ImageTensor:
    """Generated frame beside its ground truth, tiled left to right."""
    h, w, c = gen.image_shape
    tiles = []
    for pair in sample_pairs:
        fake = generate(gen, pair.reference, pair.audio)
        tiles.append(np.concatenate([fake.data, pair.target.data], axis=1))
    rows = []
    for lo in range(0, len(tiles), per_row):
        chunk = tiles[lo : lo + per_row]
        while len(chunk) < per_row:
            chunk.append(np.zeros_like(tiles[0]))
        rows.append(np.concatenate(chunk, axis=1))
    grid = np.concatenate(rows, axis=0)
    return ImageTensor(height=grid.shape[0], width=grid.shape[1],
                       channels=c, data=grid)


def cmd_train(args) -> int:
    t0 = time.monotonic()
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.toy:
        videos, _ = _toy_split(_toy_videos(args, cfg.seed))
        tagged = toy_frame_pairs(videos, alpha_max=args.alpha_max,
                                 seed=derived_seed(cfg.seed, "pairing"))
        transform = (TOY_AUDIO_SCALE, TOY_AUDIO_SHIFT)
    elif args.data:
        tagged, transform = load_store_pairs(args.data)
    else:
        raise UsageError("train needs --toy or --data DIR")
    pairs = [p for _, p in tagged]
    if not pairs:
        raise UsageError("no training pairs found")

    batches = batch_stream(pairs, cfg.batch_size, cfg.epochs,
                           derived_seed(cfg.seed, "batch_shuffle"),
                           *transform)
    sample_rng = np.random.default_rng(derived_seed(cfg.seed, "sampling"))
    n_show = min(args.samples, len(pairs))
    shown = [pairs[k] for k in sample_rng.choice(len(pairs), n_show, replace=False)]

    def sample_hook(iteration, gen):
        save_frame(build_mosaic(gen, shown),
                   out / f"samples_iter{iteration:06d}.png")

    trainer = {"l1wgan-gp": train_l1wgan_gp, "lipgan": train_lipgan}[args.model]
    result = trainer(cfg, batches, audio_transform=transform,
                     sample_hook=sample_hook)

    result.log.to_csv(out / "trainlog.csv")
    result.generator.save(out / "generator.ckpt")
    result.critic.save(out / "discriminator.ckpt")
    run_info = {"model": args.model, "config": cfg.to_dict(),
                "audio_transform": list(transform),
                "wall_time_s": time.monotonic() - t0}
    with open(out / "run.json", "w", encoding="utf-8") as fh:
        json.dump(run_info, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"trained {args.model} for {len(batches)} iterations "
          f"({result.log.n_generator_updates} generator updates) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _psnr_summary(values: list) -> tuple[dict, int]:
    finite = [v for v in values if math.isfinite(v)]
    n_inf = len(values) - len(finite)
    if not finite:
        empty = dict.fromkeys(
            ["mean", "median", "max", "min", "q1", "q3",
             "lower_fence", "upper_fence"])
        empty.update(n=0, n_outliers=0)
        return empty, n_inf
    return summarize(np.array(finite)).as_dict(), n_inf


def cmd_evaluate(args) -> int:
    t0 = time.monotonic()
    gen = ToyGenerator.load(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    run_path = Path(args.checkpoint).parent / "run.json"
    run_info = {}
    if run_path.exists():
        with open(run_path, "r", encoding="utf-8") as fh:
            run_info = json.load(fh)
    model_name = args.model_name or run_info.get("model", "unknown")

    if args.toy:
        seed = args.seed if args.seed is not None else int(
            run_info.get("config", {}).get("seed", 10))
        _, test_videos = _toy_split(_toy_videos(args, seed))
        tagged = toy_frame_pairs(test_videos, alpha_max=args.alpha_max,
                                 seed=derived_seed(seed, "pairing"))
        split_name = args.split_name or "toy-test"
    elif args.data:
        tagged, _ = load_store_pairs(args.data)
        split_name = args.split_name or "test"
    else:
        raise UsageError("evaluate needs --toy or --data DIR")
    if not tagged:
        raise UsageError("no evaluation pairs found")

    def score(item):
        vid, pair = item
        fake = generate(gen, pair.reference, pair.audio)
        return (vid, pair.frame_index, ssim(fake, pair.target),
                psnr(fake, pair.target), fake)

    with ThreadPoolExecutor(max_workers=eval_threads()) as pool:
        rows = list(pool.map(score, tagged))

    with open(out / "per_frame.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("video_id,frame_index,ssim,psnr_db\n")
        for vid, idx, s, p, _ in rows:
            fh.write(f"{vid},{idx},{_fmt(s)},{_fmt(p)}\n")

    ssims = [r[2] for r in rows]
    psnrs = [r[3] for r in rows]
    fakes = [r[4] for r in rows]
    reals = [pair.target for _, pair in tagged]

    if args.embeddings == "toy":
        emb_real = toy_embed(reals)
        emb_fake = toy_embed(fakes)
        write_emb1(out / "real.emb1", emb_real)
        write_emb1(out / "generated.emb1", emb_fake)
        embedder = toy_embedder_label()
    else:
        try:
            real_path, fake_path = args.embeddings.split(":")
        except ValueError as exc:
            raise UsageError(
                "--embeddings must be 'toy' or 'REAL.emb1:FAKE.emb1'") from exc
        emb_real = read_emb1(real_path)
        emb_fake = read_emb1(fake_path)
        embedder = f"precomputed({real_path}:{fake_path})"
    fid = frechet_distance(gaussian_stats(emb_real), gaussian_stats(emb_fake))

    ssim_summary = summarize(np.array(ssims)).as_dict()
    ssim_summary.update(metric="ssim", model=model_name, n_infinite=0)
    psnr_summary, n_inf = _psnr_summary(psnrs)
    psnr_summary.update(metric="psnr", model=model_name, n_infinite=n_inf)

    report = {
        "model": model_name,
        "split": split_name,
        "metrics": {"ssim": ssim_summary, "psnr": psnr_summary},
        "fid": {"value": fid, "embedder": embedder},
        "config": run_info.get("config", {}),
        "wall_time_s": time.monotonic() - t0,
    }
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"evaluated {model_name} on {len(rows)} pairs: "
          f"ssim mean {ssim_summary['mean']:.4f}, fid {fid:.4f} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# report


# metric key, pretty row label, whether lower wins, value extractor
_REPORT_ROWS = (
    ("fid", "FID", True, lambda r: r["fid"]["value"]),
    ("ssim", "SSIM mean", False, lambda r: r["metrics"]["ssim"]["mean"]),
    ("psnr", "PSNR mean", False, lambda r: r["metrics"]["psnr"]["mean"]),
)


def cmd_report(args) -> int:
    reports = []
    for path in args.reports:
        with open(path, "r", encoding="utf-8") as fh:
            reports.append(json.load(fh))
    for rep in reports:
        missing = [k for k in ("model", "metrics", "fid") if k not in rep]
        if missing or not {"ssim", "psnr"} <= set(rep.get("metrics", {})):
            raise UsageError(f"report for {rep.get('model', '?')} lacks "
                             f"required metrics")

    models = [r["model"] for r in reports]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    table_rows = []
    for key, label, lower_better, getv in _REPORT_ROWS:
        values = [getv(r) for r in reports]
        best = None
        if len(reports) > 1:
            comparable = [(v, i) for i, v in enumerate(values) if v is not None]
            if comparable:
                best = (min if lower_better else max)(comparable)[1]
        table_rows.append((label, lower_better, values, best))

    lines = ["metric          direction  " + "  ".join(f"{m:>16}" for m in models)]
    for label, lower_better, values, best in table_rows:
        arrow = "lower" if lower_better else "higher"
        cells = []
        for i, v in enumerate(values):
            text = "n/a" if v is None else f"{v:.6g}"
            cells.append(f"{'*' + text if i == best else text:>16}")
        lines.append(f"{label:<15} {arrow:>9}  " + "  ".join(cells))
    table = "\n".join(lines) + "\n"
    print(table, end="")
    with open(out / "comparison.txt", "w", encoding="utf-8") as fh:
        fh.write(table)

    with open(out / "comparison.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("metric,direction," + ",".join(models) + ",best\n")
        for label, lower_better, values, best in table_rows:
            cells = ["n/a" if v is None else f"{v:.10g}" for v in values]
            fh.write(",".join([label, "lower" if lower_better else "higher"]
                              + cells + [models[best] if best is not None else ""])
                     + "\n")

    boxplot = {}
    for rep in reports:
        per_model = {}
        for metric in ("ssim", "psnr"):
            s = rep["metrics"][metric]
            per_model[metric] = {k: s[k] for k in
                                 ("q1", "median", "q3", "lower_fence", "upper_fence")}
        boxplot[rep["model"]] = per_model
    with open(out / "boxplot.json", "w", encoding="utf-8") as fh:
        json.dump(boxplot, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


# ---------------------------------------------------------------------------
# parser and entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ganlip",
        description="Lip-sync GAN comparison harness: preprocessing, toy "
                    "training, evaluation and report generation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="crop frames and extract mel windows")
    p.add_argument("--manifest", required=True, help="JSONL corpus manifest")
    p.add_argument("--out", required=True, help="output store directory")
    p.add_argument("--size", type=int, default=96, help="face crop edge length")
    p.add_argument("--seed", type=int, default=10)
    p.add_argument("--alpha-max", type=int, default=6)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--fft-size", type=int, default=800)
    p.add_argument("--hop", type=int, default=200)
    p.add_argument("--win-length", type=int, default=800)
    p.add_argument("--n-mels", type=int, default=80)
    p.add_argument("--fmin", type=float, default=55.0)
    p.add_argument("--fmax", type=float, default=7600.0)
    p.set_defaults(func=cmd_preprocess)

    t = sub.add_parser("train", help="train one of the two models")
    t.add_argument("--model", required=True, choices=["lipgan", "l1wgan-gp"])
    t.add_argument("--config", help="TrainConfig JSON; flags override fields")
    t.add_argument("--toy", action="store_true",
                   help="train on the synthetic corpus (first 80%% of videos)")
    t.add_argument("--data", help="preprocessed store directory")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--n-critic", type=int)
    t.add_argument("--lambda-gp", type=float)
    t.add_argument("--gp-mode", choices=["interp", "gen"])
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--beta1", type=float)
    t.add_argument("--beta2", type=float)
    t.add_argument("--l1-weight", type=float)
    t.add_argument("--adv-weight", type=float)
    t.add_argument("--loss-log-every", type=int)
    t.add_argument("--sample-every", type=int)
    t.add_argument("--samples", type=int, default=20,
                   help="sample pairs per mosaic image")
    t.add_argument("--alpha-max", type=int, default=6)
    t.add_argument("--toy-videos", type=int, default=20)
    t.add_argument("--toy-frames", type=int, default=30)
    t.add_argument("--toy-size", type=int, default=16)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on held-out pairs")
    e.add_argument("--checkpoint", required=True, help="generator .ckpt path")
    e.add_argument("--out", required=True)
    e.add_argument("--toy", action="store_true",
                   help="evaluate on the synthetic corpus (last 20%% of videos)")
    e.add_argument("--data", help="preprocessed store directory")
    e.add_argument("--seed", type=int)
    e.add_argument("--alpha-max", type=int, default=6)
    e.add_argument("--toy-videos", type=int, default=20)
    e.add_argument("--toy-frames", type=int, default=30)
    e.add_argument("--toy-size", type=int, default=16)
    e.add_argument("--embeddings", default="toy",
                   help="'toy' or REAL.emb1:FAKE.emb1 for precomputed features")
    e.add_argument("--split-name")
    e.add_argument("--model-name")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="compare evaluation reports")
    r.add_argument("reports", nargs="+", help="report.json paths")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, MediaError, MelError, ConfigError, ModelError,
            FileNotFoundError, NotADirectoryError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainError, AutodiffError, LossError, OptimError,
            MetricsError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface for the whole pipeline.

Subcommands: ``gen-data`` (synthetic dataset on disk), ``train-teacher``,
``distill-student``, ``evaluate`` (reference-shuffle protocol), ``score``
(one image).  Every command is deterministic given explicit seeds.

Exit codes: 0 ok, 2 io, 3 data contract, 4 config, 5 checkpoint,
6 usage, 7 decode.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .data import (ReferencePool, Sample, build_synthetic_dataset, load_manifest,
                   load_image, load_pool_dir, save_image, write_manifest)
from .errors import (CheckpointError, ConfigError, DataError, DecodeError,
                     MetricError, UsageError)
from .estimators import (StudentRegressor, TeacherRegressor,
                         estimator_from_checkpoint, MOS_SCALE)
from .metrics import evaluate, score_single, write_report_csv
from .network import ArchConfig
from .runconfig import load_config_file, split_arch_keys

EXIT_IO = 2
EXIT_DATA = 3
EXIT_CONFIG = 4
EXIT_CHECKPOINT = 5
EXIT_USAGE = 6
EXIT_DECODE = 7


class _Parser(argparse.ArgumentParser):
    # route argparse's own failures through the stable usage exit code
    def error(self, message):
        raise UsageError(message)


def _parse_size(text: str):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise UsageError(f"--size expects HxW, got {text!r}")


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    ds = build_synthetic_dataset(n_images=args.images,
                                 distortions_per_image=args.distortions_per,
                                 seed=args.seed, height=args.size[0],
                                 width=args.size[1], test_fraction=0.0,
                                 pool_size=args.pool)
    samples = ds.train + ds.test
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "pristine").mkdir(exist_ok=True)
    (out / "pool").mkdir(exist_ok=True)

    rows = []
    saved_pristine = set()
    for s in samples:
        pid = s.id.split("-d")[0]
        if pid not in saved_pristine:
            save_image(out / "pristine" / f"{pid}.png", s.fr)
            saved_pristine.add(pid)
        save_image(out / "images" / f"{s.id}.png", s.lq)
        rows.append((s.id, f"images/{s.id}.png", f"pristine/{pid}.png", s.mos))
    for rid, img in zip(ds.pool.ids, ds.pool.images):
        save_image(out / "pool" / f"{rid}.png", img)
    write_manifest(out / "manifest.csv", rows)

    if not samples:
        print("warning: no distorted samples emitted (distortions-per is 0)",
              file=sys.stderr)
    print(f"wrote {len(samples)} samples, {len(saved_pristine)} pristine images, "
          f"{len(ds.pool.images)} pool images to {out}")
    return 0


def _load_train_setup(args):
    config = load_config_file(args.config)
    if getattr(args, "epochs", None) is not None:
        config["epochs"] = args.epochs
    arch_kwargs, train_kwargs = split_arch_keys(config)
    samples = load_manifest(args.data)
    return ArchConfig(**arch_kwargs) if arch_kwargs else None, train_kwargs, samples


def cmd_train_teacher(args) -> int:
    arch, train_kwargs, samples = _load_train_setup(args)
    keys = ("epochs", "batch_size", "learning_rate", "weight_decay", "seed")
    teacher = TeacherRegressor(arch=arch,
                               **{k: v for k, v in train_kwargs.items() if k in keys})
    teacher.fit(samples)
    teacher.save(args.out)
    teacher.report_.save_csv(str(args.out) + ".report.csv")
    final = teacher.report_.total_loss[-1] if teacher.report_.total_loss else float("nan")
    print(f"teacher: {teacher.report_.epochs} epochs, final loss {final:.4f}, "
          f"{teacher.report_.wall_time_s:.1f}s -> {args.out}")
    return 0


def cmd_distill_student(args) -> int:
    arch, train_kwargs, samples = _load_train_setup(args)
    teacher_ckpt = load_checkpoint(args.teacher)
    if teacher_ckpt.stage != "teacher":
        raise CheckpointError(f"--teacher must point at a stage=teacher checkpoint, "
                              f"got stage {teacher_ckpt.stage!r}")
    nar_mode = args.nar_mode or train_kwargs.get("nar_mode", "content_variant")
    kd = train_kwargs.get("kd_enabled", True) and not args.no_kd
    pool = None
    if nar_mode == "content_variant":
        if args.pool is None:
            raise UsageError("--pool is required for nar-mode content_variant")
        pool = load_pool_dir(args.pool)
    keys = ("epochs", "batch_size", "learning_rate", "weight_decay", "seed",
            "distill_weight", "squared_distill")
    student = StudentRegressor(teacher=teacher_ckpt, arch=arch, kd=kd,
                               nar_mode=nar_mode,
                               **{k: v for k, v in train_kwargs.items() if k in keys})
    student.fit(samples, pool=pool)
    student.save(args.out)
    student.report_.save_csv(str(args.out) + ".report.csv")
    final = student.report_.total_loss[-1] if student.report_.total_loss else float("nan")
    print(f"student ({nar_mode}, kd={'on' if student.kd_ else 'off'}): "
          f"{student.report_.epochs} epochs, final loss {final:.4f}, "
          f"{student.report_.wall_time_s:.1f}s -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    est = estimator_from_checkpoint(ckpt)
    samples = load_manifest(args.data)
    mode = est.reference_mode_
    pool = None
    if mode == "none":
        if args.pool is not None:
            print("warning: no-reference checkpoint, ignoring --pool", file=sys.stderr)
    elif mode == "content_variant":
        if args.pool is None:
            raise UsageError("--pool is required for a content-variant checkpoint")
        pool = load_pool_dir(args.pool)
    report = evaluate(est.params_, est.arch_, samples, pool=pool,
                      n_shuffles=args.shuffles, seed=args.seed, ref_mode=mode)
    write_report_csv(report, args.out)
    print(report.summary())
    return 0


def cmd_score(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    est = estimator_from_checkpoint(ckpt)
    mode = est.reference_mode_
    img = load_image(args.image)

    pool = None
    fr = None
    if mode == "none":
        sample = Sample(id=Path(args.image).stem, lq=img, fr=None, mos=0.0)
    else:
        if args.ref is None:
            raise UsageError(f"--ref is required for a {mode} checkpoint")
        ref_img = load_image(args.ref)
        if mode == "aligned_fr":
            if ref_img.shape != img.shape:
                raise DataError(f"aligned reference shape {ref_img.shape} != "
                                f"image shape {img.shape}")
            fr = ref_img
            sample = Sample(id=Path(args.image).stem, lq=img, fr=fr, mos=0.0)
        else:
            # arbitrary HQ reference: serve it as a one-image pool
            mode = "content_variant"
            pool = ReferencePool(images=[ref_img], ids=[Path(args.ref).stem])
            sample = Sample(id=Path(args.image).stem, lq=img, fr=None, mos=0.0)

    raw, coords = score_single(est.params_, est.arch_, sample, pool=pool,
                               ref_mode=mode, seed=args.seed)
    value = float(np.clip(raw * MOS_SCALE, 0.0, MOS_SCALE))
    print(f"score: {value:.2f}")
    print("crops: " + " ".join(f"({r},{c})" for r, c in coords))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="nariqa",
                     description="image quality assessment via reference-"
                                 "distilled patch regression")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[], help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--images", type=int, default=24)
    p.add_argument("--distortions-per", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=_parse_size, default=(64, 64))
    p.add_argument("--pool", type=int, default=8)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-teacher", help="stage one: full-reference teacher")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill-student", help="stage two: non-aligned student")
    p.add_argument("--data", required=True)
    p.add_argument("--pool", default=None)
    p.add_argument("--teacher", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-kd", action="store_true")
    p.add_argument("--nar-mode", choices=("content_variant", "content_similar",
                                          "aligned_fr", "none"), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_distill_student)

    p = sub.add_parser("evaluate", help="reference-shuffle evaluation")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pool", default=None)
    p.add_argument("--shuffles", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("score", help="score a single image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--ref", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_score)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DECODE
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

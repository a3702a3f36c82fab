"""Scikit-learn style estimators for the two training stages.

``TeacherRegressor`` fits the full-reference network on pixel-aligned
image pairs.  ``StudentRegressor`` fits the same architecture against
non-aligned references, optionally matching the frozen teacher's
difference-encoder activations layer by layer (feature distillation) on
a shared LQ patch tensor.

Labels are mean-opinion scores in [0, 100]; internally the networks
regress mos / 100 and ``predict`` scales back, which only affects the
loss units, never the rankings the evaluation protocol measures.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import Checkpoint, load_checkpoint, make_checkpoint, save_checkpoint
from .data import (NAR_MODES, ReferencePool, affine_jitter, augment,
                   crop_patches, sample_aligned_patches, _draw_coords)
from .errors import CheckpointError, ConfigError, DataError, GraphError
from .metrics import evaluate, predict_scores, srcc
from .network import (ArchConfig, ModelParams, forward, init_params,
                      to_network_input)
from .optim import adam_step, init_adam
from .validation import check_pool, check_samples

MOS_SCALE = 100.0


@dataclass
class TrainReport:
    """Per-epoch mean losses and timing for one training stage."""

    label_loss: List[float] = field(default_factory=list)
    distill_loss: List[float] = field(default_factory=list)
    total_loss: List[float] = field(default_factory=list)
    wall_time_s: float = 0.0
    snapshots: List[dict] = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.total_loss)

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,label_loss,distill_loss,total_loss\n")
            for e in range(self.epochs):
                fh.write(f"{e},{self.label_loss[e]:.6f},"
                         f"{self.distill_loss[e]:.6f},{self.total_loss[e]:.6f}\n")


def student_losses(p_lq: Tensor, p_fr: Optional[Tensor], p_nar: Optional[Tensor],
                   y: np.ndarray, params: ModelParams, config: ArchConfig,
                   teacher_params: Optional[ModelParams] = None,
                   kd: bool = True, distill_weight: float = 1.0,
                   squared: bool = False):
    """One student objective: (total, label, distill) loss tensors.

    The teacher runs gradient-free on the identical ``p_lq`` tensor with
    the aligned reference; the distillation term pairs its difference
    features with the student's.  Without distillation the term is a
    constant zero and total == label.
    """
    out = forward(p_lq, p_nar, params, config)
    label = ad.l1_loss(out.score, Tensor(y))
    if not kd:
        zero = Tensor(np.zeros((), dtype=np.float32))
        return label, label, zero
    if teacher_params is None:
        raise ConfigError("distillation requires teacher parameters")
    with ad.no_grad():
        t_out = forward(p_lq, p_fr, teacher_params, config)
    dist = ad.feature_l2_loss(t_out.features, out.features, squared=squared)
    total = ad.add(ad.mul(dist, float(distill_weight)), label)
    return total, label, dist


def _epoch_batches(n: int, batch_size: int, rng) -> List[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _to_labels(samples, y) -> np.ndarray:
    if y is None:
        y = [s.mos for s in samples]
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (len(samples),):
        raise DataError(f"labels shape {y.shape} != ({len(samples)},)")
    return (y / MOS_SCALE).astype(np.float32)


class _FittedMixin:
    def _require_fitted(self):
        if getattr(self, "params_", None) is None:
            raise RuntimeError(f"{type(self).__name__} is not fitted yet")

    def score(self, X, y=None, **predict_kw) -> float:
        """Spearman rank correlation between predictions and labels."""
        self._require_fitted()
        pred = self.predict(X, **predict_kw)
        gt = np.asarray([s.mos for s in X], dtype=np.float64) if y is None else np.asarray(y)
        return srcc(pred, gt)

    def evaluate(self, X, pool=None, n_shuffles: int = 10, seed: int = 0,
                 ref_mode: Optional[str] = None, batch_size: int = 16):
        """Run the reference-shuffle protocol against this model."""
        self._require_fitted()
        mode = ref_mode or self.reference_mode_
        return evaluate(self.params_, self.arch_, X, pool=pool,
                        n_shuffles=n_shuffles, seed=seed, ref_mode=mode,
                        batch_size=batch_size)

    def save(self, path) -> None:
        self._require_fitted()
        save_checkpoint(self.to_checkpoint(), path)


class TeacherRegressor(BaseEstimator, _FittedMixin):
    """Full-reference quality regressor (stage one of the pipeline).

    fit(X) expects a list of samples that all carry a pixel-aligned
    reference; each training step crops aligned multi-patch sets, augments
    them jointly and minimizes the batch-mean absolute score error.
    """

    _stage = "teacher"

    def __init__(self, arch: Optional[ArchConfig] = None, epochs: int = 6,
                 batch_size: int = 8, learning_rate: float = 1e-3,
                 weight_decay: float = 5e-4, seed: int = 0):
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.seed = seed

    @property
    def reference_mode_(self) -> str:
        return "aligned_fr"

    def fit(self, X, y=None, X_val=None):
        arch = self.arch if self.arch is not None else ArchConfig()
        if not arch.with_reference:
            raise ConfigError("the teacher is a full-reference model; "
                              "with_reference=False is a student-only setting")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        samples = check_samples(X, require_fr=True, patch_size=arch.patch_size)
        labels = _to_labels(samples, y)

        params = init_params(arch, self.seed)
        state = init_adam(params, lr=self.learning_rate, weight_decay=self.weight_decay)
        rng = np.random.default_rng((self.seed, 1))
        report = TrainReport()
        m, p = arch.patch_count, arch.patch_size
        t0 = time.perf_counter()

        for epoch in range(self.epochs):
            sums = np.zeros(2)
            count = 0
            for batch in _epoch_batches(len(samples), self.batch_size, rng):
                lq_list, fr_list = [], []
                for idx in batch:
                    lq_set, fr_set = sample_aligned_patches(samples[idx], m, p, rng)
                    lq_aug, fr_aug = augment(lq_set.patches, fr_set.patches, rng)
                    lq_list.append(lq_aug)
                    fr_list.append(fr_aug)
                p_lq = Tensor(to_network_input(np.stack(lq_list)))
                p_fr = Tensor(to_network_input(np.stack(fr_list)))
                out = forward(p_lq, p_fr, params, arch)
                loss = ad.l1_loss(out.score, Tensor(labels[batch]))
                if not np.isfinite(loss.data):
                    raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
                ad.backward(loss)
                adam_step(params, state)
                sums += (float(loss.data) * len(batch), len(batch) * 0)
                count += len(batch)
            mean_loss = sums[0] / count
            report.label_loss.append(mean_loss)
            report.distill_loss.append(0.0)
            report.total_loss.append(mean_loss)
            if X_val is not None:
                report.snapshots.append(
                    {"epoch": epoch, "val_srcc": self._val_srcc(params, arch, X_val)})
        report.wall_time_s = time.perf_counter() - t0

        self.params_ = params
        self.arch_ = arch
        self.report_ = report
        return self

    def _val_srcc(self, params, arch, X_val) -> float:
        scores = predict_scores(params, arch, X_val, ref_mode="aligned_fr")
        return srcc(scores, [s.mos for s in X_val])

    def predict(self, X, seed: int = 0, batch_size: int = 16) -> np.ndarray:
        """Quality scores in MOS units, using aligned reference patches."""
        self._require_fitted()
        raw = predict_scores(self.params_, self.arch_, X, ref_mode="aligned_fr",
                             seed=seed, batch_size=batch_size)
        return raw * MOS_SCALE

    def to_checkpoint(self) -> Checkpoint:
        self._require_fitted()
        final = self.report_.total_loss[-1] if self.report_.total_loss else float("nan")
        meta = {"stage": self._stage, "epochs": self.report_.epochs,
                "seed": self.seed, "final_train_loss": final,
                "nar_mode": "aligned_fr"}
        return make_checkpoint(self.params_, self.arch_, meta)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "TeacherRegressor":
        if ckpt.stage != "teacher":
            raise CheckpointError(f"expected a teacher checkpoint, got stage "
                                  f"{ckpt.stage!r}")
        est = cls(arch=ckpt.arch, epochs=int(ckpt.meta.get("epochs", 0)),
                  seed=int(ckpt.meta.get("seed", 0)))
        est.params_ = ckpt.to_model_params()
        est.arch_ = ckpt.arch
        est.report_ = TrainReport()
        return est


def _resolve_teacher(teacher):
    """Accept a fitted TeacherRegressor, a Checkpoint, or a path."""
    if teacher is None:
        return None, None
    if isinstance(teacher, TeacherRegressor):
        teacher._require_fitted()
        return teacher.params_, teacher.arch_
    if isinstance(teacher, Checkpoint):
        ckpt = teacher
    else:
        ckpt = load_checkpoint(teacher)
    if ckpt.stage != "teacher":
        raise CheckpointError(f"distillation needs a stage=teacher checkpoint, "
                              f"got stage {ckpt.stage!r}")
    return ckpt.to_model_params(), ckpt.arch


class StudentRegressor(BaseEstimator, _FittedMixin):
    """Second-stage regressor trained against non-aligned references.

    With ``kd=True`` (the default) every step also matches the student's
    difference-encoder activations to those of the frozen teacher, which
    sees the same LQ patches paired with the aligned reference.  The
    objective is ``distill_weight * distill + label``.

    ``nar_mode`` selects the reference fed to the student:

    - ``content_variant``: random crops of a random pool image
    - ``content_similar``: crops of an affine-jittered copy of the aligned
      reference
    - ``aligned_fr``: the aligned reference patches themselves
    - ``none``: no reference at all (the difference path is removed and
      distillation is disabled)
    """

    _stage = "student"

    def __init__(self, teacher=None, arch: Optional[ArchConfig] = None,
                 epochs: int = 6, batch_size: int = 8, learning_rate: float = 1e-3,
                 weight_decay: float = 5e-4, seed: int = 0, kd: bool = True,
                 nar_mode: str = "content_variant", distill_weight: float = 1.0,
                 squared_distill: bool = False):
        self.teacher = teacher
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.seed = seed
        self.kd = kd
        self.nar_mode = nar_mode
        self.distill_weight = distill_weight
        self.squared_distill = squared_distill

    @property
    def reference_mode_(self) -> str:
        return self.nar_mode_ if hasattr(self, "nar_mode_") else self.nar_mode

    def _resolve_setup(self):
        if self.nar_mode not in NAR_MODES:
            raise ConfigError(f"nar_mode {self.nar_mode!r} not in {NAR_MODES}")
        kd = self.kd and self.nar_mode != "none"  # no difference path, no KD
        teacher_params, teacher_arch = _resolve_teacher(self.teacher)
        arch = self.arch
        if arch is None:
            arch = teacher_arch if teacher_arch is not None else ArchConfig()
        if self.nar_mode == "none":
            arch = replace(arch, with_reference=False)
            teacher_params = None
        elif teacher_arch is not None and arch != teacher_arch:
            raise ConfigError("student architecture differs from the teacher's; "
                              "distillation requires identical configs")
        if kd and teacher_params is None:
            raise ConfigError("kd=True requires a trained teacher")
        if teacher_params is not None:
            teacher_params.set_requires_grad(False)
        return arch, kd, teacher_params

    def fit(self, X, y=None, pool: Optional[ReferencePool] = None, X_val=None):
        arch, kd, teacher_params = self._resolve_setup()
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        need_fr = kd or self.nar_mode in ("aligned_fr", "content_similar")
        samples = check_samples(X, require_fr=need_fr, patch_size=arch.patch_size)
        if self.nar_mode == "content_variant":
            check_pool(pool, patch_size=arch.patch_size)
        labels = _to_labels(samples, y)

        params = init_params(arch, self.seed)
        state = init_adam(params, lr=self.learning_rate, weight_decay=self.weight_decay)
        rng = np.random.default_rng((self.seed, 1))
        report = TrainReport()
        m, p = arch.patch_count, arch.patch_size
        t0 = time.perf_counter()

        for epoch in range(self.epochs):
            sums = np.zeros(3)
            count = 0
            for batch in _epoch_batches(len(samples), self.batch_size, rng):
                lq_list, fr_list, nar_list = [], [], []
                for idx in batch:
                    s = samples[idx]
                    if s.fr is not None:
                        lq_set, fr_set = sample_aligned_patches(s, m, p, rng)
                        lq_aug, fr_aug = augment(lq_set.patches, fr_set.patches, rng)
                    else:
                        coords = _draw_coords(rng, s.lq.shape[0], s.lq.shape[1], m, p)
                        lq_aug, _ = augment(crop_patches(s.lq, coords, p), None, rng)
                        fr_aug = None
                    lq_list.append(lq_aug)
                    fr_list.append(fr_aug)
                    nar_list.append(self._draw_reference(s, pool, fr_aug, m, p, rng))
                p_lq = Tensor(to_network_input(np.stack(lq_list)))
                p_fr = Tensor(to_network_input(np.stack(fr_list))) if kd else None
                p_nar = (Tensor(to_network_input(np.stack(nar_list)))
                         if self.nar_mode != "none" else None)
                total, label, dist = student_losses(
                    p_lq, p_fr, p_nar, labels[batch], params, arch,
                    teacher_params=teacher_params, kd=kd,
                    distill_weight=self.distill_weight, squared=self.squared_distill)
                if not np.isfinite(total.data):
                    raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
                ad.backward(total)
                adam_step(params, state)
                if teacher_params is not None and any(
                        t.grad is not None for t in teacher_params.values()):
                    raise GraphError("teacher gradient leak: frozen parameters "
                                     "received gradients")
                sums += (float(label.data) * len(batch),
                         float(dist.data) * len(batch),
                         float(total.data) * len(batch))
                count += len(batch)
            report.label_loss.append(sums[0] / count)
            report.distill_loss.append(sums[1] / count)
            report.total_loss.append(sums[2] / count)
            if X_val is not None:
                scores = predict_scores(params, arch, X_val, pool=pool,
                                        ref_mode=self.nar_mode, seed=0)
                report.snapshots.append(
                    {"epoch": epoch,
                     "val_srcc": srcc(scores, [s.mos for s in X_val])})
        report.wall_time_s = time.perf_counter() - t0

        self.params_ = params
        self.arch_ = arch
        self.report_ = report
        self.kd_ = kd
        self.nar_mode_ = self.nar_mode
        return self

    def _draw_reference(self, s, pool, fr_aug, m, p, rng):
        """Reference patches for one image; non-aligned references get an
        independent augmentation, the aligned mode reuses the jointly
        augmented reference so the pair stays pixel-aligned."""
        mode = self.nar_mode
        if mode == "none":
            return None
        if mode == "aligned_fr":
            return fr_aug
        if mode == "content_similar":
            warped = affine_jitter(s.fr, scale=float(rng.uniform(0.95, 1.05)),
                                   rotation_deg=float(rng.uniform(-5.0, 5.0)))
            coords = _draw_coords(rng, warped.shape[0], warped.shape[1], m, p)
            nar, _ = augment(crop_patches(warped, coords, p), None, rng)
            return nar
        eligible = [i for i, rid in enumerate(pool.ids) if rid != s.id]
        if not eligible:
            raise DataError("reference pool only contains the sample's own image")
        img = pool.images[eligible[int(rng.integers(len(eligible)))]]
        coords = _draw_coords(rng, img.shape[0], img.shape[1], m, p)
        nar, _ = augment(crop_patches(img, coords, p), None, rng)
        return nar

    def predict(self, X, pool: Optional[ReferencePool] = None, seed: int = 0,
                batch_size: int = 16) -> np.ndarray:
        """Quality scores in MOS units under the fitted reference mode."""
        self._require_fitted()
        raw = predict_scores(self.params_, self.arch_, X, pool=pool,
                             ref_mode=self.nar_mode_, seed=seed,
                             batch_size=batch_size)
        return raw * MOS_SCALE

    def to_checkpoint(self) -> Checkpoint:
        self._require_fitted()
        final = self.report_.total_loss[-1] if self.report_.total_loss else float("nan")
        meta = {"stage": self._stage, "epochs": self.report_.epochs,
                "seed": self.seed, "final_train_loss": final,
                "nar_mode": self.nar_mode_, "kd_enabled": self.kd_,
                "distill_weight": self.distill_weight}
        return make_checkpoint(self.params_, self.arch_, meta)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "StudentRegressor":
        if ckpt.stage != "student":
            raise CheckpointError(f"expected a student checkpoint, got stage "
                                  f"{ckpt.stage!r}")
        est = cls(arch=ckpt.arch, epochs=int(ckpt.meta.get("epochs", 0)),
                  seed=int(ckpt.meta.get("seed", 0)),
                  kd=bool(ckpt.meta.get("kd_enabled", False)),
                  nar_mode=str(ckpt.meta.get("nar_mode", "content_variant")),
                  distill_weight=float(ckpt.meta.get("distill_weight", 1.0)))
        est.params_ = ckpt.to_model_params()
        est.arch_ = ckpt.arch
        est.report_ = TrainReport()
        est.kd_ = est.kd
        est.nar_mode_ = est.nar_mode
        return est


def estimator_from_checkpoint(ckpt: Checkpoint):
    """Rebuild the right estimator type from a checkpoint's stage field."""
    if ckpt.stage == "teacher":
        return TeacherRegressor.from_checkpoint(ckpt)
    if ckpt.stage == "student":
        return StudentRegressor.from_checkpoint(ckpt)
    raise CheckpointError(f"checkpoint has unknown stage {ckpt.stage!r}")

"""Input validation helpers shared by the data, metrics and estimator layers."""

from __future__ import annotations

import numpy as np

from .errors import DataError, MetricError


def check_image(img, name: str = "image") -> np.ndarray:
    """Validate an [H, W, 3] float image with values in [0, 1]."""
    if not isinstance(img, np.ndarray):
        raise DataError(f"{name} must be a numpy array, got {type(img).__name__}")
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"{name} must have shape [H, W, 3], got {img.shape}")
    if not np.issubdtype(img.dtype, np.floating):
        raise DataError(f"{name} must be floating point, got dtype {img.dtype}")
    if not np.all(np.isfinite(img)):
        raise DataError(f"{name} contains NaN or Inf")
    lo, hi = float(img.min()), float(img.max())
    if lo < 0.0 or hi > 1.0:
        raise DataError(f"{name} values outside [0, 1]: range [{lo}, {hi}]")
    return img


def check_sample(sample, require_fr: bool = False, patch_size: int | None = None,
                 name: str = "sample") -> None:
    check_image(sample.lq, f"{name} {sample.id!r} lq")
    if not 0.0 <= sample.mos <= 100.0:
        raise DataError(f"{name} {sample.id!r} mos {sample.mos} outside [0, 100]")
    if sample.fr is not None:
        check_image(sample.fr, f"{name} {sample.id!r} fr")
        if sample.fr.shape != sample.lq.shape:
            raise DataError(f"{name} {sample.id!r} fr shape {sample.fr.shape} "
                            f"!= lq shape {sample.lq.shape}")
    elif require_fr:
        raise DataError(f"{name} {sample.id!r} lacks the pixel-aligned reference "
                        f"required here")
    if patch_size is not None:
        h, w = sample.lq.shape[:2]
        if h < patch_size or w < patch_size:
            raise DataError(f"{name} {sample.id!r} ({h}x{w}) smaller than "
                            f"patch size {patch_size}")


def check_samples(samples, require_fr: bool = False,
                  patch_size: int | None = None) -> list:
    samples = list(samples)
    if not samples:
        raise DataError("empty sample list")
    for s in samples:
        check_sample(s, require_fr=require_fr, patch_size=patch_size)
    return samples


def check_pool(pool, patch_size: int | None = None) -> None:
    if pool is None or not pool.images:
        raise DataError("reference pool is empty")
    if len(pool.images) != len(pool.ids):
        raise DataError("reference pool images/ids length mismatch")
    for rid, img in zip(pool.ids, pool.images):
        check_image(img, f"pool image {rid!r}")
        if patch_size is not None:
            h, w = img.shape[:2]
            if h < patch_size or w < patch_size:
                raise DataError(f"pool image {rid!r} ({h}x{w}) smaller than "
                                f"patch size {patch_size}")


def check_score_pairs(predictions, ground_truth, min_n: int = 2):
    """Validate and return prediction/label vectors as float64 arrays."""
    pred = np.asarray(predictions, dtype=np.float64)
    gt = np.asarray(ground_truth, dtype=np.float64)
    if pred.ndim != 1 or gt.ndim != 1:
        raise MetricError(f"score pairs must be 1-D, got {pred.shape} / {gt.shape}")
    if len(pred) != len(gt):
        raise MetricError(f"score pair lengths differ: {len(pred)} vs {len(gt)}")
    if len(pred) < min_n:
        raise MetricError(f"need at least {min_n} score pairs, got {len(pred)}")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise MetricError("score pairs contain NaN or Inf")
    return pred, gt

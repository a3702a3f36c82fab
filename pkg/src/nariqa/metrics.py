"""Rank-correlation metrics, the monotone logistic correction, and the
reference-shuffle evaluation protocol.

All metric arithmetic runs in float64 regardless of model precision.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import (ReferencePool, crop_patches, sample_nonaligned_patches,
                   _draw_coords)
from .errors import DataError, MetricError
from .network import ArchConfig, ModelParams, forward, to_network_input
from .validation import check_pool, check_samples, check_score_pairs

REFERENCE_MODES = ("content_variant", "content_similar", "aligned_fr", "none")


# ---------------------------------------------------------------------------
# rank correlations
# ---------------------------------------------------------------------------

def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank span."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(len(v), dtype=np.float64)
    sv = v[order]
    i = 0
    n = len(v)
    while i < n:
        j = i
        while j + 1 < n and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    va = float(a @ a)
    vb = float(b @ b)
    if va == 0.0 or vb == 0.0:
        raise MetricError("correlation undefined: a vector is constant")
    return float((a @ b) / np.sqrt(va * vb))


def srcc(predictions, ground_truth) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks."""
    pred, gt = check_score_pairs(predictions, ground_truth)
    return _pearson(average_ranks(pred), average_ranks(gt))


def krcc(predictions, ground_truth) -> float:
    """Kendall tau-b: tie-corrected concordant/discordant pair ratio."""
    pred, gt = check_score_pairs(predictions, ground_truth)
    n = len(pred)
    sx = np.sign(pred[:, None] - pred[None, :])
    sy = np.sign(gt[:, None] - gt[None, :])
    num = float(np.sum(sx * sy)) / 2.0  # C - D over unordered pairs
    n0 = n * (n - 1) / 2.0

    def tie_pairs(v):
        _, counts = np.unique(v, return_counts=True)
        return float(np.sum(counts * (counts - 1) / 2.0))

    n1 = tie_pairs(pred)
    n2 = tie_pairs(gt)
    denom = np.sqrt((n0 - n1) * (n0 - n2))
    if denom == 0.0:
        raise MetricError("kendall tau undefined: all values tied in a vector")
    return num / denom


# ---------------------------------------------------------------------------
# logistic correction
# ---------------------------------------------------------------------------

@dataclass
class LogisticFit:
    """Five parameters of the monotone logistic-plus-linear map

        q(x) = b1 * (1/2 - 1/(1 + exp(b2 * (x - b3)))) + b4 * x + b5

    constrained non-decreasing (canonical b2 >= 0, with b1 >= 0, b4 >= 0)
    so the correction can never flip the prediction order.
    """

    beta: np.ndarray
    converged: bool
    residual_norm: float
    n_iter: int

    def __call__(self, x) -> np.ndarray:
        return _logistic_eval(self.beta, np.asarray(x, dtype=np.float64))


def _logistic_eval(beta: np.ndarray, x: np.ndarray) -> np.ndarray:
    b1, b2, b3, b4, b5 = beta
    u = np.clip(b2 * (x - b3), -500, 500)
    sig = 1.0 / (1.0 + np.exp(-u))
    return b1 * (sig - 0.5) + b4 * x + b5


def _logistic_jacobian(beta: np.ndarray, x: np.ndarray) -> np.ndarray:
    b1, b2, b3, b4, b5 = beta
    u = np.clip(b2 * (x - b3), -500, 500)
    sig = 1.0 / (1.0 + np.exp(-u))
    dsig = sig * (1.0 - sig)
    J = np.empty((len(x), 5))
    J[:, 0] = sig - 0.5
    J[:, 1] = b1 * dsig * (x - b3)
    J[:, 2] = -b1 * dsig * b2
    J[:, 3] = x
    J[:, 4] = 1.0
    return J


def _project(beta: np.ndarray) -> np.ndarray:
    beta = beta.copy()
    if beta[1] < 0:  # (b1, b2) -> (-b1, -b2) leaves q unchanged
        beta[0], beta[1] = -beta[0], -beta[1]
    beta[0] = max(beta[0], 0.0)
    beta[3] = max(beta[3], 0.0)
    return beta


def fit_logistic(predictions, ground_truth, max_iter: int = 200,
                 rel_tol: float = 1e-10) -> LogisticFit:
    """Damped Gauss-Newton least squares fit of the monotone map.

    Stops when the relative residual change drops below ``rel_tol`` or at
    ``max_iter`` iterations; non-convergence is reported through the flag,
    never as an exception.
    """
    x, y = check_score_pairs(predictions, ground_truth, min_n=6)
    if x.std() == 0.0:
        raise MetricError("logistic fit undefined: predictions have zero variance")

    beta = _project(np.array([y.max() - y.min(), 1.0 / x.std(), x.mean(), 0.0, y.mean()]))
    r = _logistic_eval(beta, x) - y
    sse = float(r @ r)
    mu = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = _logistic_jacobian(beta, x)
        JtJ = J.T @ J
        Jtr = J.T @ r
        accepted = False
        for _ in range(50):
            try:
                delta = np.linalg.solve(JtJ + mu * np.eye(5), -Jtr)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            cand = _project(beta + delta)
            rc = _logistic_eval(cand, x) - y
            sse_c = float(rc @ rc)
            if sse_c <= sse:
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            break
        mu = max(mu / 3.0, 1e-12)
        beta, r = cand, rc
        change = sse - sse_c
        sse = sse_c
        if change <= rel_tol * max(sse, 1e-300):
            converged = True
            break

    # An ordinary increasing straight line is inside the family; never do
    # worse than it.
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    if slope >= 0:
        lin = np.array([0.0, 1.0 / x.std(), x.mean(), slope, intercept])
        rl = _logistic_eval(lin, x) - y
        if float(rl @ rl) < sse:
            beta, sse = lin, float(rl @ rl)
            converged = True

    return LogisticFit(beta=beta, converged=converged,
                       residual_norm=float(np.sqrt(sse)), n_iter=it)


def plcc(predictions, ground_truth):
    """Pearson correlation after the monotone logistic correction.

    Returns ``(value, fit)``.  If the constrained fit degenerates to a
    constant (anti-monotone data), the uncorrected Pearson correlation is
    reported instead.
    """
    pred, gt = check_score_pairs(predictions, ground_truth, min_n=6)
    if gt.std() == 0.0:
        raise MetricError("plcc undefined: ground truth is constant")
    fit = fit_logistic(pred, gt)
    q = fit(pred)
    if q.std() < 1e-12:
        return _pearson(pred, gt), fit
    return _pearson(q, gt), fit


# ---------------------------------------------------------------------------
# shuffle-evaluation protocol
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    """Correlation metrics of one checkpoint; headline numbers come from
    the first reference shuffle, stability from the SRCC spread."""

    srcc: float
    plcc: float
    krcc: float
    n_samples: int
    srcc_per_shuffle: List[float] = field(default_factory=list)
    plcc_per_shuffle: List[float] = field(default_factory=list)
    krcc_per_shuffle: List[float] = field(default_factory=list)

    @property
    def srcc_mean(self) -> float:
        return float(np.mean(self.srcc_per_shuffle))

    @property
    def srcc_std(self) -> float:
        # population std: the shuffles are the whole protocol, not a sample
        return float(np.std(self.srcc_per_shuffle))

    def summary(self) -> str:
        return (f"SRCC={self.srcc_mean:.4f}±{self.srcc_std:.4f} "
                f"PLCC={self.plcc:.4f} KRCC={self.krcc:.4f}")


def _forward_scores(params: ModelParams, config: ArchConfig,
                    lq_arrays, ref_arrays, batch_size: int) -> np.ndarray:
    scores = np.empty(len(lq_arrays), dtype=np.float64)
    with ad.no_grad():
        for start in range(0, len(lq_arrays), batch_size):
            stop = min(start + batch_size, len(lq_arrays))
            p_lq = Tensor(to_network_input(np.stack(lq_arrays[start:stop])))
            p_ref = None
            if ref_arrays is not None:
                p_ref = Tensor(to_network_input(np.stack(ref_arrays[start:stop])))
            out = forward(p_lq, p_ref, params, config)
            scores[start:stop] = np.asarray(out.score.data, dtype=np.float64)
    return scores


@dataclass
class _LQSet:
    patches: np.ndarray
    coords: list


def _draw_lq_sets(samples, m, p, rng) -> List[_LQSet]:
    sets = []
    for s in samples:
        coords = _draw_coords(rng, s.lq.shape[0], s.lq.shape[1], m, p)
        sets.append(_LQSet(patches=crop_patches(s.lq, coords, p), coords=coords))
    return sets


def _reference_arrays(samples, pool, mode, lq_sets, rng, m, p):
    if mode == "none":
        return None
    if mode == "aligned_fr":
        return [crop_patches(s.fr, ps.coords, p) for s, ps in zip(samples, lq_sets)]
    refs = []
    for s in samples:
        _, ref_set = sample_nonaligned_patches(s, pool, m, p, rng, mode=mode)
        refs.append(ref_set.patches)
    return refs


def predict_scores(params: ModelParams, config: ArchConfig, samples,
                   pool: Optional[ReferencePool] = None,
                   ref_mode: str = "content_variant", seed: int = 0,
                   batch_size: int = 16) -> np.ndarray:
    """Score every sample once (single reference draw), deterministically."""
    samples = _check_eval_inputs(samples, pool, ref_mode, config)
    m, p = config.patch_count, config.patch_size
    lq_sets = _draw_lq_sets(samples, m, p, np.random.default_rng((seed, 0)))
    rng_ref = np.random.default_rng((seed, 1, 0))
    refs = _reference_arrays(samples, pool, ref_mode, lq_sets, rng_ref, m, p)
    return _forward_scores(params, config, [ps.patches for ps in lq_sets], refs,
                           batch_size)


def _check_eval_inputs(samples, pool, ref_mode, config):
    if ref_mode not in REFERENCE_MODES:
        raise DataError(f"unknown reference mode {ref_mode!r}")
    need_fr = ref_mode in ("aligned_fr", "content_similar")
    samples = check_samples(samples, require_fr=need_fr,
                            patch_size=config.patch_size)
    if ref_mode == "content_variant":
        check_pool(pool, patch_size=config.patch_size)
    if config.with_reference == (ref_mode == "none"):
        raise DataError(f"reference mode {ref_mode!r} incompatible with this "
                        f"architecture (with_reference={config.with_reference})")
    return samples


def evaluate(params: ModelParams, config: ArchConfig, samples,
             pool: Optional[ReferencePool] = None, n_shuffles: int = 10,
             seed: int = 0, ref_mode: str = "content_variant",
             batch_size: int = 16) -> EvalReport:
    """Shuffle-stability protocol: re-draw the references ``n_shuffles``
    times with per-shuffle seeds while keeping the LQ crops fixed, and
    report the SRCC spread across draws.

    Modes without reference randomness (``none``, ``aligned_fr``) score
    once; their per-shuffle metrics repeat and the spread is exactly zero.
    """
    if n_shuffles < 1:
        raise DataError(f"n_shuffles must be >= 1, got {n_shuffles}")
    samples = _check_eval_inputs(samples, pool, ref_mode, config)
    m, p = config.patch_count, config.patch_size
    mos = np.array([s.mos for s in samples], dtype=np.float64)

    lq_sets = _draw_lq_sets(samples, m, p, np.random.default_rng((seed, 0)))
    lq_arrays = [ps.patches for ps in lq_sets]

    srccs, plccs, krccs = [], [], []
    if ref_mode in ("none", "aligned_fr"):
        refs = _reference_arrays(samples, pool, ref_mode, lq_sets, None, m, p)
        scores = _forward_scores(params, config, lq_arrays, refs, batch_size)
        s_val = srcc(scores, mos)
        p_val, _ = plcc(scores, mos)
        k_val = krcc(scores, mos)
        srccs = [s_val] * n_shuffles
        plccs = [p_val] * n_shuffles
        krccs = [k_val] * n_shuffles
    else:
        for k in range(n_shuffles):
            rng_ref = np.random.default_rng((seed, 1, k))
            refs = _reference_arrays(samples, pool, ref_mode, lq_sets, rng_ref, m, p)
            scores = _forward_scores(params, config, lq_arrays, refs, batch_size)
            srccs.append(srcc(scores, mos))
            p_val, _ = plcc(scores, mos)
            plccs.append(p_val)
            krccs.append(krcc(scores, mos))

    return EvalReport(srcc=srccs[0], plcc=plccs[0], krcc=krccs[0],
                      n_samples=len(samples), srcc_per_shuffle=srccs,
                      plcc_per_shuffle=plccs, krcc_per_shuffle=krccs)


def score_single(params: ModelParams, config: ArchConfig, sample,
                 pool: Optional[ReferencePool] = None,
                 ref_mode: str = "content_variant", seed: int = 0):
    """Score one sample; returns (raw score, LQ crop coordinates)."""
    samples = _check_eval_inputs([sample], pool, ref_mode, config)
    m, p = config.patch_count, config.patch_size
    lq_sets = _draw_lq_sets(samples, m, p, np.random.default_rng((seed, 0)))
    rng_ref = np.random.default_rng((seed, 1, 0))
    refs = _reference_arrays(samples, pool, ref_mode, lq_sets, rng_ref, m, p)
    scores = _forward_scores(params, config, [lq_sets[0].patches], refs, 1)
    return float(scores[0]), lq_sets[0].coords


def write_report_csv(report: EvalReport, path) -> None:
    """Serialize: one row per shuffle plus a summary row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["shuffle", "srcc", "plcc", "krcc"])
        for i, (s, p, k) in enumerate(zip(report.srcc_per_shuffle,
                                          report.plcc_per_shuffle,
                                          report.krcc_per_shuffle)):
            writer.writerow([i, f"{s:.6f}", f"{p:.6f}", f"{k:.6f}"])
        writer.writerow(["summary", f"{report.srcc_mean:.6f}",
                         f"{report.srcc_std:.6f}", "-"])

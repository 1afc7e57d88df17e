"""Robust fundamental-matrix estimation from uncertain, direction-ambiguous smears.

Pipeline: keep the fraction ``beta`` of pixels with the lowest predicted
sigma, draw 7-point subsets, expand every subset into all ambiguous 7-point
candidates, rank the candidate pool with preemptive (breadth-first halving)
scoring on blocks of observations, then refit the winner on its consensus set.
"""
import math
from dataclasses import dataclass

import numpy as np

from .epipolar import endpoints, normalize_rank2, serr_min, serr_min_batch
from .errors import AllHypothesesDegenerate, ConfigInvalid, InsufficientData, RankDeficient
from .solver import _candidates_batch, hartley_transform

SEG_THRESHOLD = 3.0


@dataclass(frozen=True)
class RansacConfig:
    tau_se: float = 1.0
    max_iterations: int = 1000
    early_stop_fraction: float = 0.90
    hypotheses: int = 512
    block_size: int = 64
    seed: int = 0
    refit: bool = True
    refit_top: int = 8
    max_draw_factor: int = 10

    def validate(self):
        if not self.tau_se > 0:
            raise ConfigInvalid(f"tau_se: must be positive, got {self.tau_se}")
        for name in ("hypotheses", "block_size", "max_iterations", "refit_top", "max_draw_factor"):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name}: must be >= 1, got {getattr(self, name)}")
        return self


@dataclass(frozen=True)
class EstimationReport:
    f: np.ndarray
    inlier_mask: np.ndarray
    per_smear_error: np.ndarray
    directions: np.ndarray
    iterations_used: int
    selected_indices: np.ndarray
    points: np.ndarray
    smears: np.ndarray
    n_candidates: int = 0

    @property
    def inlier_count(self):
        return int(np.count_nonzero(self.inlier_mask))

    @property
    def median_error(self):
        return float(np.median(self.per_smear_error))


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def select_by_sigma(sigmas, beta):
    """Indices of the ``round(beta * N)`` smallest sigmas, ties by index, sorted."""
    sigmas = np.asarray(sigmas, dtype=float).ravel()
    if not 0 < beta <= 1:
        raise ConfigInvalid(f"beta: must lie in (0, 1], got {beta}")
    L = _round_half_up(beta * sigmas.size)
    order = np.argsort(sigmas, kind="stable")
    return np.sort(order[:L])


def select_top_beta(field, beta):
    """Pixel centers, smears and flat indices of the most certain pixels.

    Returns ``(points, smears, indices)`` with indices in row-major order.
    Fewer than seven selected pixels is not an error here; estimation raises
    :class:`InsufficientData` later.
    """
    idx = select_by_sigma(field.sigma, beta)
    points = field.pixel_centers()[idx]
    smears = field.vectors.reshape(-1, 2)[idx]
    return points, smears, idx


def _draw_samples(n, cfg):
    """Seven distinct indices per hypothesis, each from its own seeded stream.

    Returns the sample array and the per-hypothesis generators (reused for
    redraws of degenerate subsets).
    """
    streams = [np.random.default_rng([cfg.seed, i]) for i in range(cfg.hypotheses)]
    samples = np.stack([g.choice(n, size=7, replace=False) for g in streams])
    return samples, streams


def _truncated_cost(points, smears, F, tau):
    e, _ = serr_min(points, smears, F)
    return float(np.sum(np.minimum(e, tau)))


def _weighted_oriented_fit(start, end, F, n_iter=10):
    """Iteratively Sampson-reweighted 8-point fit on oriented pairs.

    ``start``/``end`` are homogeneous ``(n, 3)`` arrays already oriented so that
    ``start^T F end = 0`` is the constraint.  Starts from ``F`` for the weights.
    """
    T = hartley_transform(np.concatenate([start[:, :2], end[:, :2]]))
    sn, en = start @ T.T, end @ T.T
    Tinv = np.linalg.inv(T)
    Fn = Tinv.T @ F @ Tinv
    base = (sn[:, :, None] * en[:, None, :]).reshape(-1, 9)
    for _ in range(n_iter):
        lines = en @ Fn.T
        lines_t = sn @ Fn
        den = lines[:, 0] ** 2 + lines[:, 1] ** 2 + lines_t[:, 0] ** 2 + lines_t[:, 1] ** 2
        w = 1.0 / np.sqrt(np.maximum(den, 1e-300))
        _, _, Vt = np.linalg.svd(base * w[:, None], full_matrices=False)
        U, sv, Vt3 = np.linalg.svd(Vt[-1].reshape(3, 3))
        Fn_new = (U * [sv[0], sv[1], 0.0]) @ Vt3
        Fn_new /= np.linalg.norm(Fn_new)
        if np.dot(Fn_new.ravel(), Fn.ravel()) < 0:
            Fn_new = -Fn_new
        step = np.linalg.norm(Fn_new - Fn / np.linalg.norm(Fn))
        Fn = Fn_new
        if step < 1e-12:
            break
    return normalize_rank2(T.T @ Fn @ T)


def refit_consensus(points, smears, F, tau, max_iter=10):
    """Sampson-weighted linear refit of F on its consensus set.

    Each round fixes the inlier set and the time direction of every inlier
    from the current F, runs the reweighted oriented 8-point fit to
    convergence and keeps the result only if the truncated cost
    ``sum min(SErrMin, tau)`` drops.
    """
    F = np.asarray(F, dtype=float)
    cost = _truncated_cost(points, smears, F, tau)
    for _ in range(max_iter):
        e, d = serr_min(points, smears, F)
        inl = e <= tau
        if np.count_nonzero(inl) < 8:
            break
        a, b = endpoints(points[inl], smears[inl])
        flip = (d[inl] == 1)[:, None]
        try:
            F_new = _weighted_oriented_fit(np.where(flip, b, a), np.where(flip, a, b), F)
        except RankDeficient:
            break
        new_cost = _truncated_cost(points, smears, F_new, tau)
        if not new_cost < cost:
            break
        converged = cost - new_cost <= 1e-12 * cost
        F, cost = F_new, new_cost
        if converged:
            break
    return F, cost


def estimate_f(points, smears, cfg=None, selected_indices=None):
    """Estimate F from ambiguous smears with preemptive RANSAC.

    Parameters
    ----------
    points, smears : (N, 2) arrays
        Smear midpoints and half displacements.
    cfg : RansacConfig
    selected_indices : optional (N,) array
        Original pixel indices carried into the report.

    Returns
    -------
    EstimationReport
    """
    cfg = (cfg or RansacConfig()).validate()
    points = np.asarray(points, dtype=float)
    smears = np.asarray(smears, dtype=float)
    n = len(points)
    if n < 7:
        raise InsufficientData(f"need at least 7 correspondences, got {n}")
    if selected_indices is None:
        selected_indices = np.arange(n)

    samples, streams = _draw_samples(n, cfg)
    Fs, owner, _, degenerate = _candidates_batch(points[samples], smears[samples])
    pool, owners = [Fs], [owner]
    attempts = cfg.hypotheses
    budget = cfg.max_draw_factor * cfg.hypotheses
    while degenerate.any() and attempts < budget:
        redo = np.flatnonzero(degenerate)[: budget - attempts]
        attempts += len(redo)
        fresh = np.stack([streams[i].choice(n, size=7, replace=False) for i in redo])
        Fr, ow, _, deg = _candidates_batch(points[fresh], smears[fresh])
        pool.append(Fr)
        owners.append(redo[ow])
        degenerate = np.zeros_like(degenerate)
        degenerate[redo[deg]] = True
    Fs = np.concatenate(pool)
    owner = np.concatenate(owners)
    if len(Fs) == 0:
        raise AllHypothesesDegenerate("every drawn 7-subset was degenerate")
    # order the pool by hypothesis index so redraws do not depend on batching
    order = np.argsort(owner, kind="stable")
    Fs = Fs[order]

    a, b = endpoints(points, smears)
    obs = np.random.default_rng([cfg.seed, cfg.hypotheses, 7]).permutation(n)
    alive = np.arange(len(Fs))
    score = np.zeros(len(Fs))
    rounds = 0
    for start in range(0, n, cfg.block_size):
        if rounds >= cfg.max_iterations:
            break
        blk = obs[start:start + cfg.block_size]
        score[alive] += _block_scores(Fs[alive], a[blk], b[blk], cfg.tau_se)
        rounds += 1
        ranked = alive[np.lexsort((alive, score[alive]))]
        alive = np.sort(ranked[: max(1, -(-len(ranked) // 2))])
        best = ranked[0]
        fit = np.mean(serr_min_batch(Fs[best:best + 1], a, b)[0] <= cfg.tau_se)
        if fit > cfg.early_stop_fraction or len(alive) == 1:
            break
    ranked = alive[np.lexsort((alive, score[alive]))]
    F = normalize_rank2(Fs[ranked[0]])
    if cfg.refit:
        # refit the leading survivors; strict improvement keeps the earliest on ties
        F, best_cost = refit_consensus(points, smears, F, cfg.tau_se)
        for i in ranked[1:cfg.refit_top]:
            F_i, cost_i = refit_consensus(points, smears, normalize_rank2(Fs[i]), cfg.tau_se)
            if cost_i < best_cost:
                F, best_cost = F_i, cost_i
    err, dirs = serr_min(points, smears, F)
    return EstimationReport(F, err <= cfg.tau_se, err, dirs, rounds, np.asarray(selected_indices),
                            points, smears, len(Fs))


def _block_scores(Fs, a, b, tau, chunk=1024):
    out = np.empty(len(Fs))
    for i in range(0, len(Fs), chunk):
        e = serr_min_batch(Fs[i:i + chunk], a, b)
        out[i:i + chunk] = np.minimum(e, tau).sum(axis=1)
    return out


def classify_motion(field, F, tau_seg=SEG_THRESHOLD, sigma_gate=np.inf):
    """Per-pixel motion labels against a fundamental matrix.

    Returns an ``(H, W)`` uint8 array: 0 where the smear agrees with F
    (SErrMin at most ``tau_seg``), 1 for local motion, and 2 (unknown) for
    zero smears whose sigma exceeds ``sigma_gate``.
    """
    if not tau_seg > 0:
        raise ConfigInvalid(f"tau_seg: must be positive, got {tau_seg}")
    err, _ = serr_min(field.pixel_centers(), field.vectors.reshape(-1, 2), F)
    mask = (err > tau_seg).astype(np.uint8)
    zero = np.all(field.vectors.reshape(-1, 2) == 0, axis=1)
    mask[zero & (field.sigma.ravel() > sigma_gate)] = 2
    return mask.reshape(field.height, field.width)

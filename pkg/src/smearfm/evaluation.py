"""Quality measures for estimated fundamental matrices and smear fields."""
from dataclasses import dataclass

import numpy as np

from .epipolar import serr_min
from .errors import DimensionMismatch, EmptyInput
from .robust import select_by_sigma
from .smear import epe_s, sparsification_curve

EVAL_THRESHOLD = 3.0


def default_curve_grid():
    return np.logspace(-3, 2, 50)


@dataclass(frozen=True)
class FmEvalResult:
    inlier_percent: float
    median_serr: float
    curve: np.ndarray  # rows of (threshold, ratio)


def cumulative_curve(errors, grid):
    """Fraction of errors at or below each threshold of ``grid``."""
    errors = np.sort(np.asarray(errors, dtype=float))
    grid = np.asarray(grid, dtype=float)
    counts = np.searchsorted(errors, grid, side="right")
    return np.column_stack([grid, counts / errors.size])


def fm_eval(points, smears, F, threshold=EVAL_THRESHOLD, curve_grid=None):
    """Agreement of F with ground-truth smears measured by SErrMin.

    ``inlier_percent`` is the share (in percent) of smears with SErrMin at
    most ``threshold``; ``median_serr`` the median SErrMin (mean of the middle
    pair for even counts); ``curve`` the cumulative ratio on ``curve_grid``.
    """
    points = np.asarray(points, dtype=float)
    if len(points) == 0:
        raise EmptyInput("no correspondences to evaluate")
    err, _ = serr_min(points, smears, F)
    err = np.atleast_1d(err)
    grid = default_curve_grid() if curve_grid is None else curve_grid
    return FmEvalResult(
        inlier_percent=100.0 * np.count_nonzero(err <= threshold) / err.size,
        median_serr=float(np.median(err)),
        curve=cumulative_curve(err, grid),
    )


def _check_fields(pred, gt):
    if pred.vectors.shape != gt.vectors.shape:
        raise DimensionMismatch(f"fields differ: {pred.vectors.shape} vs {gt.vectors.shape}")


def epe_s_summary(pred, gt, top_fraction=0.5):
    """Mean EPE-S over the ``top_fraction`` of pixels with the lowest predicted sigma."""
    _check_fields(pred, gt)
    if not 0 < top_fraction <= 1:
        raise ValueError("top_fraction must lie in (0, 1]")
    idx = select_by_sigma(pred.sigma, top_fraction)
    if idx.size == 0:
        raise EmptyInput("top_fraction selects no pixels")
    err = epe_s(pred.vectors.reshape(-1, 2)[idx], gt.vectors.reshape(-1, 2)[idx])
    return float(np.mean(err))


def field_sparsification(pred, gt, fractions=None):
    """Sparsification curve of a predicted field, errors measured by EPE-S."""
    _check_fields(pred, gt)
    if fractions is None:
        fractions = np.arange(10) / 10.0
    err = epe_s(pred.vectors.reshape(-1, 2), gt.vectors.reshape(-1, 2))
    return sparsification_curve(err, pred.sigma.ravel(), fractions)

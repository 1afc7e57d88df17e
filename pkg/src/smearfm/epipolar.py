"""Epipolar residuals for direction-ambiguous smear correspondences.

A smear is stored as a midpoint ``p`` and a half displacement ``s``; its two
endpoints are ``p - s`` (start) and ``p + s`` (end).  Flipping the sign of
``s`` swaps start and end, which is the same as transposing F.

All functions accept a single point of shape ``(2,)`` or a stack of shape
``(N, 2)`` and broadcast accordingly.  Fundamental matrices are plain
``(3, 3)`` arrays.
"""
from enum import IntEnum

import numpy as np

from .errors import DegenerateLine, RankDeficient

DET_TOL = 1e-9
NORM_TOL = 1e-12
DENOM_TOL = 1e-15
RANK_TOL = 1e-12


class TimeDirection(IntEnum):
    START_TO_END = 0
    END_TO_START = 1


def homogenize(p):
    """Append a unit coordinate: ``(x, y) -> (x, y, 1)``."""
    p = np.asarray(p, dtype=float)
    return np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)


def endpoints(p, s):
    """Homogeneous start and end points ``(p̄ - s̄, p̄ + s̄)``.

    The smear vector is homogenized with a zero third coordinate, so both
    endpoints keep a unit last entry.
    """
    p = np.asarray(p, dtype=float)
    s = np.asarray(s, dtype=float)
    ph = homogenize(p)
    sh = np.concatenate([s, np.zeros(s.shape[:-1] + (1,))], axis=-1)
    return ph - sh, ph + sh


def skew(v):
    v = np.asarray(v, dtype=float)
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def _sandwich(a, F, b):
    """``a^T F b`` row-wise, summed so that ``(a, F, b) -> (b, F^T, a)`` is exact.

    Diagonal terms come first, then each mirrored pair ``(i, j), (j, i)``;
    swapping the endpoints and transposing F permutes the terms only within
    these groups, and IEEE addition and multiplication are commutative.
    """
    F = np.asarray(F, dtype=float)

    def t(i, j):
        return F[i, j] * (a[..., i] * b[..., j])

    diag = (t(0, 0) + t(1, 1)) + t(2, 2)
    return ((diag + (t(0, 1) + t(1, 0))) + (t(0, 2) + t(2, 0))) + (t(1, 2) + t(2, 1))


def ambiguous_residual_pair(p, s, F):
    """Absolute algebraic residuals of both time-direction hypotheses.

    Returns ``(|a^T F b|, |a^T F^T b|)`` with ``a = p̄ - s̄`` and
    ``b = p̄ + s̄``.  A correspondence consistent with F in the forward
    direction has a zero first entry; negating ``s`` swaps the entries.
    """
    F = np.asarray(F, dtype=float)
    a, b = endpoints(p, s)
    return np.abs(_sandwich(a, F, b)), np.abs(_sandwich(b, F, a))


def _line(F, x):
    # (F x)[:2], written out so the operation order never depends on memory layout
    return [F[i, 0] * x[..., 0] + F[i, 1] * x[..., 1] + F[i, 2] * x[..., 2] for i in (0, 1)]


def _sampson_from_endpoints(a, b, F, denom_tol):
    F = np.asarray(F, dtype=float)
    fb0, fb1 = _line(F, b)
    fta0, fta1 = _line(F.T, a)
    num = _sandwich(a, F, b) ** 2
    den = (fb0 * fb0 + fb1 * fb1) + (fta0 * fta0 + fta1 * fta1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    return np.where(den < denom_tol, np.inf, out)


def sampson_error(p, s, F, denom_tol=DENOM_TOL):
    """First-order geometric error of the start->end correspondence under F.

    Uses epipolar lines ``l = F b`` and ``l' = F^T a``.  Returns ``inf``
    where the denominator falls below ``denom_tol`` (both endpoints sit on
    epipoles), so that scoring loops never abort.
    """
    F = np.asarray(F, dtype=float)
    a, b = endpoints(p, s)
    out = _sampson_from_endpoints(a, b, F, denom_tol)
    return out[()] if out.ndim == 0 else out


def serr_min(p, s, F, denom_tol=DENOM_TOL):
    """Symmetrized Sampson error and the time direction it implies.

    Returns ``(error, direction)``: the smaller of the Sampson errors under
    F and F^T, and ``START_TO_END`` when the F term wins (ties included),
    ``END_TO_START`` otherwise.
    """
    F = np.asarray(F, dtype=float)
    a, b = endpoints(p, s)
    e_fwd = _sampson_from_endpoints(a, b, F, denom_tol)
    e_bwd = _sampson_from_endpoints(a, b, F.T, denom_tol)
    err = np.minimum(e_fwd, e_bwd)
    direction = (e_bwd < e_fwd).astype(np.int8)
    if err.ndim == 0:
        return float(err), TimeDirection(int(direction))
    return err, direction


def _kron_rows(x, y):
    return (x[:, :, None] * y[:, None, :]).reshape(-1, 9)


def serr_min_batch(Fs, a, b, denom_tol=DENOM_TOL):
    """SErrMin of many hypotheses against many homogeneous endpoint pairs.

    Parameters
    ----------
    Fs : (K, 3, 3) array
    a, b : (n, 3) arrays of start and end points

    Returns
    -------
    (K, n) array of errors.

    Both numerators and the eight line coordinates of the denominators are
    linear in vec(F), so they come out of a single ``(K, 9) x (9, 10 n)``
    matrix multiply.
    """
    Fs = np.asarray(Fs, dtype=float)
    K, n = Fs.shape[0], len(a)
    forms = [_kron_rows(a, b), _kron_rows(b, a)]
    for i in (0, 1):
        e = np.broadcast_to(np.eye(3)[i], (n, 3))
        # (F b)_i, (F^T a)_i, (F a)_i, (F^T b)_i
        forms += [_kron_rows(e, b), _kron_rows(a, e), _kron_rows(e, a), _kron_rows(b, e)]
    v = Fs.reshape(K, 9) @ np.concatenate(forms).T
    v *= v
    v = v.reshape(K, 10, n)
    den_fwd = (v[:, 2] + v[:, 6]) + (v[:, 3] + v[:, 7])
    den_bwd = (v[:, 4] + v[:, 8]) + (v[:, 5] + v[:, 9])
    with np.errstate(divide="ignore", invalid="ignore"):
        e_fwd = np.where(den_fwd < denom_tol, np.inf, v[:, 0] / den_fwd)
        e_bwd = np.where(den_bwd < denom_tol, np.inf, v[:, 1] / den_bwd)
    return np.minimum(e_fwd, e_bwd)


def epipolar_line(p, F, side="right", tol=DENOM_TOL):
    """Line coefficients ``(a, b, c)`` of ``a x + b y + c = 0``.

    ``side="right"`` returns ``F p̄`` (the line on which the start point of a
    smear ending at ``p`` must lie); ``side="left"`` returns ``F^T p̄``.
    """
    F = np.asarray(F, dtype=float)
    if side == "right":
        line = homogenize(p) @ F.T
    elif side == "left":
        line = homogenize(p) @ F
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    if np.any((np.abs(line[..., 0]) < tol) & (np.abs(line[..., 1]) < tol)):
        raise DegenerateLine("point is an epipole of F; line is undefined")
    return line


def normalize_rank2(m, rank_tol=RANK_TOL):
    """Project onto rank 2 and scale to unit Frobenius norm.

    The smallest singular value is zeroed.  Idempotent up to rounding.
    """
    m = np.asarray(m, dtype=float)
    U, sv, Vt = np.linalg.svd(m)
    if sv[1] < rank_tol:
        raise RankDeficient(f"singular values {sv} leave fewer than two significant directions")
    sv = np.array([sv[0], sv[1], 0.0])
    F = (U * sv) @ Vt
    return F / np.linalg.norm(F)


def align_to(F, ref):
    """Return the member of ``{±F, ±F^T}`` closest to ``ref`` in Frobenius norm.

    Both matrices are scaled to unit norm first.  Useful when comparing an
    estimate against ground truth, since direction-ambiguous data only
    determine F up to sign and transposition.
    """
    F = np.asarray(F, dtype=float) / np.linalg.norm(F)
    ref = np.asarray(ref, dtype=float) / np.linalg.norm(ref)
    cands = [F, -F, F.T, -F.T]
    dists = [np.linalg.norm(c - ref) for c in cands]
    i = int(np.argmin(dists))
    return cands[i], dists[i]


def f_distance(F, ref):
    """Frobenius distance after sign/transpose alignment, see :func:`align_to`."""
    return align_to(F, ref)[1]

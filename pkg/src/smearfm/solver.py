"""Seven-point minimal solvers for direction-ambiguous smears.

Each smear gives one bilinear constraint ``(p̄ - s̄)^T F (p̄ + s̄) = 0`` whose
orientation (F or F^T) is unknown.  The ambiguous solver enumerates the 2^6
relative orientations of a 7-tuple (the first is fixed; a global flip is a
transposition), runs the classical 7-point algorithm on each and keeps the
candidate with the smallest ambiguous objective::

    sum_i min(|m_i . vec(F)|, |m_i . vec(F^T)|)^2,   m_i = (p̄_i - s̄_i) ⊗ (p̄_i + s̄_i)

``vec`` is row-major throughout, so ``a^T F b == kron(a, b) @ F.ravel()``.
"""
import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .epipolar import endpoints, normalize_rank2
from .errors import AllDegenerate, NonConvergenceWarning, RankDeficient, RankDeficientConstraints

NULLSPACE_TOL = 1e-10
IMAG_TOL = 1e-8
GRAD_TOL = 1e-10

# index pairs (k, l) <-> (l, k) in a row-major 3x3 layout
_DIAG = (0, 4, 8)
_PAIRS = ((1, 3), (2, 6), (5, 7))
_TRANSPOSE = np.array([0, 3, 6, 1, 4, 7, 2, 5, 8])

# all sign patterns with the first smear kept forward; row 0 is all-forward
SIGN_PATTERNS = np.array([(0,) + bits for bits in itertools.product((0, 1), repeat=6)], dtype=bool)

# Vandermonde inverse mapping det() samples at alpha = 0, 1, -1, 2 to cubic coefficients
_ALPHAS = np.array([0.0, 1.0, -1.0, 2.0])
_VANDER_INV = np.linalg.inv(np.vander(_ALPHAS, 4))


@dataclass(frozen=True)
class SolverResult:
    f: np.ndarray
    objective: float
    directions: np.ndarray
    converged: bool = True


def build_constraint_rows(p, s):
    """Rows ``(p̄ - s̄) ⊗ (p̄ + s̄)``, one per correspondence, shape ``(N, 9)``."""
    a, b = endpoints(p, s)
    return (a[..., :, None] * b[..., None, :]).reshape(a.shape[:-1] + (9,))


def _sym_dot(m, g):
    """``m . g`` summed in an order that is invariant under 3x3 transposition.

    Swapping the two factors of a Kronecker row and transposing F permute the
    nine products within mirrored pairs only, so the result is bitwise equal.
    """
    t = m * g
    d = (t[..., _DIAG[0]] + t[..., _DIAG[1]]) + t[..., _DIAG[2]]
    (i0, j0), (i1, j1), (i2, j2) = _PAIRS
    return d + ((t[..., i0] + t[..., j0]) + ((t[..., i1] + t[..., j1]) + (t[..., i2] + t[..., j2])))


def _row_residuals(rows, F):
    f = np.asarray(F, dtype=float).reshape(-1)
    return np.abs(_sym_dot(rows, f)), np.abs(_sym_dot(rows, f[_TRANSPOSE]))


def ambiguous_objective(p, s, F):
    """Ambiguous algebraic objective of F on the given smears.

    Invariant under negating any half smear and under ``F -> F^T``.
    """
    r_f, r_t = _row_residuals(build_constraint_rows(p, s), F)
    return float(np.sum(np.minimum(r_f, r_t) ** 2))


def winning_directions(p, s, F):
    """Per-row orientation: 0 where the F residual is not larger, else 1."""
    r_f, r_t = _row_residuals(build_constraint_rows(p, s), F)
    return (r_t < r_f).astype(np.int8)


def hartley_transform(points):
    """Similarity moving the centroid to the origin with RMS distance sqrt(2).

    ``points`` has shape ``(..., n, 2)``; returns ``(..., 3, 3)``.
    """
    points = np.asarray(points, dtype=float)
    c = points.mean(axis=-2)
    rms = np.sqrt(np.mean(np.sum((points - c[..., None, :]) ** 2, axis=-1), axis=-1))
    k = np.sqrt(2.0) / np.where(rms > 0, rms, 1.0)
    T = np.zeros(points.shape[:-2] + (3, 3))
    T[..., 0, 0] = k
    T[..., 1, 1] = k
    T[..., 0, 2] = -k * c[..., 0]
    T[..., 1, 2] = -k * c[..., 1]
    T[..., 2, 2] = 1.0
    return T


def _cubic_coefficients(F1, F2):
    """Coefficients (highest first) of ``det(alpha F1 + (1 - alpha) F2)``."""
    A = F1.reshape(-1, 3, 3)
    B = F2.reshape(-1, 3, 3)
    samples = np.stack([np.linalg.det(al * A + (1.0 - al) * B) for al in _ALPHAS], axis=-1)
    return samples @ _VANDER_INV.T


def _real_roots(coeffs):
    """Real roots of one cubic, tolerating a vanishing leading coefficient.

    Returns ``(roots, at_infinity)``; ``at_infinity`` is True when the
    leading coefficient is zero, i.e. ``F1 - F2`` itself is singular.
    """
    scale = np.max(np.abs(coeffs))
    if scale == 0:
        return np.array([]), False
    c = coeffs / scale
    at_inf = abs(c[0]) < 1e-12
    roots = np.roots(np.trim_zeros(c, "f") if at_inf else c)
    keep = np.abs(roots.imag) <= IMAG_TOL * np.maximum(1.0, np.abs(roots))
    return np.sort(roots[keep].real), at_inf


def seven_point_classical(m):
    """Classical 7-point algorithm on a ``(7, 9)`` constraint matrix.

    Returns a list of up to three rank-2, unit-norm matrices ``F`` with
    ``m @ F.ravel() ≈ 0``, in increasing order of the cubic root.

    Raises
    ------
    RankDeficientConstraints
        If the null space of ``m`` has dimension greater than two.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (7, 9):
        raise ValueError(f"expected a 7x9 constraint matrix, got {m.shape}")
    _, sv, Vt = np.linalg.svd(m)
    if sv[0] == 0 or sv[6] < NULLSPACE_TOL * sv[0]:
        raise RankDeficientConstraints("constraint matrix has rank < 7")
    F1, F2 = Vt[8], Vt[7]
    roots, at_inf = _real_roots(_cubic_coefficients(F1, F2)[0])
    mats = [(al * F1 + (1.0 - al) * F2).reshape(3, 3) for al in roots]
    if at_inf:
        mats.append((F1 - F2).reshape(3, 3))
    out = []
    for M in mats:
        try:
            out.append(normalize_rank2(M))
        except RankDeficient:
            continue
    return out


def _candidates_batch(points, smears):
    """All 7-point candidates for a batch of 7-tuples and every sign pattern.

    Parameters
    ----------
    points, smears : (H, 7, 2) arrays

    Returns
    -------
    Fs : (K, 3, 3) unit-Frobenius candidates in pixel coordinates
    owner : (K,) index of the 7-tuple each candidate came from
    pattern : (K,) index into :data:`SIGN_PATTERNS`
    degenerate : (H,) True where every pattern was rank deficient
    """
    points = np.asarray(points, dtype=float)
    smears = np.asarray(smears, dtype=float)
    H = points.shape[0]
    P = SIGN_PATTERNS.shape[0]
    a, b = endpoints(points, smears)  # (H, 7, 3)
    T = hartley_transform(np.concatenate([a[..., :2], b[..., :2]], axis=1))
    an = a @ np.swapaxes(T, 1, 2)
    bn = b @ np.swapaxes(T, 1, 2)

    flip = SIGN_PATTERNS[None, :, :, None]  # (1, P, 7, 1)
    start = np.where(flip, bn[:, None], an[:, None])  # (H, P, 7, 3)
    end = np.where(flip, an[:, None], bn[:, None])
    rows = (start[..., :, None] * end[..., None, :]).reshape(H * P, 7, 9)

    # null space from a complete QR of the 9x7 transpose
    Q, R = np.linalg.qr(np.swapaxes(rows, 1, 2), mode="complete")
    diag = np.abs(np.diagonal(R, axis1=1, axis2=2))
    ok = diag.min(axis=1) > NULLSPACE_TOL * diag.max(axis=1)
    F1 = Q[:, :, 8]
    F2 = Q[:, :, 7]

    coeffs = _cubic_coefficients(F1, F2)
    lead = np.abs(coeffs[:, 0])
    regular = ok & (lead > 1e-12 * np.abs(coeffs).max(axis=1))
    Fn, src = [], []
    idx = np.flatnonzero(regular)
    if idx.size:
        c = coeffs[idx] / coeffs[idx, :1]
        comp = np.zeros((idx.size, 3, 3))
        comp[:, 0, :] = -c[:, 1:]
        comp[:, 1, 0] = 1.0
        comp[:, 2, 1] = 1.0
        roots = np.linalg.eigvals(comp)
        real = np.abs(roots.imag) <= IMAG_TOL * np.maximum(1.0, np.abs(roots))
        # stable order: by system, then by root value
        al = np.where(real, roots.real, np.inf)
        al = np.sort(al, axis=1)
        sys_i, root_i = np.nonzero(np.isfinite(al))
        alpha = al[sys_i, root_i][:, None]
        g = idx[sys_i]
        Fn.append(alpha * F1[g] + (1.0 - alpha) * F2[g])
        src.append(g)
    for g in np.flatnonzero(ok & ~regular):
        roots, at_inf = _real_roots(coeffs[g])
        for al in roots:
            Fn.append((al * F1[g] + (1.0 - al) * F2[g])[None])
            src.append(np.array([g]))
        if at_inf:
            Fn.append((F1[g] - F2[g])[None])
            src.append(np.array([g]))

    degenerate = ~ok.reshape(H, P).any(axis=1)
    if not Fn:
        return np.empty((0, 3, 3)), np.empty(0, dtype=int), np.empty(0, dtype=int), degenerate
    Fn = np.concatenate(Fn).reshape(-1, 3, 3)
    src = np.concatenate(src)
    # a global order (system index, then root) keeps results independent of the path taken
    order = np.argsort(src, kind="stable")
    Fn, src = Fn[order], src[order]
    owner = src // P
    pattern = src % P
    Tk = T[owner]
    Fs = np.swapaxes(Tk, 1, 2) @ Fn @ Tk
    norms = np.linalg.norm(Fs.reshape(len(Fs), 9), axis=1)
    good = norms > 0
    Fs = Fs[good] / norms[good, None, None]
    return Fs, owner[good], pattern[good], degenerate


def _objective_many(rows, Fs):
    f = Fs.reshape(len(Fs), 9)
    r_f = np.abs(_sym_dot(rows[None], f[:, None, :]))
    r_t = np.abs(_sym_dot(rows[None], f[:, None, _TRANSPOSE]))
    return np.sum(np.minimum(r_f, r_t) ** 2, axis=1)


def _refine(rows, f0, max_iter=200, grad_tol=GRAD_TOL):
    """Projected descent on the ambiguous objective, unit sphere and rank 2.

    Works on conditioned (Hartley-normalized) rows.  Steps are accepted only
    when the objective decreases.  Returns ``(f, objective, converged)``.
    """
    def obj_grad(f):
        r_f = _sym_dot(rows, f)
        r_t = _sym_dot(rows, f[_TRANSPOSE])
        use_t = np.abs(r_t) < np.abs(r_f)
        r = np.where(use_t, r_t, r_f)
        # d/df of r_t^2 = 2 r_t * m permuted back to F's layout
        g = 2.0 * ((r * ~use_t) @ rows) + 2.0 * ((r * use_t) @ rows)[_TRANSPOSE]
        return float(np.sum(r * r)), g

    f = f0 / np.linalg.norm(f0)
    val, g = obj_grad(f)
    step = 1.0
    for _ in range(max_iter):
        g_tan = g - (g @ f) * f
        if np.linalg.norm(g_tan) <= grad_tol:
            return f, val, True
        improved = False
        while step > 1e-16:
            trial = normalize_rank2((f - step * g_tan).reshape(3, 3)).ravel()
            t_val, t_g = obj_grad(trial)
            if t_val < val:
                f, val, g = trial, t_val, t_g
                step *= 2.0
                improved = True
                break
            step *= 0.5
        if not improved:
            return f, val, False
    return f, val, False


def solve_ambiguous_7pt(p, s, n_refine=3):
    """Direction-ambiguous minimal solver for exactly seven smears.

    Every sign pattern is solved with the 7-point algorithm, the
    ``n_refine`` best candidates are polished by projected descent, and the
    lowest objective wins (ties go to the earliest enumeration index).

    Raises
    ------
    RankDeficientConstraints
        When every sign pattern gives a degenerate constraint matrix.
    """
    p = np.asarray(p, dtype=float)
    s = np.asarray(s, dtype=float)
    if p.shape != (7, 2) or s.shape != (7, 2):
        raise ValueError("solve_ambiguous_7pt needs exactly 7 points and 7 smears")
    Fs, _, _, degenerate = _candidates_batch(p[None], s[None])
    if degenerate[0] or len(Fs) == 0:
        raise RankDeficientConstraints("all sign patterns are degenerate")

    rows_px = build_constraint_rows(p, s)
    obj = _objective_many(rows_px, Fs)
    order = np.argsort(obj, kind="stable")

    a, b = endpoints(p, s)
    T = hartley_transform(np.concatenate([a[:, :2], b[:, :2]]))
    Tinv = np.linalg.inv(T)
    rows_n = build_constraint_rows((p @ T[:2, :2].T) + T[:2, 2], s @ T[:2, :2].T)

    best_f, best_val, converged = None, np.inf, True
    for i in order[:n_refine]:
        F = normalize_rank2(Fs[i])
        val = ambiguous_objective(p, s, F)
        # F = T^T Fn T  <=>  Fn = T^-T F T^-1
        fn = (Tinv.T @ F @ Tinv).ravel()
        fn_ref, _, ok = _refine(rows_n, fn)
        F_ref = normalize_rank2((T.T @ fn_ref.reshape(3, 3) @ T))
        val_ref = ambiguous_objective(p, s, F_ref)
        if val_ref < val:
            F, val = F_ref, val_ref
        if val < best_val:
            best_f, best_val, converged = F, val, ok
    if not converged:
        warnings.warn("ambiguous 7-point refinement did not reach the gradient tolerance",
                      NonConvergenceWarning, stacklevel=2)
    return SolverResult(best_f, best_val, winning_directions(p, s, best_f), converged)


def candidates_7pt(p, s):
    """Every zero-objective candidate of one 7-tuple, as a ``(K, 3, 3)`` array.

    With seven smears each sign pattern admits exact solutions, so the
    ambiguous objective alone cannot single out the true F; robust
    estimation scores all of these against the remaining data.
    """
    Fs, _, _, degenerate = _candidates_batch(np.asarray(p, float)[None], np.asarray(s, float)[None])
    if degenerate[0]:
        raise RankDeficientConstraints("all sign patterns are degenerate")
    return Fs


def sign_enumeration_oracle(p, s):
    """Brute-force reference for :func:`solve_ambiguous_7pt`.

    Loops over the 64 sign patterns one at a time, solves each with
    :func:`seven_point_classical` on conditioned coordinates and returns the
    candidate with the lowest objective (first found on ties).
    """
    p = np.asarray(p, dtype=float)
    s = np.asarray(s, dtype=float)
    if p.shape != (7, 2) or s.shape != (7, 2):
        raise ValueError("sign_enumeration_oracle needs exactly 7 points and 7 smears")
    a, b = endpoints(p, s)
    T = hartley_transform(np.concatenate([a[:, :2], b[:, :2]]))
    best, best_val = None, np.inf
    any_ok = False
    for flips in SIGN_PATTERNS:
        sign = np.where(flips, -1.0, 1.0)[:, None]
        m = build_constraint_rows(p @ T[:2, :2].T + T[:2, 2], (s * sign) @ T[:2, :2].T)
        try:
            sols = seven_point_classical(m)
        except RankDeficientConstraints:
            continue
        any_ok = True
        for Fn in sols:
            F = normalize_rank2(T.T @ Fn @ T)
            val = ambiguous_objective(p, s, F)
            if val < best_val:
                best, best_val = F, val
    if not any_ok:
        raise AllDegenerate("every sign assignment is rank deficient")
    return SolverResult(best, best_val, winning_directions(p, s, best))

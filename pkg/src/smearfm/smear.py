"""Per-pixel smear representations, consistency masks and training losses."""
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.special import expit

from .errors import DimensionMismatch, EmptyInput

CROSS_CHECK_EPS = 1.0
LOSS_MARGIN = 0.01


@dataclass(frozen=True)
class SmearField:
    """Dense grid of smear vectors with per-pixel uncertainty.

    ``vectors`` has shape ``(H, W, 2)`` holding ``(u, v)`` half displacements;
    ``sigma`` has shape ``(H, W)``.  Pixel ``(row, col)`` sits at image
    coordinate ``(col + 0.5, row + 0.5)``.
    """

    vectors: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=float)
        sig = np.asarray(self.sigma, dtype=float)
        if vec.ndim != 3 or vec.shape[2] != 2 or sig.shape != vec.shape[:2]:
            raise DimensionMismatch(f"vectors {vec.shape} and sigma {sig.shape} do not form a field")
        if not np.all(sig > 0):
            raise ValueError("sigma must be positive at every pixel")
        object.__setattr__(self, "vectors", vec)
        object.__setattr__(self, "sigma", sig)

    @property
    def height(self):
        return self.vectors.shape[0]

    @property
    def width(self):
        return self.vectors.shape[1]

    def pixel_centers(self):
        """Image coordinates of every pixel, row-major, shape ``(H*W, 2)``."""
        rows, cols = np.mgrid[0:self.height, 0:self.width]
        return np.stack([cols.ravel() + 0.5, rows.ravel() + 0.5], axis=1)


def encode_double_angle(s):
    """Map a smear vector to its double-angle code ``((u²-v²)/|s|, 2uv/|s|)``.

    ``s`` and ``-s`` encode identically; the magnitude is preserved.  The zero
    vector maps to zero.
    """
    s = np.asarray(s, dtype=float)
    u, v = s[..., 0], s[..., 1]
    n = np.hypot(u, v)
    safe = np.where(n > 0, n, 1.0)
    # work with the unit direction so tiny or huge vectors neither under- nor overflow
    c, d = u / safe, v / safe
    out = np.stack([n * (c * c - d * d), n * (2.0 * c * d)], axis=-1)
    return np.where((n > 0)[..., None], out, 0.0)


def decode_double_angle(d):
    """Inverse of :func:`encode_double_angle` with angle in ``(-pi/2, pi/2]``."""
    d = np.asarray(d, dtype=float)
    up, vp = d[..., 0], d[..., 1]
    mag = np.hypot(up, vp)
    phi = 0.5 * np.arctan2(vp, up)
    # atan2 returns -pi for (-x, -0.0) or a tiny negative v'; fold onto +pi/2
    phi = np.where(phi <= -np.pi / 2, phi + np.pi, phi)
    return np.stack([mag * np.cos(phi), mag * np.sin(phi)], axis=-1)


def epe_s(pred, gt):
    """Sign-agnostic end-point error ``min(|pred - gt|, |pred + gt|)``."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    out = np.minimum(np.linalg.norm(pred - gt, axis=-1), np.linalg.norm(pred + gt, axis=-1))
    return out[()] if out.ndim == 0 else out


def _warp(coords, flow):
    """Displace ``coords`` (x, y) by the bilinearly sampled ``flow``.

    Returns the warped coordinates and a mask that is False wherever the
    sample position lies outside the grid.
    """
    h, w = flow.shape[:2]
    x, y = coords[..., 0], coords[..., 1]
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    sample = np.stack([y.ravel(), x.ravel()])
    du = map_coordinates(flow[..., 0], sample, order=1, mode="nearest").reshape(x.shape)
    dv = map_coordinates(flow[..., 1], sample, order=1, mode="nearest").reshape(x.shape)
    return np.stack([x + du, y + dv], axis=-1), inside


def cross_check(fw, bw, eps_cr=CROSS_CHECK_EPS):
    """Forward-backward flow consistency.

    Parameters
    ----------
    fw, bw : (H, W, 2) arrays
        Forward (start -> end) and backward (end -> start) flows in pixels,
        ``[..., 0]`` horizontal.
    eps_cr : float
        Distance threshold; pixels with distance at most ``eps_cr`` are valid.

    Returns
    -------
    distance : (H, W) float array
        Sum of the forward-backward and backward-forward round-trip errors.
    mask : (H, W) uint8 array
        1 for consistent pixels, 0 otherwise.  Any round trip that samples a
        flow outside the grid invalidates the pixel.
    """
    fw = np.asarray(fw, dtype=float)
    bw = np.asarray(bw, dtype=float)
    if fw.shape != bw.shape or fw.ndim != 3 or fw.shape[2] != 2:
        raise DimensionMismatch(f"flow shapes {fw.shape} and {bw.shape} differ or are not (H, W, 2)")
    if eps_cr <= 0:
        raise ValueError("eps_cr must be positive")
    h, w = fw.shape[:2]
    rows, cols = np.mgrid[0:h, 0:w].astype(float)
    grid = np.stack([cols, rows], axis=-1)

    # both first hops start on the grid, so they are exact lookups
    p1, ok0 = _warp(grid, fw)
    back, ok1 = _warp(p1, bw)
    q1, _ = _warp(grid, bw)
    fwd, ok2 = _warp(q1, fw)

    dist = np.linalg.norm(grid - back, axis=-1) + np.linalg.norm(fwd - grid, axis=-1)
    valid = ok0 & ok1 & ok2 & (dist <= eps_cr)
    return dist, valid.astype(np.uint8)


def softplus(w):
    return np.logaddexp(0.0, w)


def softplus_inverse(sigma):
    sigma = np.asarray(sigma, dtype=float)
    return np.log(np.expm1(sigma))


def loss_gaussian_nll(pred, gt, w):
    """Gaussian negative log-likelihood on double-angle vectors.

    ``sigma = softplus(w)``; returns ``|pred - gt|² / (2 sigma²) + log sigma²``.
    """
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    sigma = softplus(w)
    r2 = np.sum((pred - gt) ** 2, axis=-1)
    return r2 / (2.0 * sigma ** 2) + np.log(sigma ** 2)


def loss_gaussian_nll_grad(pred, gt, w):
    """Analytic gradient of :func:`loss_gaussian_nll` w.r.t. ``(u', v', w)``."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    sigma = softplus(w)
    diff = pred - gt
    r2 = np.sum(diff ** 2, axis=-1)
    d_pred = diff / (sigma ** 2)[..., None]
    d_w = (-r2 / sigma ** 3 + 2.0 / sigma) * expit(w)
    return np.concatenate([d_pred, np.asarray(d_w)[..., None]], axis=-1)


def loss_masked(pred, gt, w, m_cr, alpha=LOSS_MARGIN):
    """Cross-check aware loss.

    ``m_cr * NLL + ReLU((1 - m_cr) / sigma² - alpha)``: valid pixels are
    supervised normally, invalid pixels are pushed towards a variance of at
    least ``1 / alpha``.
    """
    if np.any(np.asarray(alpha) <= 0):
        raise ValueError("alpha must be positive")
    sigma = softplus(w)
    hinge = np.maximum((1.0 - m_cr) / sigma ** 2 - alpha, 0.0)
    return m_cr * loss_gaussian_nll(pred, gt, w) + hinge


def loss_masked_grad(pred, gt, w, m_cr, alpha=LOSS_MARGIN):
    """Analytic gradient of :func:`loss_masked` (zero slope taken at the kink)."""
    m_cr = np.asarray(m_cr, dtype=float)
    sigma = softplus(w)
    g = m_cr[..., None] * loss_gaussian_nll_grad(pred, gt, w)
    active = ((1.0 - m_cr) / sigma ** 2 - alpha) > 0
    g[..., 2] += np.where(active, -2.0 * (1.0 - m_cr) / sigma ** 3 * expit(w), 0.0)
    return g


def sparsification_curve(errors, sigmas, fractions):
    """Normalized mean error after removing the most uncertain entries.

    For each fraction ``f`` the ``ceil(f * N)`` entries with the largest
    sigma are dropped (equal sigmas: lower index first) and the mean of the
    remaining errors is divided by the mean over all entries.

    Returns an ``(len(fractions), 2)`` array of ``(fraction, value)`` rows.
    """
    errors = np.asarray(errors, dtype=float).ravel()
    sigmas = np.asarray(sigmas, dtype=float).ravel()
    fractions = np.asarray(fractions, dtype=float).ravel()
    if errors.size == 0:
        raise EmptyInput("no errors given")
    if errors.shape != sigmas.shape:
        raise DimensionMismatch("errors and sigmas differ in length")
    if np.any((fractions < 0) | (fractions >= 1)):
        raise ValueError("fractions must lie in [0, 1)")
    n = errors.size
    order = np.lexsort((np.arange(n), -sigmas))
    ranked = errors[order]
    # suffix sums give the mean of what remains after dropping a prefix
    tail = np.cumsum(ranked[::-1])[::-1]
    total = tail[0] / n
    out = np.empty((fractions.size, 2))
    for i, f in enumerate(fractions):
        k = int(np.ceil(f * n - 1e-9))
        out[i] = f, (tail[k] / (n - k)) / total
    return out

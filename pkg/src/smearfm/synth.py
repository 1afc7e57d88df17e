"""Synthetic ground truth: camera pairs, smears, flows and frame averaging.

The start-of-exposure camera sits at the world origin; the end-of-exposure
camera is a small rigid motion away from it.  A smear is the segment between
the projections of one 3D point in the two cameras, stored as midpoint and
half displacement.  ``f_gt`` satisfies ``start^T f_gt end = 0``.
"""
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np
from scipy.spatial.transform import Rotation

from .epipolar import normalize_rank2, skew
from .errors import ConfigInvalid, DegenerateMotion, DimensionMismatch, EmptyInput, SparseScene
from .smear import SmearField


class Label(IntEnum):
    GLOBAL = 0
    LOCAL_MOTION = 1
    NOISE = 2


@dataclass(frozen=True)
class CameraPose:
    """Pinhole camera ``K [R | t]`` mapping world points to pixels."""

    k: np.ndarray
    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        for name in ("k", "r", "t"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def center(self):
        return -self.r.T @ self.t

    def to_camera(self, X):
        return np.asarray(X, dtype=float) @ self.r.T + self.t

    def project(self, X):
        """Pixel coordinates and depths of world points ``X`` (shape ``(N, 3)``)."""
        Xc = self.to_camera(X)
        x = Xc @ self.k.T
        return x[..., :2] / x[..., 2:], Xc[..., 2]

    def rays(self, x):
        """World-frame ray directions through pixels ``x`` (not normalized)."""
        xh = np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)
        return np.linalg.solve(self.k, xh.T).T @ self.r


def intrinsics(focal, cx, cy):
    return np.array([[focal, 0.0, cx], [0.0, focal, cy], [0.0, 0.0, 1.0]])


def f_from_poses(cam1, cam2, tol=1e-9):
    """Fundamental matrix with ``x2^T F x1 = 0`` for projections in cam1, cam2.

    Built as ``K2^-T [t]x R K1^-1`` from the relative pose, then normalized to
    rank 2 and unit Frobenius norm.
    """
    R = cam2.r @ cam1.r.T
    t = cam2.t - R @ cam1.t
    if np.linalg.norm(t) <= tol:
        raise DegenerateMotion("relative translation is zero; F is undefined for pure rotation")
    F = np.linalg.inv(cam2.k).T @ skew(t) @ R @ np.linalg.inv(cam1.k)
    return normalize_rank2(F)


@dataclass(frozen=True)
class SceneConfig:
    """Parameters of :func:`generate_scene`.

    In dense mode one smear is generated per pixel (midpoint at the pixel
    center) over a background plane; ``outlier_fraction`` then sets the area
    of a nearer rectangular object which moves on its own when
    ``local_motion_magnitude > 0``.
    """

    width: int = 640
    height: int = 480
    n_points: int = 200
    noise_sigma_px: float = 0.0
    outlier_fraction: float = 0.0
    local_motion_magnitude: float = 50.0
    flip_probability: float = 0.5
    seed: int = 0
    noise_fraction: float = 0.0
    focal: float | None = None
    depth_range: tuple = (5.0, 20.0)
    max_rotation_deg: float = 2.0
    baseline_range: tuple = (0.02, 0.10)
    sigma_base: float = 0.2
    sigma_slope: float = 1.0
    sigma_jitter: float = 0.05
    dense: bool = False
    bg_relief: float = 0.1
    end_pose: CameraPose | None = None

    def validate(self):
        def bad(name, why):
            raise ConfigInvalid(f"{name}: {why}")

        if self.width < 2 or self.height < 2:
            bad("width/height", "image must be at least 2x2")
        if not self.dense and self.n_points < 7:
            bad("n_points", "need at least 7 points")
        for name in ("outlier_fraction", "flip_probability", "noise_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                bad(name, f"must lie in [0, 1), got {v}")
        if self.outlier_fraction + self.noise_fraction >= 1.0:
            bad("outlier_fraction", "outlier and noise fractions leave no global points")
        if self.noise_sigma_px < 0:
            bad("noise_sigma_px", "must be non-negative")
        if self.local_motion_magnitude < 0:
            bad("local_motion_magnitude", "must be non-negative")
        lo, hi = self.depth_range
        if not 0 < lo <= hi:
            bad("depth_range", "need 0 < near <= far")
        blo, bhi = self.baseline_range
        if not 0 < blo <= bhi:
            bad("baseline_range", "need 0 < min <= max")
        if not 0 <= self.max_rotation_deg <= 10:
            bad("max_rotation_deg", "must lie in [0, 10]")
        if not 0 <= self.bg_relief < 0.5:
            bad("bg_relief", "must lie in [0, 0.5)")
        if self.sigma_base <= 0 or self.sigma_slope < 0 or self.sigma_jitter < 0:
            bad("sigma_base", "uncertainty model needs base > 0 and non-negative slope/jitter")
        return self


@dataclass(frozen=True)
class DenseLayout:
    """Background surface plus an optional fronto-parallel rectangle.

    The background sits at depth ``bg_depth * (1 + relief * sin(k X + ph0) *
    cos(k Y + ph1))`` with ``k = 2 pi / wavelength``; a flat background
    (``relief = 0``) together with a translating rectangle would make F
    ambiguous, so dense scenes default to a gentle relief.  Depths are along
    the start camera's optical axis.  ``box`` holds world
    ``(x0, y0, x1, y1)`` bounds of the rectangle at ``fg_depth`` and
    ``fg_shift`` its world translation between start and end of exposure.
    """

    bg_depth: float
    box: tuple | None = None
    fg_depth: float | None = None
    fg_shift: tuple = (0.0, 0.0, 0.0)
    relief: float = 0.0
    wavelength: float = 1.0
    phase: tuple = (0.0, 0.0)

    def surface_depth(self, X, Y):
        k = 2.0 * np.pi / self.wavelength
        return self.bg_depth * (1.0 + self.relief * np.sin(k * X + self.phase[0]) * np.cos(k * Y + self.phase[1]))

    def surface_slope(self, X, Y):
        k = 2.0 * np.pi / self.wavelength
        sx, cx = np.sin(k * X + self.phase[0]), np.cos(k * X + self.phase[0])
        sy, cy = np.sin(k * Y + self.phase[1]), np.cos(k * Y + self.phase[1])
        g = self.bg_depth * self.relief * k
        return g * cx * cy, -g * sx * sy


@dataclass(frozen=True)
class SyntheticScene:
    width: int
    height: int
    cam_start: CameraPose
    cam_end: CameraPose
    points3d: np.ndarray
    f_gt: np.ndarray
    midpoints: np.ndarray
    half_smears: np.ndarray
    labels: np.ndarray
    sigmas: np.ndarray
    clean_half_smears: np.ndarray = field(default=None)
    layout: DenseLayout | None = None

    def __len__(self):
        return len(self.labels)

    def to_smear_field(self):
        """Dense scenes only: the smears as an ``(H, W)`` :class:`SmearField`."""
        if self.layout is None:
            raise SparseScene("scene was not generated in dense mode")
        shape = (self.height, self.width)
        return SmearField(self.half_smears.reshape(shape + (2,)), self.sigmas.reshape(shape))


def _sample_pose(rng, cfg, mean_depth):
    if cfg.end_pose is not None:
        return cfg.end_pose
    angles = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg, size=3)
    R = Rotation.from_euler("xyz", angles, degrees=True).as_matrix()
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    baseline = rng.uniform(*cfg.baseline_range) * mean_depth
    # t is the world-to-camera translation; the camera center moves by -R^T t
    return R, baseline * direction


def _noise_model(rng, cfg, n):
    na = rng.normal(scale=cfg.noise_sigma_px, size=(n, 2))
    nb = rng.normal(scale=cfg.noise_sigma_px, size=(n, 2))
    return na, nb


def _sigma_model(rng, cfg, smear_noise):
    jitter = rng.uniform(0.0, cfg.sigma_jitter, size=len(smear_noise))
    return cfg.sigma_base + cfg.sigma_slope * np.linalg.norm(smear_noise, axis=1) + jitter


def generate_scene(config=None, **overrides):
    """Sample a two-view smear scene; a pure function of the config and seed.

    Keyword overrides are applied on top of ``config`` (or the defaults), so
    ``generate_scene(n_points=50, seed=3)`` works.
    """
    cfg = replace(config or SceneConfig(), **overrides).validate()
    if cfg.dense:
        return _generate_dense(cfg)
    rng = np.random.default_rng(cfg.seed)
    W, H = cfg.width, cfg.height
    focal = cfg.focal or 0.9 * W
    K = intrinsics(focal, W / 2.0, H / 2.0)
    cam_start = CameraPose(K, np.eye(3), np.zeros(3))
    near, far = cfg.depth_range
    pose = _sample_pose(rng, cfg, 0.5 * (near + far))
    cam_end = pose if isinstance(pose, CameraPose) else CameraPose(K, *pose)
    f_gt = f_from_poses(cam_end, cam_start)

    n = cfg.n_points
    pts, starts, ends = [], [], []
    need = n
    for _ in range(1000):
        m = 2 * need + 16
        x = np.column_stack([rng.uniform(0, W, m), rng.uniform(0, H, m)])
        z = rng.uniform(near, far, m)
        X = cam_start.rays(x) * z[:, None]
        xe, ze = cam_end.project(X)
        ok = (ze > 0) & (xe[:, 0] >= 0) & (xe[:, 0] < W) & (xe[:, 1] >= 0) & (xe[:, 1] < H)
        pts.append(X[ok])
        starts.append(x[ok])
        ends.append(xe[ok])
        need -= int(ok.sum())
        if need <= 0:
            break
    else:
        raise ConfigInvalid("camera motion leaves too few points visible in both views")
    X = np.concatenate(pts)[:n]
    start = np.concatenate(starts)[:n]
    end = np.concatenate(ends)[:n]
    labels = np.full(n, Label.GLOBAL, dtype=np.int8)

    n_out = int(round(cfg.outlier_fraction * n))
    if n_out:
        center = start[rng.integers(n)]
        cluster = np.argsort(np.linalg.norm(start - center, axis=1), kind="stable")[:n_out]
        end = end.copy()
        end[cluster] = _local_motion(rng, start[cluster], end[cluster], f_gt, cfg.local_motion_magnitude)
        labels[cluster] = Label.LOCAL_MOTION
    n_noise = int(round(cfg.noise_fraction * n))
    if n_noise:
        pool = np.flatnonzero(labels == Label.GLOBAL)
        pick = np.sort(rng.choice(pool, size=n_noise, replace=False))
        # random segments anchored at the start point
        ang = rng.uniform(0, 2 * np.pi, n_noise)
        length = rng.uniform(0, 2 * cfg.local_motion_magnitude + 1.0, n_noise)
        end[pick] = start[pick] + length[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])
        labels[pick] = Label.NOISE

    clean_half = 0.5 * (end - start)
    na, nb = _noise_model(rng, cfg, n)
    start_n, end_n = start + na, end + nb
    mid = 0.5 * (start_n + end_n)
    half = 0.5 * (end_n - start_n)
    sigmas = _sigma_model(rng, cfg, 0.5 * (nb - na))
    flip = rng.random(n) < cfg.flip_probability
    half = np.where(flip[:, None], -half, half)
    return SyntheticScene(W, H, cam_start, cam_end, X, f_gt, mid, half, labels, sigmas, clean_half)


def _local_motion(rng, start, end, F, magnitude):
    """Rigid 2D motion of a cluster's end points.

    A small rotation about the cluster centroid followed by a translation of
    length ``magnitude`` within 45 degrees of the epipolar-line normal at the
    centroid, so the cluster moves visibly off the global geometry.
    """
    c = end.mean(axis=0)
    theta = np.deg2rad(rng.uniform(-3.0, 3.0))
    Rm = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    line = F.T @ np.append(start.mean(axis=0), 1.0)
    normal = np.arctan2(line[1], line[0])
    ang = normal + np.deg2rad(rng.uniform(-45.0, 45.0)) + np.pi * rng.integers(2)
    shift = magnitude * np.array([np.cos(ang), np.sin(ang)])
    return (end - c) @ Rm.T + c + shift


# ---------------------------------------------------------------- dense mode

def _cast(cam, x, layout, moved):
    """Visible world point along each pixel ray of ``cam``.

    ``moved`` selects the end-of-exposure position of the rectangle.
    Returns the points (at the time of the camera), ray depths and a flag for
    rays that hit the rectangle.
    """
    C = cam.center
    d = cam.rays(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam_bg = (layout.bg_depth - C[2]) / d[:, 2]
        if layout.relief:
            lam_bg = _relief_hit(layout, C, d, lam_bg)
    lam_bg = np.where(lam_bg > 0, lam_bg, np.inf)
    lam = lam_bg
    on_fg = np.zeros(len(x), dtype=bool)
    if layout.box is not None:
        shift = np.asarray(layout.fg_shift) if moved else np.zeros(3)
        zf = layout.fg_depth + shift[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            lam_fg = (zf - C[2]) / d[:, 2]
        hit = C + lam_fg[:, None] * d - shift
        x0, y0, x1, y1 = layout.box
        inside = (lam_fg > 0) & (hit[:, 0] >= x0) & (hit[:, 0] <= x1) & (hit[:, 1] >= y0) & (hit[:, 1] <= y1)
        on_fg = inside & (lam_fg < lam_bg)
        lam = np.where(on_fg, lam_fg, lam_bg)
    X = C + lam[:, None] * d
    return X, lam, on_fg


def _relief_hit(layout, C, d, lam):
    """Newton iterations for the ray parameter where ``C + lam d`` meets the relief."""
    lam = lam.copy()
    active = np.flatnonzero(np.isfinite(lam))
    for _ in range(50):
        if active.size == 0:
            break
        da = d[active]
        P = C + lam[active, None] * da
        fx, fy = layout.surface_slope(P[:, 0], P[:, 1])
        g = P[:, 2] - layout.surface_depth(P[:, 0], P[:, 1])
        step = g / (da[:, 2] - fx * da[:, 0] - fy * da[:, 1])
        lam[active] -= step
        active = active[np.abs(step) > 1e-13 * layout.bg_depth]
    return lam


def _end_position(X, on_fg, layout):
    if layout.box is None:
        return X
    return X + on_fg[:, None] * np.asarray(layout.fg_shift)


def _generate_dense(cfg):
    rng = np.random.default_rng(cfg.seed)
    W, H = cfg.width, cfg.height
    focal = cfg.focal or 0.9 * W
    K = intrinsics(focal, W / 2.0, H / 2.0)
    cam_start = CameraPose(K, np.eye(3), np.zeros(3))
    near, far = cfg.depth_range
    pose = _sample_pose(rng, cfg, far)
    cam_end = pose if isinstance(pose, CameraPose) else CameraPose(K, *pose)
    f_gt = f_from_poses(cam_end, cam_start)

    relief = dict(relief=cfg.bg_relief, wavelength=far * W / focal,
                  phase=tuple(rng.uniform(0, 2 * np.pi, 2)))
    layout = DenseLayout(bg_depth=far, **relief)
    if cfg.outlier_fraction > 0:
        side = math.sqrt(cfg.outlier_fraction)
        bw, bh = side * W, side * H
        u0 = rng.uniform(0, W - bw)
        v0 = rng.uniform(0, H - bh)
        corners = cam_start.rays(np.array([[u0, v0], [u0 + bw, v0 + bh]])) * near
        shift = (0.0, 0.0, 0.0)
        if cfg.local_motion_magnitude > 0:
            ang = rng.uniform(0, 2 * np.pi)
            shift = tuple(cfg.local_motion_magnitude * near / focal * np.array([np.cos(ang), np.sin(ang), 0.0]))
        layout = DenseLayout(far, (corners[0, 0], corners[0, 1], corners[1, 0], corners[1, 1]), near, shift,
                             **relief)
    moving = cfg.local_motion_magnitude > 0 and layout.box is not None

    rows, cols = np.mgrid[0:H, 0:W]
    centers = np.column_stack([cols.ravel() + 0.5, rows.ravel() + 0.5])

    def smear_at(x):
        X, _, fg = _cast(cam_start, x, layout, moved=False)
        xe, _ = cam_end.project(_end_position(X, fg, layout))
        return X, xe, fg

    # find the start point whose smear midpoint is the pixel center
    # (only pixels still moving are iterated; the rest have converged)
    x = centers.copy()
    active = np.arange(len(x))
    for _ in range(100):
        _, xe, _ = smear_at(x[active])
        x_new = centers[active] - 0.5 * (xe - x[active])
        still = np.max(np.abs(x_new - x[active]), axis=1) >= 1e-12
        x[active] = x_new
        active = active[still]
        if active.size == 0:
            break
    X, xe, fg = smear_at(x)
    residual = np.linalg.norm(0.5 * (x + xe) - centers, axis=1)

    n = len(centers)
    labels = np.full(n, Label.GLOBAL, dtype=np.int8)
    if moving:
        labels[fg] = Label.LOCAL_MOTION
    labels[residual > 1e-6] = Label.NOISE  # no consistent smear at depth edges

    start, end = x, xe
    clean_half = 0.5 * (end - start)
    na, nb = _noise_model(rng, cfg, n)
    start_n, end_n = start + na, end + nb
    # keep midpoints on the pixel grid; noise only perturbs the smear vector
    half = 0.5 * (end_n - start_n)
    sigmas = _sigma_model(rng, cfg, 0.5 * (nb - na))
    sigmas[labels == Label.NOISE] += 5.0
    flip = rng.random(n) < cfg.flip_probability
    half = np.where(flip[:, None], -half, half)
    return SyntheticScene(W, H, cam_start, cam_end, X, f_gt, centers, half, labels, sigmas,
                          clean_half, layout)


def make_flow_pair(scene):
    """Forward and backward flows between the start and end images.

    Both flows are ``(H, W, 2)`` arrays over integer grid positions (pixel
    centers), obtained by casting each pixel's ray into the layered scene and
    reprojecting the visible point into the other camera.  Occluded points
    therefore receive the flow of whatever occludes them in the other frame,
    which the forward-backward check exposes.
    """
    layout = scene.layout
    if layout is None:
        raise SparseScene("flow fields need a dense scene (generate with dense=True)")
    W, H = scene.width, scene.height
    rows, cols = np.mgrid[0:H, 0:W]
    x = np.column_stack([cols.ravel() + 0.5, rows.ravel() + 0.5])

    Xs, _, fg_s = _cast(scene.cam_start, x, layout, moved=False)
    xe, _ = scene.cam_end.project(_end_position(Xs, fg_s, layout))
    fw = (xe - x).reshape(H, W, 2)

    Xe, _, fg_e = _cast(scene.cam_end, x, layout, moved=True)
    Xe_start = Xe - fg_e[:, None] * np.asarray(layout.fg_shift) if layout.box is not None else Xe
    xs, _ = scene.cam_start.project(Xe_start)
    bw = (xs - x).reshape(H, W, 2)
    return fw, bw


def occlusion_map(scene, frame="start", tol=1e-6):
    """Pixels whose surface point is hidden or out of frame in the other image.

    ``frame="start"`` checks start-frame pixels against the end camera (the
    forward flow is unreliable there); ``frame="end"`` checks end-frame
    pixels against the start camera (disocclusions, backward flow).
    Returns an ``(H, W)`` bool array, True where occluded.
    """
    layout = scene.layout
    if layout is None:
        raise SparseScene("occlusion map needs a dense scene")
    if frame not in ("start", "end"):
        raise ValueError(f"frame must be 'start' or 'end', got {frame!r}")
    W, H = scene.width, scene.height
    rows, cols = np.mgrid[0:H, 0:W]
    x = np.column_stack([cols.ravel() + 0.5, rows.ravel() + 0.5])
    shift = np.asarray(layout.fg_shift)
    if frame == "start":
        X, _, fg = _cast(scene.cam_start, x, layout, moved=False)
        X_other = _end_position(X, fg, layout)
        other, moved = scene.cam_end, True
    else:
        X, _, fg = _cast(scene.cam_end, x, layout, moved=True)
        X_other = X - fg[:, None] * shift if layout.box is not None else X
        other, moved = scene.cam_start, False
    xo, zo = other.project(X_other)
    outside = (xo[:, 0] < 0) | (xo[:, 0] >= W) | (xo[:, 1] < 0) | (xo[:, 1] >= H) | (zo <= 0)
    Xv, _, _ = _cast(other, xo, layout, moved=moved)
    hidden = np.linalg.norm(Xv - X_other, axis=1) > tol * max(1.0, layout.bg_depth)
    return (outside | hidden).reshape(H, W)


def foreground_map(scene, frame="start"):
    """``(H, W)`` bool array, True where the pixel ray of ``frame`` hits the rectangle."""
    layout = scene.layout
    if layout is None:
        raise SparseScene("foreground map needs a dense scene")
    W, H = scene.width, scene.height
    rows, cols = np.mgrid[0:H, 0:W]
    x = np.column_stack([cols.ravel() + 0.5, rows.ravel() + 0.5])
    cam, moved = (scene.cam_start, False) if frame == "start" else (scene.cam_end, True)
    return _cast(cam, x, layout, moved=moved)[2].reshape(H, W)


# ------------------------------------------------------------ blur synthesis

def frame_count_rule(s_max):
    """Number of intermediate frames for smooth blur: ``max(ceil(2 s_max), 15)``."""
    if s_max < 0:
        raise ValueError("s_max must be non-negative")
    return max(int(math.ceil(2.0 * s_max)), 15)


def frame_average(frames, noise_sigma=0.0, seed=0):
    """Blurred image as the mean of sharp frames plus Gaussian noise.

    Frames are real grayscale images in ``[0, 1]``; the result is clamped to
    that range.
    """
    frames = [np.asarray(f, dtype=float) for f in frames]
    if not frames:
        raise EmptyInput("no frames to average")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise DimensionMismatch("frames differ in shape")
    # summing in sorted order makes the mean independent of frame order
    mean = np.sort(np.stack(frames), axis=0).sum(axis=0) / len(frames)
    if noise_sigma > 0:
        mean = mean + np.random.default_rng(seed).normal(scale=noise_sigma, size=shape)
    return np.clip(mean, 0.0, 1.0)


def render_blur(texture, bw, n_frames=None, noise_sigma=0.0, seed=0):
    """Blurred end-of-exposure image of a texture seen at the start of exposure.

    Intermediate frame ``k`` samples the texture at ``q + tau_k * bw(q)`` with
    ``tau_k`` evenly spaced in ``[0, 1]``, i.e. each pixel follows a linear path
    back to its start position; the frames are then averaged.  ``n_frames``
    defaults to :func:`frame_count_rule` of the largest flow magnitude.
    """
    from scipy.ndimage import map_coordinates

    texture = np.asarray(texture, dtype=float)
    bw = np.asarray(bw, dtype=float)
    if texture.shape != bw.shape[:2]:
        raise DimensionMismatch("texture and flow differ in size")
    if n_frames is None:
        n_frames = frame_count_rule(float(np.max(np.linalg.norm(bw, axis=-1))))
    h, w = texture.shape
    rows, cols = np.mgrid[0:h, 0:w].astype(float)
    frames = []
    for tau in np.linspace(0.0, 1.0, n_frames):
        coords = np.stack([rows + tau * bw[..., 1], cols + tau * bw[..., 0]])
        frames.append(map_coordinates(texture, coords, order=1, mode="reflect"))
    return frame_average(frames, noise_sigma, seed)


def random_texture(width, height, seed=0, smooth=2.0):
    """Seeded band-limited noise texture in [0, 1]."""
    from scipy.ndimage import gaussian_filter

    img = gaussian_filter(np.random.default_rng(seed).random((height, width)), smooth)
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)

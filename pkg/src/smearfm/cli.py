"""Command-line entry point: ``smearfm <subcommand> ...``.

Exit codes are a stable contract: 0 on success, 1 for runtime and I/O
errors, 2 for invalid flags.  Every diagnostic is a single line on stderr,
the effective parameters are echoed to stderr at startup, and every output
file is written atomically.
"""
import argparse
import math
import sys
import time

import numpy as np

from . import formats
from .epipolar import TimeDirection, endpoints, epipolar_line, f_distance, serr_min
from .errors import ConfigInvalid, DegenerateLine, SmearFMError
from .evaluation import EVAL_THRESHOLD, default_curve_grid, fm_eval
from .robust import SEG_THRESHOLD, RansacConfig, classify_motion, estimate_f, select_by_sigma, select_top_beta
from .synth import Label, SceneConfig, generate_scene, make_flow_pair, random_texture, render_blur

DEFAULT_BETA = 0.35
DEFAULT_TAU = 1.0

# library field names -> the flag that sets them, for config diagnostics
_FLAG_NAMES = {
    "n_points": "--n-points",
    "noise_sigma_px": "--noise",
    "outlier_fraction": "--outliers",
    "local_motion_magnitude": "--local-motion",
    "flip_probability": "--flip",
    "noise_fraction": "--noise-fraction",
    "width/height": "--width/--height",
    "beta": "--beta",
    "tau_se": "--tau",
    "hypotheses": "--hypotheses",
    "block_size": "--block-size",
    "max_iterations": "--max-iterations",
    "tau_seg": "--tau-seg",
}


class UsageError(Exception):
    """Invalid command-line input; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _flag_message(exc):
    msg = str(exc)
    field, sep, rest = msg.partition(":")
    if sep and field in _FLAG_NAMES:
        return f"{_FLAG_NAMES[field]}:{rest}"
    return msg


def _echo(cmd, **params):
    items = " ".join(f"{k}={v}" for k, v in params.items())
    print(f"smearfm {cmd}: {items}", file=sys.stderr)


def _read_text(path):
    with open(path) as fh:
        return fh.read()


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def _load_fmat(path):
    try:
        return formats.parse_fmat(_read_text(path))
    except ValueError as exc:
        raise SmearFMError(f"{path}: {exc}") from None


def _load_correspondences(path):
    """Midpoints, smears, sigmas and (for fields) the field from a SCENE or SMEARFIELD file."""
    text = _read_text(path)
    tag = text.split(None, 1)[0] if text.strip() else ""
    try:
        if tag == "SCENE":
            sc = formats.parse_scene(text)
            return sc.midpoints, sc.half_smears, sc.sigmas, None
        if tag == "SMEARFIELD":
            field = formats.parse_smear_field(text)
            return field.pixel_centers(), field.vectors.reshape(-1, 2), field.sigma.ravel(), field
    except (ValueError, KeyError, IndexError) as exc:
        raise SmearFMError(f"{path}: malformed file ({exc})") from None
    raise SmearFMError(f"{path}: expected a SCENE or SMEARFIELD file")


def _check(cond, flag, why):
    if not cond:
        raise ConfigInvalid(f"{flag}: {why}")


# ------------------------------------------------------------------ synth-gen

def cmd_synth_gen(args):
    dense_only = {"--smear-field": args.smear_field, "--flow-fw": args.flow_fw,
                  "--flow-bw": args.flow_bw, "--blur-image": args.blur_image}
    for flag, value in dense_only.items():
        _check(value is None or args.dense, flag, "requires --dense")
    cfg = SceneConfig(width=args.width, height=args.height, n_points=args.n_points,
                      noise_sigma_px=args.noise, outlier_fraction=args.outliers,
                      local_motion_magnitude=args.local_motion, flip_probability=args.flip,
                      noise_fraction=args.noise_fraction, seed=args.seed, dense=args.dense)
    cfg.validate()
    _echo("synth-gen", width=cfg.width, height=cfg.height, n_points=cfg.n_points,
          noise=cfg.noise_sigma_px, outliers=cfg.outlier_fraction,
          local_motion=cfg.local_motion_magnitude, flip=cfg.flip_probability,
          noise_fraction=cfg.noise_fraction, dense=cfg.dense, seed=cfg.seed)
    scene = generate_scene(cfg)
    formats.atomic_write(args.output, formats.format_scene(scene))
    if args.smear_field:
        formats.atomic_write(args.smear_field, formats.format_smear_field(scene.to_smear_field()))
    if args.flow_fw or args.flow_bw or args.blur_image:
        fw, bw = make_flow_pair(scene)
        if args.flow_fw:
            formats.atomic_write(args.flow_fw, formats.format_flow(fw))
        if args.flow_bw:
            formats.atomic_write(args.flow_bw, formats.format_flow(bw))
        if args.blur_image:
            tex = random_texture(scene.width, scene.height, seed=args.seed)
            img = render_blur(tex, bw, noise_sigma=args.image_noise, seed=args.seed)
            formats.atomic_write(args.blur_image, formats.pgm16_bytes(img))
    counts = np.bincount(scene.labels.astype(int), minlength=len(Label))
    print(f"correspondences={len(scene)} " + " ".join(
        f"{lab.name.lower()}={counts[lab]}" for lab in Label))
    return 0


# ------------------------------------------------------------------- estimate

def cmd_estimate(args):
    cfg = RansacConfig(tau_se=args.tau, hypotheses=args.hypotheses, block_size=args.block_size,
                       max_iterations=args.max_iterations, seed=args.seed, refit=not args.no_refit)
    cfg.validate()
    _check(0 < args.beta <= 1, "--beta", f"must lie in (0, 1], got {args.beta}")
    _echo("estimate", beta=args.beta, tau=cfg.tau_se, hypotheses=cfg.hypotheses,
          block_size=cfg.block_size, max_iterations=cfg.max_iterations,
          refit=cfg.refit, seed=cfg.seed)
    points, smears, sigmas, field = _load_correspondences(args.input)
    if field is not None:
        points, smears, idx = select_top_beta(field, args.beta)
    else:
        idx = select_by_sigma(sigmas, args.beta)
        points, smears = points[idx], smears[idx]
    report = estimate_f(points, smears, cfg, idx)
    formats.atomic_write(args.output, formats.format_report(report))
    print(f"selected={len(idx)} inliers={report.inlier_count}/{len(idx)} "
          f"median={report.median_error:.6g} rounds={report.iterations_used}")
    return 0


# ----------------------------------------------------------------------- eval

def cmd_eval(args):
    _check(args.threshold > 0, "--threshold", f"must be positive, got {args.threshold}")
    _echo("eval", threshold=args.threshold, global_only=args.global_only)
    F = _load_fmat(args.f)
    text = _read_text(args.scene)
    try:
        scene = formats.parse_scene(text)
    except (ValueError, KeyError, IndexError) as exc:
        raise SmearFMError(f"{args.scene}: malformed scene ({exc})") from None
    keep = scene.labels == Label.GLOBAL if args.global_only else np.ones(len(scene), bool)
    res = fm_eval(scene.midpoints[keep], scene.half_smears[keep], F, args.threshold,
                  default_curve_grid())
    if args.curve:
        formats.atomic_write(args.curve, "".join(f"{t:.17g}\t{r:.17g}\n" for t, r in res.curve))
    print(f"inliers={res.inlier_percent:.2f} median={res.median_serr:.6g}")
    return 0


# -------------------------------------------------------------------- segment

def cmd_segment(args):
    _check(args.tau_seg > 0, "--tau-seg", f"must be positive, got {args.tau_seg}")
    _check(args.sigma_gate >= 0, "--sigma-gate", f"must be non-negative, got {args.sigma_gate}")
    _echo("segment", tau_seg=args.tau_seg, sigma_gate=args.sigma_gate)
    F = _load_fmat(args.f)
    _, _, _, field = _load_correspondences(args.input)
    if field is None:
        raise SmearFMError(f"{args.input}: segment needs a SMEARFIELD file")
    mask = classify_motion(field, F, args.tau_seg, args.sigma_gate)
    grey = np.array([0, 255, 128], dtype=np.uint8)[mask]
    formats.atomic_write(args.output, formats.pgm8_bytes(grey))
    total = mask.size
    print(f"flagged={100.0 * np.count_nonzero(mask == 1) / total:.2f}% "
          f"unknown={100.0 * np.count_nonzero(mask == 2) / total:.2f}%")
    return 0


# ------------------------------------------------------------ render-epilines

def _clip_line(line, width, height):
    """End points of ``a x + b y + c = 0`` clipped to ``[0, W] x [0, H]``, or None."""
    a, b, c = line
    pts = []
    if abs(b) > 0:
        for x in (0.0, float(width)):
            y = -(a * x + c) / b
            if 0.0 <= y <= height:
                pts.append((x, y))
    if abs(a) > 0:
        for y in (0.0, float(height)):
            x = -(b * y + c) / a
            if 0.0 <= x <= width:
                pts.append((x, y))
    if len(pts) < 2:
        return None
    pts = np.array(pts)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    i, j = np.unravel_index(np.argmax(d), d.shape)
    return pts[i], pts[j]


def _pixel(pt, width, height):
    return (min(max(int(math.floor(pt[0])), 0), width - 1),
            min(max(int(math.floor(pt[1])), 0), height - 1))


def bresenham(x0, y0, x1, y1):
    """Integer pixels of the segment between two pixels (inclusive)."""
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    out = []
    while True:
        out.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return out
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def draw_line(canvas, line, color):
    """Rasterize an image line (pixel centers at ``col + 0.5``); False if it misses."""
    h, w = canvas.shape[:2]
    ends = _clip_line(line, w, h)
    if ends is None:
        return False
    (x0, y0), (x1, y1) = (_pixel(p, w, h) for p in ends)
    for x, y in bresenham(x0, y0, x1, y1):
        canvas[y, x] = color
    return True


def draw_square(canvas, pt, color):
    h, w = canvas.shape[:2]
    if not (0 <= pt[0] < w and 0 <= pt[1] < h):
        return
    x, y = int(math.floor(pt[0])), int(math.floor(pt[1]))
    canvas[max(y - 1, 0):y + 2, max(x - 1, 0):x + 2] = color


def _load_background(path):
    img = formats.read_pnm(_read_bytes(path))
    if img.dtype != np.uint8:
        img = (img >> 8).astype(np.uint8)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return np.ascontiguousarray(img)


def _read_points(path):
    rows = [ln.split() for ln in _read_text(path).splitlines() if ln.strip() and not ln.startswith("#")]
    try:
        pts = np.array([[float(r[0]), float(r[1])] for r in rows]).reshape(-1, 2)
    except (ValueError, IndexError):
        raise SmearFMError(f"{path}: expected lines of 'x y'") from None
    return pts


def cmd_render_epilines(args):
    _check((args.scene is None) != (args.points is None), "--scene/--points",
           "give exactly one of --scene or --points")
    _check(args.max_lines is None or args.max_lines >= 0, "--max-lines", "must be non-negative")
    F = _load_fmat(args.f)
    jobs = []  # (line, marker points)
    width, height = args.width, args.height
    if args.scene:
        try:
            sc = formats.parse_scene(_read_text(args.scene))
        except (ValueError, KeyError, IndexError) as exc:
            raise SmearFMError(f"{args.scene}: malformed scene ({exc})") from None
        width, height = width or sc.width, height or sc.height
        _, dirs = serr_min(sc.midpoints, sc.half_smears, F)
        a, b = endpoints(sc.midpoints, sc.half_smears)
        for k in range(len(sc)):
            # the partner endpoint lies on the line induced by the start endpoint
            side = "left" if TimeDirection(int(dirs[k])) == TimeDirection.START_TO_END else "right"
            jobs.append((a[k, :2], side, (a[k, :2], b[k, :2])))
    else:
        for p in _read_points(args.points):
            jobs.append((p, args.side, (p,)))
    if args.max_lines is not None:
        jobs = jobs[:args.max_lines]
    if args.background:
        canvas = _load_background(args.background)
        height, width = canvas.shape[:2]
    else:
        _check(width and height and width > 0 and height > 0, "--width/--height",
               "canvas size needed without --scene or --background")
        canvas = np.zeros((height, width, 3), dtype=np.uint8)
    _echo("render-epilines", width=width, height=height, side=args.side, lines=len(jobs))
    drawn = skipped = 0
    for p, side, marks in jobs:
        try:
            line = epipolar_line(p, F, side=side)
        except DegenerateLine:
            skipped += 1
            continue
        if draw_line(canvas, line, (0, 255, 0)):
            drawn += 1
        for m in marks:
            draw_square(canvas, m, (255, 0, 0))
    if skipped:
        print(f"smearfm render-epilines: skipped {skipped} degenerate lines", file=sys.stderr)
    formats.atomic_write(args.output, formats.ppm_bytes(canvas))
    print(f"lines={drawn} skipped={skipped}")
    return 0


# ---------------------------------------------------------------------- bench

def cmd_bench(args):
    _check(args.trials >= 1, "--trials", f"must be >= 1, got {args.trials}")
    rcfg = RansacConfig(tau_se=args.tau, hypotheses=args.hypotheses, seed=0).validate()
    SceneConfig(n_points=args.n_points, noise_sigma_px=args.noise,
                outlier_fraction=args.outliers).validate()
    _echo("bench", trials=args.trials, n_points=args.n_points, noise=args.noise,
          outliers=args.outliers, tau=args.tau, hypotheses=args.hypotheses, seed=args.seed)
    lines = ["trial seed f_distance global_inlier_pct outlier_inlier_pct"]
    for k in range(args.trials):
        seed = args.seed + k
        scene = generate_scene(n_points=args.n_points, noise_sigma_px=args.noise,
                               outlier_fraction=args.outliers, seed=seed)
        t0 = time.perf_counter()
        rep = estimate_f(scene.midpoints, scene.half_smears, RansacConfig(
            tau_se=rcfg.tau_se, hypotheses=rcfg.hypotheses, seed=seed))
        elapsed = time.perf_counter() - t0
        glob = scene.labels == Label.GLOBAL
        out = scene.labels == Label.LOCAL_MOTION
        g = 100.0 * rep.inlier_mask[glob].mean() if glob.any() else float("nan")
        o = 100.0 * rep.inlier_mask[out].mean() if out.any() else float("nan")
        lines.append(f"{k} {seed} {f_distance(rep.f, scene.f_gt):.3e} {g:.2f} {o:.2f}")
        print(f"trial {k}: {elapsed:.3f} s", file=sys.stderr)
    text = "\n".join(lines) + "\n"
    if args.output:
        formats.atomic_write(args.output, text)
    sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="smearfm", description="Fundamental matrices from ambiguous motion-blur smears.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    g = sub.add_parser("synth-gen", help="generate a synthetic scene", formatter_class=fmt)
    g.add_argument("-o", "--output", required=True, help="SCENE file to write")
    g.add_argument("--width", type=int, default=640)
    g.add_argument("--height", type=int, default=480)
    g.add_argument("--n-points", type=int, default=200)
    g.add_argument("--noise", type=float, default=0.0, help="endpoint noise std (px)")
    g.add_argument("--outliers", type=float, default=0.0, help="local-motion fraction in [0, 1)")
    g.add_argument("--local-motion", type=float, default=50.0, help="outlier displacement (px)")
    g.add_argument("--flip", type=float, default=0.5, help="smear sign flip probability")
    g.add_argument("--noise-fraction", type=float, default=0.0, help="fraction of junk smears")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dense", action="store_true", help="one smear per pixel")
    g.add_argument("--smear-field", help="also write a SMEARFIELD file (dense only)")
    g.add_argument("--flow-fw", help="also write the start-to-end FLOW file (dense only)")
    g.add_argument("--flow-bw", help="also write the end-to-start FLOW file (dense only)")
    g.add_argument("--blur-image", help="also write a frame-averaged 16-bit PGM (dense only)")
    g.add_argument("--image-noise", type=float, default=0.0, help="noise std of the blur image")
    g.set_defaults(func=cmd_synth_gen)

    e = sub.add_parser("estimate", help="estimate F from a scene or smear field", formatter_class=fmt)
    e.add_argument("input", help="SCENE or SMEARFIELD file")
    e.add_argument("-o", "--output", required=True, help="report file to write")
    e.add_argument("--beta", type=float, default=DEFAULT_BETA, help="fraction of lowest-sigma smears kept")
    e.add_argument("--tau", type=float, default=DEFAULT_TAU, help="inlier threshold on SErrMin")
    e.add_argument("--hypotheses", type=int, default=512, help="7-point samples drawn")
    e.add_argument("--block-size", type=int, default=64, help="observations per preemption block")
    e.add_argument("--max-iterations", type=int, default=1000, help="cap on preemption rounds")
    e.add_argument("--no-refit", action="store_true", help="skip the consensus refit")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("eval", help="score an F against a scene", formatter_class=fmt)
    v.add_argument("scene", help="SCENE file with ground truth")
    v.add_argument("--f", required=True, help="file containing an FMAT block")
    v.add_argument("--threshold", type=float, default=EVAL_THRESHOLD)
    v.add_argument("--global-only", action="store_true", help="score GLOBAL correspondences only")
    v.add_argument("--curve", help="write the cumulative curve (threshold ratio)")
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("segment", help="local-motion mask from a smear field", formatter_class=fmt)
    s.add_argument("input", help="SMEARFIELD file")
    s.add_argument("--f", required=True, help="file containing an FMAT block")
    s.add_argument("-o", "--output", required=True, help="PGM mask (0 global, 255 local, 128 unknown)")
    s.add_argument("--tau-seg", type=float, default=SEG_THRESHOLD)
    s.add_argument("--sigma-gate", type=float, default=math.inf,
                   help="zero smears with sigma above this are marked unknown")
    s.set_defaults(func=cmd_segment)

    r = sub.add_parser("render-epilines", help="draw epipolar lines into a PPM", formatter_class=fmt)
    r.add_argument("--f", required=True, help="file containing an FMAT block")
    r.add_argument("--scene", help="SCENE file; draws the line through each partner endpoint")
    r.add_argument("--points", help="text file of 'x y' points")
    r.add_argument("--side", choices=("right", "left"), default="right",
                   help="line F p (right) or F^T p (left) for --points")
    r.add_argument("--width", type=int, default=None)
    r.add_argument("--height", type=int, default=None)
    r.add_argument("--background", help="P5/P6 image to draw on")
    r.add_argument("--max-lines", type=int, default=None)
    r.add_argument("-o", "--output", required=True, help="PPM file to write")
    r.set_defaults(func=cmd_render_epilines)

    b = sub.add_parser("bench", help="seeded estimation benchmark", formatter_class=fmt)
    b.add_argument("--trials", type=int, default=10)
    b.add_argument("--n-points", type=int, default=200)
    b.add_argument("--noise", type=float, default=0.0)
    b.add_argument("--outliers", type=float, default=0.0)
    b.add_argument("--tau", type=float, default=DEFAULT_TAU)
    b.add_argument("--hypotheses", type=int, default=512)
    b.add_argument("--seed", type=int, required=True, help="first trial seed")
    b.add_argument("-o", "--output", help="also write the table to a file")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except ConfigInvalid as exc:
        print(f"smearfm: invalid flag {_flag_message(exc)}", file=sys.stderr)
        return 2
    except OSError as exc:
        name = exc.filename if exc.filename is not None else ""
        print(f"smearfm: {name}: {exc.strerror or exc}", file=sys.stderr)
        return 1
    except (SmearFMError, ValueError) as exc:
        print(f"smearfm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Plain-text and Netpbm file formats.

Text formats are whitespace separated and keep full double precision
(``%.17g``), so a write/read round trip is exact.
"""
import os
import tempfile

import numpy as np

from .errors import DimensionMismatch
from .smear import SmearField
from .synth import CameraPose, Label, SyntheticScene

_G = "%.17g"


def _fmt(values):
    return " ".join(_G % v for v in np.ravel(values))


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` via a temp file and rename."""
    path = os.fspath(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ----------------------------------------------------------------- F matrix

def format_fmat(F):
    return "FMAT\n" + _fmt(np.asarray(F, dtype=float)) + "\n"


def parse_fmat(text):
    """Read the first ``FMAT`` block of ``text`` (report and scene files work too)."""
    tokens = text.split()
    try:
        i = tokens.index("FMAT")
    except ValueError:
        raise ValueError("no FMAT block found") from None
    vals = tokens[i + 1:i + 10]
    if len(vals) != 9:
        raise ValueError("FMAT block needs 9 values")
    return np.array([float(v) for v in vals]).reshape(3, 3)


# ------------------------------------------------------------- smear fields

def format_smear_field(field):
    lines = [f"SMEARFIELD {field.width} {field.height}"]
    rec = np.column_stack([field.vectors.reshape(-1, 2), field.sigma.ravel()])
    lines += [_fmt(r) for r in rec]
    return "\n".join(lines) + "\n"


def _header(lines, tag):
    head = lines[0].split()
    if not head or head[0] != tag:
        raise ValueError(f"expected a {tag} header, got {lines[0][:40]!r}")
    return int(head[1]), int(head[2])


def _records(lines, count, ncols):
    rows = [ln.split() for ln in lines if ln.strip()]
    if len(rows) != count:
        raise DimensionMismatch(f"expected {count} records, found {len(rows)}")
    data = np.array(rows, dtype=float)
    if data.shape[1] != ncols:
        raise DimensionMismatch(f"expected {ncols} columns per record")
    return data


def parse_smear_field(text):
    lines = text.splitlines()
    w, h = _header(lines, "SMEARFIELD")
    data = _records(lines[1:], w * h, 3)
    return SmearField(data[:, :2].reshape(h, w, 2), data[:, 2].reshape(h, w))


def format_flow(flow):
    flow = np.asarray(flow, dtype=float)
    h, w = flow.shape[:2]
    return "\n".join([f"FLOW {w} {h}"] + [_fmt(r) for r in flow.reshape(-1, 2)]) + "\n"


def parse_flow(text):
    lines = text.splitlines()
    w, h = _header(lines, "FLOW")
    return _records(lines[1:], w * h, 2).reshape(h, w, 2)


# ------------------------------------------------------------------ scenes

def format_scene(scene):
    lines = [f"SCENE {scene.width} {scene.height} {len(scene)}"]
    for name, cam in (("start", scene.cam_start), ("end", scene.cam_end)):
        lines += [f"CAMERA {name}", "K " + _fmt(cam.k), "R " + _fmt(cam.r), "T " + _fmt(cam.t)]
    lines.append(format_fmat(scene.f_gt).rstrip("\n"))
    for p, s, sig, lab in zip(scene.midpoints, scene.half_smears, scene.sigmas, scene.labels):
        lines.append(f"{_fmt(p)} {_fmt(s)} {_G % sig} {Label(lab).name}")
    return "\n".join(lines) + "\n"


def parse_scene(text):
    """Read a scene file.  Ground-truth 3D points are not stored and come back empty."""
    lines = text.splitlines()
    head = lines[0].split()
    if head[0] != "SCENE":
        raise ValueError("expected a SCENE header")
    w, h, n = int(head[1]), int(head[2]), int(head[3])
    cams, i = {}, 1
    while lines[i].startswith("CAMERA"):
        name = lines[i].split()[1]
        blk = {ln.split()[0]: np.array(ln.split()[1:], dtype=float) for ln in lines[i + 1:i + 4]}
        cams[name] = CameraPose(blk["K"].reshape(3, 3), blk["R"].reshape(3, 3), blk["T"])
        i += 4
    F = parse_fmat("\n".join(lines[i:i + 2]))
    rows = [ln.split() for ln in lines[i + 2:] if ln.strip()]
    if len(rows) != n:
        raise DimensionMismatch(f"scene declares {n} correspondences, found {len(rows)}")
    num = np.array([r[:5] for r in rows], dtype=float).reshape(n, 5)
    labels = np.array([Label[r[5]] for r in rows], dtype=np.int8)
    return SyntheticScene(w, h, cams["start"], cams["end"], np.empty((0, 3)), F,
                          num[:, :2], num[:, 2:4], labels, num[:, 4])


# ----------------------------------------------------------------- reports

def format_report(report):
    dir_names = ("S2E", "E2S")
    lines = [format_fmat(report.f).rstrip("\n"),
             f"INLIERS {report.inlier_count}/{len(report.inlier_mask)}",
             f"MEDIAN_SERR {_G % report.median_error}"]
    for k in range(len(report.inlier_mask)):
        lines.append(" ".join([
            str(int(report.selected_indices[k])),
            _fmt(report.points[k]), _fmt(report.smears[k]),
            _G % report.per_smear_error[k],
            dir_names[int(report.directions[k])],
            str(int(report.inlier_mask[k])),
        ]))
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ images

def pgm16_bytes(img):
    """Binary 16-bit PGM (P5) of a real image in [0, 1]."""
    img = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    h, w = img.shape
    data = np.round(img * 65535).astype(">u2").tobytes()
    return f"P5\n{w} {h}\n65535\n".encode() + data


def pgm8_bytes(img):
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode() + img.tobytes()


def ppm_bytes(img):
    """Binary 8-bit color PPM (P6) of an ``(H, W, 3)`` uint8 array."""
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode() + img.tobytes()


def read_pnm(data):
    """Decode binary P5/P6 bytes into an array (big-endian for 16-bit)."""
    parts, pos = [], 0
    while len(parts) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        parts.append(data[pos:end])
        pos = end
    pos += 1
    magic, w, h, maxval = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
    channels = {b"P5": 1, b"P6": 3}[magic]
    dtype = ">u2" if maxval > 255 else np.uint8
    arr = np.frombuffer(data, dtype=dtype, count=w * h * channels, offset=pos)
    return arr.reshape((h, w, 3) if channels == 3 else (h, w))

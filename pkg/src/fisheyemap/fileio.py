"""File formats: PGM images, PFM depth maps, PLY point clouds, rig and
trajectory files, detection lists, and the line-oriented ``key = value``
config format.

Depth maps written as PFM store range along the back-projected ray in
meters; invalid pixels are 0.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .geometry import CameraRig, FisheyeCamera, Pose

__all__ = [
    "read_pgm",
    "write_pgm",
    "read_pfm",
    "write_pfm",
    "write_ply",
    "read_ply",
    "load_rig",
    "save_rig",
    "load_trajectory",
    "save_trajectory",
    "parse_config_blocks",
    "format_config_blocks",
]


# ---------------------------------------------------------------------------
# PGM (binary 8-bit grayscale)

def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a grayscale image as binary 8-bit PGM.

    uint8 input is written verbatim; float input is taken as intensity in
    [0, 1] and quantized.
    """
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("expected a 2-D grayscale image")
    if img.dtype == np.uint8:
        data = img
    else:
        data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(data).tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary 8-bit PGM; returns the raw uint8 array."""
    with open(path, "rb") as f:
        raw = f.read()
    # Header: magic, width, height, maxval; '#' comments allowed.
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.match(rb"\s*(#[^\n]*\n|\S+)", raw[pos:])
        if m is None:
            raise ValueError(f"{path}: truncated PGM header")
        pos += m.end()
        tok = m.group(1)
        if not tok.startswith(b"#"):
            tokens.append(tok)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5)")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported")
    # exactly one whitespace byte separates the header from the pixel data
    data = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos + 1)
    return data.reshape(height, width).copy()


# ---------------------------------------------------------------------------
# PFM (little-endian float32 grayscale; bottom-to-top row order)

def write_pfm(path: str | Path, data: np.ndarray) -> None:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array")
    with open(path, "wb") as f:
        f.write(f"Pf\n{arr.shape[1]} {arr.shape[0]}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(arr[::-1]).tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM")
        width, height = map(int, f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(4 * width * height), dtype=dtype)
    return np.ascontiguousarray(data.reshape(height, width)[::-1]).astype(np.float32)


# ---------------------------------------------------------------------------
# PLY point clouds

def write_ply(path: str | Path, points: np.ndarray, weights: np.ndarray | None = None,
              binary: bool = True) -> None:
    """Write an x/y/z point cloud, optionally with a per-point weight."""
    pts = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {len(pts)}")
    header += ["property float x", "property float y", "property float z"]
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float32).reshape(-1)
        if len(weights) != len(pts):
            raise ValueError("one weight per point required")
        header.append("property float weight")
    header.append("end_header")
    cols = pts if weights is None else np.column_stack([pts, weights])
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            f.write(np.ascontiguousarray(cols.astype("<f4")).tobytes())
        else:
            np.savetxt(f, cols, fmt="%.6f")


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a PLY written by :func:`write_ply`. Returns (points, weights|None)."""
    with open(path, "rb") as f:
        line = f.readline().strip()
        if line != b"ply":
            raise ValueError(f"{path}: not a PLY file")
        binary = None
        count = 0
        props: list[str] = []
        while True:
            line = f.readline().strip()
            if line.startswith(b"format"):
                binary = b"binary_little_endian" in line
            elif line.startswith(b"element vertex"):
                count = int(line.split()[-1])
            elif line.startswith(b"property"):
                props.append(line.split()[-1].decode())
            elif line == b"end_header":
                break
            elif not line.startswith(b"comment"):
                raise ValueError(f"{path}: unsupported header line {line!r}")
        ncol = len(props)
        if props[:3] != ["x", "y", "z"]:
            raise ValueError(f"{path}: expected x y z properties")
        if binary:
            data = np.frombuffer(f.read(4 * ncol * count), dtype="<f4").reshape(count, ncol)
        else:
            data = np.loadtxt(f, dtype=np.float32, ndmin=2).reshape(count, ncol)
    weights = data[:, 3].copy() if ncol > 3 else None
    return data[:, :3].copy(), weights


# ---------------------------------------------------------------------------
# Line-oriented configs: `key = value` pairs grouped into [section] blocks.

def parse_config_blocks(text: str) -> tuple[dict[str, str], list[tuple[str, dict[str, str]]]]:
    """Parse ``key = value`` lines with optional repeated ``[section]`` blocks.

    Returns (top-level pairs, ordered list of (section name, pairs)).
    """
    top: dict[str, str] = {}
    blocks: list[tuple[str, dict[str, str]]] = []
    current: dict[str, str] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = {}
            blocks.append((line[1:-1].strip(), current))
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        (top if current is None else current)[key] = value
    return top, blocks


def format_config_blocks(top: dict[str, object],
                         blocks: list[tuple[str, dict[str, object]]] | None = None) -> str:
    lines = [f"{k} = {v}" for k, v in top.items()]
    for name, pairs in blocks or []:
        lines.append("")
        lines.append(f"[{name}]")
        lines += [f"{k} = {v}" for k, v in pairs.items()]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Camera rig files

def load_rig(path: str | Path) -> CameraRig:
    """Load a rig config: one ``[camera]`` block per camera.

    Each block holds xi, fx, fy, cx, cy, width, height and a 7-number
    ``extrinsic = tx ty tz qx qy qz qw`` mapping rig-frame points into the
    camera frame. A top-level ``reference = i`` selects the reference camera.
    """
    top, blocks = parse_config_blocks(Path(path).read_text())
    cameras: list[FisheyeCamera] = []
    extrinsics: list[Pose] = []
    for name, pairs in blocks:
        if name != "camera":
            raise ValueError(f"{path}: unexpected section [{name}]")
        try:
            cam = FisheyeCamera(
                xi=float(pairs["xi"]),
                fx=float(pairs["fx"]),
                fy=float(pairs["fy"]),
                cx=float(pairs["cx"]),
                cy=float(pairs["cy"]),
                width=int(pairs["width"]),
                height=int(pairs["height"]),
            )
            vals = [float(x) for x in pairs["extrinsic"].split()]
        except KeyError as e:
            raise ValueError(f"{path}: camera block missing key {e}") from e
        if len(vals) != 7:
            raise ValueError(f"{path}: extrinsic needs 7 numbers (tx ty tz qx qy qz qw)")
        cameras.append(cam)
        extrinsics.append(Pose.from_quaternion(np.array(vals[:3]), *vals[3:]))
    if not cameras:
        raise ValueError(f"{path}: no [camera] blocks")
    return CameraRig(
        cameras=tuple(cameras),
        extrinsics=tuple(extrinsics),
        reference_index=int(top.get("reference", 0)),
    )


def _r(x) -> str:
    """Round-trip decimal repr of a scalar (plain-float repr, never numpy's)."""
    return repr(float(x))


def save_rig(path: str | Path, rig: CameraRig) -> None:
    blocks = []
    for cam, ext in zip(rig.cameras, rig.extrinsics):
        q = ext.to_quaternion()
        t = ext.translation
        blocks.append((
            "camera",
            {
                "xi": _r(cam.xi), "fx": _r(cam.fx), "fy": _r(cam.fy),
                "cx": _r(cam.cx), "cy": _r(cam.cy),
                "width": cam.width, "height": cam.height,
                "extrinsic": " ".join(_r(v) for v in (*t, *q)),
            },
        ))
    Path(path).write_text(format_config_blocks({"reference": rig.reference_index}, blocks))


# ---------------------------------------------------------------------------
# Trajectories: one `timestamp tx ty tz qx qy qz qw` line per frame,
# pose maps body-frame points into the world frame.

def load_trajectory(path: str | Path) -> list[tuple[float, Pose]]:
    out: list[tuple[float, Pose]] = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        vals = [float(x) for x in line.split()]
        if len(vals) != 8:
            raise ValueError(f"{path}:{lineno}: expected 8 numbers, got {len(vals)}")
        out.append((vals[0], Pose.from_quaternion(np.array(vals[1:4]), *vals[4:])))
    return out


def save_trajectory(path: str | Path, poses: list[tuple[float, Pose]]) -> None:
    lines = []
    for t, pose in poses:
        q = pose.to_quaternion()
        lines.append(" ".join(_r(v) for v in (t, *pose.translation, *q)))
    Path(path).write_text("\n".join(lines) + "\n")

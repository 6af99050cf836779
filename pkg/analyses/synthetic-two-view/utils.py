"""File formats shared by the pipeline commands.

PFM (Pf/PF), binary PPM (P6, 8-bit), the sparse point cloud text file, the
plain-text camera file, CSV tables and the `key = value` text used by scene
descriptors and experiment configs.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from errors import InvalidInputError, ParseError
from geometry import CameraIntrinsics, RigidPose
from scale import SparsePointCloud

PathLike = Union[str, Path]


@dataclass
class KeyValue:
    key: str
    value: str
    line: int


def format_float(x: float) -> str:
    # repr of a python float round-trips exactly
    return repr(float(x))


def read_key_values(path: PathLike) -> list[KeyValue]:
    """Parse `key = value` lines. Blank lines and `#` comments are skipped."""
    entries = []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(str(path), lineno, f"expected 'key = value', got '{line}'")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ParseError(str(path), lineno, "missing key")
            entries.append(KeyValue(key, value, lineno))
    return entries


def parse_floats(entry: KeyValue, path: PathLike, count: int) -> list[float]:
    tokens = entry.value.split()
    if len(tokens) != count:
        raise ParseError(str(path), entry.line, f"'{entry.key}' expects {count} numbers, got {len(tokens)}")
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ParseError(str(path), entry.line, f"'{entry.key}' has a non-numeric value: '{entry.value}'")


# --- PFM ---


def write_pfm(path: PathLike, grid: np.ndarray) -> None:
    grid = np.asarray(grid)
    if grid.ndim == 2:
        magic = b"Pf"
    elif grid.ndim == 3 and grid.shape[2] == 3:
        magic = b"PF"
    else:
        raise InvalidInputError(f"PFM needs an HxW or HxWx3 array, got shape {grid.shape}")
    height, width = grid.shape[:2]
    # rows are stored bottom-up, negative scale marks little-endian
    data = np.flipud(grid).astype("<f4")
    with open(path, "wb") as f:
        f.write(magic + b"\n")
        f.write(f"{width} {height}\n".encode())
        f.write(b"-1.0\n")
        f.write(data.tobytes())


def read_pfm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        stream = io.BytesIO(f.read())
    magic = stream.readline().strip()
    if magic == b"Pf":
        channels = 1
    elif magic == b"PF":
        channels = 3
    else:
        raise ParseError(str(path), 1, f"not a PFM file (magic {magic!r})")
    try:
        width, height = (int(t) for t in stream.readline().split())
        scale = float(stream.readline().strip())
    except ValueError:
        raise ParseError(str(path), 2, "malformed PFM header")
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    data = np.frombuffer(stream.read(), dtype=dtype)
    if data.size != count:
        raise ParseError(str(path), 3, f"expected {count} samples, found {data.size}")
    shape = (height, width) if channels == 1 else (height, width, 3)
    return np.flipud(data.reshape(shape)).astype(np.float64)


# --- PPM ---


def write_ppm(path: PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidInputError(f"PPM needs an HxWx3 image, got shape {image.shape}")
    height, width = image.shape[:2]
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{width} {height}\n255\n".encode())
        f.write(pixels.tobytes())


def _ppm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_ppm(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, offset = _ppm_tokens(data, 4)
    if tokens[0] != b"P6":
        raise ParseError(str(path), 1, f"not a binary PPM file (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ParseError(str(path), 1, "malformed PPM header")
    if maxval != 255:
        raise ParseError(str(path), 1, f"only 8-bit PPM is supported, maxval is {maxval}")
    expected = width * height * 3
    if len(data) - offset < expected:
        raise ParseError(str(path), None, f"expected {expected} bytes of pixel data, got {max(len(data) - offset, 0)}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=expected, offset=offset)
    return pixels.reshape(height, width, 3).astype(np.float64) / 255.0


# --- sparse cloud: `x y z pair_id` per line ---


def write_sparse_cloud(path: PathLike, cloud: SparsePointCloud) -> None:
    with open(path, "w") as f:
        for point, tag in zip(cloud.points, cloud.pair_ids):
            f.write(" ".join(format_float(c) for c in point) + f" {tag}\n")


def read_sparse_cloud(path: PathLike) -> SparsePointCloud:
    points, tags = [], []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) != 4:
                raise ParseError(str(path), lineno, f"expected 'x y z pair_id', got '{line}'")
            try:
                points.append([float(t) for t in tokens[:3]])
            except ValueError:
                raise ParseError(str(path), lineno, f"non-numeric coordinate in '{line}'")
            tags.append(tokens[3])
    logging.debug(f"Read {len(points)} sparse points from {path}")
    return SparsePointCloud(np.array(points, dtype=np.float64).reshape(-1, 3), tags)


# --- cameras: `fx fy cx cy` line then the 3x4 camera-to-world pose, per view ---


def write_cameras(
    path: PathLike, intrinsics: Sequence[CameraIntrinsics], poses: Sequence[RigidPose]
) -> None:
    with open(path, "w") as f:
        for view, (k, pose) in enumerate(zip(intrinsics, poses), start=1):
            f.write(f"# view {view}: fx fy cx cy, then camera-to-world [R|t] rows\n")
            f.write(" ".join(format_float(x) for x in (k.fx, k.fy, k.cx, k.cy)) + "\n")
            for row in range(3):
                values = list(pose.rotation[row]) + [pose.translation[row]]
                f.write(" ".join(format_float(x) for x in values) + "\n")


def read_cameras(path: PathLike) -> tuple[list[CameraIntrinsics], list[RigidPose]]:
    rows: list[tuple[int, list[float]]] = []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                rows.append((lineno, [float(t) for t in line.split()]))
            except ValueError:
                raise ParseError(str(path), lineno, f"non-numeric value in '{line}'")
    if len(rows) % 4 != 0 or not rows:
        raise ParseError(str(path), rows[-1][0] if rows else 1, "expected 4 rows per view")
    intrinsics, poses = [], []
    for start in range(0, len(rows), 4):
        lineno, k = rows[start]
        if len(k) != 4:
            raise ParseError(str(path), lineno, "intrinsics row needs 'fx fy cx cy'")
        matrix = []
        for lineno, values in rows[start + 1 : start + 4]:
            if len(values) != 4:
                raise ParseError(str(path), lineno, "pose rows need 4 values")
            matrix.append(values)
        m = np.array(matrix)
        try:
            intrinsics.append(CameraIntrinsics(*k))
            poses.append(RigidPose(m[:, :3], m[:, 3]))
        except InvalidInputError as e:
            raise ParseError(str(path), lineno, str(e))
    return intrinsics, poses


# --- CSV ---


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(x) if isinstance(x, (float, np.floating)) else x for x in row])

"""Readers and writers for trajectories, match files, depth maps,
assignments and camera intrinsics.

All text is UTF-8 with ``\\n`` line endings and ``.`` as decimal separator.
"""
from __future__ import annotations

import json
import math
import warnings
from enum import Enum
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .correspondence import Assignment, DepthMap
from .epipolar import CameraIntrinsics
from .errors import BadQuaternion, ParseError, SchemaError, UnsupportedFormat, VokitError
from .geometry import quat_to_rotmat, rotmat_to_quat
from .robust_pose import MatchSet
from .trajectory import Trajectory

QUAT_REJECT_TOL = 1e-3
QUAT_WARN_TOL = 1e-6


class TrajectoryFormat(str, Enum):
    TARTANAIR = "tartanair"
    TUM = "tum"


_FIELDS = {TrajectoryFormat.TARTANAIR: 7, TrajectoryFormat.TUM: 8}


def _fmt(x: float) -> str:
    x = float(x)
    if x == 0.0:
        return "0"
    return format(x, ".17g")


def _parse_floats(tokens, path, lineno):
    out = []
    for tok in tokens:
        try:
            v = float(tok)
        except ValueError:
            raise ParseError(f"not a number: {tok!r}", lineno, path) from None
        if not math.isfinite(v):
            raise ParseError(f"non-finite value {tok!r}", lineno, path)
        out.append(v)
    return out


def parse_trajectory(text: str, fmt=TrajectoryFormat.TARTANAIR, path=None) -> Trajectory:
    """Parse trajectory text; see :func:`load_trajectory`."""
    fmt = TrajectoryFormat(fmt)
    want = _FIELDS[fmt]
    Rs, ts, stamps = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != want:
            raise ParseError(f"expected {want} fields for {fmt.value}, got {len(tokens)}", lineno, path)
        vals = _parse_floats(tokens, path, lineno)
        if fmt is TrajectoryFormat.TUM:
            stamps.append(vals.pop(0))
        q = np.array(vals[3:7])
        dev = abs(float(np.linalg.norm(q)) - 1.0)
        if dev > QUAT_REJECT_TOL:
            raise BadQuaternion(f"quaternion norm deviates from 1 by {dev:.3g}", lineno, path)
        if dev > QUAT_WARN_TOL:
            warnings.warn(f"{path or '<text>'}:{lineno}: renormalizing quaternion (|q|-1 = {dev:.3g})", stacklevel=3)
        Rs.append(quat_to_rotmat(q))
        ts.append(vals[0:3])
    if not Rs:
        raise ParseError("no poses found", path=path)
    if stamps and np.any(np.diff(stamps) <= 0):
        raise ParseError("timestamps must be strictly increasing", path=path)
    return Trajectory(np.array(Rs), np.array(ts), np.array(stamps) if stamps else None)


def load_trajectory(path, fmt=TrajectoryFormat.TARTANAIR) -> Trajectory:
    """Read ``tx ty tz qx qy qz qw`` lines (TUM adds a leading timestamp).

    Blank lines and ``#`` comments are skipped. Quaternions off unit norm by
    more than 1e-3 are rejected; smaller deviations are renormalized.
    """
    path = str(path)
    with open(path, encoding="utf-8") as f:
        return parse_trajectory(f.read(), fmt, path)


def format_trajectory(traj: Trajectory, fmt=TrajectoryFormat.TARTANAIR) -> str:
    fmt = TrajectoryFormat(fmt)
    lines = []
    for k, (R, t) in enumerate(zip(traj.rotations, traj.translations)):
        vals = list(t) + list(rotmat_to_quat(R))
        if fmt is TrajectoryFormat.TUM:
            stamp = traj.timestamps[k] if traj.timestamps is not None else float(k)
            vals = [stamp] + vals
        lines.append(" ".join(_fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def save_trajectory(traj: Trajectory, path, fmt=TrajectoryFormat.TARTANAIR) -> None:
    """Write with 17 significant digits; TUM without timestamps uses frame indices."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_trajectory(traj, fmt))


# match files ---------------------------------------------------------------


def _points(obj, key, pair_id, lineno, path):
    val = obj.get(key)
    if not isinstance(val, list):
        raise SchemaError(f"expected a list (line {lineno} of {path})", pair_id, key)
    try:
        arr = np.array(val, dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError(f"expected numbers (line {lineno} of {path})", pair_id, key) from None
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise SchemaError(f"expected [[x, y], ...] (line {lineno} of {path})", pair_id, key)
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"non-finite coordinate (line {lineno} of {path})", pair_id, key)
    return arr


def _json_lines(path):
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", lineno, str(path)) from None
            if not isinstance(obj, dict):
                raise SchemaError(f"line {lineno} is not a JSON object")
            yield lineno, obj


def _pair_id(obj, lineno):
    pid = obj.get("pair_id", f"line{lineno}")
    if not isinstance(pid, str):
        raise SchemaError("pair_id must be a string", str(pid), "pair_id")
    return pid


def iter_matches(path) -> Iterator[MatchSet]:
    """Stream one validated :class:`MatchSet` per JSON line."""
    for lineno, obj in _json_lines(path):
        pid = _pair_id(obj, lineno)
        k0 = _points(obj, "kpts0", pid, lineno, path)
        k1 = _points(obj, "kpts1", pid, lineno, path)
        conf = obj.get("conf")
        if not isinstance(conf, list):
            raise SchemaError("expected a list", pid, "conf")
        try:
            c = np.array(conf, dtype=np.float64).reshape(-1)
        except (TypeError, ValueError):
            raise SchemaError("expected numbers", pid, "conf") from None
        if not (len(k0) == len(k1) == len(c)):
            raise SchemaError(f"lengths differ: kpts0 {len(k0)}, kpts1 {len(k1)}, conf {len(c)}", pid, "kpts1")
        if not np.all(np.isfinite(c)) or not np.all((c >= 0) & (c <= 1)):
            raise SchemaError("confidences must lie in [0, 1]", pid, "conf")
        yield MatchSet(k0, k1, c, pid)


def load_matches(path) -> list:
    return list(iter_matches(path))


def match_record(m: MatchSet) -> dict:
    return {"kpts0": m.kpts0.tolist(), "kpts1": m.kpts1.tolist(), "conf": m.confidence.tolist(), "pair_id": m.pair_id}


def save_matches(matchsets, path) -> None:
    """JSON lines; floats use the shortest round-tripping repr, so reloading is bit-exact."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for m in matchsets:
            f.write(json.dumps(match_record(m), separators=(",", ":")) + "\n")


class KeypointPair(NamedTuple):
    """Unmatched keypoints of an image pair plus optional labelling inputs."""

    pair_id: str
    kpts0: np.ndarray
    kpts1: np.ndarray
    homography: np.ndarray | None
    colors0: np.ndarray | None
    colors1: np.ndarray | None


def _optional_array(obj, key, shape_tail, pid):
    if key not in obj or obj[key] is None:
        return None
    try:
        arr = np.array(obj[key], dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError("expected numbers", pid, key) from None
    if arr.shape[1:] != shape_tail and not (shape_tail == (3,) and arr.size == 0):
        raise SchemaError(f"unexpected shape {arr.shape}", pid, key)
    if not np.all(np.isfinite(arr)):
        raise SchemaError("non-finite value", pid, key)
    return arr.reshape((-1,) + shape_tail)


def iter_keypoint_pairs(path) -> Iterator[KeypointPair]:
    """Keypoint files for ground-truth generation.

    Same layout as match files, but ``kpts0`` and ``kpts1`` may differ in
    length and ``conf`` is ignored. Optional fields: ``homography`` (3x3),
    ``colors0`` / ``colors1`` (per-keypoint RGB).
    """
    for lineno, obj in _json_lines(path):
        pid = _pair_id(obj, lineno)
        k0 = _points(obj, "kpts0", pid, lineno, path)
        k1 = _points(obj, "kpts1", pid, lineno, path)
        h = None
        if obj.get("homography") is not None:
            try:
                h = np.array(obj["homography"], dtype=np.float64)
            except (TypeError, ValueError):
                raise SchemaError("expected numbers", pid, "homography") from None
            if h.shape != (3, 3) or not np.all(np.isfinite(h)):
                raise SchemaError("expected a finite 3x3 matrix", pid, "homography")
        c0 = _optional_array(obj, "colors0", (3,), pid)
        c1 = _optional_array(obj, "colors1", (3,), pid)
        if c0 is not None and len(c0) != len(k0):
            raise SchemaError("one color per keypoint expected", pid, "colors0")
        if c1 is not None and len(c1) != len(k1):
            raise SchemaError("one color per keypoint expected", pid, "colors1")
        yield KeypointPair(pid, k0, k1, h, c0, c1)


# depth ---------------------------------------------------------------------


def _read_token(data: bytes, pos: int):
    while pos < len(data) and data[pos : pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(data) and not data[pos : pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def load_depth_pfm(path) -> DepthMap:
    """Grayscale ``Pf`` PFM; rows are stored bottom-up and returned top-down."""
    path = str(path)
    data = Path(path).read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        tok, pos = _read_token(data, pos)
        tokens.append(tok)
    kind = tokens[0]
    if kind == b"PF":
        raise UnsupportedFormat(f"{path}: color PFM is not a depth map")
    if kind != b"Pf":
        raise ParseError(f"bad PFM magic {kind!r}", path=path)
    try:
        width, height = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError:
        raise ParseError("malformed PFM header", path=path) from None
    if width <= 0 or height <= 0 or scale == 0 or not math.isfinite(scale):
        raise ParseError("malformed PFM header", path=path)
    pos += 1  # single whitespace byte after the scale
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    need = width * height * 4
    if len(data) - pos < need:
        raise ParseError(f"expected {need} bytes of pixel data, found {len(data) - pos}", path=path)
    values = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos).reshape(height, width)
    return DepthMap(values[::-1].astype(np.float64))


def write_depth_pfm(depth: DepthMap, path, little_endian=True) -> None:
    dtype = np.dtype("<f4") if little_endian else np.dtype(">f4")
    header = f"Pf\n{depth.width} {depth.height}\n{-1.0 if little_endian else 1.0}\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(depth.values[::-1], dtype=dtype).tobytes())


# assignments and intrinsics --------------------------------------------------


def assignment_record(a: Assignment, pair_id="") -> dict:
    return {"pair_id": pair_id, "matches0": a.matches0.tolist(), "matches1": a.matches1.tolist(), "num_matches": a.num_matches}


def save_assignments(records, path, seed=None) -> None:
    """``records`` are ``(pair_id, Assignment)`` tuples."""
    doc = {"seed": seed, "pairs": [assignment_record(a, pid) for pid, a in records]}
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, separators=(",", ":"))
        f.write("\n")


def load_assignments(path) -> list:
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e.msg}", e.lineno, str(path)) from None
    try:
        return [(p["pair_id"], Assignment(p["matches0"], p["matches1"])) for p in doc["pairs"]]
    except (KeyError, TypeError) as e:
        raise SchemaError(f"malformed assignment file: {e}") from None


def load_intrinsics(path):
    """Returns ``(k0, k1)``. The file holds one flat intrinsics object used
    for both cameras, or ``{"k0": {...}, "k1": {...}}``."""
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e.msg}", e.lineno, str(path)) from None
    try:
        if "k0" in doc:
            return CameraIntrinsics.from_dict(doc["k0"]), CameraIntrinsics.from_dict(doc.get("k1", doc["k0"]))
        k = CameraIntrinsics.from_dict(doc)
        return k, k
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"malformed intrinsics: {e}", field=str(e)) from None


def save_intrinsics(k0: CameraIntrinsics, path, k1: CameraIntrinsics = None) -> None:
    doc = k0.to_dict() if k1 is None or k1 == k0 else {"k0": k0.to_dict(), "k1": k1.to_dict()}
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")

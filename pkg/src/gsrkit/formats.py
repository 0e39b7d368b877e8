"""Frame annotation JSON, the pretraining subset, per-clip files and the
embedding sidecar.

Keypoints are in pixels and line points are normalized to [0, 1]. Jersey
numbers are strings on disk and integers in memory. Serialization is
canonical: fixed key order, sorted keypoints and lines, floats written with
their shortest round-trip representation.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .camera import CameraParams

ATHLETE_KEYS = ("bbox_ltwh", "track_id", "jersey_number", "legibility_score", "role", "team")
PRETRAIN_ATHLETE_KEYS = ("bbox_ltwh", "track_id", "jersey_number", "role")
FRAME_KEYS = ("athletes", "keypoints", "lines", "K", "Rt", "valid_cam_params")
PRETRAIN_FRAME_KEYS = ("athletes", "keypoints", "lines")
LEGIBILITY_THRESHOLD = 0.5


class SchemaError(ValueError):
    """Raised on malformed input; ``path`` is a JSON path such as ``$.athletes[0].bbox_ltwh``."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


@dataclass(frozen=True)
class KeypointRecord:
    x: float
    y: float
    p: float = 1.0


@dataclass(frozen=True)
class AthleteRecord:
    bbox_ltwh: tuple
    track_id: Optional[int] = None
    jersey_number: Optional[int] = None
    legibility_score: Optional[float] = None
    role: Optional[str] = None
    team: Optional[str] = None
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PretrainAthleteRecord:
    bbox_ltwh: tuple
    track_id: Optional[int] = None
    jersey_number: Optional[int] = None
    role: Optional[str] = None


@dataclass(frozen=True)
class FrameAnnotation:
    athletes: tuple = ()
    keypoints: dict = field(default_factory=dict)  # id -> KeypointRecord
    lines: dict = field(default_factory=dict)  # name -> tuple of (x, y)
    K: Optional[tuple] = None
    Rt: Optional[tuple] = None
    valid_cam_params: bool = False
    extras: dict = field(default_factory=dict)

    def camera(self) -> Optional[CameraParams]:
        """Camera parameters when present and flagged valid."""
        if not self.valid_cam_params or self.K is None or self.Rt is None:
            return None
        return CameraParams.from_K_Rt(np.array(self.K), np.array(self.Rt))

    def with_camera(self, cam: Optional[CameraParams], valid: bool = True) -> "FrameAnnotation":
        if cam is None:
            return replace(self, K=None, Rt=None, valid_cam_params=False)
        return replace(self, K=_matrix_tuple(cam.K), Rt=_matrix_tuple(cam.Rt), valid_cam_params=bool(valid))


@dataclass(frozen=True)
class PretrainFrameAnnotation:
    athletes: tuple = ()
    keypoints: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)


def _matrix_tuple(M) -> tuple:
    return tuple(tuple(float(v) for v in row) for row in np.asarray(M, dtype=float))


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------
def _num(v, path) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(path, f"expected a number, got {type(v).__name__}")
    v = float(v)
    if not math.isfinite(v):
        raise SchemaError(path, "non-finite number")
    return v


def _int(v, path) -> int:
    if isinstance(v, bool):
        raise SchemaError(path, "expected an integer, got bool")
    if isinstance(v, float) and v.is_integer():
        return int(v)
    if not isinstance(v, int):
        raise SchemaError(path, f"expected an integer, got {type(v).__name__}")
    return v


def _opt_str(v, path) -> Optional[str]:
    if v is None:
        return None
    if not isinstance(v, str):
        raise SchemaError(path, f"expected a string or null, got {type(v).__name__}")
    return v


def _jersey(v, path) -> Optional[int]:
    if v is None or v == "null" or v == "":
        return None
    if isinstance(v, str):
        if not v.strip().isdigit():
            raise SchemaError(path, f"jersey number {v!r} is not numeric")
        return int(v)
    return _int(v, path)


def _matrix(v, rows, cols, path) -> tuple:
    if not isinstance(v, list) or len(v) != rows:
        raise SchemaError(path, f"expected a {rows}x{cols} matrix")
    out = []
    for i, row in enumerate(v):
        if not isinstance(row, list) or len(row) != cols:
            raise SchemaError(f"{path}[{i}]", f"expected {cols} values")
        out.append(tuple(_num(x, f"{path}[{i}][{j}]") for j, x in enumerate(row)))
    return tuple(out)


def _object(v, path) -> dict:
    if not isinstance(v, dict):
        raise SchemaError(path, f"expected an object, got {type(v).__name__}")
    return v


def _parse_athlete(obj, path) -> AthleteRecord:
    obj = _object(obj, path)
    if "bbox_ltwh" not in obj:
        raise SchemaError(path, "missing bbox_ltwh")
    box = obj["bbox_ltwh"]
    if not isinstance(box, list) or len(box) != 4:
        raise SchemaError(f"{path}.bbox_ltwh", "expected 4 numbers")
    bbox = tuple(_num(b, f"{path}.bbox_ltwh[{i}]") for i, b in enumerate(box))
    tid = obj.get("track_id")
    leg = obj.get("legibility_score")
    return AthleteRecord(
        bbox_ltwh=bbox,
        track_id=None if tid is None else _int(tid, f"{path}.track_id"),
        jersey_number=_jersey(obj.get("jersey_number"), f"{path}.jersey_number"),
        legibility_score=None if leg is None else _num(leg, f"{path}.legibility_score"),
        role=_opt_str(obj.get("role"), f"{path}.role"),
        team=_opt_str(obj.get("team"), f"{path}.team"),
        extras={k: v for k, v in obj.items() if k not in ATHLETE_KEYS},
    )


def _parse_keypoints(obj, path) -> dict:
    obj = _object(obj, path)
    out = {}
    for key, kp in obj.items():
        p = f"{path}.{key}"
        try:
            kid = int(key)
        except ValueError:
            raise SchemaError(p, "keypoint id is not an integer") from None
        if kid < 0 or str(kid) != str(key).strip():
            raise SchemaError(p, "keypoint id must be a non-negative integer")
        kp = _object(kp, p)
        for c in ("x", "y"):
            if c not in kp:
                raise SchemaError(p, f"missing {c}")
        out[kid] = KeypointRecord(_num(kp["x"], f"{p}.x"), _num(kp["y"], f"{p}.y"),
                                  _num(kp.get("p", 1.0), f"{p}.p"))
    return dict(sorted(out.items()))


def _parse_lines(obj, path) -> dict:
    obj = _object(obj, path)
    out = {}
    for name, pts in obj.items():
        p = f"{path}[{json.dumps(name)}]"
        if not isinstance(pts, list):
            raise SchemaError(p, "expected a list of points")
        seq = []
        for i, pt in enumerate(pts):
            pt = _object(pt, f"{p}[{i}]")
            if "x" not in pt or "y" not in pt:
                raise SchemaError(f"{p}[{i}]", "point needs x and y")
            seq.append((_num(pt["x"], f"{p}[{i}].x"), _num(pt["y"], f"{p}[{i}].y")))
        out[name] = tuple(seq)
    return dict(sorted(out.items()))


def frame_from_obj(obj, path: str = "$") -> FrameAnnotation:
    obj = _object(obj, path)
    athletes = obj.get("athletes", [])
    if not isinstance(athletes, list):
        raise SchemaError(f"{path}.athletes", "expected a list")
    valid = obj.get("valid_cam_params", False)
    if not isinstance(valid, bool):
        raise SchemaError(f"{path}.valid_cam_params", "expected true or false")
    K = obj.get("K")
    Rt = obj.get("Rt")
    return FrameAnnotation(
        athletes=tuple(_parse_athlete(a, f"{path}.athletes[{i}]") for i, a in enumerate(athletes)),
        keypoints=_parse_keypoints(obj.get("keypoints", {}), f"{path}.keypoints"),
        lines=_parse_lines(obj.get("lines", {}), f"{path}.lines"),
        K=None if K is None else _matrix(K, 3, 3, f"{path}.K"),
        Rt=None if Rt is None else _matrix(Rt, 3, 4, f"{path}.Rt"),
        valid_cam_params=valid,
        extras={k: v for k, v in obj.items() if k not in FRAME_KEYS},
    )


def _loads(text: str, path: str = "$"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(path, f"invalid JSON: {e}") from None


def parse_frame(text: str) -> FrameAnnotation:
    return frame_from_obj(_loads(text))


def parse_pretrain_frame(text: str) -> PretrainFrameAnnotation:
    return to_pretrain_subset(parse_frame(text))


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------
def _athlete_obj(a) -> dict:
    keys = PRETRAIN_ATHLETE_KEYS if isinstance(a, PretrainAthleteRecord) else ATHLETE_KEYS
    out = {}
    for k in keys:
        v = getattr(a, k)
        if k == "bbox_ltwh":
            v = [float(x) for x in v]
        elif k == "jersey_number":
            v = None if v is None else str(int(v))
        elif k == "legibility_score" and v is not None:
            v = float(v)
        out[k] = v
    for k in sorted(getattr(a, "extras", {})):
        out[k] = a.extras[k]
    return out


def frame_to_obj(ann) -> dict:
    out = {
        "athletes": [_athlete_obj(a) for a in ann.athletes],
        "keypoints": {
            str(k): {"x": float(kp.x), "y": float(kp.y), "p": float(kp.p)}
            for k, kp in sorted(ann.keypoints.items())
        },
        "lines": {
            name: [{"x": float(x), "y": float(y)} for x, y in pts] for name, pts in sorted(ann.lines.items())
        },
    }
    if isinstance(ann, FrameAnnotation):
        if ann.K is not None:
            out["K"] = [list(r) for r in ann.K]
        if ann.Rt is not None:
            out["Rt"] = [list(r) for r in ann.Rt]
        out["valid_cam_params"] = bool(ann.valid_cam_params)
        for k in sorted(ann.extras):
            out[k] = ann.extras[k]
    return out


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_frame(ann) -> str:
    return dumps(frame_to_obj(ann))


# ---------------------------------------------------------------------------
# pretraining subset and validation
# ---------------------------------------------------------------------------
def to_pretrain_subset(ann, threshold: float = LEGIBILITY_THRESHOLD) -> PretrainFrameAnnotation:
    """Drop camera, team and legibility fields; jerseys below ``threshold`` become null."""
    if isinstance(ann, PretrainFrameAnnotation):
        return ann
    athletes = []
    for a in ann.athletes:
        jersey = a.jersey_number
        if jersey is not None and a.legibility_score is not None and a.legibility_score < threshold:
            jersey = None
        athletes.append(PretrainAthleteRecord(a.bbox_ltwh, a.track_id, jersey, a.role))
    return PretrainFrameAnnotation(tuple(athletes), dict(ann.keypoints), dict(ann.lines))


def validate_frame(ann, image_size=None) -> list[str]:
    """Problems as ``path: message`` strings; empty when the frame is consistent."""
    out = []
    for i, a in enumerate(ann.athletes):
        if a.bbox_ltwh[2] <= 0 or a.bbox_ltwh[3] <= 0:
            out.append(f"$.athletes[{i}].bbox_ltwh: non-positive size")
        leg = getattr(a, "legibility_score", None)
        if leg is not None and not 0.0 <= leg <= 1.0:
            out.append(f"$.athletes[{i}].legibility_score: outside [0, 1]")
        if a.jersey_number is not None and not 0 <= a.jersey_number <= 99:
            out.append(f"$.athletes[{i}].jersey_number: outside 0..99")
    for k, kp in ann.keypoints.items():
        if k < 0:
            out.append(f"$.keypoints.{k}: negative id")
        if image_size is not None:
            W, H = image_size
            if not (0 <= kp.x <= W and 0 <= kp.y <= H):
                out.append(f"$.keypoints.{k}: outside the image")
    for name, pts in ann.lines.items():
        for i, (x, y) in enumerate(pts):
            if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                out.append(f"$.lines[{json.dumps(name)}][{i}]: not normalized")
    if isinstance(ann, FrameAnnotation) and ann.valid_cam_params and (ann.K is None or ann.Rt is None):
        out.append("$.valid_cam_params: true without K and Rt")
    return out


# ---------------------------------------------------------------------------
# per-clip files
# ---------------------------------------------------------------------------
@dataclass
class Clip:
    image_size: tuple
    frames: dict  # frame index -> FrameAnnotation
    extras: dict = field(default_factory=dict)

    def ordered(self) -> list:
        """Frames as a dense list; missing indices become empty annotations."""
        if not self.frames:
            return []
        n = max(self.frames) + 1
        return [self.frames.get(i, FrameAnnotation()) for i in range(n)]


def clip_from_obj(obj) -> Clip:
    obj = _object(obj, "$")
    for k in ("image_width", "image_height"):
        if k not in obj:
            raise SchemaError("$", f"missing {k}")
    size = (_int(obj["image_width"], "$.image_width"), _int(obj["image_height"], "$.image_height"))
    frames_obj = _object(obj.get("frames", {}), "$.frames")
    frames = {}
    for key, fr in frames_obj.items():
        try:
            idx = int(key)
        except ValueError:
            raise SchemaError(f"$.frames.{key}", "frame key is not an integer") from None
        if idx < 0:
            raise SchemaError(f"$.frames.{key}", "negative frame index")
        frames[idx] = frame_from_obj(fr, f"$.frames.{key}")
    extras = {k: v for k, v in obj.items() if k not in ("image_width", "image_height", "frames")}
    return Clip(size, dict(sorted(frames.items())), extras)


def clip_to_obj(clip: Clip) -> dict:
    out = {"image_width": int(clip.image_size[0]), "image_height": int(clip.image_size[1])}
    out["frames"] = {str(i): frame_to_obj(f) for i, f in sorted(clip.frames.items())}
    for k in sorted(clip.extras):
        out[k] = clip.extras[k]
    return out


def read_clip(path) -> Clip:
    return clip_from_obj(_loads(Path(path).read_text(encoding="utf-8")))


def write_clip(clip: Clip, path) -> None:
    Path(path).write_text(dumps(clip_to_obj(clip)), encoding="utf-8")


# ---------------------------------------------------------------------------
# embedding sidecar
# ---------------------------------------------------------------------------
_HEADER = struct.Struct("<II")


def embeddings_to_bytes(frames) -> bytes:
    """Binary layout: ``<II`` (frame count, dims), one ``<I`` detection count per
    frame, then little-endian float32 values frame by frame in detection order."""
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    dims = 0
    for f in frames:
        if f.size:
            dims = f.shape[1]
            break
    for i, f in enumerate(frames):
        if f.size and (f.ndim != 2 or f.shape[1] != dims):
            raise ValueError(f"frame {i}: embeddings must be (n, {dims})")
    counts = [len(f) if f.size else 0 for f in frames]
    body = b"".join(f.astype("<f4").tobytes() for f in frames if f.size)
    return _HEADER.pack(len(frames), dims) + struct.pack(f"<{len(frames)}I", *counts) + body


def embeddings_from_bytes(data: bytes) -> list[np.ndarray]:
    if len(data) < _HEADER.size:
        raise SchemaError("$", "truncated embedding header")
    n, dims = _HEADER.unpack_from(data)
    off = _HEADER.size
    if len(data) < off + 4 * n:
        raise SchemaError("$", "truncated frame counts")
    counts = struct.unpack_from(f"<{n}I", data, off)
    off += 4 * n
    expected = off + 4 * dims * sum(counts)
    if len(data) != expected:
        raise SchemaError("$", f"expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=off).astype(np.float64)
    out = []
    pos = 0
    for c in counts:
        out.append(values[pos:pos + c * dims].reshape(c, dims))
        pos += c * dims
    return out


def read_embeddings(path) -> list[np.ndarray]:
    """Per-frame (n, d) arrays from a binary sidecar or its JSON alternative."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        obj = _object(_loads(path.read_text(encoding="utf-8")), "$")
        dims = _int(obj.get("dims", 0), "$.dims")
        frames = obj.get("frames", [])
        if not isinstance(frames, list):
            raise SchemaError("$.frames", "expected a list")
        out = []
        for i, f in enumerate(frames):
            a = np.asarray(f, dtype=np.float64).reshape(-1, dims) if len(f) else np.empty((0, dims))
            out.append(a)
        return out
    return embeddings_from_bytes(path.read_bytes())


def write_embeddings(frames, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        frames = [np.asarray(f, dtype=float) for f in frames]
        dims = next((f.shape[1] for f in frames if f.size), 0)
        obj = {"dims": dims, "frames": [f.tolist() for f in frames]}
        path.write_text(dumps(obj), encoding="utf-8")
    else:
        path.write_bytes(embeddings_to_bytes(frames))

"""68-point facial landmarks: ingestion, tilt estimation and mask anchor extraction.

Points follow the iBUG 300-W convention with 0-based indices:
jaw 0-16, brows 17-26, nose bridge 27-30, nostrils 31-35,
eyes 36-47, outer lips 48-59, inner lips 60-67.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GeometryError, ValidationError

N_POINTS = 68

NOSE_BRIDGE_TOP = 27
CHIN_TIP = 8

# (nose-bridge, chin-tip, upper-left-jaw, upper-right-jaw, lower-left-jaw, lower-right-jaw)
ANCHOR_INDICES = (28, 8, 2, 14, 5, 11)
ANCHOR_NAMES = (
    "nose_bridge",
    "chin_tip",
    "upper_left_jaw",
    "upper_right_jaw",
    "lower_left_jaw",
    "lower_right_jaw",
)

TILT_THRESHOLD_DEG = 15.0

# bbox is expanded by this fraction of its size on each side before checking points
_BBOX_SLACK = 0.5


class LandmarkParseError(ValidationError):
    """Landmark file is not valid JSON or does not follow the documented layout."""


class Bin(str, enum.Enum):
    LEFT = "LEFT"
    FRONT = "FRONT"
    RIGHT = "RIGHT"


@dataclass(frozen=True, eq=False)
class FaceLandmarks:
    points: np.ndarray  # (68, 2) float64, pixel coordinates
    image_id: str = ""
    bbox: tuple[float, float, float, float] | None = None  # (x, y, w, h)

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValidationError(f"points must be (N, 2), got shape {pts.shape}")
        if pts.shape[0] != N_POINTS:
            raise ValidationError(f"expected {N_POINTS} points, got {pts.shape[0]}")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("landmark coordinates must be finite")
        bbox = self.bbox
        if bbox is None:
            lo, hi = pts.min(axis=0), pts.max(axis=0)
            bbox = (float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1]))
        else:
            bbox = tuple(float(v) for v in bbox)
            if len(bbox) != 4:
                raise ValidationError("bbox must be [x, y, w, h]")
        x, y, w, h = bbox
        if not (w > 0 and h > 0):
            raise ValidationError(f"bbox width and height must be positive, got {w}x{h}")
        sx, sy = _BBOX_SLACK * w, _BBOX_SLACK * h
        inside = (
            (pts[:, 0] >= x - sx)
            & (pts[:, 0] <= x + w + sx)
            & (pts[:, 1] >= y - sy)
            & (pts[:, 1] <= y + h + sy)
        )
        if not inside.all():
            bad = int(np.flatnonzero(~inside)[0])
            raise ValidationError(f"point {bad} lies outside the expanded bbox")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "bbox", bbox)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FaceLandmarks):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.bbox == other.bbox
            and np.array_equal(self.points, other.points)
        )

    def transformed(self, matrix: np.ndarray) -> FaceLandmarks:
        """Apply a 2x3 affine or 3x3 projective matrix to every point (bbox is recomputed)."""
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape == (2, 3):
            m = np.vstack([m, [0.0, 0.0, 1.0]])
        hom = np.c_[self.points, np.ones(N_POINTS)] @ m.T
        return FaceLandmarks(hom[:, :2] / hom[:, 2:3], self.image_id)


@dataclass(frozen=True, eq=False)
class FaceAnchors:
    points: np.ndarray  # (6, 2) in ANCHOR_NAMES order

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64)
        if pts.shape != (6, 2):
            raise ValidationError(f"anchors must be (6, 2), got {pts.shape}")
        validate_anchor_geometry(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __getattr__(self, name: str) -> np.ndarray:
        if name in ANCHOR_NAMES:
            return self.points[ANCHOR_NAMES.index(name)]
        raise AttributeError(name)


def validate_anchor_geometry(pts: np.ndarray) -> None:
    """Check the six anchors are distinct, chin below nose, left jaw left of right jaw."""
    for i in range(6):
        for j in range(i + 1, 6):
            if np.array_equal(pts[i], pts[j]):
                raise ValidationError(
                    f"implausible landmarks: anchors {ANCHOR_NAMES[i]} and {ANCHOR_NAMES[j]} coincide"
                )
    if not pts[1, 1] > pts[0, 1]:
        raise ValidationError("implausible landmarks: chin tip is not below the nose bridge")
    if not pts[2, 0] < pts[3, 0]:
        raise ValidationError("implausible landmarks: upper-left jaw is not left of upper-right jaw")


@dataclass(frozen=True)
class TiltBin:
    bin: Bin
    angle_deg: float


def bin_for_angle(angle_deg: float) -> Bin:
    if angle_deg < -TILT_THRESHOLD_DEG:
        return Bin.LEFT
    if angle_deg > TILT_THRESHOLD_DEG:
        return Bin.RIGHT
    return Bin.FRONT


def estimate_tilt(lm: FaceLandmarks) -> TiltBin:
    """Signed angle of the nose-bridge -> chin vector against image vertical.

    Positive when the chin sits at larger x than the top of the nose bridge.
    """
    dx, dy = lm.points[CHIN_TIP] - lm.points[NOSE_BRIDGE_TOP]
    if dx == 0.0 and dy == 0.0:
        raise GeometryError("nose-bridge and chin landmarks coincide; tilt undefined")
    angle = math.degrees(math.atan2(dx, dy))
    return TiltBin(bin_for_angle(angle), angle)


def extract_anchors(lm: FaceLandmarks) -> FaceAnchors:
    return FaceAnchors(lm.points[list(ANCHOR_INDICES)])


def _face_from_json(entry: object, index: int, image_id: str) -> FaceLandmarks:
    if not isinstance(entry, dict) or "points" not in entry:
        raise LandmarkParseError(f"face {index}: entry must be an object with 'points'")
    points = entry["points"]
    if not isinstance(points, list):
        raise LandmarkParseError(f"face {index}: 'points' must be a list")
    if len(points) != N_POINTS:
        raise ValidationError(f"face {index}: expected {N_POINTS} points, got {len(points)}")
    try:
        pts = np.array(points, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise LandmarkParseError(f"face {index}: points must be [x, y] number pairs") from exc
    if pts.shape != (N_POINTS, 2):
        raise LandmarkParseError(f"face {index}: points must be [x, y] number pairs")
    try:
        return FaceLandmarks(pts, image_id, entry.get("bbox"))
    except ValidationError as exc:
        raise ValidationError(f"face {index}: {exc}") from exc


def parse_landmarks(text: str, source: str = "<string>") -> list[FaceLandmarks]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        lines = text.splitlines()
        line = lines[exc.lineno - 1] if 0 < exc.lineno <= len(lines) else ""
        raise LandmarkParseError(
            f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line}"
        ) from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("faces", None), list):
        raise LandmarkParseError(f"{source}: expected an object with a 'faces' list")
    image_id = str(doc.get("image", ""))
    return [_face_from_json(f, i, image_id) for i, f in enumerate(doc["faces"])]


def load_landmarks(path: str | Path) -> list[FaceLandmarks]:
    path = Path(path)
    return parse_landmarks(path.read_text(encoding="utf-8"), str(path))


def dump_landmarks(faces: Sequence[FaceLandmarks], image: str = "") -> str:
    if not image and faces:
        image = faces[0].image_id
    doc = {
        "image": image,
        "faces": [
            {"bbox": list(f.bbox), "points": f.points.tolist()} for f in faces
        ],
    }
    return json.dumps(doc)


def save_landmarks(path: str | Path, faces: Sequence[FaceLandmarks], image: str = "") -> None:
    Path(path).write_text(dump_landmarks(faces, image), encoding="utf-8")


def mean_face_shape() -> np.ndarray:
    """Frontal reference layout of the 68 points in face units.

    Origin at the face centre, y down, jaw width 1.8 and brow-to-chin height
    about 1.55. Used for synthetic faces and for placing template anchors.
    """
    pts = np.zeros((N_POINTS, 2))
    phi = np.radians(np.linspace(-90.0, 90.0, 17))
    pts[0:17] = np.c_[0.9 * np.sin(phi), np.cos(phi)]
    brow_x = np.linspace(-0.7, -0.15, 5)
    pts[17:22] = np.c_[brow_x, -0.55 - 0.06 * np.sin(np.linspace(0, np.pi, 5))]
    pts[22:27] = np.c_[-brow_x[::-1], pts[17:22, 1][::-1]]
    pts[27:31] = np.c_[np.zeros(4), np.linspace(-0.35, 0.1, 4)]
    pts[31:36] = np.c_[np.linspace(-0.15, 0.15, 5), 0.2 + 0.03 * np.cos(np.linspace(-1.2, 1.2, 5))]
    for start, cx in ((36, -0.4), (42, 0.4)):
        t = np.linspace(0, 2 * np.pi, 6, endpoint=False) + np.pi
        pts[start:start + 6] = np.c_[cx + 0.13 * np.cos(t), -0.35 + 0.05 * np.sin(t)]
    t = np.linspace(0, 2 * np.pi, 12, endpoint=False) + np.pi
    pts[48:60] = np.c_[0.35 * np.cos(t), 0.5 + 0.12 * np.sin(t)]
    t = np.linspace(0, 2 * np.pi, 8, endpoint=False) + np.pi
    pts[60:68] = np.c_[0.25 * np.cos(t), 0.5 + 0.05 * np.sin(t)]
    return pts


def rotation_matrix(theta_deg: float, center: Sequence[float] = (0.0, 0.0)) -> np.ndarray:
    """3x3 rotation about `center` that increases `estimate_tilt` angles by theta.

    In image coordinates (y down) this turns the +y axis toward +x.
    """
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    cx, cy = center
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    shift = np.array([[1.0, 0.0, cx], [0.0, 1.0, cy], [0.0, 0.0, 1.0]])
    unshift = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    return shift @ rot @ unshift


def synthetic_face(
    center: Sequence[float],
    scale: float,
    roll_deg: float = 0.0,
    image_id: str = "",
    jitter: float = 0.0,
    rng: np.random.Generator | None = None,
) -> FaceLandmarks:
    """Place the mean face shape at `center` with `scale` pixels per face unit."""
    pts = mean_face_shape() * scale
    if jitter:
        rng = rng or np.random.default_rng(0)
        pts = pts + rng.normal(0.0, jitter, pts.shape)
    pts = pts + np.asarray(center, dtype=np.float64)
    face = FaceLandmarks(pts, image_id)
    if roll_deg:
        face = face.transformed(rotation_matrix(roll_deg, center))
    return FaceLandmarks(face.points, image_id)

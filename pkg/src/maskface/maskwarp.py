"""Mask template library and single-face rendering.

Rendering one mask is: pick the template for (mask type, tilt bin), fit a
projective transform from the template's six anchors to the face's six
anchors, inverse-warp the RGBA template into image space, and composite it
over the face with source-over alpha.

All rasters are uint8 numpy arrays shaped (height, width, channels). Pixel
(row i, column j) sits at point (x=j, y=i).
"""

from __future__ import annotations

import enum
import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .errors import GeometryError, LibraryError, ValidationError
from .landmark import Bin, FaceAnchors, TiltBin, validate_anchor_geometry

log = logging.getLogger(__name__)

MAX_RESIDUAL_PX = 4.0
_DET_EPS = 1e-12
# relative tolerance for collinearity of three anchors (triangle area / scale^2)
_COLLINEAR_TOL = 1e-6
# rank test on the DLT design matrix (ratio of 8th to 1st singular value)
_RANK_TOL = 1e-10
# sample coordinates this close to an integer are snapped onto it
_SNAP = 1e-9

LUMA = np.array([0.299, 0.587, 0.114])


class MaskType(str, enum.Enum):
    SURGICAL_GREEN = "surgical_green"
    SURGICAL_BLUE = "surgical_blue"
    N95 = "n95"
    CLOTH = "cloth"
    GAS = "gas"

    @classmethod
    def parse(cls, value: str | MaskType) -> MaskType:
        if isinstance(value, MaskType):
            return value
        key = str(value).strip().lower().replace("-", "_")
        for member in cls:
            if key in (member.value, member.name.lower()):
                return member
        valid = ", ".join(m.value for m in cls)
        raise LibraryError(f"unknown mask type {value!r}; valid types: {valid}")


@dataclass(frozen=True, eq=False)
class MaskTemplate:
    mask_type: MaskType
    bin: Bin
    image: np.ndarray  # (h, w, 4) uint8 RGBA
    anchors: np.ndarray  # (6, 2) template-space points, FaceAnchors order

    def __post_init__(self) -> None:
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 4 or img.dtype != np.uint8:
            raise ValidationError(f"template image must be (h, w, 4) uint8, got {img.shape} {img.dtype}")
        h, w = img.shape[:2]
        if h == 0 or w == 0:
            raise ValidationError("template image has zero size")
        anchors = np.array(self.anchors, dtype=np.float64)
        if anchors.shape != (6, 2):
            raise ValidationError(f"template anchors must be (6, 2), got {anchors.shape}")
        if (anchors < 0).any() or (anchors[:, 0] > w - 1).any() or (anchors[:, 1] > h - 1).any():
            raise ValidationError("template anchors must lie inside the template image")
        validate_anchor_geometry(anchors)
        if not (img[..., 3] > 0).any():
            raise ValidationError("template alpha channel is empty")
        object.__setattr__(self, "mask_type", MaskType.parse(self.mask_type))
        object.__setattr__(self, "bin", Bin(self.bin))
        object.__setattr__(self, "anchors", anchors)

    @property
    def size(self) -> tuple[int, int]:
        return self.image.shape[1], self.image.shape[0]

    @property
    def silhouette(self) -> np.ndarray:
        return self.image[..., 3] > 0


@dataclass(frozen=True)
class MaskLibrary:
    templates: Mapping[tuple[MaskType, Bin], MaskTemplate]
    patterns: Mapping[str, np.ndarray] = field(default_factory=dict)
    colors: Mapping[str, tuple[int, int, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        templates = {(MaskType.parse(t), Bin(b)): tpl for (t, b), tpl in self.templates.items()}
        types = {t for t, _ in templates}
        missing = [(t.value, b.value) for t in sorted(types, key=list(MaskType).index) for b in Bin
                   if (t, b) not in templates]
        if missing:
            raise LibraryError(f"library is missing templates for {missing}")
        object.__setattr__(self, "templates", MappingProxyType(templates))
        object.__setattr__(self, "patterns", MappingProxyType(dict(self.patterns)))
        object.__setattr__(self, "colors", MappingProxyType(dict(self.colors)))

    def __reduce__(self):
        return (MaskLibrary, (dict(self.templates), dict(self.patterns), dict(self.colors)))

    @property
    def mask_types(self) -> list[MaskType]:
        return [t for t in MaskType if (t, Bin.FRONT) in self.templates]

    def pattern(self, name: str) -> np.ndarray:
        try:
            return self.patterns[name]
        except KeyError:
            raise LibraryError(f"unknown pattern {name!r}; {len(self.patterns)} patterns available") from None

    def color(self, name_or_hex: str) -> tuple[int, int, int]:
        if name_or_hex in self.colors:
            return self.colors[name_or_hex]
        try:
            return parse_hex_color(name_or_hex)
        except ValueError:
            raise LibraryError(f"unknown color {name_or_hex!r}; use a name from the library or #rrggbb") from None


def parse_hex_color(text: str) -> tuple[int, int, int]:
    s = text.strip().lstrip("#")
    if len(s) != 6:
        raise ValueError(f"not a #rrggbb color: {text!r}")
    return int(s[0:2], 16), int(s[2:4], 16), int(s[4:6], 16)


def select_template(lib: MaskLibrary, mask_type: str | MaskType, tilt: TiltBin | Bin) -> MaskTemplate:
    mt = MaskType.parse(mask_type)
    b = tilt.bin if isinstance(tilt, TiltBin) else Bin(tilt)
    try:
        return lib.templates[(mt, b)]
    except KeyError:
        valid = ", ".join(t.value for t in lib.mask_types)
        raise LibraryError(f"no template for {mt.value}/{b.value}; library types: {valid}") from None


# --------------------------------------------------------------------------- transforms


@dataclass(frozen=True, eq=False)
class Transform2D:
    matrix: np.ndarray  # 3x3, [2, 2] == 1

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValidationError(f"transform must be 3x3, got {m.shape}")
        if abs(m[2, 2]) < _DET_EPS:
            raise GeometryError("transform cannot be normalized: bottom-right entry is zero")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= _DET_EPS:
            raise GeometryError("transform is singular")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> Transform2D:
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> Transform2D:
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]))

    @classmethod
    def scaling(cls, sx: float, sy: float | None = None) -> Transform2D:
        return cls(np.diag([sx, sx if sy is None else sy, 1.0]))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        hom = np.c_[pts, np.ones(len(pts))] @ self.matrix.T
        return hom[:, :2] / hom[:, 2:3]

    def inverse(self) -> Transform2D:
        return Transform2D(np.linalg.inv(self.matrix))


@dataclass(frozen=True)
class TransformFit:
    transform: Transform2D
    rms_residual: float
    poor_fit: bool
    model: str  # "projective" or "affine"


def hartley_normalization(points: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin and the mean distance to sqrt(2)."""
    centroid = points.mean(axis=0)
    mean_dist = np.linalg.norm(points - centroid, axis=1).mean()
    if mean_dist == 0.0:
        raise GeometryError("all points coincide")
    s = np.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def dlt_matrix(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """The 2n x 9 system A h = 0 for dst ~ H src."""
    n = len(src)
    a = np.zeros((2 * n, 9))
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u]
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v]
    return a


def check_no_collinear_triples(points: np.ndarray, tol: float = _COLLINEAR_TOL) -> None:
    centered = points - points.mean(axis=0)
    scale2 = float((centered ** 2).sum(axis=1).mean())
    if scale2 == 0.0:
        raise GeometryError("all points coincide")
    for i, j, k in itertools.combinations(range(len(points)), 3):
        d1, d2 = points[j] - points[i], points[k] - points[i]
        if abs(d1[0] * d2[1] - d1[1] * d2[0]) <= tol * scale2:
            raise GeometryError(f"points {i}, {j}, {k} are collinear")


def _as_points(p: FaceAnchors | np.ndarray | Sequence) -> np.ndarray:
    if isinstance(p, FaceAnchors):
        return np.asarray(p.points, dtype=np.float64)
    return np.asarray(p, dtype=np.float64)


def _fit_affine(src_n: np.ndarray, dst_n: np.ndarray) -> np.ndarray:
    n = len(src_n)
    a = np.zeros((2 * n, 6))
    a[0::2, 0:2], a[0::2, 2] = src_n, 1.0
    a[1::2, 3:5], a[1::2, 5] = src_n, 1.0
    params, _, rank, _ = np.linalg.lstsq(a, dst_n.reshape(-1), rcond=None)
    if rank < 6:
        raise GeometryError("correspondences are degenerate for both projective and affine fits")
    return np.vstack([params.reshape(2, 3), [0.0, 0.0, 1.0]])


def estimate_transform(
    src: FaceAnchors | np.ndarray,
    dst: FaceAnchors | np.ndarray,
    max_residual_px: float = MAX_RESIDUAL_PX,
) -> TransformFit:
    """Least-squares homography mapping `src` onto `dst` by normalized DLT.

    Falls back to an affine fit when the DLT system has a null space of
    dimension above one. The RMS reprojection residual (pixels, measured in
    `dst` space) is returned with the matrix; fits above `max_residual_px`
    are flagged, not rejected.
    """
    src_p, dst_p = _as_points(src), _as_points(dst)
    if src_p.shape != dst_p.shape or src_p.ndim != 2 or src_p.shape[1] != 2:
        raise ValidationError(f"point sets must both be (n, 2), got {src_p.shape} and {dst_p.shape}")
    if len(src_p) < 4:
        raise ValidationError(f"need at least 4 correspondences, got {len(src_p)}")
    check_no_collinear_triples(src_p)

    t_src, t_dst = hartley_normalization(src_p), hartley_normalization(dst_p)
    src_n = (np.c_[src_p, np.ones(len(src_p))] @ t_src.T)[:, :2]
    dst_n = (np.c_[dst_p, np.ones(len(dst_p))] @ t_dst.T)[:, :2]

    _, s, vt = np.linalg.svd(dlt_matrix(src_n, dst_n))
    if s[7] <= _RANK_TOL * s[0]:
        log.debug("DLT system rank-deficient (s8/s1=%.3g); using affine fit", s[7] / s[0])
        h_n, model = _fit_affine(src_n, dst_n), "affine"
    else:
        h_n, model = vt[-1].reshape(3, 3), "projective"

    h = np.linalg.inv(t_dst) @ h_n @ t_src
    transform = Transform2D(h)
    residual = float(np.sqrt(((transform.apply(src_p) - dst_p) ** 2).sum(axis=1).mean()))
    return TransformFit(transform, residual, residual > max_residual_px, model)


# --------------------------------------------------------------------------- rendering


def _snap(coords: np.ndarray) -> np.ndarray:
    nearest = np.rint(coords)
    return np.where(np.abs(coords - nearest) < _SNAP, nearest, coords)


def warp_mask(tpl: MaskTemplate | np.ndarray, transform: Transform2D, out_size: tuple[int, int]) -> np.ndarray:
    """Inverse-map the template into an RGBA raster of size `out_size` = (w, h).

    Each output pixel samples the template at T^-1 (x, y) with bilinear
    interpolation on all four channels. Samples outside the template are
    fully transparent.
    """
    src = tpl.image if isinstance(tpl, MaskTemplate) else np.asarray(tpl)
    out_w, out_h = (int(v) for v in out_size)
    if out_w <= 0 or out_h <= 0:
        raise ValidationError(f"output size must be positive, got {out_size}")
    th, tw = src.shape[:2]
    inv = np.linalg.inv(transform.matrix)
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    hx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    hy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    hw = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    ahead = hw > 0
    safe_w = np.where(ahead, hw, 1.0)
    u, v = _snap(hx / safe_w), _snap(hy / safe_w)
    valid = ahead & (u >= 0) & (u <= tw - 1) & (v >= 0) & (v <= th - 1)

    u, v = np.where(valid, u, 0.0), np.where(valid, v, 0.0)
    x0 = np.floor(u).astype(np.intp)
    y0 = np.floor(v).astype(np.intp)
    x1 = np.minimum(x0 + 1, tw - 1)
    y1 = np.minimum(y0 + 1, th - 1)
    fx = (u - x0)[..., None]
    fy = (v - y0)[..., None]
    img = src.astype(np.float64)
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    sample = top * (1.0 - fy) + bottom * fy
    out = np.clip(np.rint(sample), 0, 255).astype(np.uint8)
    out[~valid] = 0
    return out


def _tile(pattern: np.ndarray, h: int, w: int) -> np.ndarray:
    ph, pw = pattern.shape[:2]
    reps = (-(-h // ph), -(-w // pw), 1)
    return np.tile(pattern[..., :3], reps)[:h, :w]


def _shade_blend(tpl: MaskTemplate, layer: np.ndarray, intensity: float) -> MaskTemplate:
    image = tpl.image
    base = image[..., :3].astype(np.float64)
    lum = base @ LUMA
    shaded = layer.astype(np.float64) * (lum / 255.0)[..., None]
    mixed = (1.0 - intensity) * base + intensity * shaded
    inside = image[..., 3] > 0
    out = image.copy()
    out[..., :3][inside] = np.clip(np.rint(mixed[inside]), 0, 255).astype(np.uint8)
    return replace(tpl, image=out)


def apply_pattern(tpl: MaskTemplate, pattern: np.ndarray, intensity: float = 1.0) -> MaskTemplate:
    """Blend a tiled pattern into the mask, modulated by the mask's own luminance.

    The pattern is tiled from the template origin. Pixels outside the
    silhouette and the alpha channel are left untouched.
    """
    if not 0.0 <= intensity <= 1.0:
        raise ValidationError(f"intensity must be in [0, 1], got {intensity}")
    pattern = np.asarray(pattern)
    if pattern.ndim != 3 or pattern.shape[2] < 3 or 0 in pattern.shape[:2]:
        raise ValidationError(f"pattern must be a non-empty (h, w, 3) raster, got {pattern.shape}")
    h, w = tpl.image.shape[:2]
    return _shade_blend(tpl, _tile(pattern, h, w), intensity)


def apply_color(tpl: MaskTemplate, rgb: Sequence[int]) -> MaskTemplate:
    rgb = tuple(int(c) for c in rgb)
    if len(rgb) != 3 or not all(0 <= c <= 255 for c in rgb):
        raise ValidationError(f"color must be three values in [0, 255], got {rgb}")
    h, w = tpl.image.shape[:2]
    solid = np.broadcast_to(np.array(rgb, dtype=np.uint8), (h, w, 3))
    return _shade_blend(tpl, solid, 1.0)


def blend(face: np.ndarray, warped_mask: np.ndarray) -> np.ndarray:
    """Source-over composite: out = a * mask + (1 - a) * face."""
    face = np.asarray(face)
    warped_mask = np.asarray(warped_mask)
    if face.shape[:2] != warped_mask.shape[:2]:
        raise ValidationError(f"face {face.shape[:2]} and mask {warped_mask.shape[:2]} sizes differ")
    if face.ndim != 3 or face.shape[2] != 3 or warped_mask.shape[2] != 4:
        raise ValidationError("face must be RGB and mask RGBA")
    alpha = warped_mask[..., 3:4].astype(np.float64) / 255.0
    mixed = alpha * warped_mask[..., :3] + (1.0 - alpha) * face
    out = np.clip(np.rint(mixed), 0, 255).astype(np.uint8)
    untouched = warped_mask[..., 3] == 0
    out[untouched] = face[untouched]
    return out


@dataclass(frozen=True)
class RenderResult:
    image: np.ndarray
    fit: TransformFit
    template: MaskTemplate


def render_face(
    image: np.ndarray,
    anchors: FaceAnchors,
    tpl: MaskTemplate,
    max_residual_px: float = MAX_RESIDUAL_PX,
) -> RenderResult:
    """Fit, warp and composite one template onto one face.

    A poor fit leaves the image unchanged; the caller decides what to record.
    """
    fit = estimate_transform(tpl.anchors, anchors, max_residual_px)
    if fit.poor_fit:
        return RenderResult(image, fit, tpl)
    h, w = image.shape[:2]
    warped = warp_mask(tpl, fit.transform, (w, h))
    return RenderResult(blend(image, warped), fit, tpl)


# --------------------------------------------------------------------------- library I/O

MANIFEST_NAME = "library.json"


def load_library(root: str | Path) -> MaskLibrary:
    """Read a library directory: `library.json` plus the PNG files it names."""
    root = Path(root)
    doc = json.loads((root / MANIFEST_NAME).read_text(encoding="utf-8"))
    templates = {}
    for entry in doc["templates"]:
        image = np.asarray(Image.open(root / entry["file"]).convert("RGBA"))
        tpl = MaskTemplate(entry["type"], entry["bin"], image, np.asarray(entry["anchors"], dtype=np.float64))
        templates[(tpl.mask_type, tpl.bin)] = tpl
    patterns = {
        p["name"]: np.asarray(Image.open(root / p["file"]).convert("RGB")) for p in doc.get("patterns", [])
    }
    colors = {name: parse_hex_color(hexval) for name, hexval in doc.get("colors", {}).items()}
    return MaskLibrary(templates, patterns, colors)


def save_library(lib: MaskLibrary, root: str | Path) -> None:
    root = Path(root)
    (root / "templates").mkdir(parents=True, exist_ok=True)
    (root / "patterns").mkdir(parents=True, exist_ok=True)
    entries = []
    for (mt, b), tpl in sorted(lib.templates.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
        rel = f"templates/{mt.value}_{b.value.lower()}.png"
        Image.fromarray(tpl.image, "RGBA").save(root / rel)
        entries.append({"type": mt.value, "bin": b.value, "file": rel, "anchors": tpl.anchors.tolist()})
    patterns = []
    for name in sorted(lib.patterns):
        rel = f"patterns/{name}.png"
        Image.fromarray(np.ascontiguousarray(lib.patterns[name][..., :3]), "RGB").save(root / rel)
        patterns.append({"name": name, "file": rel})
    colors = {name: "#%02x%02x%02x" % rgb for name, rgb in sorted(lib.colors.items())}
    doc = {"templates": entries, "patterns": patterns, "colors": colors}
    (root / MANIFEST_NAME).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def packaged_assets_dir() -> Path:
    return Path(__file__).resolve().parent / "assets"


_DEFAULT: MaskLibrary | None = None


def default_library() -> MaskLibrary:
    """The shipped library: 5 mask types x 3 tilt bins, 24 patterns, named colors."""
    global _DEFAULT
    if _DEFAULT is None:
        root = packaged_assets_dir()
        if (root / MANIFEST_NAME).exists():
            _DEFAULT = load_library(root)
        else:
            from .assets import build_library

            _DEFAULT = build_library()
    return _DEFAULT

"""Procedural generator for the shipped mask asset set.

Templates are drawn around the mean face shape, rolled to a representative
angle per tilt bin, so template anchors sit exactly where a face's anchors
would. Run ``python -m maskface.assets <dir>`` to regenerate the PNG files.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .landmark import ANCHOR_INDICES, Bin, mean_face_shape, rotation_matrix
from .maskwarp import MaskLibrary, MaskTemplate, MaskType, save_library

PX_PER_UNIT = 100.0
MARGIN_PX = 6
SUPERSAMPLE = 4
BIN_ROLL_DEG = {Bin.LEFT: -25.0, Bin.FRONT: 0.0, Bin.RIGHT: 25.0}

BASE_COLORS = {
    MaskType.SURGICAL_GREEN: (148, 204, 178),
    MaskType.SURGICAL_BLUE: (140, 184, 226),
    MaskType.N95: (236, 236, 230),
    MaskType.CLOTH: (70, 72, 84),
    MaskType.GAS: (88, 96, 80),
}

COLORS = {
    "white": (255, 255, 255),
    "black": (0, 0, 0),
    "red": (200, 30, 40),
    "navy": (20, 40, 110),
    "pink": (240, 150, 180),
    "sky": (130, 190, 240),
    "olive": (120, 130, 50),
    "gray": (128, 128, 128),
    "beige": (225, 205, 170),
    "teal": (0, 128, 128),
}


def _silhouette(mask_type: MaskType) -> np.ndarray:
    """Mask outline in face units, clockwise from the left cheek."""
    face = mean_face_shape()
    jaw = face[1:16].copy()
    jaw[:, 1] = jaw[:, 1] * 1.06 + 0.02
    jaw[:, 0] *= 1.02
    if mask_type is MaskType.GAS:
        top = [(-0.7, -0.45), (-0.3, -0.62), (0.0, -0.6), (0.3, -0.62), (0.7, -0.45)]
    elif mask_type is MaskType.N95:
        top = [(-0.55, -0.12), (-0.2, -0.3), (0.0, -0.32), (0.2, -0.3), (0.55, -0.12)]
    else:
        top = [(-0.6, -0.14), (-0.25, -0.22), (0.0, -0.26), (0.25, -0.22), (0.6, -0.14)]
    return np.vstack([[jaw[0]], top, jaw[::-1][:-1]])


def _shading(mask_type: MaskType, fu: np.ndarray, fv: np.ndarray) -> np.ndarray:
    """Multiplicative shading in face units (fu right, fv down)."""
    shade = 1.0 - 0.18 * np.clip(np.abs(fu) - 0.3, 0.0, None) - 0.05 * np.clip(fv, 0.0, None)
    if mask_type in (MaskType.SURGICAL_GREEN, MaskType.SURGICAL_BLUE):
        shade = shade - 0.10 * (np.cos(fv * 2 * np.pi / 0.22) > 0.92)
    elif mask_type is MaskType.N95:
        shade = shade - 0.12 * (np.abs(fu) < 0.012) - 0.15 * ((fu ** 2 + (fv - 0.45) ** 2) < 0.09 ** 2)
    elif mask_type is MaskType.CLOTH:
        shade = shade + 0.06 * np.sin(fu * 90.0) * np.sin(fv * 90.0)
    elif mask_type is MaskType.GAS:
        for cx in (-0.42, 0.42):
            shade = shade - 0.35 * (((fu - cx) ** 2 + (fv - 0.55) ** 2) < 0.2 ** 2)
    return np.clip(shade, 0.0, 1.2)


def build_template(mask_type: MaskType, b: Bin) -> MaskTemplate:
    roll = rotation_matrix(BIN_ROLL_DEG[b])
    outline = _silhouette(mask_type)
    anchors = mean_face_shape()[list(ANCHOR_INDICES)]

    def to_rolled(p: np.ndarray) -> np.ndarray:
        return (np.c_[p, np.ones(len(p))] @ roll.T)[:, :2]

    outline_r, anchors_r = to_rolled(outline), to_rolled(anchors)
    lo = np.minimum(outline_r.min(axis=0), anchors_r.min(axis=0))
    hi = np.maximum(outline_r.max(axis=0), anchors_r.max(axis=0))
    offset = MARGIN_PX - lo * PX_PER_UNIT
    w, h = (np.ceil((hi - lo) * PX_PER_UNIT) + 2 * MARGIN_PX).astype(int)

    big = Image.new("L", (w * SUPERSAMPLE, h * SUPERSAMPLE), 0)
    poly = (outline_r * PX_PER_UNIT + offset + 0.5) * SUPERSAMPLE - 0.5
    ImageDraw.Draw(big).polygon([tuple(p) for p in poly], fill=255)
    alpha = np.asarray(big.resize((w, h), Image.BOX))

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    rolled = np.stack([(xs - offset[0]) / PX_PER_UNIT, (ys - offset[1]) / PX_PER_UNIT], axis=-1)
    unroll = np.linalg.inv(roll)
    fu = unroll[0, 0] * rolled[..., 0] + unroll[0, 1] * rolled[..., 1]
    fv = unroll[1, 0] * rolled[..., 0] + unroll[1, 1] * rolled[..., 1]
    shade = _shading(mask_type, fu, fv)
    rgb = np.clip(np.rint(np.array(BASE_COLORS[mask_type]) * shade[..., None]), 0, 255)

    image = np.dstack([rgb, alpha]).astype(np.uint8)
    return MaskTemplate(mask_type, b, image, anchors_r * PX_PER_UNIT + offset)


def _pattern(kind: str, fg: tuple, bg: tuple, size: int = 32) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    if kind == "hstripes":
        on = (ys // 4) % 2 == 0
    elif kind == "vstripes":
        on = (xs // 4) % 2 == 0
    elif kind == "diagonal":
        on = ((xs + ys) // 4) % 2 == 0
    elif kind == "checks":
        on = ((xs // 8) + (ys // 8)) % 2 == 0
    elif kind == "dots":
        on = ((xs % 8 - 3.5) ** 2 + (ys % 8 - 3.5) ** 2) < 5.0
    elif kind == "plaid":
        on = ((xs // 4) % 4 == 0) | ((ys // 4) % 4 == 0)
    elif kind == "zigzag":
        on = np.abs((xs % 16) - 8) == (ys % 8)
    else:
        raise ValueError(kind)
    return np.where(on[..., None], np.array(fg), np.array(bg)).astype(np.uint8)


PATTERN_SPECS = [
    ("hstripes", (200, 30, 40), (255, 255, 255)),
    ("hstripes", (20, 40, 110), (255, 255, 255)),
    ("hstripes", (0, 0, 0), (230, 200, 60)),
    ("hstripes", (0, 128, 128), (240, 230, 210)),
    ("vstripes", (200, 30, 40), (255, 255, 255)),
    ("vstripes", (20, 40, 110), (255, 255, 255)),
    ("vstripes", (0, 0, 0), (230, 200, 60)),
    ("vstripes", (0, 128, 128), (240, 230, 210)),
    ("diagonal", (240, 150, 180), (255, 255, 255)),
    ("diagonal", (120, 130, 50), (225, 205, 170)),
    ("diagonal", (0, 0, 0), (255, 255, 255)),
    ("diagonal", (130, 190, 240), (20, 40, 110)),
    ("checks", (0, 0, 0), (255, 255, 255)),
    ("checks", (200, 30, 40), (0, 0, 0)),
    ("checks", (130, 190, 240), (255, 255, 255)),
    ("checks", (120, 130, 50), (60, 60, 40)),
    ("dots", (255, 255, 255), (20, 40, 110)),
    ("dots", (200, 30, 40), (255, 255, 255)),
    ("dots", (0, 0, 0), (240, 150, 180)),
    ("dots", (230, 200, 60), (0, 128, 128)),
    ("plaid", (200, 30, 40), (240, 230, 210)),
    ("plaid", (20, 40, 110), (130, 190, 240)),
    ("zigzag", (0, 0, 0), (255, 255, 255)),
    ("zigzag", (240, 150, 180), (20, 40, 110)),
]


def build_patterns() -> dict[str, np.ndarray]:
    counts: dict[str, int] = {}
    out = {}
    for kind, fg, bg in PATTERN_SPECS:
        counts[kind] = counts.get(kind, 0) + 1
        out[f"{kind}_{counts[kind]}"] = _pattern(kind, fg, bg)
    return out


def build_library() -> MaskLibrary:
    templates = {(t, b): build_template(t, b) for t in MaskType for b in Bin}
    return MaskLibrary(templates, build_patterns(), COLORS)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    root = Path(argv[0]) if argv else Path(__file__).resolve().parent / "assets"
    save_library(build_library(), root)
    print(root)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

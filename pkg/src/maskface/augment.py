"""Bulk conversion of a face-image tree into a masked-face dataset.

Every image gets its own SplitMix64 stream seeded from (policy seed, relative
path), so the output is the same whatever the worker count or scheduling.
Per face the stream is consumed in a fixed order, always three draws:

    1. mask type index  = below(len(candidate_types))
    2. pattern gate     = uniform()            (pattern used iff gate < pattern_probability)
    3. pattern index    = below(len(patterns))  (over pattern names sorted)

Landmarks come from a sidecar JSON next to each image (``<stem>.json``) or
from an optional detector callable.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import logging
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import GeometryError, ValidationError
from .landmark import FaceLandmarks, estimate_tilt, extract_anchors, load_landmarks
from .maskwarp import (
    MAX_RESIDUAL_PX,
    MaskLibrary,
    MaskType,
    apply_pattern,
    render_face,
    select_template,
)

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
MANIFEST_NAME = "manifest.csv"
MANIFEST_COLUMNS = (
    "source_path",
    "output_path",
    "status",
    "mask_type",
    "pattern",
    "tilt_bin",
    "fit_residual_px",
    "seed_used",
)

Detector = Callable[[np.ndarray], Sequence[FaceLandmarks]]


class SplitMix64:
    """Steele/Lea/Flood SplitMix64 generator over Python ints."""

    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        return mix64(self.state)

    def below(self, n: int) -> int:
        """Integer in [0, n) by multiply-high of a 64-bit draw."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() * n) >> 64

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def path_hash(rel_path: str) -> int:
    return int.from_bytes(hashlib.blake2b(rel_path.encode("utf-8"), digest_size=8).digest(), "little")


def stream_seed(seed: int, rel_path: str) -> int:
    return mix64((seed & MASK64) ^ path_hash(rel_path))


class Status(str, enum.Enum):
    MASKED = "MASKED"
    ORIGINAL_KEPT = "ORIGINAL_KEPT"
    SKIPPED_NO_FACE = "SKIPPED_NO_FACE"
    SKIPPED_POOR_FIT = "SKIPPED_POOR_FIT"
    SKIPPED_UNREADABLE = "SKIPPED_UNREADABLE"


DEFAULT_CANDIDATES = (MaskType.CLOTH, MaskType.SURGICAL_GREEN, MaskType.SURGICAL_BLUE, MaskType.N95)


@dataclass(frozen=True)
class MaskPolicy:
    candidate_types: tuple[MaskType, ...] = DEFAULT_CANDIDATES
    keep_original: bool = True
    pattern_probability: float = 0.0
    seed: int = 0
    pattern_intensity: float = 0.85
    max_residual_px: float = MAX_RESIDUAL_PX

    def __post_init__(self) -> None:
        types = tuple(MaskType.parse(t) for t in self.candidate_types)
        if not types:
            raise ValidationError("candidate_types must not be empty")
        if not 0.0 <= self.pattern_probability <= 1.0:
            raise ValidationError("pattern_probability must be in [0, 1]")
        if not 0.0 <= self.pattern_intensity <= 1.0:
            raise ValidationError("pattern_intensity must be in [0, 1]")
        if not 0 <= self.seed <= MASK64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "candidate_types", types)


@dataclass(frozen=True)
class FaceDraw:
    mask_type: MaskType
    pattern: str | None


def draw_face(rng: SplitMix64, policy: MaskPolicy, pattern_names: Sequence[str]) -> FaceDraw:
    mask_type = policy.candidate_types[rng.below(len(policy.candidate_types))]
    gate = rng.uniform()
    index = rng.below(len(pattern_names)) if pattern_names else None
    pattern = None
    if index is not None and gate < policy.pattern_probability:
        pattern = pattern_names[index]
    return FaceDraw(mask_type, pattern)


@dataclass(frozen=True)
class FaceRecord:
    status: Status
    mask_type: MaskType | None = None
    pattern: str | None = None
    tilt_bin: str | None = None
    fit_residual_px: float | None = None

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "mask_type": self.mask_type.value if self.mask_type else None,
            "pattern": self.pattern,
            "tilt_bin": self.tilt_bin,
            "fit_residual_px": self.fit_residual_px,
        }


def mask_image(
    image: np.ndarray,
    landmarks: Sequence[FaceLandmarks],
    lib: MaskLibrary,
    policy: MaskPolicy,
    rng: SplitMix64,
    overrides: FaceDraw | None = None,
) -> tuple[np.ndarray, list[FaceRecord]]:
    """Mask every face in `image` independently.

    `overrides` pins the mask type and pattern for all faces (single-image
    CLI use); the stream is still consumed so records stay comparable.
    """
    if not landmarks:
        return image, [FaceRecord(Status.SKIPPED_NO_FACE)]
    pattern_names = sorted(lib.patterns)
    out = image
    records = []
    for face in landmarks:
        draw = draw_face(rng, policy, pattern_names)
        if overrides is not None:
            draw = overrides
        try:
            tilt = estimate_tilt(face)
            anchors = extract_anchors(face)
        except (GeometryError, ValidationError) as exc:
            log.warning("face skipped: %s", exc)
            records.append(FaceRecord(Status.SKIPPED_POOR_FIT, draw.mask_type, draw.pattern))
            continue
        tpl = select_template(lib, draw.mask_type, tilt)
        if draw.pattern is not None:
            tpl = apply_pattern(tpl, lib.pattern(draw.pattern), policy.pattern_intensity)
        try:
            result = render_face(out, anchors, tpl, policy.max_residual_px)
        except GeometryError as exc:
            log.warning("face skipped: %s", exc)
            records.append(FaceRecord(Status.SKIPPED_POOR_FIT, draw.mask_type, draw.pattern, tilt.bin.value))
            continue
        status = Status.SKIPPED_POOR_FIT if result.fit.poor_fit else Status.MASKED
        out = result.image
        records.append(
            FaceRecord(status, draw.mask_type, draw.pattern, tilt.bin.value, result.fit.rms_residual)
        )
    return out, records


def masked_name(stem: str, suffix: str, records: Iterable[FaceRecord]) -> str:
    """`<stem>_<masktype>[_<pattern>]<suffix>`; faces with different draws give `_mixed`."""
    draws = {(r.mask_type, r.pattern) for r in records if r.status is Status.MASKED}
    if len(draws) != 1:
        return f"{stem}_mixed{suffix}"
    mask_type, pattern = draws.pop()
    tail = f"_{pattern}" if pattern else ""
    return f"{stem}_{mask_type.value}{tail}{suffix}"


# --------------------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestRow:
    source_path: str
    output_path: str
    status: Status
    mask_type: str = ""
    pattern: str = ""
    tilt_bin: str = ""
    fit_residual_px: str = ""
    seed_used: int = 0

    def as_list(self) -> list[str]:
        return [
            self.source_path,
            self.output_path,
            self.status.value,
            self.mask_type,
            self.pattern,
            self.tilt_bin,
            self.fit_residual_px,
            str(self.seed_used),
        ]


@dataclass
class AugmentationManifest:
    rows: list[ManifestRow] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        out = {s.value: 0 for s in Status}
        for row in self.rows:
            out[row.status.value] += 1
        return out

    def output_paths(self) -> set[str]:
        return {r.output_path for r in self.rows if r.output_path}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for row in self.rows:
            writer.writerow(row.as_list())
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        """Write via a temporary file and an atomic rename."""
        path = Path(path)
        tmp = path.with_name(path.name + ".partial")
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())
        os.replace(tmp, path)

    @classmethod
    def read(cls, path: str | Path) -> AugmentationManifest:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            rows = [
                ManifestRow(
                    r["source_path"],
                    r["output_path"],
                    Status(r["status"]),
                    r["mask_type"],
                    r["pattern"],
                    r["tilt_bin"],
                    r["fit_residual_px"],
                    int(r["seed_used"]),
                )
                for r in reader
            ]
        return cls(rows)


# --------------------------------------------------------------------------- dataset job


def find_images(root: Path) -> list[str]:
    found = [
        p.relative_to(root).as_posix()
        for p in root.rglob("*")
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    ]
    return sorted(found)


def sidecar_path(image_path: Path) -> Path:
    return image_path.with_suffix(".json")


def _format_residual(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def _save_image(array: np.ndarray, path: Path) -> None:
    img = Image.fromarray(array, "RGB")
    if path.suffix.lower() in (".jpg", ".jpeg"):
        img.save(path, quality=95)
    else:
        img.save(path)


@dataclass(frozen=True)
class _Job:
    root: Path
    out_dir: Path
    lib: MaskLibrary
    policy: MaskPolicy
    detector: Detector | None


def process_one(job: _Job, rel: str) -> list[ManifestRow]:
    """Mask one image of the tree and write its outputs; returns its manifest rows."""
    src = job.root / rel
    seed = stream_seed(job.policy.seed, rel)
    try:
        with Image.open(src) as im:
            image = np.asarray(im.convert("RGB"))
    except (OSError, UnidentifiedImageError) as exc:
        log.warning("unreadable image %s: %s", rel, exc)
        return [ManifestRow(rel, "", Status.SKIPPED_UNREADABLE, seed_used=seed)]

    try:
        car = sidecar_path(src)
        if car.exists():
            faces = load_landmarks(car)
        elif job.detector is not None:
            faces = list(job.detector(image))
        else:
            faces = []
    except (OSError, ValidationError) as exc:
        log.warning("bad landmarks for %s: %s", rel, exc)
        faces = []

    rel_path = Path(rel)
    target_dir = job.out_dir / rel_path.parent
    target_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    if job.policy.keep_original:
        shutil.copyfile(src, job.out_dir / rel_path)
        rows.append(ManifestRow(rel, rel, Status.ORIGINAL_KEPT, seed_used=seed))

    masked, records = mask_image(image, faces, job.lib, job.policy, SplitMix64(seed))
    out_rel = ""
    if any(r.status is Status.MASKED for r in records):
        name = masked_name(rel_path.stem, rel_path.suffix, records)
        out_rel = (rel_path.parent / name).as_posix()
        _save_image(masked, job.out_dir / out_rel)
    for r in records:
        rows.append(
            ManifestRow(
                rel,
                out_rel if r.status is Status.MASKED else "",
                r.status,
                r.mask_type.value if r.mask_type else "",
                r.pattern or "",
                r.tilt_bin or "",
                _format_residual(r.fit_residual_px),
                seed,
            )
        )
    return rows


def _process_star(args: tuple[_Job, str]) -> list[ManifestRow]:
    return process_one(*args)


def mask_dataset(
    root: str | Path,
    lib: MaskLibrary,
    policy: MaskPolicy,
    out_dir: str | Path,
    workers: int = 1,
    detector: Detector | None = None,
) -> AugmentationManifest:
    """Mask every image under `root` into a mirrored tree under `out_dir`.

    The manifest lands at `out_dir/manifest.csv` once every image is done.
    """
    root, out_dir = Path(root), Path(out_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"input directory not found: {root}")
    out_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory is not writable: {out_dir}")

    images = find_images(root)
    job = _Job(root, out_dir, lib, policy, detector)
    log.info("masking %d images from %s with %d worker(s)", len(images), root, workers)
    if workers <= 1 or len(images) <= 1:
        results = [process_one(job, rel) for rel in images]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunk = max(1, len(images) // (4 * workers))
            results = list(pool.map(_process_star, [(job, rel) for rel in images], chunksize=chunk))

    rows = [row for image_rows in results for row in image_rows]
    rows.sort(key=lambda r: r.source_path)
    manifest = AugmentationManifest(rows)
    manifest.write(out_dir / MANIFEST_NAME)
    return manifest

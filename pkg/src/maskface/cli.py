"""Command-line entry point: ``maskface <command> [options]``.

Every command prints a JSON document on stdout and a short human summary on
stderr. Files go to ``--out`` (a directory). Settings resolve in the order
built-in defaults < ``--config`` TOML file < command-line flags.

Exit codes: 0 success, 1 I/O error, 2 validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from PIL import Image

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .augment import (
    DEFAULT_CANDIDATES,
    FaceDraw,
    MaskPolicy,
    SplitMix64,
    Status,
    mask_dataset,
    mask_image,
    masked_name,
    sidecar_path,
    stream_seed,
)
from .embed import (
    EmbeddingSet,
    MiningMode,
    ToyEncoder,
    TrainConfig,
    encode,
    load_embedding_set,
    train_toy,
)
from .errors import MaskFaceError
from .landmark import load_landmarks
from .maskwarp import MaskLibrary, MaskType, apply_color, default_library, load_library
from .verifeval import (
    ThresholdCalibration,
    calibrate,
    cluster_identities,
    clusters_per_identity,
    evaluate,
    evaluate_protocol,
    generate_pairs,
    heatmap,
    make_grid,
    mixed_clusters,
    pair_distances,
    pair_labels,
    purity,
    read_pairs,
    stratified_folds,
    threshold_at_far,
    write_pairs,
)

log = logging.getLogger("maskface")

EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 1, 2


class UsageError(MaskFaceError, ValueError):
    """Bad combination of command-line options."""


@dataclass
class Config:
    assets: str | None = None
    seed: int = 0
    workers: int = 1
    out: str | None = None
    far_target: float = 0.001
    grid_min: float = 0.0
    grid_max: float = 4.0
    grid_step: float = 0.01
    candidate_types: list[str] = field(default_factory=lambda: [t.value for t in DEFAULT_CANDIDATES])
    keep_original: bool = True
    pattern_probability: float = 0.0
    pattern_intensity: float = 0.85
    max_residual_px: float = 4.0

    def validate(self) -> None:
        if self.workers < 1:
            raise UsageError("workers must be >= 1")
        if not 0.0 <= self.far_target <= 1.0:
            raise UsageError("far_target must be in [0, 1]")
        self.policy()
        make_grid(self.grid_min, self.grid_max, self.grid_step)

    def policy(self) -> MaskPolicy:
        return MaskPolicy(
            tuple(MaskType.parse(t) for t in self.candidate_types),
            self.keep_original,
            self.pattern_probability,
            self.seed,
            self.pattern_intensity,
            self.max_residual_px,
        )

    def grid(self) -> np.ndarray:
        return make_grid(self.grid_min, self.grid_max, self.grid_step)

    def library(self) -> MaskLibrary:
        return load_library(self.assets) if self.assets else default_library()


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Flat TOML keys plus an optional [policy] table, both mapping onto Config."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    flat = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    flat.update(doc.get("policy", {}))
    known = {f.name for f in dataclasses.fields(Config)}
    unknown = sorted(set(flat) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return flat


_FLAG_TO_CONFIG = {
    "seed": "seed",
    "workers": "workers",
    "out": "out",
    "far": "far_target",
    "assets": "assets",
    "candidates": "candidate_types",
    "pattern_probability": "pattern_probability",
    "keep_original": "keep_original",
    "max_residual": "max_residual_px",
    "intensity": "pattern_intensity",
}


def resolve_config(args: argparse.Namespace) -> Config:
    values: dict[str, Any] = {}
    config_path = getattr(args, "config", None)
    if config_path:
        values.update(load_config_file(config_path))
    for flag, key in _FLAG_TO_CONFIG.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    if isinstance(values.get("candidate_types"), str):
        values["candidate_types"] = [s for s in values["candidate_types"].split(",") if s]
    cfg = Config(**values)
    cfg.validate()
    log.info("config %s", json.dumps(dataclasses.asdict(cfg), sort_keys=True))
    return cfg


def _emit(doc: Any) -> None:
    sys.stdout.write(json.dumps(doc, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(o: Any) -> Any:
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def _out_dir(cfg: Config, default: str = ".") -> Path:
    out = Path(cfg.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_embedding_args(items: Sequence[str]) -> dict[str, EmbeddingSet]:
    """`tag=path` or bare `path` (tag = file stem)."""
    sets: dict[str, EmbeddingSet] = {}
    for item in items:
        tag, sep, path = item.partition("=")
        if not sep:
            path, tag = item, Path(item).stem
        sets[tag] = load_embedding_set(path, tag)
    return sets


def _dump_nan_safe(doc: Any) -> Any:
    if isinstance(doc, float) and np.isnan(doc):
        return None
    if isinstance(doc, dict):
        return {k: _dump_nan_safe(v) for k, v in doc.items()}
    if isinstance(doc, (list, tuple)):
        return [_dump_nan_safe(v) for v in doc]
    return doc


# --------------------------------------------------------------------------- commands


def cmd_mask(args: argparse.Namespace, cfg: Config) -> int:
    image_path = Path(args.image)
    lib = cfg.library()
    override = None
    if args.mask_type:
        mask_type = MaskType.parse(args.mask_type)
        if args.pattern:
            lib.pattern(args.pattern)
        override = FaceDraw(mask_type, args.pattern)
    elif args.pattern:
        raise UsageError("--pattern needs --mask-type")
    color = lib.color(args.color) if args.color else None

    with Image.open(image_path) as im:
        image = np.asarray(im.convert("RGB"))
    landmark_file = Path(args.landmarks) if args.landmarks else sidecar_path(image_path)
    faces = load_landmarks(landmark_file) if landmark_file.exists() else []

    if color is not None:
        templates = {k: apply_color(t, color) for k, t in lib.templates.items()}
        lib = MaskLibrary(templates, lib.patterns, lib.colors)
    policy = cfg.policy()
    rng = SplitMix64(stream_seed(policy.seed, image_path.name))
    masked, records = mask_image(image, faces, lib, policy, rng, override)

    output = None
    if any(r.status is Status.MASKED for r in records):
        name = masked_name(image_path.stem, image_path.suffix, records)
        out_dir = Path(cfg.out) if cfg.out else image_path.parent
        out_dir.mkdir(parents=True, exist_ok=True)
        output = out_dir / name
        Image.fromarray(masked, "RGB").save(output)
    _emit({"input": str(image_path), "output": output, "faces": [r.to_dict() for r in records]})
    _note(f"{sum(r.status is Status.MASKED for r in records)}/{len(faces)} faces masked"
          + (f" -> {output}" if output else ""))
    return EXIT_OK


def cmd_mask_dir(args: argparse.Namespace, cfg: Config) -> int:
    root = Path(args.root)
    out = Path(cfg.out) if cfg.out else root.with_name(root.name + "_masked")
    manifest = mask_dataset(root, cfg.library(), cfg.policy(), out, cfg.workers)
    counts = manifest.counts()
    _emit({"manifest": out / "manifest.csv", "rows": len(manifest.rows), "counts": counts})
    _note(f"{counts['MASKED']} masked, {counts['ORIGINAL_KEPT']} originals kept, "
          f"{counts['SKIPPED_NO_FACE']} without faces, {counts['SKIPPED_POOR_FIT']} poor fits")
    return EXIT_OK


def cmd_pairs(args: argparse.Namespace, cfg: Config) -> int:
    sets = _parse_embedding_args(args.embeddings)
    tags = tuple(args.tags.split(",")) if args.tags else None
    if tags is not None and len(tags) == 1:
        tags = (tags[0], tags[0])
    pairs = generate_pairs(sets, args.n_pos, args.n_neg, cfg.seed, tags)
    path = _out_dir(cfg) / "pairs.csv"
    write_pairs(path, pairs)
    _emit({"pairs": path, "n_pos": args.n_pos, "n_neg": args.n_neg})
    _note(f"{len(pairs)} pairs -> {path}")
    return EXIT_OK


def _load_training_data(args: argparse.Namespace, cfg: Config) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if args.data:
        with np.load(args.data) as data:
            x, ids = data["inputs"], data["identities"]
            masked = data["masked"] if "masked" in data else np.zeros(len(ids), bool)
        return x, ids, masked
    if args.synthetic is None:
        raise UsageError("train-toy needs --data or --synthetic")
    from .analogue import AnalogueConfig, FaceFeatureModel

    model = FaceFeatureModel(AnalogueConfig(seed=cfg.seed))
    x, ids = model.sample(args.identities, args.images)
    masked = np.zeros(len(ids), bool)
    if args.synthetic == "mixed":
        x = np.vstack([x, model.mask(x)])
        ids = np.concatenate([ids, ids])
        masked = np.r_[masked, np.ones(len(masked), bool)]
    return x, ids, masked


def cmd_train_toy(args: argparse.Namespace, cfg: Config) -> int:
    x, ids, masked = _load_training_data(args, cfg)
    enc = ToyEncoder.init(x.shape[1], args.embed_dim, seed=cfg.seed)
    tc = TrainConfig(
        epochs=args.epochs,
        identities_per_batch=args.batch_identities,
        images_per_identity=args.batch_images,
        alpha=args.alpha,
        mode=MiningMode(args.mode),
        seed=cfg.seed,
    )
    result = train_toy(enc, x, ids, tc)
    out = _out_dir(cfg)
    result.encoder.save(out / "encoder.npz")
    trace = {"loss": result.loss_trace, "lr": result.lr_trace}
    (out / "loss_trace.json").write_text(json.dumps(trace) + "\n", encoding="utf-8")
    emb = EmbeddingSet(encode(result.encoder, x), ids, np.arange(len(ids)), masked, "train")
    emb.save(out / "embeddings.bin")
    _emit({
        "encoder": out / "encoder.npz",
        "embeddings": out / "embeddings.bin",
        "loss_trace": out / "loss_trace.json",
        "initial_loss": result.loss_trace[0],
        "final_loss": result.loss_trace[-1],
        "epochs": args.epochs,
    })
    _note(f"trained {args.epochs} epochs, loss {result.loss_trace[0]:.4f} -> {result.loss_trace[-1]:.4f}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, cfg: Config) -> int:
    pairs = read_pairs(args.pairs)
    sets = _parse_embedding_args(args.embeddings)
    d, y = pair_distances(pairs, sets), pair_labels(pairs)
    grid = cfg.grid()
    n_neg = int((~y).sum())
    doc: dict[str, Any] = {
        "n_pairs": len(pairs),
        "n_negative": n_neg,
        "far_target": cfg.far_target,
        "far_resolution": 1.0 / n_neg if n_neg else None,
        "far_feasible": threshold_at_far(d, y, cfg.far_target, grid, args.far_definition).feasible,
    }
    if args.calibration:
        cal = ThresholdCalibration.from_json(Path(args.calibration).read_text(encoding="utf-8"))
        report = evaluate(d, y, cal)
    else:
        cal = calibrate(d, y, args.folds, cfg.far_target, None, grid, args.far_definition)
        heldout = stratified_folds(y, args.folds)[cal.heldout]
        report = evaluate(d[heldout], y[heldout], cal)
        doc["protocol_mean"] = evaluate_protocol(d, y, args.folds, cfg.far_target, grid,
                                                 args.far_definition).summary()
    doc["calibration"] = dataclasses.asdict(cal)
    doc["report"] = report.to_dict()
    doc = _dump_nan_safe(doc)
    if cfg.out:
        out = _out_dir(cfg)
        (out / "calibration.json").write_text(cal.to_json() + "\n", encoding="utf-8")
        (out / "report.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _emit(doc)
    if not doc["far_feasible"]:
        _note(f"FAR target {cfg.far_target} is below the resolution 1/{n_neg}; threshold allows no false accepts")
    _note(f"max acc {report.max_accuracy:.4f}  acc@far {report.acc_at_far:.4f}  tpr@far {report.tpr_at_far:.4f}")
    return EXIT_OK


def cmd_heatmap(args: argparse.Namespace, cfg: Config) -> int:
    sets = _parse_embedding_args(args.embeddings)
    tags = args.tags.split(",") if args.tags else list(sets)
    if args.calibration:
        cal = ThresholdCalibration.from_json(Path(args.calibration).read_text(encoding="utf-8"))
    else:
        ref = args.calibrate_tag or tags[0]
        pairs = generate_pairs(sets, args.n_pos, args.n_neg, cfg.seed, (ref, ref))
        cal = calibrate(pair_distances(pairs, sets), pair_labels(pairs), args.folds, cfg.far_target,
                        None, cfg.grid())
    grid = heatmap(sets, cal, args.n_pos, args.n_neg, cfg.seed, tags)
    out = _out_dir(cfg)
    (out / "heatmap.csv").write_text(grid.to_csv(), encoding="utf-8")
    (out / "heatmap.json").write_text(grid.to_json() + "\n", encoding="utf-8")
    _emit({
        "csv": out / "heatmap.csv",
        "json": out / "heatmap.json",
        "cells": len(grid.cells),
        "insufficient": [list(k) for k in grid.insufficient()],
        "calibration": dataclasses.asdict(cal),
    })
    _note(f"{len(grid.cells)} cells -> {out / 'heatmap.csv'}")
    return EXIT_OK


def cmd_cluster(args: argparse.Namespace, cfg: Config) -> int:
    sets = _parse_embedding_args(args.embeddings)
    if args.threshold is not None:
        threshold = args.threshold
    elif args.calibration:
        threshold = ThresholdCalibration.from_json(Path(args.calibration).read_text(encoding="utf-8")).threshold_max_acc
    else:
        raise UsageError("cluster needs --threshold or --calibration")
    vectors = np.vstack([s.vectors for s in sets.values()])
    identities = np.concatenate([s.identities for s in sets.values()])
    sources = np.concatenate([s.sources for s in sets.values()])
    tags = [t for t, s in sets.items() for _ in range(len(s))]
    result = cluster_identities(vectors, threshold)
    out = _out_dir(cfg)
    with open(out / "clusters.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("tag,source,identity,cluster\n")
        for t, s, i, c in zip(tags, sources, identities, result.labels):
            fh.write(f"{t},{s},{i},{c}\n")
    doc = {
        "clusters_csv": out / "clusters.csv",
        "threshold": threshold,
        "n_embeddings": len(vectors),
        "n_clusters": len(result),
        "n_identities": int(len(np.unique(identities))),
        "purity": purity(result.labels, identities),
        "clusters_per_identity": clusters_per_identity(result.labels, identities),
        "mixed_clusters": mixed_clusters(result.labels, identities),
    }
    _emit(_dump_nan_safe(doc))
    _note(f"{len(result)} clusters for {doc['n_identities']} identities, purity {doc['purity']:.3f}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="master seed (unsigned 64-bit)")
    parser.add_argument("--out", default=default, help="output directory")
    parser.add_argument("--config", default=default, help="TOML config file")
    parser.add_argument("--workers", type=int, default=default, help="worker processes for mask-dir")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskface", description="Face-mask augmentation and masked-face verification tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = sub.add_parser("mask", parents=[common], help="mask the faces in one image")
    p.add_argument("image")
    p.add_argument("--mask-type", help="one of: " + ", ".join(t.value for t in MaskType))
    p.add_argument("--pattern", help="pattern name from the library")
    p.add_argument("--color", help="color name from the library or #rrggbb")
    p.add_argument("--landmarks", help="landmark JSON (default: <image stem>.json beside the image)")
    p.add_argument("--assets", help="mask library directory (default: shipped assets)")
    p.add_argument("--intensity", type=float, help="pattern intensity in [0, 1]")
    p.add_argument("--max-residual", type=float, help="poor-fit threshold in pixels")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("mask-dir", parents=[common], help="mask every image under a directory")
    p.add_argument("root")
    p.add_argument("--candidates", help="comma-separated mask types drawn uniformly per face")
    p.add_argument("--pattern-probability", type=float)
    p.add_argument("--no-keep-original", dest="keep_original", action="store_false", default=None)
    p.add_argument("--assets")
    p.add_argument("--intensity", type=float)
    p.add_argument("--max-residual", type=float)
    p.set_defaults(func=cmd_mask_dir)

    p = sub.add_parser("pairs", parents=[common], help="sample verification pairs")
    p.add_argument("--embeddings", nargs="+", required=True, metavar="[TAG=]PATH")
    p.add_argument("--n-pos", type=int, required=True)
    p.add_argument("--n-neg", type=int, required=True)
    p.add_argument("--tags", help="template,unknown tags (one tag means both sides)")
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("train-toy", parents=[common], help="train the toy triplet-loss encoder")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="npz with 'inputs', 'identities' and optional 'masked'")
    src.add_argument("--synthetic", choices=["clean", "mixed"], help="generate parametric face features")
    p.add_argument("--identities", type=int, default=40)
    p.add_argument("--images", type=int, default=12)
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-identities", type=int, default=8)
    p.add_argument("--batch-images", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--mode", choices=[m.value for m in MiningMode], default=MiningMode.SEMI_HARD.value)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval", parents=[common], help="calibrate thresholds and report metrics")
    p.add_argument("--pairs", required=True)
    p.add_argument("--embeddings", nargs="+", required=True, metavar="[TAG=]PATH")
    p.add_argument("--far", type=float)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--calibration", help="fixed thresholds JSON instead of calibrating")
    p.add_argument("--far-definition", choices=["negatives", "accepted"], default="negatives")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", parents=[common], help="metrics for every template/unknown tag combination")
    p.add_argument("--embeddings", nargs="+", required=True, metavar="TAG=PATH")
    p.add_argument("--tags", help="comma-separated tag order")
    p.add_argument("--calibration")
    p.add_argument("--calibrate-tag", help="tag whose own pairs set the thresholds (default: first)")
    p.add_argument("--n-pos", type=int, default=300)
    p.add_argument("--n-neg", type=int, default=300)
    p.add_argument("--far", type=float)
    p.add_argument("--folds", type=int, default=10)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("cluster", parents=[common], help="cluster embeddings into identities")
    p.add_argument("--embeddings", nargs="+", required=True, metavar="[TAG=]PATH")
    p.add_argument("--threshold", type=float)
    p.add_argument("--calibration")
    p.set_defaults(func=cmd_cluster)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except (MaskFaceError, ValueError, tomllib.TOMLDecodeError) as exc:
        _note(f"error: {exc}")
        return EXIT_INVALID
    except OSError as exc:
        _note(f"error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())

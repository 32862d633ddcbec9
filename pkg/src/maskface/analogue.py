"""Desk-scale analogue of no-mask vs mask-augmented training.

Faces are parametric feature vectors: an identity prototype plus per-image
noise. The first half of the features stands for the upper face, the second
half for the lower face. "Masking" overwrites the lower half with a fixed
vector that leaks a small fraction of the original signal, the way a mask
hides the mouth and nose.

Two toy encoders are trained with identical settings, one on clean vectors
only and one on clean plus masked copies, then evaluated on identities
never seen in training over the clean/masked tag grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embed import EmbeddingSet, ToyEncoder, TrainConfig, TrainResult, encode, train_toy
from .verifeval import (
    HeatmapGrid,
    ThresholdCalibration,
    calibrate,
    cluster_identities,
    clusters_per_identity,
    generate_pairs,
    heatmap,
    pair_distances,
    pair_labels,
    purity,
)

CLEAN, MASKED = "clean", "masked"
TAGS = (CLEAN, MASKED)


@dataclass(frozen=True)
class AnalogueConfig:
    n_identities: int = 40
    train_images: int = 12
    eval_identities: int = 40
    eval_images: int = 8
    feature_dim: int = 32
    embed_dim: int = 16
    noise: float = 0.35
    leak: float = 0.15
    far_target: float = 0.01
    n_pairs: int = 1000
    seed: int = 0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=100, identities_per_batch=8,
                                                                   images_per_identity=4, seed=1))


@dataclass
class EncoderReport:
    name: str
    training: TrainResult
    calibration: ThresholdCalibration
    grid: HeatmapGrid
    purity: float
    clusters_per_identity: float
    n_clusters: int

    def tpr(self, template: str, unknown: str) -> float:
        return self.grid.cells[(template, unknown)].tpr_at_far


@dataclass
class AnalogueResult:
    clean: EncoderReport
    mixed: EncoderReport

    def summary(self) -> dict:
        out = {}
        for rep in (self.clean, self.mixed):
            out[rep.name] = {
                "tpr_at_far": {f"{t}->{u}": rep.tpr(t, u) for t in TAGS for u in TAGS},
                "threshold_max_acc": rep.calibration.threshold_max_acc,
                "threshold_at_far": rep.calibration.threshold_at_far,
                "purity": rep.purity,
                "clusters_per_identity": rep.clusters_per_identity,
                "n_clusters": rep.n_clusters,
                "final_loss": rep.training.loss_trace[-1],
            }
        return out


class FaceFeatureModel:
    """Identity prototypes plus Gaussian per-image noise; fixed lower-half occluder."""

    def __init__(self, cfg: AnalogueConfig) -> None:
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.half = cfg.feature_dim // 2
        self.occluder = rng.normal(0.0, 1.0, cfg.feature_dim - self.half)
        self._rng = rng

    def sample(self, n_identities: int, per_identity: int) -> tuple[np.ndarray, np.ndarray]:
        protos = self._rng.normal(0.0, 1.0, (n_identities, self.cfg.feature_dim))
        x = np.repeat(protos, per_identity, axis=0)
        x = x + self._rng.normal(0.0, self.cfg.noise, x.shape)
        return x, np.repeat(np.arange(n_identities), per_identity)

    def mask(self, x: np.ndarray) -> np.ndarray:
        out = np.array(x, dtype=np.float64, copy=True)
        out[:, self.half:] = self.occluder + self.cfg.leak * out[:, self.half:]
        return out


def _evaluate(name: str, training: TrainResult, x_eval: np.ndarray, ids_eval: np.ndarray,
              model: FaceFeatureModel, cfg: AnalogueConfig, calib_tags: list[tuple[str, str]]) -> EncoderReport:
    n = len(ids_eval)
    src = np.arange(n)
    sets = {
        CLEAN: EmbeddingSet(encode(training.encoder, x_eval), ids_eval, src, np.zeros(n, bool), CLEAN),
        MASKED: EmbeddingSet(encode(training.encoder, model.mask(x_eval)), ids_eval, src, np.ones(n, bool), MASKED),
    }
    per = cfg.n_pairs // len(calib_tags)
    dists, labels = [], []
    for k, tf in enumerate(calib_tags):
        pairs = generate_pairs(sets, per, per, cfg.seed + 100 + k, tf)
        dists.append(pair_distances(pairs, sets))
        labels.append(pair_labels(pairs))
    cal = calibrate(np.concatenate(dists), np.concatenate(labels), 10, cfg.far_target)
    grid = heatmap(sets, cal, cfg.n_pairs, cfg.n_pairs, cfg.seed + 200, TAGS)

    vectors = np.vstack([sets[CLEAN].vectors, sets[MASKED].vectors])
    identities = np.concatenate([ids_eval, ids_eval])
    clustering = cluster_identities(vectors, cal.threshold_max_acc)
    return EncoderReport(
        name,
        training,
        cal,
        grid,
        purity(clustering.labels, identities),
        clusters_per_identity(clustering.labels, identities),
        len(clustering),
    )


def run_analogue(cfg: AnalogueConfig = AnalogueConfig()) -> AnalogueResult:
    """Train both encoders from the same initialization and evaluate them.

    The clean encoder is calibrated on clean/clean pairs, the mixed one on an
    even mix of all four tag combinations; each threshold then stays fixed
    across the grid.
    """
    model = FaceFeatureModel(cfg)
    x_train, ids_train = model.sample(cfg.n_identities, cfg.train_images)
    x_eval, ids_eval = model.sample(cfg.eval_identities, cfg.eval_images)
    init = ToyEncoder.init(cfg.feature_dim, cfg.embed_dim, seed=cfg.seed + 3)

    clean = train_toy(init, x_train, ids_train, cfg.train)
    mixed = train_toy(
        init,
        np.vstack([x_train, model.mask(x_train)]),
        np.concatenate([ids_train, ids_train]),
        cfg.train,
    )
    all_tags = [(t, u) for t in TAGS for u in TAGS]
    return AnalogueResult(
        _evaluate("clean", clean, x_eval, ids_eval, model, cfg, [(CLEAN, CLEAN)]),
        _evaluate("mixed", mixed, x_eval, ids_eval, model, cfg, all_tags),
    )

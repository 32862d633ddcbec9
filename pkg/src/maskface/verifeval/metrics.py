"""Threshold sweeps, FAR-constrained operating points and split-averaged calibration.

Decisions are inclusive: a pair is judged SAME when its squared distance is
<= the threshold. Thresholds are swept over GRID = 0.00, 0.01, ..., 4.00.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import StratificationError, ValidationError

GRID = np.arange(401) / 100.0


def make_grid(lo: float = 0.0, hi: float = 4.0, step: float = 0.01) -> np.ndarray:
    """Evenly spaced thresholds k / (1 / step), so 0.07 is the literal 0.07."""
    if not (step > 0 and hi >= lo):
        raise ValidationError(f"bad threshold grid [{lo}, {hi}] step {step}")
    scale = 1.0 / step
    if abs(scale - round(scale)) < 1e-9:
        scale = float(round(scale))
    k0, k1 = round(lo * scale), round(hi * scale)
    return np.arange(k0, k1 + 1) / scale


class Decision(str, enum.Enum):
    SAME = "SAME"
    DIFFERENT = "DIFFERENT"


class FarDefinition(str, enum.Enum):
    # FP / (FP + TN): wrongly accepted negatives over all negatives
    NEGATIVES = "negatives"
    # FP / (TP + FP): the false-discovery form, kept for comparison
    ACCEPTED = "accepted"


def decide(distance: float, threshold: float) -> Decision:
    return Decision.SAME if distance <= threshold else Decision.DIFFERENT


@dataclass(frozen=True)
class Counts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else math.nan

    @property
    def tpr(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else math.nan

    def far(self, definition: FarDefinition = FarDefinition.NEGATIVES) -> float:
        if FarDefinition(definition) is FarDefinition.NEGATIVES:
            return self.fp / (self.fp + self.tn) if self.fp + self.tn else math.nan
        return self.fp / (self.tp + self.fp) if self.tp + self.fp else 0.0


def _check(distances: np.ndarray, is_same: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(distances, dtype=np.float64)
    y = np.asarray(is_same, dtype=bool)
    if d.shape != y.shape or d.ndim != 1:
        raise ValidationError("distances and labels must be 1-D arrays of equal length")
    return d, y


def confusion(distances: np.ndarray, is_same: np.ndarray, threshold: float) -> Counts:
    d, y = _check(distances, is_same)
    same = d <= threshold
    return Counts(
        tp=int(np.sum(same & y)),
        tn=int(np.sum(~same & ~y)),
        fp=int(np.sum(same & ~y)),
        fn=int(np.sum(~same & y)),
    )


def sweep(distances: np.ndarray, is_same: np.ndarray, grid: np.ndarray = GRID) -> dict[str, np.ndarray]:
    """TP/FP/TN/FN at every grid threshold via sorted counts."""
    d, y = _check(distances, is_same)
    pos, neg = np.sort(d[y]), np.sort(d[~y])
    tp = np.searchsorted(pos, grid, side="right")
    fp = np.searchsorted(neg, grid, side="right")
    return {"tp": tp, "fp": fp, "fn": len(pos) - tp, "tn": len(neg) - fp}


def max_accuracy_threshold(
    distances: np.ndarray, is_same: np.ndarray, grid: np.ndarray = GRID
) -> tuple[float, float]:
    """Smallest grid threshold reaching the maximum accuracy, and that accuracy."""
    d, y = _check(distances, is_same)
    if len(d) == 0:
        raise ValidationError("no pairs to sweep")
    if y.all() or not y.any():
        raise ValidationError("need at least one positive and one negative pair")
    s = sweep(d, y, grid)
    correct = s["tp"] + s["tn"]
    best = int(np.argmax(correct))
    return float(grid[best]), int(correct[best]) / len(d)


@dataclass(frozen=True)
class FarThreshold:
    threshold: float
    far_achieved: float
    # False when the target is finer than one negative (1 / #neg) or no grid
    # threshold meets it; the threshold is then the zero-FP (or grid-minimum) one
    feasible: bool


def threshold_at_far(
    distances: np.ndarray,
    is_same: np.ndarray,
    far_target: float,
    grid: np.ndarray = GRID,
    definition: FarDefinition | str = FarDefinition.NEGATIVES,
) -> FarThreshold:
    """Largest grid threshold whose false-acceptance rate is at most `far_target`."""
    d, y = _check(distances, is_same)
    definition = FarDefinition(definition)
    n_neg = int((~y).sum())
    if n_neg == 0:
        raise ValidationError("need at least one negative pair")
    if not 0.0 <= far_target <= 1.0:
        raise ValidationError(f"far_target must be in [0, 1], got {far_target}")
    s = sweep(d, y, grid)
    if definition is FarDefinition.NEGATIVES:
        far = s["fp"] / n_neg
    else:
        accepted = s["tp"] + s["fp"]
        far = np.where(accepted > 0, s["fp"] / np.maximum(accepted, 1), 0.0)
    ok = np.flatnonzero(far <= far_target)
    if len(ok) == 0:
        return FarThreshold(float(grid[0]), float(far[0]), False)
    best = int(ok[-1])
    resolvable = definition is not FarDefinition.NEGATIVES or far_target >= 1.0 / n_neg
    return FarThreshold(float(grid[best]), float(far[best]), resolvable)


def stratified_folds(is_same: np.ndarray, n_folds: int) -> list[np.ndarray]:
    """Contiguous near-equal blocks of each label, one block of each per fold."""
    y = np.asarray(is_same, dtype=bool)
    if n_folds < 2:
        raise ValidationError("n_folds must be at least 2")
    pos_blocks = np.array_split(np.flatnonzero(y), n_folds)
    neg_blocks = np.array_split(np.flatnonzero(~y), n_folds)
    folds = []
    for k, (p, n) in enumerate(zip(pos_blocks, neg_blocks)):
        if len(n) == 0:
            raise StratificationError(f"fold {k} has no negative pairs")
        if len(p) == 0:
            raise StratificationError(f"fold {k} has no positive pairs")
        folds.append(np.sort(np.concatenate([p, n])))
    return folds


@dataclass(frozen=True)
class ThresholdCalibration:
    threshold_max_acc: float
    threshold_at_far: float
    far_target: float
    fold_thresholds_max_acc: tuple[float, ...] = ()
    fold_thresholds_far: tuple[float, ...] = ()
    n_folds: int = 1
    heldout: int | None = None
    far_definition: str = FarDefinition.NEGATIVES.value

    def __post_init__(self) -> None:
        for t in (self.threshold_max_acc, self.threshold_at_far):
            if not 0.0 <= t <= 4.0:
                raise ValidationError(f"threshold {t} outside [0, 4]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> ThresholdCalibration:
        doc = json.loads(text)
        doc["fold_thresholds_max_acc"] = tuple(doc.get("fold_thresholds_max_acc", ()))
        doc["fold_thresholds_far"] = tuple(doc.get("fold_thresholds_far", ()))
        return cls(**doc)


def _mean(values: list[float]) -> float:
    # a float sum can drift off the common value, and agreeing optima must
    # come back exactly
    if all(v == values[0] for v in values):
        return float(values[0])
    return math.fsum(values) / len(values)


def calibrate(
    distances: np.ndarray,
    is_same: np.ndarray,
    n_folds: int = 10,
    far_target: float = 0.001,
    heldout: int | None = None,
    grid: np.ndarray = GRID,
    definition: FarDefinition | str = FarDefinition.NEGATIVES,
) -> ThresholdCalibration:
    """Cross-validated thresholds for reporting on split `heldout` (default: the last).

    The remaining n_folds - 1 splits are rotated: each rotation drops one of
    them and finds the optima on the union of the rest. The calibration is the
    arithmetic mean over rotations, so `fold_thresholds_*` has n_folds - 1
    entries. With only one training split its own optima are used.
    """
    d, y = _check(distances, is_same)
    folds = stratified_folds(y, n_folds)
    heldout = n_folds - 1 if heldout is None else heldout
    if not 0 <= heldout < n_folds:
        raise ValidationError(f"heldout split {heldout} outside 0..{n_folds - 1}")
    train = [k for k in range(n_folds) if k != heldout]
    acc_t, far_t = [], []
    for j in train:
        idx = np.concatenate([folds[k] for k in train if k != j or len(train) == 1])
        acc_t.append(max_accuracy_threshold(d[idx], y[idx], grid)[0])
        far_t.append(threshold_at_far(d[idx], y[idx], far_target, grid, definition).threshold)
    return ThresholdCalibration(
        _mean(acc_t),
        _mean(far_t),
        far_target,
        tuple(acc_t),
        tuple(far_t),
        n_folds,
        heldout,
        FarDefinition(definition).value,
    )


def calibrate_on(
    distances: np.ndarray,
    is_same: np.ndarray,
    far_target: float = 0.001,
    grid: np.ndarray = GRID,
    definition: FarDefinition | str = FarDefinition.NEGATIVES,
) -> ThresholdCalibration:
    """Optimum thresholds of one pair set, without splitting."""
    t_acc, _ = max_accuracy_threshold(distances, is_same, grid)
    t_far = threshold_at_far(distances, is_same, far_target, grid, definition).threshold
    return ThresholdCalibration(t_acc, t_far, far_target, (t_acc,), (t_far,), 1, None,
                                FarDefinition(definition).value)


@dataclass(frozen=True)
class MetricsReport:
    max_accuracy: float
    acc_at_far: float
    tpr_at_far: float
    far_achieved: float
    far_target: float
    threshold_max_acc: float
    threshold_at_far: float
    counts_max_acc: Counts
    counts_at_far: Counts

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, float) and math.isnan(v):
                out[k] = None
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def evaluate(distances: np.ndarray, is_same: np.ndarray, calibration: ThresholdCalibration) -> MetricsReport:
    """Counts and metrics at the calibration's fixed thresholds."""
    at_acc = confusion(distances, is_same, calibration.threshold_max_acc)
    at_far = confusion(distances, is_same, calibration.threshold_at_far)
    return MetricsReport(
        max_accuracy=at_acc.accuracy,
        acc_at_far=at_far.accuracy,
        tpr_at_far=at_far.tpr,
        far_achieved=at_far.far(calibration.far_definition),
        far_target=calibration.far_target,
        threshold_max_acc=calibration.threshold_max_acc,
        threshold_at_far=calibration.threshold_at_far,
        counts_max_acc=at_acc,
        counts_at_far=at_far,
    )


@dataclass
class ProtocolResult:
    folds: list[MetricsReport] = field(default_factory=list)
    calibrations: list[ThresholdCalibration] = field(default_factory=list)

    def mean(self, metric: str) -> float:
        return float(np.nanmean([getattr(r, metric) for r in self.folds]))

    def summary(self) -> dict:
        names = ("max_accuracy", "acc_at_far", "tpr_at_far", "far_achieved", "threshold_max_acc", "threshold_at_far")
        return {name: self.mean(name) for name in names}


def evaluate_protocol(
    distances: np.ndarray,
    is_same: np.ndarray,
    n_folds: int = 10,
    far_target: float = 0.001,
    grid: np.ndarray = GRID,
    definition: FarDefinition | str = FarDefinition.NEGATIVES,
) -> ProtocolResult:
    """Rotate the held-out split over all folds: calibrate on the rest, report on it."""
    d, y = _check(distances, is_same)
    folds = stratified_folds(y, n_folds)
    result = ProtocolResult()
    for k, idx in enumerate(folds):
        cal = calibrate(d, y, n_folds, far_target, k, grid, definition)
        result.calibrations.append(cal)
        result.folds.append(evaluate(d[idx], y[idx], cal))
    return result

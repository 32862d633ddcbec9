"""Cross-dataset metric grids: template tag (columns) x unknown tag (rows)."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..embed import EmbeddingSet
from ..errors import InsufficientPairsError, ValidationError
from .metrics import MetricsReport, ThresholdCalibration, evaluate
from .pairs import generate_pairs, pair_distances, pair_labels

HEATMAP_COLUMNS = ("template_tag", "unknown_tag", "max_acc", "acc_at_far", "tpr_at_far", "far_achieved")
METRICS = ("max_accuracy", "acc_at_far", "tpr_at_far", "far_achieved")


@dataclass(frozen=True)
class HeatmapGrid:
    tags: tuple[str, ...]
    # (template_tag, unknown_tag) -> report, or None when the cell has too few pairs
    cells: Mapping[tuple[str, str], MetricsReport | None]

    def matrix(self, metric: str) -> np.ndarray:
        """Rows are unknown tags, columns template tags; NaN marks insufficient cells."""
        if metric not in METRICS:
            raise ValidationError(f"unknown metric {metric!r}")
        k = len(self.tags)
        out = np.full((k, k), np.nan)
        for i, unknown in enumerate(self.tags):
            for j, template in enumerate(self.tags):
                cell = self.cells[(template, unknown)]
                if cell is not None:
                    out[i, j] = getattr(cell, metric)
        return out

    def insufficient(self) -> list[tuple[str, str]]:
        return [key for key, cell in self.cells.items() if cell is None]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HEATMAP_COLUMNS)
        for template in self.tags:
            for unknown in self.tags:
                cell = self.cells[(template, unknown)]
                if cell is None:
                    w.writerow([template, unknown, "", "", "", ""])
                else:
                    w.writerow([template, unknown] + [repr(float(getattr(cell, m))) for m in METRICS])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "tags": list(self.tags),
            "axes": {"rows": "unknown_tag", "columns": "template_tag"},
            "metrics": {m: [[None if np.isnan(v) else float(v) for v in row] for row in self.matrix(m)]
                        for m in METRICS},
        }
        return json.dumps(doc, indent=1)


def heatmap(
    sets: Mapping[str, EmbeddingSet],
    calibration: ThresholdCalibration,
    n_pos: int,
    n_neg: int,
    seed: int = 0,
    tags: Sequence[str] | None = None,
) -> HeatmapGrid:
    """Evaluate fixed thresholds on every (template tag, unknown tag) combination.

    Each cell draws its own pairs with the same seed, so cells over variants
    of the same images share their underlying image pairs.
    """
    tags = tuple(tags) if tags is not None else tuple(sets)
    missing = [t for t in tags if t not in sets]
    if missing:
        raise ValidationError(f"no embedding sets for tags {missing}")
    sets = {t: (s if s.tag == t else EmbeddingSet(s.vectors, s.identities, s.sources, s.masked, t))
            for t, s in sets.items()}
    cells: dict[tuple[str, str], MetricsReport | None] = {}
    for template in tags:
        for unknown in tags:
            try:
                pairs = generate_pairs(sets, n_pos, n_neg, seed, (template, unknown))
            except InsufficientPairsError:
                cells[(template, unknown)] = None
                continue
            d = pair_distances(pairs, sets)
            cells[(template, unknown)] = evaluate(d, pair_labels(pairs), calibration)
    return HeatmapGrid(tags, cells)

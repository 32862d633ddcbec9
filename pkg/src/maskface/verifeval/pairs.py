"""Verification pair sampling and pair-list files.

A pair joins two distinct source images s1 < s2: the template side is s1's
embedding in the template-tag set and the unknown side is s2's embedding in
the unknown-tag set. With one set on both sides this is ordinary 1:1 pairing;
with two variants of the same images (clean and masked) every cell of a
cross-dataset grid sees the same underlying image pairs.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..embed import EmbeddingSet
from ..errors import InsufficientPairsError, ValidationError

PAIR_COLUMNS = ("id_a", "id_b", "label", "tag_a", "tag_b")


class Label(str, enum.Enum):
    POSITIVE = "POSITIVE"
    NEGATIVE = "NEGATIVE"


@dataclass(frozen=True)
class VerificationPair:
    id_a: int
    id_b: int
    label: Label
    tag_a: str = ""
    tag_b: str = ""

    @property
    def is_same(self) -> bool:
        return self.label is Label.POSITIVE


def _sides(sets: EmbeddingSet | Mapping[str, EmbeddingSet], tag_filter: tuple[str, str] | None):
    if isinstance(sets, EmbeddingSet):
        if tag_filter is not None and set(tag_filter) != {sets.tag}:
            raise ValidationError(f"tag filter {tag_filter} does not match set tag {sets.tag!r}")
        return sets, sets
    if tag_filter is None:
        if len(sets) != 1:
            raise ValidationError("tag_filter is required when several embedding sets are given")
        only = next(iter(sets.values()))
        return only, only
    try:
        return sets[tag_filter[0]], sets[tag_filter[1]]
    except KeyError as exc:
        raise ValidationError(f"no embedding set tagged {exc.args[0]!r}") from None


def _identity_lookup(a: EmbeddingSet, b: EmbeddingSet) -> tuple[dict[int, int], dict[int, int]]:
    ida = {int(s): int(i) for s, i in zip(a.sources, a.identities)}
    idb = {int(s): int(i) for s, i in zip(b.sources, b.identities)}
    for s in ida.keys() & idb.keys():
        if ida[s] != idb[s]:
            raise ValidationError(f"source {s} has different identities in the two sets")
    return ida, idb


def candidate_counts(a: EmbeddingSet, b: EmbeddingSet) -> tuple[list[tuple[int, int]], int]:
    """All positive candidates (sorted) and the number of negative candidates."""
    ida, idb = _identity_lookup(a, b)
    by_identity_b: dict[int, list[int]] = {}
    for s, ident in idb.items():
        by_identity_b.setdefault(ident, []).append(s)
    positives = sorted(
        (s1, s2)
        for s1, ident in ida.items()
        for s2 in by_identity_b.get(ident, ())
        if s1 < s2
    )
    b_sorted = np.sort(np.fromiter(idb.keys(), dtype=np.int64, count=len(idb)))
    a_sorted = np.fromiter(ida.keys(), dtype=np.int64, count=len(ida))
    total = int((len(b_sorted) - np.searchsorted(b_sorted, a_sorted, side="right")).sum())
    return positives, total - len(positives)


def generate_pairs(
    sets: EmbeddingSet | Mapping[str, EmbeddingSet],
    n_pos: int,
    n_neg: int,
    seed: int = 0,
    tag_filter: tuple[str, str] | None = None,
) -> list[VerificationPair]:
    """Sample exactly `n_pos` positive and `n_neg` negative pairs without replacement.

    Output lists positives then negatives, each sorted by (id_a, id_b).
    """
    if n_pos < 0 or n_neg < 0:
        raise ValidationError("pair counts must be non-negative")
    a, b = _sides(sets, tag_filter)
    tag_a, tag_b = (tag_filter if tag_filter else (a.tag, b.tag))
    positives, n_neg_avail = candidate_counts(a, b)
    if n_pos > len(positives) or n_neg > n_neg_avail:
        raise InsufficientPairsError(
            f"requested {n_pos} positive / {n_neg} negative pairs for {tag_a}->{tag_b}; "
            f"at most {len(positives)} positive / {n_neg_avail} negative are available"
        )
    rng = np.random.default_rng(seed)
    chosen_pos = [positives[i] for i in sorted(rng.choice(len(positives), size=n_pos, replace=False))] if n_pos else []

    ida, idb = _identity_lookup(a, b)
    neg: set[tuple[int, int]] = set()
    if n_neg:
        if 2 * n_neg > n_neg_avail:
            b_keys = sorted(idb)
            every = [(s1, s2) for s1 in sorted(ida) for s2 in b_keys if s1 < s2 and ida[s1] != idb[s2]]
            neg = {every[i] for i in rng.choice(len(every), size=n_neg, replace=False)}
        else:
            a_src = np.array(sorted(ida), dtype=np.int64)
            b_src = np.array(sorted(idb), dtype=np.int64)
            while len(neg) < n_neg:
                s1 = int(a_src[rng.integers(len(a_src))])
                s2 = int(b_src[rng.integers(len(b_src))])
                if s1 < s2 and ida[s1] != idb[s2]:
                    neg.add((s1, s2))
    pairs = [VerificationPair(s1, s2, Label.POSITIVE, tag_a, tag_b) for s1, s2 in chosen_pos]
    pairs += [VerificationPair(s1, s2, Label.NEGATIVE, tag_a, tag_b) for s1, s2 in sorted(neg)]
    return pairs


def pair_distances(
    pairs: Sequence[VerificationPair],
    sets: EmbeddingSet | Mapping[str, EmbeddingSet],
) -> np.ndarray:
    """Squared L2 distance of every pair."""
    if not pairs:
        return np.zeros(0)
    lookup = {s.tag: s for s in ([sets] if isinstance(sets, EmbeddingSet) else sets.values())}
    single = next(iter(lookup.values())) if len(lookup) == 1 else None
    index = {tag: s.source_index() for tag, s in lookup.items()}
    out = np.empty(len(pairs))
    for k, p in enumerate(pairs):
        sa = single if single is not None else lookup[p.tag_a]
        sb = single if single is not None else lookup[p.tag_b]
        try:
            va = sa.vectors[index[sa.tag][p.id_a]]
            vb = sb.vectors[index[sb.tag][p.id_b]]
        except KeyError as exc:
            raise ValidationError(f"pair {k}: source {exc.args[0]} not found") from None
        diff = va - vb
        out[k] = diff @ diff
    return out


def pair_labels(pairs: Sequence[VerificationPair]) -> np.ndarray:
    return np.array([p.is_same for p in pairs], dtype=bool)


def write_pairs(path: str | Path, pairs: Sequence[VerificationPair]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PAIR_COLUMNS)
        for p in pairs:
            w.writerow([p.id_a, p.id_b, p.label.value, p.tag_a, p.tag_b])


def read_pairs(path: str | Path) -> list[VerificationPair]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(PAIR_COLUMNS) - set(reader.fieldnames):
            raise ValidationError(f"{path}: expected columns {','.join(PAIR_COLUMNS)}")
        try:
            return [
                VerificationPair(int(r["id_a"]), int(r["id_b"]), Label(r["label"].upper()), r["tag_a"], r["tag_b"])
                for r in reader
            ]
        except ValueError as exc:
            raise ValidationError(f"{path}: line {reader.line_num}: {exc}") from None

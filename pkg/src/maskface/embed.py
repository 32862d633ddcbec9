"""Embedding-space math: squared distances, triplet loss, online mining, toy encoder.

Distances are squared L2 everywhere. For unit vectors they lie in [0, 4].
"""

from __future__ import annotations

import csv
import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError

DEFAULT_MARGIN = 0.2
NORM_EPS = 1e-12
UNIT_TOL = 1e-6
LR_STEPS = (0.05, 0.005, 0.0005)


@dataclass(frozen=True, eq=False)
class Embedding:
    vector: np.ndarray
    identity: int
    source: int
    masked: bool = False

    def __post_init__(self) -> None:
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1:
            raise ValidationError("embedding vector must be one-dimensional")
        if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
            raise ValidationError(f"embedding must be unit norm, got {np.linalg.norm(v):.9f}")
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True)
class TripletLossParams:
    alpha: float = DEFAULT_MARGIN

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValidationError(f"margin alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class Triplet:
    anchor: Embedding
    positive: Embedding
    negative: Embedding

    def __post_init__(self) -> None:
        if self.anchor.identity != self.positive.identity:
            raise ValidationError("anchor and positive must share an identity")
        if self.anchor.identity == self.negative.identity:
            raise ValidationError("negative must have a different identity")
        if self.anchor.source == self.positive.source:
            raise ValidationError("anchor and positive must be different images")


class MiningMode(str, enum.Enum):
    ALL = "ALL"
    SEMI_HARD = "SEMI_HARD"


def _vec(x: Embedding | np.ndarray) -> np.ndarray:
    return x.vector if isinstance(x, Embedding) else np.asarray(x, dtype=np.float64)


def sq_l2(a: Embedding | np.ndarray, b: Embedding | np.ndarray) -> float:
    va, vb = _vec(a), _vec(b)
    if va.shape != vb.shape:
        raise ValidationError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    diff = va - vb
    return float(np.dot(diff, diff))


def triplet_loss(t: Triplet, p: TripletLossParams = TripletLossParams()) -> float:
    """Hinge on ||a - p||^2 + alpha < ||a - n||^2."""
    return max(0.0, sq_l2(t.anchor, t.positive) - sq_l2(t.anchor, t.negative) + p.alpha)


def pairwise_sq_l2(x: np.ndarray) -> np.ndarray:
    # one dimension at a time, in order: the rounding is then fixed, so exact
    # distance ties stay ties regardless of how numpy vectorizes a reduction
    out = np.zeros((len(x), len(x)))
    for k in range(x.shape[1]):
        diff = x[:, None, k] - x[None, :, k]
        out += diff * diff
    return out


def mine_indices(
    vectors: np.ndarray,
    identities: Sequence[int],
    sources: Sequence[int] | None = None,
    mode: MiningMode | str = MiningMode.SEMI_HARD,
) -> np.ndarray:
    """Triplets over batch indices, shape (m, 3) as (anchor, positive, negative).

    ALL enumerates every valid combination in (a, p, n) index order.
    SEMI_HARD keeps one negative per ordered (a, p): the closest negative
    farther than the positive, else the farthest negative. Ties go to the
    lowest batch index.
    """
    mode = MiningMode(mode)
    ids = np.asarray(identities)
    src = np.arange(len(ids)) if sources is None else np.asarray(sources)
    n = len(ids)
    if n == 0:
        return np.zeros((0, 3), dtype=np.intp)
    d = pairwise_sq_l2(np.asarray(vectors, dtype=np.float64))
    out: list[tuple[int, int, int]] = []
    for a in range(n):
        negatives = np.flatnonzero(ids != ids[a])
        if len(negatives) == 0:
            continue
        for p in range(n):
            if p == a or ids[p] != ids[a] or src[p] == src[a]:
                continue
            if mode is MiningMode.ALL:
                out.extend((a, p, int(k)) for k in negatives)
                continue
            d_an = d[a, negatives]
            semi = d_an > d[a, p]
            if semi.any():
                pick = negatives[semi][np.argmin(d_an[semi])]
            else:
                pick = negatives[np.argmax(d_an)]
            out.append((a, p, int(pick)))
    return np.array(out, dtype=np.intp).reshape(-1, 3)


def mine_triplets(
    batch: Sequence[Embedding],
    p: TripletLossParams = TripletLossParams(),
    mode: MiningMode | str = MiningMode.SEMI_HARD,
) -> list[Triplet]:
    """Online mining over a batch of embeddings. No valid (a, p) pair gives an empty list."""
    if not batch:
        return []
    vectors = np.stack([e.vector for e in batch])
    idx = mine_indices(vectors, [e.identity for e in batch], [e.source for e in batch], mode)
    return [Triplet(batch[a], batch[q], batch[k]) for a, q, k in idx]


# --------------------------------------------------------------------------- toy encoder


@dataclass
class ToyEncoder:
    """Single affine layer followed by L2 normalization: e = z / sqrt(|z|^2 + eps), z = x W + b."""

    weight: np.ndarray  # (input_dim, embed_dim)
    bias: np.ndarray  # (embed_dim,)

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValidationError("weight must be (in, out) and bias (out,)")

    @classmethod
    def init(cls, input_dim: int, embed_dim: int, seed: int = 0) -> ToyEncoder:
        rng = np.random.default_rng(seed)
        w = rng.normal(0.0, 1.0 / np.sqrt(input_dim), (input_dim, embed_dim))
        return cls(w, np.zeros(embed_dim))

    @property
    def input_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> ToyEncoder:
        return ToyEncoder(self.weight.copy(), self.bias.copy())

    def save(self, path: str | Path) -> None:
        np.savez(path, weight=self.weight, bias=self.bias)

    @classmethod
    def load(cls, path: str | Path) -> ToyEncoder:
        with np.load(path) as data:
            return cls(data["weight"], data["bias"])


def encode(enc: ToyEncoder, x: np.ndarray) -> np.ndarray:
    """Unit-norm embedding(s) for one input vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != enc.input_dim:
        raise ValidationError(f"input dimension {x.shape[-1]} does not match encoder {enc.input_dim}")
    z = x @ enc.weight + enc.bias
    norm = np.sqrt(np.sum(z * z, axis=-1, keepdims=True) + NORM_EPS)
    return z / norm


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray  # (n, input_dim)
    identities: np.ndarray  # (n,)
    sources: np.ndarray | None = None  # (n,), defaults to row index

    def source_ids(self) -> np.ndarray:
        return np.arange(len(self.identities)) if self.sources is None else np.asarray(self.sources)


def triplet_losses(emb: np.ndarray, triplets: np.ndarray, alpha: float) -> np.ndarray:
    a, p, n = emb[triplets[:, 0]], emb[triplets[:, 1]], emb[triplets[:, 2]]
    return np.maximum(0.0, np.sum((a - p) ** 2, axis=1) - np.sum((a - n) ** 2, axis=1) + alpha)


def batch_loss(
    enc: ToyEncoder,
    batch: Batch,
    p: TripletLossParams = TripletLossParams(),
    mode: MiningMode | str = MiningMode.SEMI_HARD,
    triplets: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean triplet loss over the mined (or given) triplets, and the triplets used."""
    emb = encode(enc, batch.inputs)
    if triplets is None:
        triplets = mine_indices(emb, batch.identities, batch.source_ids(), mode)
    if len(triplets) == 0:
        return 0.0, triplets
    return float(triplet_losses(emb, triplets, p.alpha).mean()), triplets


@dataclass(frozen=True)
class Gradient:
    loss: float
    weight: np.ndarray
    bias: np.ndarray
    triplets: np.ndarray


def loss_gradient(
    enc: ToyEncoder,
    batch: Batch,
    p: TripletLossParams = TripletLossParams(),
    mode: MiningMode | str = MiningMode.SEMI_HARD,
    triplets: np.ndarray | None = None,
) -> Gradient:
    """Analytic gradient of the mean mined-triplet loss w.r.t. weight and bias.

    Mining is done at the current parameters and held fixed, as in online
    mining. The hinge contributes zero at and below its kink.
    """
    x = np.asarray(batch.inputs, dtype=np.float64)
    z = x @ enc.weight + enc.bias
    norm = np.sqrt(np.sum(z * z, axis=1, keepdims=True) + NORM_EPS)
    emb = z / norm
    if triplets is None:
        triplets = mine_indices(emb, batch.identities, batch.source_ids(), mode)
    zero = Gradient(0.0, np.zeros_like(enc.weight), np.zeros_like(enc.bias), triplets)
    if len(triplets) == 0:
        return zero

    losses = triplet_losses(emb, triplets, p.alpha)
    active = losses > 0.0
    g_emb = np.zeros_like(emb)
    if active.any():
        a, q, k = triplets[active].T
        ea, ep, en = emb[a], emb[q], emb[k]
        scale = 1.0 / len(triplets)
        np.add.at(g_emb, a, 2.0 * (en - ep) * scale)
        np.add.at(g_emb, q, -2.0 * (ea - ep) * scale)
        np.add.at(g_emb, k, 2.0 * (ea - en) * scale)
    # d(z/n)/dz = I/n - z z^T / n^3
    g_z = g_emb / norm - z * (np.sum(z * g_emb, axis=1, keepdims=True) / norm**3)
    return Gradient(float(losses.mean()), x.T @ g_z, g_z.sum(axis=0), triplets)


# --------------------------------------------------------------------------- training


def step_learning_rate(epoch: int, n_epochs: int, values: Sequence[float] = LR_STEPS) -> float:
    """Learning rate for a 1-based epoch under an equally spaced step schedule.

    Epochs split into len(values) spans of n_epochs // len(values); the
    remainder goes to the last span (100 epochs -> 33 / 33 / 34).
    """
    if not 1 <= epoch <= n_epochs:
        raise ValidationError(f"epoch {epoch} outside 1..{n_epochs}")
    span = max(1, n_epochs // len(values))
    return float(values[min((epoch - 1) // span, len(values) - 1)])


@dataclass
class TrainConfig:
    epochs: int = 100
    identities_per_batch: int = 8
    images_per_identity: int = 4
    lr_values: tuple[float, ...] = LR_STEPS
    alpha: float = DEFAULT_MARGIN
    mode: MiningMode = MiningMode.SEMI_HARD
    seed: int = 0


@dataclass
class TrainResult:
    encoder: ToyEncoder
    loss_trace: list[float] = field(default_factory=list)
    lr_trace: list[float] = field(default_factory=list)


def _batches(identities: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> list[np.ndarray]:
    labels = np.unique(identities)
    members = {lab: np.flatnonzero(identities == lab) for lab in labels}
    order = rng.permutation(labels)
    out = []
    for start in range(0, len(order), cfg.identities_per_batch):
        chosen = order[start:start + cfg.identities_per_batch]
        if len(chosen) < 2:
            continue
        rows = [
            rng.choice(members[lab], size=min(cfg.images_per_identity, len(members[lab])), replace=False)
            for lab in chosen
        ]
        out.append(np.sort(np.concatenate(rows)))
    return out


def train_toy(enc: ToyEncoder, inputs: np.ndarray, identities: np.ndarray, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Plain SGD on mined triplet loss with the step learning-rate schedule.

    Each epoch visits every identity once in batches of
    `identities_per_batch` x `images_per_identity`. The recorded loss is the
    mean of the per-batch losses measured before each update.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    identities = np.asarray(identities)
    if len(np.unique(identities)) < 2:
        raise ValidationError("training needs at least two identities")
    enc = enc.copy()
    rng = np.random.default_rng(cfg.seed)
    params = TripletLossParams(cfg.alpha)
    result = TrainResult(enc)
    for epoch in range(1, cfg.epochs + 1):
        lr = step_learning_rate(epoch, cfg.epochs, cfg.lr_values)
        losses = []
        for rows in _batches(identities, cfg, rng):
            grad = loss_gradient(enc, Batch(inputs[rows], identities[rows], rows), params, cfg.mode)
            losses.append(grad.loss)
            enc.weight -= lr * grad.weight
            enc.bias -= lr * grad.bias
        result.loss_trace.append(float(np.mean(losses)) if losses else 0.0)
        result.lr_trace.append(lr)
    return result


# --------------------------------------------------------------------------- embedding sets

MAGIC = b"MFEB"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass(eq=False)
class EmbeddingSet:
    """Embeddings of one dataset variant (tag), stored column-wise."""

    vectors: np.ndarray  # (n, dim) float64, unit rows
    identities: np.ndarray  # (n,) int
    sources: np.ndarray  # (n,) int, unique within the set
    masked: np.ndarray  # (n,) bool
    tag: str = ""

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64).reshape(len(self.identities), -1)
        self.identities = np.asarray(self.identities, dtype=np.int64)
        self.sources = np.asarray(self.sources, dtype=np.int64)
        self.masked = np.asarray(self.masked, dtype=bool)
        n = len(self.identities)
        if not (len(self.sources) == len(self.masked) == len(self.vectors) == n):
            raise ValidationError("embedding set columns have different lengths")
        if len(np.unique(self.sources)) != n:
            raise ValidationError("source ids must be unique within an embedding set")
        if n and np.abs(np.linalg.norm(self.vectors, axis=1) - 1.0).max() > UNIT_TOL:
            raise ValidationError("embedding vectors must be unit norm")

    def __len__(self) -> int:
        return len(self.identities)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __getitem__(self, i: int) -> Embedding:
        return Embedding(self.vectors[i], int(self.identities[i]), int(self.sources[i]), bool(self.masked[i]))

    def embeddings(self) -> list[Embedding]:
        return [self[i] for i in range(len(self))]

    def source_index(self) -> dict[int, int]:
        return {int(s): i for i, s in enumerate(self.sources)}

    def by_source(self, source_ids: Sequence[int]) -> np.ndarray:
        index = self.source_index()
        return self.vectors[[index[int(s)] for s in source_ids]]

    @classmethod
    def from_embeddings(cls, items: Sequence[Embedding], tag: str = "") -> EmbeddingSet:
        dim = len(items[0].vector) if items else 0
        return cls(
            np.array([e.vector for e in items]).reshape(len(items), dim),
            [e.identity for e in items],
            [e.source for e in items],
            [e.masked for e in items],
            tag,
        )

    def save(self, path: str | Path) -> None:
        """Binary format: header (magic, version, dim, count), then per record
        identity u32, source u32, masked u8, dim float32 values; little-endian."""
        rec = struct.Struct(f"<IIB{self.dim}f")
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, self.dim, len(self)))
            for i in range(len(self)):
                fh.write(rec.pack(int(self.identities[i]), int(self.sources[i]), int(self.masked[i]),
                                  *self.vectors[i].astype(np.float32)))

    @classmethod
    def load(cls, path: str | Path, tag: str = "") -> EmbeddingSet:
        """Read the binary format; float32 vectors are renormalized in float64."""
        data = Path(path).read_bytes()
        if len(data) < _HEADER.size:
            raise ValidationError(f"{path}: truncated header")
        magic, version, dim, count = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ValidationError(f"{path}: not an embedding file (bad magic)")
        if version != VERSION:
            raise ValidationError(f"{path}: unsupported version {version}")
        rec = struct.Struct(f"<IIB{dim}f")
        if len(data) != _HEADER.size + count * rec.size:
            raise ValidationError(f"{path}: size does not match header ({count} records of dim {dim})")
        ids, srcs, masked = np.zeros(count, np.int64), np.zeros(count, np.int64), np.zeros(count, bool)
        vecs = np.zeros((count, dim))
        for i, fields in enumerate(rec.iter_unpack(data[_HEADER.size:])):
            ids[i], srcs[i], masked[i] = fields[0], fields[1], fields[2]
            vecs[i] = fields[3:]
        if count:
            vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        return cls(vecs, ids, srcs, masked, tag)

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["identity", "source", "masked"] + [f"v{j}" for j in range(self.dim)])
            for i in range(len(self)):
                w.writerow([int(self.identities[i]), int(self.sources[i]), int(self.masked[i])]
                           + [repr(float(v)) for v in self.vectors[i]])

    @classmethod
    def load_csv(cls, path: str | Path, tag: str = "") -> EmbeddingSet:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        return cls(
            np.array([[float(v) for v in r[3:]] for r in rows]).reshape(len(rows), -1),
            [int(r[0]) for r in rows],
            [int(r[1]) for r in rows],
            [r[2] == "1" for r in rows],
            tag,
        )


def load_embedding_set(path: str | Path, tag: str = "") -> EmbeddingSet:
    if str(path).lower().endswith(".csv"):
        return EmbeddingSet.load_csv(path, tag)
    return EmbeddingSet.load(path, tag)

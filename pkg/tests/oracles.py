"""Independent reference implementations used to cross-check the package.

Each oracle is written the slow, obvious way and shares no code with the
module it checks.
"""

import itertools
import math

import numpy as np


# --------------------------------------------------------------------------- geometry

def dlt_oracle(src, dst):
    """Normalized DLT solved via the smallest eigenvector of A^T A."""
    src, dst = np.asarray(src, float), np.asarray(dst, float)

    def normalizer(p):
        c = p.mean(axis=0)
        d = np.mean(np.sqrt(((p - c) ** 2).sum(axis=1)))
        s = math.sqrt(2) / d
        return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])

    ts, td = normalizer(src), normalizer(dst)
    rows = []
    for (x, y), (u, v) in zip(src, dst):
        xs, ys, _ = ts @ [x, y, 1]
        us, vs, _ = td @ [u, v, 1]
        rows.append([0, 0, 0, -xs, -ys, -1, vs * xs, vs * ys, vs])
        rows.append([xs, ys, 1, 0, 0, 0, -us * xs, -us * ys, -us])
    a = np.array(rows)
    w, vecs = np.linalg.eigh(a.T @ a)
    h = vecs[:, np.argmin(w)].reshape(3, 3)
    h = np.linalg.inv(td) @ h @ ts
    return h / h[2, 2]


def reprojection_rms(h, src, dst):
    total = 0.0
    for (x, y), (u, v) in zip(src, dst):
        px, py, pw = h @ [x, y, 1.0]
        total += (px / pw - u) ** 2 + (py / pw - v) ** 2
    return math.sqrt(total / len(src))


def random_homography(rng, det_min=0.1):
    """Projective matrix with |det(upper 2x2)| > det_min and mild perspective, scaled to [2,2] = 1."""
    while True:
        a = rng.uniform(-2.0, 2.0, (2, 2))
        if abs(np.linalg.det(a)) > det_min:
            break
    h = np.eye(3)
    h[:2, :2] = a
    h[:2, 2] = rng.uniform(-100, 100, 2)
    h[2, :2] = rng.uniform(-1e-3, 1e-3, 2)
    return h


def general_position_points(rng, n=6, lo=0.0, hi=200.0, min_area=50.0):
    while True:
        p = rng.uniform(lo, hi, (n, 2))
        ok = all(
            abs((p[j, 0] - p[i, 0]) * (p[k, 1] - p[i, 1]) - (p[j, 1] - p[i, 1]) * (p[k, 0] - p[i, 0])) > min_area
            for i, j, k in itertools.combinations(range(n), 3)
        )
        if ok:
            return p


def apply_h(h, pts):
    out = []
    for x, y in pts:
        px, py, pw = h @ [x, y, 1.0]
        out.append((px / pw, py / pw))
    return np.array(out)


# --------------------------------------------------------------------------- rasters

def bilinear_pixel(img, u, v):
    """Scalar bilinear sample of every channel at (u, v); None outside the raster."""
    h, w = img.shape[:2]
    if not (0 <= u <= w - 1 and 0 <= v <= h - 1):
        return None
    x0, y0 = int(math.floor(u)), int(math.floor(v))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = u - x0, v - y0
    out = []
    for c in range(img.shape[2]):
        top = float(img[y0, x0, c]) * (1 - fx) + float(img[y0, x1, c]) * fx
        bot = float(img[y1, x0, c]) * (1 - fx) + float(img[y1, x1, c]) * fx
        out.append(top * (1 - fy) + bot * fy)
    return out


# --------------------------------------------------------------------------- triplets

def brute_force_triplets(vectors, identities, sources=None):
    """Every valid triplet with its two squared distances, in (a, p, n) order."""
    n = len(identities)
    sources = list(range(n)) if sources is None else list(sources)
    out = []
    for a in range(n):
        for p in range(n):
            if a == p or identities[a] != identities[p] or sources[a] == sources[p]:
                continue
            for k in range(n):
                if identities[k] == identities[a]:
                    continue
                dap = sum((x - y) ** 2 for x, y in zip(vectors[a], vectors[p]))
                dan = sum((x - y) ** 2 for x, y in zip(vectors[a], vectors[k]))
                out.append((a, p, k, dap, dan))
    return out


def brute_force_semi_hard(vectors, identities, sources=None):
    """Filter the exhaustive list with the semi-hard predicate, one pick per (a, p)."""
    groups = {}
    for a, p, k, dap, dan in brute_force_triplets(vectors, identities, sources):
        groups.setdefault((a, p), []).append((k, dap, dan))
    out = []
    for (a, p), cands in groups.items():
        semi = [(dan, k) for k, dap, dan in cands if dan > dap]
        if semi:
            best = min(semi)
        else:
            best = min((-dan, k) for k, _, dan in cands)
        out.append((a, p, best[1]))
    return sorted(out)


# --------------------------------------------------------------------------- metrics

def brute_counts(d, y, t):
    tp = tn = fp = fn = 0
    for di, yi in zip(d, y):
        same = di <= t
        if same and yi:
            tp += 1
        elif same:
            fp += 1
        elif yi:
            fn += 1
        else:
            tn += 1
    return tp, tn, fp, fn


def brute_max_accuracy(d, y, grid):
    best_t, best_acc = None, -1.0
    for t in grid:
        tp, tn, fp, fn = brute_counts(d, y, t)
        acc = (tp + tn) / len(d)
        if acc > best_acc:
            best_t, best_acc = float(t), acc
    return best_t, best_acc


def brute_threshold_at_far(d, y, far_target, grid):
    n_neg = sum(1 for v in y if not v)
    best = None
    for t in grid:
        _, _, fp, _ = brute_counts(d, y, t)
        if fp / n_neg <= far_target:
            best = float(t)
    return best


# --------------------------------------------------------------------------- clustering

def brute_force_average_linkage(x, threshold):
    """Recompute every inter-cluster average from scratch at each merge."""
    x = np.asarray(x, float)
    clusters = [[i] for i in range(len(x))]

    def dist(i, j):
        return float(((x[i] - x[j]) ** 2).sum())

    while len(clusters) > 1:
        best = None
        for ia in range(len(clusters)):
            for ib in range(ia + 1, len(clusters)):
                a, b = clusters[ia], clusters[ib]
                avg = sum(dist(i, j) for i in a for j in b) / (len(a) * len(b))
                key = (avg, *sorted((min(a), min(b))))
                if best is None or key < best[0]:
                    best = (key, ia, ib)
        (avg, _, _), ia, ib = best
        if avg > threshold:
            break
        merged = sorted(clusters[ia] + clusters[ib])
        clusters = [c for k, c in enumerate(clusters) if k not in (ia, ib)] + [merged]
    return sorted(tuple(sorted(c)) for c in clusters)


def grid_counts(d, y, grid):
    """TP/FP counts at every threshold by full broadcasting comparison (no sorting)."""
    d, y = np.asarray(d, float), np.asarray(y, bool)
    same = d[None, :] <= np.asarray(grid)[:, None]
    return (same & y).sum(axis=1), (same & ~y).sum(axis=1)

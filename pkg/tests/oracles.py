"""Reference computations written without using the package under test.

Each oracle recomputes a quantity from first principles (closed forms,
Monte Carlo, Gram determinants, explicit box enumeration) so that tests
compare two independent routes.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def gram_wedge(v1, v2, v3) -> float:
    G = np.array([[np.dot(a, b) for b in (v1, v2, v3)] for a in (v1, v2, v3)], dtype=np.float64)
    return math.sqrt(max(0.0, float(np.linalg.det(G))))


def capsule_volume_mc(n: int, r: float, length: float = 1.0, samples: int = 2_000_000, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo volume of the radius-r neighborhood of a segment along e1."""
    rng = np.random.default_rng(seed)
    half = length / 2 + r
    lo = np.array([-half] + [-r] * (n - 1))
    hi = -lo
    x = rng.uniform(lo, hi, size=(samples, n))
    t = np.clip(x[:, 0], -length / 2, length / 2)
    d2 = (x[:, 0] - t) ** 2 + np.sum(x[:, 1:] ** 2, axis=1)
    p = float(np.mean(d2 <= r * r))
    box = float(np.prod(hi - lo))
    return box * p, box * math.sqrt(p * (1 - p) / samples)


def capsule_volume_exact(n: int, r: float, length: float = 1.0) -> float:
    def ball(k, rr):
        return math.pi ** (k / 2) / math.gamma(k / 2 + 1) * rr**k

    return ball(n - 1, r) * length + ball(n, r)


def seg_dist(x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    L2 = float(d @ d)
    t = np.clip(((x - a) @ d) / L2, 0.0, 1.0) if L2 > 0 else np.zeros(x.shape[0])
    return np.linalg.norm(x - a - t[:, None] * d, axis=1)


def box_centers(lo, hi, h: float) -> np.ndarray:
    """Centers of the lattice cells ``[0,h)^n + h v`` meeting the box ``[lo, hi]``."""
    lo = np.floor(np.asarray(lo) / h).astype(int)
    hi = np.ceil(np.asarray(hi) / h).astype(int)
    axes = [(np.arange(l, u) + 0.5) * h for l, u in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))


def membership(tubes, X: np.ndarray) -> np.ndarray:
    """``M[i, j]`` = cell center ``i`` lies in tube ``j`` (tubes as (center, dir, radius, length))."""
    M = np.zeros((X.shape[0], len(tubes)), dtype=bool)
    for j, (c, v, r, L) in enumerate(tubes):
        c, v = np.asarray(c, float), np.asarray(v, float)
        M[:, j] = seg_dist(X, c - L / 2 * v, c + L / 2 * v) <= r
    return M


def trilinear_bruteforce(tubes, h: float, lo, hi) -> float:
    """Integral over the box of (sum over ordered triples of wedge^(12/13))^(13/27)."""
    X = box_centers(lo, hi, h)
    M = membership(tubes, X)
    s = np.zeros(X.shape[0])
    dirs = [np.asarray(t[1], float) for t in tubes]
    for i, j, k in itertools.combinations(range(len(tubes)), 3):
        w = gram_wedge(dirs[i], dirs[j], dirs[k]) ** (12 / 13)
        s += 6 * w * (M[:, i] & M[:, j] & M[:, k])
    return float(np.sum(s ** (13 / 27))) * h ** X.shape[1]


def multilinear_bruteforce(families, h: float, lo, hi) -> float:
    """Integral over the box of sqrt(sum over cross-family triples of chi chi chi wedge)."""
    X = box_centers(lo, hi, h)
    Ms = [membership(f, X) for f in families]
    s = np.zeros(X.shape[0])
    for (i, a), (j, b), (k, c) in itertools.product(*(list(enumerate(f)) for f in families)):
        w = gram_wedge(np.asarray(a[1], float), np.asarray(b[1], float), np.asarray(c[1], float))
        s += w * (Ms[0][:, i] & Ms[1][:, j] & Ms[2][:, k])
    return float(np.sum(np.sqrt(s))) * h ** X.shape[1]


def ball_volume(n: int, r: float) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * r**n


def binomial_band(trials: int, p: float, sigmas: float = 4.0) -> tuple[float, float]:
    mean = trials * p
    sd = math.sqrt(trials * p * (1 - p))
    return mean - sigmas * sd, mean + sigmas * sd

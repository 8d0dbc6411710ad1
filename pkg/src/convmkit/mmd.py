"""Gaussian-kernel maximum mean discrepancy with the median heuristic.

The loss uses the biased estimator (the i == j kernel terms are kept), which
is non-negative by construction and zero exactly when the two sample
multisets coincide.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, _make


def gaussian_kernel(x, y, sigma: float) -> float:
    """k(x, y) = exp(-||x - y||^2 / (2 sigma^2)) for two plain vectors."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(np.exp(-np.dot(d, d) / (2.0 * sigma * sigma)))


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, [Na, Nb]; clipped at zero against
    cancellation noise."""
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d = aa + bb - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


def median_bandwidth(samples: np.ndarray) -> float:
    """Median Euclidean distance over all unordered sample pairs."""
    x = np.asarray(samples, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ValueError("median bandwidth needs at least 2 samples")
    d2 = pairwise_sq_dists(x, x)
    dists = np.sqrt(d2[np.triu_indices(n, k=1)])
    sigma = float(np.median(dists))
    if sigma == 0.0:
        raise ValueError("all pairwise distances are zero; perturb or skip")
    return sigma


def mmd_loss(feats_source: Tensor, feats_target: Tensor, sigma: float) -> Tensor:
    """Differentiable biased MMD^2 between two feature matrices [N, D].

    mean(Kss) + mean(Ktt) - 2 mean(Kst) with a Gaussian kernel of bandwidth
    ``sigma``; gradients flow into both feature sets (sigma is a constant).
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    fs, ft = feats_source, feats_target
    if fs.shape[1] != ft.shape[1]:
        raise ValueError(f"feature dims differ: {fs.shape[1]} vs {ft.shape[1]}")
    ns, nt = fs.shape[0], ft.shape[0]
    if ns < 1 or nt < 1:
        raise ValueError("both sample sets must be non-empty")
    s = fs.data.astype(np.float64)
    t = ft.data.astype(np.float64)
    inv = 1.0 / (2.0 * sigma * sigma)

    def kmat(a, b):
        # broadcast form: entries are bitwise symmetric under (a, b) swap
        d = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
        return np.exp(-d * inv)

    kss, ktt, kst = kmat(s, s), kmat(t, t), kmat(s, t)
    # fsum is order-independent, making the estimator exactly symmetric
    # under a set swap and exactly zero on identical sets
    value = (math.fsum(kss.ravel()) / (ns * ns)
             + math.fsum(ktt.ravel()) / (nt * nt)
             - 2.0 * math.fsum(kst.ravel()) / (ns * nt))

    def bwd(g):
        g = float(np.asarray(g).reshape(()))
        c = g / (sigma * sigma)
        if fs.requires_grad:
            # d mean(Kss)/ds_a = (2/Ns^2) sum_j Kss[a,j] (s_j - s_a) / sigma^2
            gs = (2.0 / (ns * ns)) * (kss @ s - kss.sum(axis=1)[:, None] * s)
            # d(-2 mean(Kst))/ds_a = (2/(Ns Nt)) sum_j Kst[a,j] (s_a - t_j) / sigma^2
            gs += (2.0 / (ns * nt)) * (kst.sum(axis=1)[:, None] * s - kst @ t)
            fs._accumulate((c * gs).astype(fs.dtype))
        if ft.requires_grad:
            gt = (2.0 / (nt * nt)) * (ktt @ t - ktt.sum(axis=1)[:, None] * t)
            gt += (2.0 / (ns * nt)) * (kst.sum(axis=0)[:, None] * t - kst.T @ s)
            ft._accumulate((c * gt).astype(ft.dtype))

    return _make(np.asarray(value, dtype=fs.dtype).reshape(()), (fs, ft), bwd)


def mmd_brute_force(s: np.ndarray, t: np.ndarray, sigma: float) -> float:
    """Double-loop oracle for the biased estimator; test use only."""
    ns, nt = len(s), len(t)
    tot = 0.0
    for i in range(ns):
        for j in range(ns):
            tot += gaussian_kernel(s[i], s[j], sigma) / (ns * ns)
    for i in range(nt):
        for j in range(nt):
            tot += gaussian_kernel(t[i], t[j], sigma) / (nt * nt)
    for i in range(ns):
        for j in range(nt):
            tot -= 2.0 * gaussian_kernel(s[i], t[j], sigma) / (ns * nt)
    return tot

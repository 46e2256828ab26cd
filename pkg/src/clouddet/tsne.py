"""Exact t-SNE for small point sets (a few thousand at most).

Plain gradient descent on the full pairwise similarity matrices, with the
usual momentum/gain schedule and early exaggeration. Deterministic for a
fixed seed.
"""

from __future__ import annotations

import numpy as np


def _entropy_and_probs(dist_row: np.ndarray, beta: float):
    p = np.exp(-dist_row * beta)
    total = p.sum()
    if total <= 0:
        return 0.0, np.zeros_like(p)
    p = p / total
    nonzero = p > 0
    entropy = float(-np.sum(p[nonzero] * np.log(p[nonzero])))
    return entropy, p


def _conditional_probs(sq_dists: np.ndarray, perplexity: float,
                       tol: float = 1e-5, max_steps: int = 50) -> np.ndarray:
    """Per-row Gaussian bandwidths found by binary search on the entropy."""
    n = sq_dists.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        row = np.delete(sq_dists[i], i)
        beta, beta_min, beta_max = 1.0, -np.inf, np.inf
        entropy, probs = _entropy_and_probs(row, beta)
        for _ in range(max_steps):
            diff = entropy - target
            if abs(diff) < tol:
                break
            if diff > 0:
                beta_min = beta
                beta = beta * 2.0 if beta_max == np.inf else (beta + beta_max) / 2.0
            else:
                beta_max = beta
                beta = beta / 2.0 if beta_min == -np.inf else (beta + beta_min) / 2.0
            entropy, probs = _entropy_and_probs(row, beta)
        P[i, np.arange(n) != i] = probs
    return P


def tsne_embed(vectors: np.ndarray, perplexity: float, seed: int,
               n_iter: int = 1000, learning_rate: float = 200.0,
               early_exaggeration: float = 12.0,
               exaggeration_iters: int = 250) -> np.ndarray:
    """Embed row vectors into 2-D. Returns an (n, 2) array."""
    X = np.asarray(vectors, dtype=np.float64)
    n = X.shape[0]
    if n < 3:
        raise ValueError("t-SNE needs at least three points")

    sq = np.sum(X * X, axis=1)
    sq_dists = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (X @ X.T), 0.0)

    P = _conditional_probs(sq_dists, perplexity)
    P = (P + P.T) / (2.0 * n)
    P = np.maximum(P, 1e-12)

    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)

    P_run = P * early_exaggeration
    momentum = 0.5
    for it in range(n_iter):
        if it == exaggeration_iters:
            P_run = P
            momentum = 0.8
        ysq = np.sum(Y * Y, axis=1)
        num = 1.0 / (1.0 + np.maximum(ysq[:, None] + ysq[None, :] - 2.0 * (Y @ Y.T), 0.0))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)

        W = (P_run - Q) * num
        grad = 4.0 * ((np.diag(W.sum(axis=1)) - W) @ Y)

        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        velocity = momentum * velocity - learning_rate * gains * grad
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)
    return Y

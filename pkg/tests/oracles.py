"""Brute-force reference implementations, independent of the package code.

Everything here is written for clarity over speed and is only used to
cross-check the real implementations on small instances.
"""

from __future__ import annotations

import math

import numpy as np


def point_adjust_bruteforce(pred, truth):
    """Per-segment scan: walk each truth segment and fill it if hit."""
    pred = list(map(int, pred))
    truth = list(map(int, truth))
    out = list(pred)
    i = 0
    while i < len(truth):
        if truth[i] == 1:
            j = i
            while j + 1 < len(truth) and truth[j + 1] == 1:
                j += 1
            if any(pred[k] == 1 for k in range(i, j + 1)):
                for k in range(i, j + 1):
                    out[k] = 1
            i = j + 1
        else:
            i += 1
    return np.asarray(out, dtype=np.int64)


def auc_bruteforce(scores, truth):
    """Exhaustive positive/negative pair counting; ties score one half."""
    scores = list(map(float, scores))
    truth = list(map(int, truth))
    pos = [s for s, t in zip(scores, truth) if t == 1]
    neg = [s for s, t in zip(scores, truth) if t == 0]
    if not pos or not neg:
        return None
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def confusion_bruteforce(pred, truth):
    tp = sum(1 for p, t in zip(pred, truth) if p == 1 and t == 1)
    fp = sum(1 for p, t in zip(pred, truth) if p == 1 and t == 0)
    fn = sum(1 for p, t in zip(pred, truth) if p == 0 and t == 1)
    tn = sum(1 for p, t in zip(pred, truth) if p == 0 and t == 0)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1, (tp, fp, fn, tn)


def hitrate_bruteforce(ranked, truth_set, p):
    cut = max(1, math.floor(p * len(truth_set) / 100.0))
    hits = sum(1 for item in list(ranked)[:cut] if item in truth_set)
    return hits / len(truth_set)


def ndcg_bruteforce(ranked, truth_set, p):
    cut = max(1, math.floor(p * len(truth_set) / 100.0))
    dcg = 0.0
    for rank, item in enumerate(list(ranked)[:cut], start=1):
        if item in truth_set:
            dcg += 1.0 / math.log2(rank + 1)
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(cut, len(truth_set)) + 1))
    return dcg / idcg


def has_topological_order(edges):
    """DFS cycle check over arbitrary hashable nodes given (u, v) pairs."""
    adj = {}
    nodes = set()
    for u, v in edges:
        adj.setdefault(u, []).append(v)
        nodes.update((u, v))
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in nodes}

    def visit(n):
        color[n] = GRAY
        for nxt in adj.get(n, []):
            if color[nxt] == GRAY:
                return False
            if color[nxt] == WHITE and not visit(nxt):
                return False
        color[n] = BLACK
        return True

    return all(color[n] != WHITE or visit(n) for n in list(nodes))


def central_difference(f, params: np.ndarray, index: int, step: float = 1e-4):
    """Central finite difference of a scalar function at one coordinate."""
    plus = params.copy()
    plus[index] += step
    minus = params.copy()
    minus[index] -= step
    return (f(plus) - f(minus)) / (2.0 * step)


def kl_monte_carlo(mu, log_sigma, n_samples, rng):
    """MC estimate of KL(N(mu, sigma^2) || N(0, 1)) per dimension, summed."""
    mu = np.asarray(mu, dtype=np.float64)
    log_sigma = np.asarray(log_sigma, dtype=np.float64)
    sigma = np.exp(log_sigma)
    z = mu + sigma * rng.standard_normal((n_samples, mu.size))
    log_q = -0.5 * ((z - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * math.log(2 * math.pi)
    log_p = -0.5 * z**2 - 0.5 * math.log(2 * math.pi)
    return float((log_q - log_p).sum(axis=1).mean())

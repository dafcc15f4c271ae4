"""Transducer negative log-likelihood over the (T, U+1) alignment lattice.

``log_probs[t, u, k]`` is the log-probability of symbol k (0 = blank) after
consuming frame t and emitting the first u target tokens.  Blank moves right
in time, a target token moves up in the label axis.  A complete alignment ends
with a blank at the top-right node ``(T-1, U)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

NEG = -1e30  # stand-in for log(0); absorbs under addition

__all__ = [
    "NEG",
    "LossLattice",
    "lattice",
    "loss",
    "loss_grad",
    "brute_force_nll",
    "transducer_nll",
    "batch_transducer_loss",
]


def _lae(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    if b <= NEG:
        return a
    return a + math.log1p(math.exp(b - a))


@dataclass
class LossLattice:
    alpha: np.ndarray  # (T, U+1)
    beta: np.ndarray  # (T, U+1)
    blank: np.ndarray  # (T, U+1)
    emit: np.ndarray  # (T, U); emit[t, u] = log P(y_{u+1} | t, u)

    @property
    def log_likelihood(self) -> float:
        T, U1 = self.alpha.shape
        return float(self.alpha[T - 1, U1 - 1] + self.blank[T - 1, U1 - 1])

    @property
    def log_likelihood_beta(self) -> float:
        return float(self.beta[0, 0])

    def diagonal_occupancy(self) -> np.ndarray:
        """log of summed node occupancy on each anti-diagonal t+u = d (all ~0)."""
        T, U1 = self.alpha.shape
        occ = self.alpha + self.beta - self.log_likelihood
        out = np.full(T + U1 - 1, NEG)
        for t in range(T):
            for u in range(U1):
                out[t + u] = _lae(out[t + u], occ[t, u])
        return out


def _check_inputs(log_probs: np.ndarray, target) -> tuple[np.ndarray, np.ndarray]:
    lp = np.asarray(log_probs, dtype=np.float64)
    y = np.asarray(target, dtype=np.int64).reshape(-1)
    if lp.ndim != 3:
        raise ValueError(f"log_probs must be (T, U+1, V), got shape {lp.shape}")
    T, U1, V = lp.shape
    if T < 1:
        raise ValueError("need at least one frame")
    if U1 != y.size + 1:
        raise ValueError(f"log_probs label axis {U1} does not match target length {y.size}")
    if y.size and (y.min() < 1 or y.max() >= V):
        raise ValueError(f"target ids must lie in [1, {V - 1}]")
    return lp, y


def lattice(log_probs, target) -> LossLattice:
    """Forward (alpha) and backward (beta) log-space recursions."""
    lp, y = _check_inputs(log_probs, target)
    T, U1, _ = lp.shape
    U = U1 - 1
    blank = lp[:, :, 0].copy()
    emit = lp[:, np.arange(U), y] if U else np.zeros((T, 0))
    bl = blank.tolist()
    em = emit.tolist()

    alpha = [[NEG] * U1 for _ in range(T)]
    alpha[0][0] = 0.0
    for t in range(T):
        row = alpha[t]
        prev = alpha[t - 1] if t else None
        prev_bl = bl[t - 1] if t else None
        em_t = em[t]
        for u in range(U1):
            if t == 0 and u == 0:
                continue
            a = prev[u] + prev_bl[u] if t else NEG
            b = row[u - 1] + em_t[u - 1] if u else NEG
            row[u] = _lae(a, b)

    beta = [[NEG] * U1 for _ in range(T)]
    beta[T - 1][U] = bl[T - 1][U]
    for t in range(T - 1, -1, -1):
        row = beta[t]
        nxt = beta[t + 1] if t < T - 1 else None
        bl_t = bl[t]
        em_t = em[t]
        for u in range(U, -1, -1):
            if t == T - 1 and u == U:
                continue
            a = nxt[u] + bl_t[u] if t < T - 1 else NEG
            b = row[u + 1] + em_t[u] if u < U else NEG
            row[u] = _lae(a, b)

    return LossLattice(np.array(alpha), np.array(beta), blank, emit)


def loss(log_probs, target) -> float:
    """Negative log-likelihood of ``target`` summed over all alignments."""
    return -lattice(log_probs, target).log_likelihood


def loss_grad(log_probs, target, lat: LossLattice | None = None) -> np.ndarray:
    """d NLL / d log_probs; nonzero only on the blank and next-target entries."""
    lp, y = _check_inputs(log_probs, target)
    lat = lat or lattice(lp, y)
    T, U1, _ = lp.shape
    U = U1 - 1
    total = lat.log_likelihood
    a, b = lat.alpha, lat.beta
    g = np.zeros_like(lp)
    # blank transitions (t, u) -> (t+1, u); the final blank leaves the lattice
    succ = np.full((T, U1), NEG)
    succ[:-1] = b[1:]
    succ[T - 1, U] = 0.0
    g[:, :, 0] = -np.exp(np.maximum(a + lat.blank + succ - total, NEG))
    if U:
        occ = -np.exp(np.maximum(a[:, :U] + lat.emit + b[:, 1:] - total, NEG))
        g[:, np.arange(U), y] += occ
    return g


def brute_force_nll(log_probs, target, max_paths: int = 1_000_000) -> float:
    """Enumerate every alignment explicitly; test oracle for :func:`loss`."""
    lp, y = _check_inputs(log_probs, target)
    T, U1, _ = lp.shape
    U = U1 - 1
    steps = T - 1 + U
    if math.comb(steps, U) > max_paths:
        raise ValueError(f"{math.comb(steps, U)} alignments exceed the enumeration limit {max_paths}")
    scores = []
    for emit_at in itertools.combinations(range(steps), U):
        emit_set = set(emit_at)
        t = u = 0
        s = 0.0
        for k in range(steps):
            if k in emit_set:
                s += lp[t, u, y[u]]
                u += 1
            else:
                s += lp[t, u, 0]
                t += 1
        s += lp[T - 1, U, 0]
        scores.append(s)
    scores = np.array(scores)
    m = scores.max()
    return float(-(m + math.log(math.fsum(np.exp(scores - m)))))


def transducer_nll(log_probs: ad.Tensor, target) -> ad.Tensor:
    """Graph op: scalar NLL whose backward is :func:`loss_grad`."""
    lat = lattice(log_probs.data, target)
    value = -lat.log_likelihood

    def bw(g):
        return (g[0] * loss_grad(log_probs.data, target, lat),)

    return ad._make(np.array([value]), "transducer_nll", (log_probs,), bw)


def batch_transducer_loss(items) -> ad.Tensor:
    """Sum of per-utterance NLLs divided by the total number of target tokens.

    ``items`` is a sequence of ``(log_probs, target)`` pairs; reduction runs in
    the given order.
    """
    items = list(items)
    total_tokens = max(1, sum(len(t) for _, t in items))
    parts = [transducer_nll(lp, t) for lp, t in items]
    acc = parts[0]
    for p in parts[1:]:
        acc = ad.add(acc, p)
    return ad.scale(acc, 1.0 / total_tokens)

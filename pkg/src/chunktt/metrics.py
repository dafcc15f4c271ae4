"""Quality and streaming-latency metrics.

Latency follows the SimulEval conventions.  For an utterance with source
length |X|, hypothesis length |Y| and per-token delays d_i (amount of source
consumed when token i was written), with gamma = |Y| / |X|:

* AP  = sum(d_i) / (|X| |Y|)
* AL  = mean over i <= tau of (d_i - (i-1)/gamma), tau = first i with d_i = |X|
* DAL = mean over all i of (d'_i - (i-1)/gamma), d'_i = max(d_i, d'_{i-1} + 1/gamma)

Corpus values are plain means over utterances.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def _tokens(x) -> list:
    return x.split() if isinstance(x, str) else list(x)


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion costs."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer(refs: Sequence, hyps: Sequence) -> float:
    """Corpus word error rate in percent; items are strings or token lists."""
    if len(refs) != len(hyps):
        raise ValueError("refs and hyps differ in length")
    words = sum(len(_tokens(r)) for r in refs)
    if words == 0:
        raise ValueError("reference corpus has no words")
    edits = sum(edit_distance(_tokens(r), _tokens(h)) for r, h in zip(refs, hyps))
    return 100.0 * edits / words


def token_accuracy(refs: Sequence, hyps: Sequence) -> float:
    """1 - (token edits / reference tokens), floored at 0; a fraction in [0, 1]."""
    return max(0.0, 1.0 - wer(refs, hyps) / 100.0)


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(refs: Sequence, hyps: Sequence, max_n: int = 4) -> float:
    """Corpus BLEU (0-100), single reference, no smoothing."""
    if len(refs) != len(hyps):
        raise ValueError("refs and hyps differ in length")
    if not refs:
        raise ValueError("empty corpus")
    match = [0] * max_n
    total = [0] * max_n
    ref_len = hyp_len = 0
    for r, h in zip(refs, hyps):
        r, h = _tokens(r), _tokens(h)
        ref_len += len(r)
        hyp_len += len(h)
        for n in range(1, max_n + 1):
            hc = _ngrams(h, n)
            rc = _ngrams(r, n)
            match[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            total[n - 1] += max(len(h) - n + 1, 0)
    if hyp_len == 0 or min(match) == 0:
        return 0.0
    log_prec = sum(math.log(m / t) for m, t in zip(match, total)) / max_n
    bp = min(0.0, 1.0 - ref_len / hyp_len)
    return 100.0 * math.exp(log_prec + bp)


@dataclass
class UtteranceLatency:
    AP: float
    AL: float
    DAL: float


@dataclass
class LatencyReport:
    AP: float
    AL: float
    DAL: float
    count: int
    skipped: int = 0
    per_utterance: list[UtteranceLatency] = field(default_factory=list)

    def scaled(self, factor: float) -> "LatencyReport":
        """Convert AL/DAL units (e.g. frames to milliseconds); AP is unitless."""
        return LatencyReport(self.AP, self.AL * factor, self.DAL * factor, self.count, self.skipped,
                             [UtteranceLatency(u.AP, u.AL * factor, u.DAL * factor) for u in self.per_utterance])


def latency(delays: Sequence[float], source_len: float, gamma: float | None = None) -> UtteranceLatency:
    """AP / AL / DAL of one utterance; delays in the same unit as ``source_len``."""
    d = np.asarray(delays, dtype=np.float64)
    Y = d.size
    if Y < 1:
        raise ValueError("empty hypothesis")
    if source_len <= 0:
        raise ValueError("source length must be positive")
    if np.any(np.diff(d) < 0):
        raise ValueError("delays must be non-decreasing")
    if np.any(d > source_len + 1e-9):
        raise ValueError("delay exceeds source length")
    gamma = Y / source_len if gamma is None else gamma
    lag = np.arange(Y) / gamma
    ap = float(d.sum() / (source_len * Y))
    full = np.flatnonzero(d >= source_len)
    tau = int(full[0]) + 1 if full.size else Y
    al = float(np.mean(d[:tau] - lag[:tau]))
    dp = np.empty(Y)
    prev = -1.0 / gamma
    for i in range(Y):
        prev = max(d[i], prev + 1.0 / gamma)
        dp[i] = prev
    dal = float(np.mean(dp - lag))
    return UtteranceLatency(ap, al, dal)


def corpus_latency(items: Sequence[tuple[Sequence[float], float]]) -> LatencyReport:
    """Average per-utterance latency; empty hypotheses are skipped and counted."""
    per = []
    skipped = 0
    for delays, src_len in items:
        if len(delays) == 0:
            skipped += 1
            continue
        per.append(latency(delays, src_len))
    if not per:
        return LatencyReport(float("nan"), float("nan"), float("nan"), 0, skipped, [])
    return LatencyReport(float(np.mean([u.AP for u in per])), float(np.mean([u.AL for u in per])),
                         float(np.mean([u.DAL for u in per])), len(per), skipped, per)


@dataclass
class EvalReport:
    WER: float
    BLEU: float
    accuracy: float
    sentences: int
    ref_tokens: int
    hyp_tokens: int
    latency: LatencyReport | None = None

    def rows(self) -> list[tuple[str, float, int]]:
        out = [("WER", self.WER, self.ref_tokens), ("BLEU", self.BLEU, self.sentences),
               ("token_accuracy", self.accuracy, self.ref_tokens)]
        if self.latency is not None:
            lat = self.latency
            out += [("AP", lat.AP, lat.count), ("AL", lat.AL, lat.count), ("DAL", lat.DAL, lat.count),
                    ("latency_skipped", float(lat.skipped), lat.skipped)]
        return out


def evaluate_hypotheses(refs: Sequence, hyps: Sequence, latency_items=None) -> EvalReport:
    lat = corpus_latency(latency_items) if latency_items is not None else None
    return EvalReport(wer(refs, hyps), bleu(refs, hyps), token_accuracy(refs, hyps), len(refs),
                      sum(len(_tokens(r)) for r in refs), sum(len(_tokens(h)) for h in hyps), lat)


def write_report(path, rows: Sequence[tuple[str, float, int]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("metric\tvalue\tcount\n")
        for name, value, count in rows:
            fh.write(f"{name}\t{value:.6f}\t{count}\n")


def write_latency_tsv(path, uids: Sequence[str], report: LatencyReport) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\tAP\tAL\tDAL\n")
        for uid, u in zip(uids, report.per_utterance):
            fh.write(f"{uid}\t{u.AP:.6f}\t{u.AL:.6f}\t{u.DAL:.6f}\n")

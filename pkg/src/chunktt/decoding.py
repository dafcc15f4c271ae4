"""Streaming greedy and beam decoding with per-token emission delays.

A decoding session receives feature chunks one at a time.  Each chunk is
encoded incrementally, then its frames are decoded.  A token emitted while
processing frame t is stamped with the number of frames received so far,
which is the end of t's chunk (clamped to the utterance length).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .masking import ChunkMaskSpec
from .model import BLANK, SOS, FeatureSequence, PredictorState, TransducerModel

MAX_BEAM = 8


def argmax(logits) -> int:
    """Index of the largest entry; ties go to the lowest index (blank first)."""
    x = np.asarray(logits)
    return int(np.flatnonzero(x == x.max())[0])


def _log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max()
    return z - math.log(np.exp(z).sum())


@dataclass
class DecodeConfig:
    branch: str | int = "M"
    beam: int = 1
    max_symbols: int = 5
    spec: ChunkMaskSpec | None = None

    def __post_init__(self):
        if not 1 <= self.beam <= MAX_BEAM:
            raise ValueError(f"beam must be in [1, {MAX_BEAM}]")
        if self.max_symbols < 1:
            raise ValueError("max_symbols must be >= 1")


@dataclass
class Hypothesis:
    tokens: list[int]
    score: float
    delays: list[int]
    state: PredictorState | None = None
    pred_proj: np.ndarray | None = field(default=None, repr=False)

    def key(self) -> tuple[int, ...]:
        return tuple(self.tokens)


class StreamingDecoder:
    """One decoding session; feed chunks with :meth:`push`, then :meth:`finish`."""

    def __init__(self, model: TransducerModel, config: DecodeConfig):
        self.model = model
        self.config = config
        self.branch = model.branch(config.branch)
        self.stream = model.new_stream(config.spec)
        self.frames_seen = 0
        start = self._advance(model.initial_predictor_state(self.branch), SOS)
        self.beam = [Hypothesis([], 0.0, [], *start)]

    def _advance(self, state: PredictorState, token: int):
        h_pre, new_state = self.model.predict(self.branch, token, state)
        with ad.no_grad():
            q = self.branch.pred_proj(ad.constant(h_pre[None, :])).data[0]
        return new_state, q

    def _log_probs(self, e: np.ndarray, q: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            logits = self.branch.output(ad.constant((e + q)[None, :])).data[0]
        return logits, _log_softmax(logits)

    def push(self, chunk) -> None:
        enc, self.stream = self.model.encode_incremental(self.stream, chunk, offset=self.frames_seen)
        self.frames_seen = self.stream.frames_seen
        if enc.shape[0] == 0:
            return
        with ad.no_grad():
            e_rows = self.branch.enc_proj(ad.constant(enc)).data
        for e in e_rows:
            if self.config.beam == 1:
                self._greedy_frame(e)
            else:
                self._beam_frame(e)

    def _greedy_frame(self, e: np.ndarray) -> None:
        hyp = self.beam[0]
        for _ in range(self.config.max_symbols):
            logits, lp = self._log_probs(e, hyp.pred_proj)
            k = argmax(logits)
            hyp.score += float(lp[k])
            if k == BLANK:
                return
            hyp.tokens.append(k)
            hyp.delays.append(self.frames_seen)
            hyp.state, hyp.pred_proj = self._advance(hyp.state, k)

    def _beam_frame(self, e: np.ndarray) -> None:
        width = self.config.beam
        done: dict[tuple, Hypothesis] = {}

        def merge(pool: dict, hyp: Hypothesis) -> None:
            old = pool.get(hyp.key())
            if old is None:
                pool[hyp.key()] = hyp
                return
            best = old if old.score >= hyp.score else hyp
            pool[hyp.key()] = Hypothesis(best.tokens, float(np.logaddexp(old.score, hyp.score)), best.delays,
                                         best.state, best.pred_proj)

        active = self.beam
        for _ in range(self.config.max_symbols):
            grown: dict[tuple, Hypothesis] = {}
            for hyp in active:
                _, lp = self._log_probs(e, hyp.pred_proj)
                merge(done, Hypothesis(hyp.tokens, hyp.score + float(lp[BLANK]), hyp.delays, hyp.state, hyp.pred_proj))
                order = np.argsort(-lp[1:], kind="stable")[:width] + 1
                for k in order:
                    merge(grown, Hypothesis(hyp.tokens + [int(k)], hyp.score + float(lp[k]),
                                            hyp.delays + [self.frames_seen], hyp.state, hyp.pred_proj))
            active = _top(grown.values(), width)
            for hyp in active:
                hyp.state, hyp.pred_proj = self._advance(hyp.state, hyp.tokens[-1])
        # hypotheses still emitting after the symbol cap move on without a blank
        for hyp in active:
            merge(done, hyp)
        self.beam = _top(done.values(), width)

    def finish(self) -> list[Hypothesis]:
        return _top(self.beam, len(self.beam))


def _top(hyps: Iterable[Hypothesis], n: int) -> list[Hypothesis]:
    return sorted(hyps, key=lambda h: -h.score)[:n]


def _chunks(features, model: TransducerModel, config: DecodeConfig) -> list:
    if isinstance(features, FeatureSequence):
        U = (config.spec or model.config.mask_spec).chunk_size
        return features.chunks(U)
    return list(features)


def greedy_stream_decode(model: TransducerModel, features, config: DecodeConfig) -> Hypothesis:
    """Greedy decode; ``features`` is a FeatureSequence or an iterable of chunks."""
    cfg = DecodeConfig(config.branch, 1, config.max_symbols, config.spec)
    session = StreamingDecoder(model, cfg)
    for c in _chunks(features, model, cfg):
        session.push(c)
    return session.finish()[0]


def beam_decode(model: TransducerModel, features, config: DecodeConfig) -> list[Hypothesis]:
    """Time-synchronous beam search; returns the N-best list, best first."""
    session = StreamingDecoder(model, config)
    for c in _chunks(features, model, config):
        session.push(c)
    return session.finish()


# ---------------------------------------------------------------- decode log


@dataclass
class DecodeRecord:
    uid: str
    branch: str
    tokens: list[int]
    score: float
    delays: list[int]
    num_frames: int

    def to_line(self) -> str:
        return "\t".join([self.uid, self.branch, " ".join(map(str, self.tokens)), repr(float(self.score)),
                          " ".join(map(str, self.delays)), str(self.num_frames)])

    @classmethod
    def from_line(cls, line: str) -> "DecodeRecord":
        cols = line.rstrip("\n").split("\t")
        if len(cols) != 6:
            raise ValueError(f"decode log line has {len(cols)} columns, expected 6")
        return cls(cols[0], cols[1], [int(x) for x in cols[2].split()], float(cols[3]),
                   [int(x) for x in cols[4].split()], int(cols[5]))


DECODE_LOG_HEADER = "# id\tbranch\ttokens\tscore\tdelays\tnum_frames"


def write_decode_log(path, records: Sequence[DecodeRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(DECODE_LOG_HEADER + "\n")
        for r in records:
            fh.write(r.to_line() + "\n")


def read_decode_log(path) -> list[DecodeRecord]:
    with open(path, encoding="utf-8") as fh:
        return [DecodeRecord.from_line(l) for l in fh if l.strip() and not l.startswith("#")]

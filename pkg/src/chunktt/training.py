"""Pooled multilingual training, frozen-encoder language expansion and evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .corpus import CorpusManifest, Utterance
from .decoding import DecodeConfig, DecodeRecord, greedy_stream_decode, beam_decode
from .masking import ChunkMaskSpec
from .metrics import EvalReport, evaluate_hypotheses
from .model import TransducerModel

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 3e-3
    warmup_steps: int = 200
    batch_size: int = 8
    max_steps: int = 3000
    seed: int = 0
    clip_norm: float = 5.0
    eval_interval: int = 500

    def __post_init__(self):
        for f in fields(self):
            if f.name != "seed" and getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")

    def lr_at(self, step: int) -> float:
        """Linear warmup to ``lr`` then inverse square-root decay; ``step`` is 1-based."""
        return self.lr * min(step / self.warmup_steps, math.sqrt(self.warmup_steps / step))


def parse_key_values(text: str, allowed: Sequence[str]) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments ignored, unknown keys rejected."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in allowed:
            raise ValueError(f"line {n}: unknown key {key!r}")
        out[key] = value
    return out


def read_train_config(path, **overrides) -> TrainConfig:
    types = {f.name: f.type for f in fields(TrainConfig)}
    raw = parse_key_values(Path(path).read_text(encoding="utf-8"), list(types))
    values = {k: (float(v) if types[k] in ("float", float) else int(v)) for k, v in raw.items()}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def write_train_config(path, config: TrainConfig) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in asdict(config).items()), encoding="utf-8")


class Adam:
    def __init__(self, params: dict[str, ad.Tensor], beta1=0.9, beta2=0.98, eps=1e-9):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            p.data = p.data - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_gradients(params: dict[str, ad.Tensor], max_norm: float) -> float:
    norm = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params.values() if p.grad is not None))
    if norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


@dataclass
class TrainResult:
    model: TransducerModel
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    evals: list[tuple[int, EvalReport]] = field(default_factory=list)

    def write_trace(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("step\tloss\tlr\n")
            for step, loss, lr in self.trace:
                fh.write(f"{step}\t{loss:.10g}\t{lr:.10g}\n")


def _as_utterances(corpus) -> list[Utterance]:
    if isinstance(corpus, CorpusManifest):
        return corpus.utterances()
    return list(corpus)


def train(
    model: TransducerModel,
    corpus,
    branch,
    config: TrainConfig,
    spec: ChunkMaskSpec | None = None,
    eval_fn: Callable[[TransducerModel], EvalReport] | None = None,
) -> TrainResult:
    """Fit ``branch`` (and the encoder unless frozen) on pooled utterances.

    Batches are drawn from a seeded reshuffle of the whole corpus, so every
    language pair is mixed in.  With a frozen encoder the encoder outputs are
    computed once and reused.
    """
    utts = _as_utterances(corpus)
    if not utts:
        raise TrainingError("empty training corpus")
    b = model.branch(branch)
    for u in utts:
        if any(not 1 <= t < b.output_size for t in u.target_ids):
            raise TrainingError(f"utterance {u.uid} has targets outside branch {b.lang!r} vocabulary")
    params = model.trainable_parameters(b)
    opt = Adam(params)
    rng = np.random.default_rng(config.seed)
    cache = None
    if model.encoder_frozen:
        cache = {u.uid: model.encode(u.features, spec) for u in utts}
    result = TrainResult(model)
    order = np.array([], dtype=np.int64)
    for step in range(1, config.max_steps + 1):
        if order.size < config.batch_size:
            order = np.concatenate([order, rng.permutation(len(utts))])
        idx, order = order[:config.batch_size], order[config.batch_size:]
        batch = [utts[i] for i in idx]
        for p in params.values():
            p.grad = None
        encoded = [cache[u.uid] for u in batch] if cache is not None else None
        loss = model.loss(b, [u.features for u in batch], [u.target_ids for u in batch], spec, encoded=encoded)
        value = float(loss.data[0])
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss at step {step}; batch {[u.uid for u in batch]}")
        ad.backward(loss, params.values())
        clip_gradients(params, config.clip_norm)
        lr = config.lr_at(step)
        opt.step(lr)
        result.trace.append((step, value, lr))
        if eval_fn is not None and step % config.eval_interval == 0:
            report = eval_fn(model)
            result.evals.append((step, report))
            log.info("step %d loss %.4f acc %.4f", step, value, report.accuracy)
    return result


@dataclass
class ExpansionPlan:
    base: TransducerModel | str | Path
    target_lang: str
    vocab: Sequence[str]
    pairs: Sequence[tuple[str, str]]
    config: TrainConfig
    branch_seed: int | None = None


def expand(plan: ExpansionPlan, corpus, spec: ChunkMaskSpec | None = None) -> TrainResult:
    """Add a branch for a new target language and train it with the encoder frozen.

    Only utterances of ``plan.pairs`` are used; every listed pair must have data.
    """
    model = plan.base if isinstance(plan.base, TransducerModel) else TransducerModel.load(plan.base)
    pairs = {tuple(p) for p in plan.pairs}
    if not pairs:
        raise ValueError("expansion needs at least one training pair")
    for s, t in pairs:
        if t != plan.target_lang:
            raise ValueError(f"pair {s}>{t} does not target {plan.target_lang!r}")
    utts = [u for u in _as_utterances(corpus) if (u.source_lang, u.target_lang) in pairs]
    present = {(u.source_lang, u.target_lang) for u in utts}
    missing = sorted(pairs - present)
    if missing:
        raise ValueError(f"no training data for pairs {missing}")
    model.add_branch(plan.target_lang, plan.vocab, seed=plan.branch_seed)
    model.freeze_encoder()
    return train(model, utts, plan.target_lang, plan.config, spec)


@dataclass
class EvalResult:
    report: EvalReport
    records: list[DecodeRecord]


def evaluate(model: TransducerModel, branch, corpus, decode: DecodeConfig | None = None) -> EvalResult:
    """Decode every utterance and score it (WER, BLEU, token accuracy, latency)."""
    b = model.branch(branch)
    decode = decode or DecodeConfig(branch=b.lang)
    decode = DecodeConfig(b.lang, decode.beam, decode.max_symbols, decode.spec)
    utts = _as_utterances(corpus)
    refs, hyps, lat, records = [], [], [], []
    for u in utts:
        if decode.beam == 1:
            hyp = greedy_stream_decode(model, u.features, decode)
        else:
            hyp = beam_decode(model, u.features, decode)[0]
        refs.append(list(u.target_ids))
        hyps.append(list(hyp.tokens))
        lat.append((hyp.delays, u.features.T))
        records.append(DecodeRecord(u.uid, b.lang, list(hyp.tokens), hyp.score, list(hyp.delays), u.features.T))
    return EvalResult(evaluate_hypotheses(refs, hyps, lat), records)

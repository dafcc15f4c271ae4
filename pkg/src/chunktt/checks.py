"""Built-in oracle suite behind ``chunktt verify``.

Each check compares a production code path with an independent reference
(finite differences, explicit alignment enumeration, one-shot encoding,
boolean mask composition) and reports the worst discrepancy seen.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import masking
from .decoding import DecodeConfig, greedy_stream_decode
from .lattice import brute_force_nll, loss as lattice_loss
from .masking import ChunkMaskSpec, chunk_end
from .model import SOS, FeatureSequence, ModelConfig, TransducerModel

GRAD_CONFIG = ModelConfig(feature_dim=3, hidden_dim=4, num_layers=2, num_heads=2, ff_dim=6,
                          predictor_dim=3, joint_dim=4, chunk_size=2, left_chunks=1)
STREAM_CONFIG = ModelConfig(feature_dim=6, hidden_dim=16, num_layers=3, num_heads=2, ff_dim=24,
                            predictor_dim=12, joint_dim=12, chunk_size=2, left_chunks=1)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0

    def row(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<18} {status:<6} {self.value:<12.3e} {self.threshold:<10.1e} {self.detail}"


def _timed(fn: Callable[[], CheckResult]) -> CheckResult:
    start = time.perf_counter()
    res = fn()
    res.seconds = time.perf_counter() - start
    return res


def random_log_probs(rng: np.random.Generator, T: int, U: int, V: int) -> np.ndarray:
    z = rng.normal(size=(T, U + 1, V)) * 2.0
    return z - np.logaddexp.reduce(z, axis=-1, keepdims=True)


def check_lattice(instances: int = 100, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    """Lattice loss against explicit enumeration of every monotone alignment."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        T, U, V = int(rng.integers(1, 5)), int(rng.integers(0, 4)), int(rng.integers(2, 4))
        lp = random_log_probs(rng, T, U, V)
        y = list(rng.integers(1, V, size=U))
        worst = max(worst, abs(lattice_loss(lp, y) - brute_force_nll(lp, y)))
    return CheckResult("lattice", worst < tol, worst, tol, f"{instances} instances, T<=4 U<=3 V<=3")


def check_gradients(seed: int = 11, tol: float = 1e-4) -> CheckResult:
    """End-to-end gradient of the packed loss against central differences."""
    model = TransducerModel(GRAD_CONFIG, seed=0)
    model.add_branch("M", ["a", "b", "c"])
    rng = np.random.default_rng(seed)
    feats = [rng.normal(size=(6, GRAD_CONFIG.feature_dim))]
    targets = [[1, 3, 2]]
    params = list(model.trainable_parameters().values())
    err = ad.grad_check(lambda: model.loss("M", feats, targets), params)
    n = sum(p.size for p in params)
    return CheckResult("gradients", err < tol, err, tol, f"T=6 U=3, {n} parameters")


def offline_greedy(model: TransducerModel, branch, frames, spec: ChunkMaskSpec, max_symbols: int = 5):
    """Greedy search over the one-shot encoder output; reference for the streaming decoder."""
    enc = model.encode(frames, spec)
    T = len(enc)
    state = model.initial_predictor_state(branch)
    h, state = model.predict(branch, SOS, state)
    tokens, delays = [], []
    for t in range(T):
        for _ in range(max_symbols):
            k = int(np.argmax(model.joint(enc[t], h, branch)))
            if k == 0:
                break
            tokens.append(k)
            delays.append(chunk_end(t + 1, spec.chunk_size, T))
            h, state = model.predict(branch, k, state)
    return tokens, delays


def stream_encode(model: TransducerModel, frames: np.ndarray, spec: ChunkMaskSpec) -> np.ndarray:
    state = model.new_stream(spec)
    rows = []
    for start in range(0, len(frames), spec.chunk_size):
        out, state = model.encode_incremental(state, frames[start:start + spec.chunk_size])
        rows.append(out)
    return np.concatenate(rows)


def check_streaming(lengths=(1, 5, 11, 16), seed: int = 99, tol: float = 1e-10) -> CheckResult:
    """Incremental encoding and decoding against one-shot processing, U in {1,2,4}, L in {0,1,2}."""
    model = TransducerModel(STREAM_CONFIG, seed=1)
    model.add_branch("M", [f"m{i}" for i in range(5)])
    # lower the blank bias so the decoded hypotheses are not trivially empty
    model.branch("M").params["branch/M/joint/out/b"].data[0] = -1.0
    rng = np.random.default_rng(seed)
    worst, mismatches, emitted = 0.0, 0, 0
    for T in lengths:
        x = rng.normal(size=(T, STREAM_CONFIG.feature_dim))
        for U in (1, 2, 4):
            for L in (0, 1, 2):
                spec = ChunkMaskSpec(U, L, STREAM_CONFIG.num_layers)
                worst = max(worst, float(np.abs(stream_encode(model, x, spec) - model.encode(x, spec)).max()))
                hyp = greedy_stream_decode(model, FeatureSequence(x), DecodeConfig("M", spec=spec))
                ref = offline_greedy(model, "M", x, spec)
                mismatches += (hyp.tokens, hyp.delays) != ref
                emitted += len(hyp.tokens)
    ok = worst < tol and mismatches == 0
    return CheckResult("streaming", ok, worst, tol, f"{mismatches} hypothesis mismatches, {emitted} tokens compared")


def check_receptive_fields(configs=None) -> CheckResult:
    """Closed-form receptive fields against the layer-fold composition of the mask."""
    configs = configs or [(U, L, n, T) for U in (1, 2, 3, 4) for L in (0, 1, 2) for n in (1, 2, 3) for T in (7, 13)]
    bad = []
    # frame 10 with U=3, L=1 at layer 1 sees frames 7..12
    row = masking.reachable_keys(13, 1, ChunkMaskSpec(3, 1, 1))[9]
    if (np.flatnonzero(row) + 1).tolist() != list(range(7, 13)):
        bad.append("frame10")
    for U, L, n, T in configs:
        spec = ChunkMaskSpec(U, L, n)
        for layer in range(1, n + 1):
            reach = masking.reachable_keys(T, layer, spec)
            for q in range(T):
                lo, hi = masking.receptive_field(q + 1, layer, spec, T)
                expect = np.zeros(T, dtype=bool)
                expect[lo - 1:hi] = True
                if not np.array_equal(reach[q], expect):
                    bad.append(f"U={U} L={L} layer={layer} frame={q + 1}")
    detail = f"{len(configs)} configs" + (f"; first failure {bad[0]}" if bad else "")
    return CheckResult("receptive-field", not bad, float(len(bad)), 0.5, detail)


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "receptive-field": check_receptive_fields,
    "lattice": check_lattice,
    "gradients": check_gradients,
    "streaming": check_streaming,
}


def run_checks(names=None) -> list[CheckResult]:
    out = []
    for name in names or CHECKS:
        try:
            out.append(_timed(CHECKS[name]))
        except Exception as exc:  # a crashing oracle counts as a failure
            out.append(CheckResult(name, False, float("nan"), float("nan"), f"error: {exc!r}"))
    return out


def format_table(results: list[CheckResult]) -> str:
    head = f"{'check':<18} {'status':<6} {'worst':<12} {'tolerance':<10} detail"
    return "\n".join([head] + [r.row() + f" ({r.seconds:.1f}s)" for r in results])

"""Transformer-Transducer with one shared streaming encoder and per-language branches.

The encoder is a pre-norm Transformer stack run under a chunked attention
mask.  Each output language owns a branch: a gated recurrent prediction
network over previously emitted tokens plus a feed-forward joint network.
Adding a language adds a branch and leaves the encoder alone.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .lattice import batch_transducer_loss
from .masking import ChunkMaskSpec, packed_chunk_mask

BLANK = 0
SOS = -1  # start-of-sequence marker fed to the predictor before any emission

CHECKPOINT_MAGIC = b"CKTT"
CHECKPOINT_VERSION = 1


class StreamOrderError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 16
    hidden_dim: int = 64
    num_layers: int = 4
    num_heads: int = 4
    ff_dim: int = 128
    predictor_layers: int = 1
    predictor_dim: int = 64
    joint_dim: int = 64
    chunk_size: int = 4
    left_chunks: int = 1
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("feature_dim", "hidden_dim", "num_layers", "num_heads", "ff_dim",
                     "predictor_layers", "predictor_dim", "joint_dim", "chunk_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")
        if self.left_chunks < 0:
            raise ValueError("left_chunks must be >= 0")

    @property
    def mask_spec(self) -> ChunkMaskSpec:
        return ChunkMaskSpec(self.chunk_size, self.left_chunks, self.num_layers)

    def with_mask(self, spec: ChunkMaskSpec) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), "chunk_size": spec.chunk_size, "left_chunks": spec.left_chunks})


class FeatureSequence:
    """T x D feature frames plus side metadata the model never reads.

    Model code only touches ``frames``; ``metadata`` (e.g. the source language)
    exists for corpus bookkeeping and evaluation.
    """

    __slots__ = ("_frames", "_metadata")

    def __init__(self, frames, metadata: Mapping | None = None):
        arr = np.asarray(frames, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"frames must be 2-D (T, D), got shape {arr.shape}")
        self._frames = arr
        self._metadata = MappingProxyType(dict(metadata or {}))

    @property
    def frames(self) -> np.ndarray:
        return self._frames

    @property
    def metadata(self) -> Mapping:
        return self._metadata

    @property
    def T(self) -> int:
        return self._frames.shape[0]

    @property
    def D(self) -> int:
        return self._frames.shape[1]

    def __len__(self):
        return self.T

    def chunks(self, chunk_size: int) -> list["FeatureSequence"]:
        return [FeatureSequence(self._frames[i:i + chunk_size]) for i in range(0, self.T, chunk_size)]


def _frames_of(x) -> np.ndarray:
    return x.frames if isinstance(x, FeatureSequence) else np.asarray(x, dtype=np.float64)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape or (fan_in, fan_out))


def sinusoidal_positions(start: int, count: int, dim: int) -> np.ndarray:
    pos = np.arange(start, start + count, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2 * i / dim)
    out = np.zeros((count, dim))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)[:, : dim - dim // 2]
    return out


# ---------------------------------------------------------------- encoder


class Encoder:
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        c = config
        self.config = c
        p: dict[str, ad.Tensor] = {}
        p["encoder/input/w"] = ad.parameter(_glorot(rng, c.feature_dim, c.hidden_dim))
        p["encoder/input/b"] = ad.parameter(np.zeros(c.hidden_dim))
        for i in range(c.num_layers):
            pre = f"encoder/layer{i}"
            p[f"{pre}/ln1/g"] = ad.parameter(np.ones(c.hidden_dim))
            p[f"{pre}/ln1/b"] = ad.parameter(np.zeros(c.hidden_dim))
            p[f"{pre}/attn/qkv/w"] = ad.parameter(_glorot(rng, c.hidden_dim, 3 * c.hidden_dim))
            p[f"{pre}/attn/qkv/b"] = ad.parameter(np.zeros(3 * c.hidden_dim))
            p[f"{pre}/attn/out/w"] = ad.parameter(_glorot(rng, c.hidden_dim, c.hidden_dim))
            p[f"{pre}/attn/out/b"] = ad.parameter(np.zeros(c.hidden_dim))
            p[f"{pre}/ln2/g"] = ad.parameter(np.ones(c.hidden_dim))
            p[f"{pre}/ln2/b"] = ad.parameter(np.zeros(c.hidden_dim))
            p[f"{pre}/ff1/w"] = ad.parameter(_glorot(rng, c.hidden_dim, c.ff_dim))
            p[f"{pre}/ff1/b"] = ad.parameter(np.zeros(c.ff_dim))
            p[f"{pre}/ff2/w"] = ad.parameter(_glorot(rng, c.ff_dim, c.hidden_dim))
            p[f"{pre}/ff2/b"] = ad.parameter(np.zeros(c.hidden_dim))
        p["encoder/final_ln/g"] = ad.parameter(np.ones(c.hidden_dim))
        p["encoder/final_ln/b"] = ad.parameter(np.zeros(c.hidden_dim))
        for name, t in p.items():
            t.name = name
        self.params = p

    def _embed(self, frames: np.ndarray, positions: np.ndarray) -> ad.Tensor:
        p = self.params
        if frames.shape[1] != self.config.feature_dim:
            raise ad.DimensionError(f"feature dim {frames.shape[1]} != configured {self.config.feature_dim}")
        x = ad.add(ad.matmul(ad.constant(frames), p["encoder/input/w"]), p["encoder/input/b"])
        return ad.add(x, ad.constant(positions))

    def _split_heads(self, x: ad.Tensor, keys: bool = False) -> ad.Tensor:
        n = x.shape[0]
        h = self.config.num_heads
        x3 = ad.reshape(x, (n, h, self.config.hidden_dim // h))
        return ad.transpose(x3, (1, 2, 0) if keys else (1, 0, 2))

    def _attention(self, i: int, x_q: ad.Tensor, k: ad.Tensor, v: ad.Tensor, q: ad.Tensor, mask) -> ad.Tensor:
        p = self.params
        c = self.config
        pre = f"encoder/layer{i}"
        qh = self._split_heads(q)
        kh = self._split_heads(k, keys=True)
        vh = self._split_heads(v)
        scores = ad.scale(ad.matmul(qh, kh), 1.0 / math.sqrt(c.hidden_dim // c.num_heads))
        if mask is None:
            attn = ad.softmax(scores)
        else:
            attn = ad.masked_softmax(scores, mask)
        ctx = ad.matmul(attn, vh)
        ctx = ad.reshape(ad.transpose(ctx, (1, 0, 2)), (x_q.shape[0], c.hidden_dim))
        out = ad.add(ad.matmul(ctx, p[f"{pre}/attn/out/w"]), p[f"{pre}/attn/out/b"])
        return ad.add(x_q, out)

    def _qkv(self, i: int, x: ad.Tensor):
        p = self.params
        H = self.config.hidden_dim
        pre = f"encoder/layer{i}"
        h = ad.layer_norm(x, p[f"{pre}/ln1/g"], p[f"{pre}/ln1/b"], self.config.ln_eps)
        qkv = ad.add(ad.matmul(h, p[f"{pre}/attn/qkv/w"]), p[f"{pre}/attn/qkv/b"])
        return ad.slice(qkv, 0, H, axis=1), ad.slice(qkv, H, 2 * H, axis=1), ad.slice(qkv, 2 * H, 3 * H, axis=1)

    def _feedforward(self, i: int, x: ad.Tensor) -> ad.Tensor:
        p = self.params
        pre = f"encoder/layer{i}"
        h = ad.layer_norm(x, p[f"{pre}/ln2/g"], p[f"{pre}/ln2/b"], self.config.ln_eps)
        h = ad.relu(ad.add(ad.matmul(h, p[f"{pre}/ff1/w"]), p[f"{pre}/ff1/b"]))
        h = ad.add(ad.matmul(h, p[f"{pre}/ff2/w"]), p[f"{pre}/ff2/b"])
        return ad.add(x, h)

    def _final(self, x: ad.Tensor) -> ad.Tensor:
        p = self.params
        return ad.layer_norm(x, p["encoder/final_ln/g"], p["encoder/final_ln/b"], self.config.ln_eps)

    def forward_packed(self, frame_list: Sequence[np.ndarray], spec: ChunkMaskSpec) -> ad.Tensor:
        """Encode several utterances at once, packed along time.

        The block-diagonal chunk mask keeps utterances from seeing each other,
        so each block of rows equals encoding that utterance alone.
        """
        lengths = [f.shape[0] for f in frame_list]
        frames = np.concatenate(frame_list, axis=0)
        pos = np.concatenate([sinusoidal_positions(0, n, self.config.hidden_dim) for n in lengths])
        mask = packed_chunk_mask(lengths, spec)
        x = self._embed(frames, pos)
        for i in range(self.config.num_layers):
            q, k, v = self._qkv(i, x)
            x = self._attention(i, x, k, v, q, mask)
            x = self._feedforward(i, x)
        return self._final(x)

    def parameter_count(self) -> int:
        return sum(t.size for t in self.params.values())


@dataclass
class StreamState:
    """Per-utterance incremental encoding state.

    ``cache[l]`` holds the key/value rows layer ``l`` can still attend to: the
    most recent ``left_chunks`` complete chunks.
    """

    spec: ChunkMaskSpec
    frames_seen: int = 0
    finished: bool = False
    cache: list[list[tuple[np.ndarray, np.ndarray]]] = field(default_factory=list)


# ---------------------------------------------------------------- branches


@dataclass
class PredictorState:
    hidden: tuple[np.ndarray, ...]
    last_token: int = SOS


class Branch:
    """Prediction + joint network for one output language."""

    def __init__(self, branch_id: int, lang: str, vocab: Sequence[str], config: ModelConfig, rng: np.random.Generator):
        if not vocab:
            raise ValueError("vocabulary must not be empty")
        self.branch_id = branch_id
        self.lang = lang
        self.vocab = list(vocab)
        self.config = config
        c = config
        V = self.output_size
        P = c.predictor_dim
        pre = f"branch/{lang}"
        p: dict[str, ad.Tensor] = {}
        # row 0 of the embedding is the start-of-sequence input (blank is never fed)
        p[f"{pre}/pred/embed"] = ad.parameter(_glorot(rng, V, P))
        for l in range(c.predictor_layers):
            fan_in = P
            p[f"{pre}/pred/l{l}/wx"] = ad.parameter(_glorot(rng, fan_in, 3 * P))
            p[f"{pre}/pred/l{l}/wh"] = ad.parameter(_glorot(rng, P, 3 * P))
            p[f"{pre}/pred/l{l}/bx"] = ad.parameter(np.zeros(3 * P))
            p[f"{pre}/pred/l{l}/bh"] = ad.parameter(np.zeros(3 * P))
        p[f"{pre}/joint/enc/w"] = ad.parameter(_glorot(rng, c.hidden_dim, c.joint_dim))
        p[f"{pre}/joint/enc/b"] = ad.parameter(np.zeros(c.joint_dim))
        p[f"{pre}/joint/pred/w"] = ad.parameter(_glorot(rng, P, c.joint_dim))
        p[f"{pre}/joint/out/w"] = ad.parameter(_glorot(rng, c.joint_dim, V))
        p[f"{pre}/joint/out/b"] = ad.parameter(np.zeros(V))
        for name, t in p.items():
            t.name = name
        self.params = p
        self._pre = pre

    @property
    def output_size(self) -> int:
        """Vocabulary plus blank."""
        return len(self.vocab) + 1

    def _p(self, key: str) -> ad.Tensor:
        return self.params[f"{self._pre}/{key}"]

    def predictor_params(self) -> dict[str, ad.Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith(f"{self._pre}/pred/")}

    def joint_params(self) -> dict[str, ad.Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith(f"{self._pre}/joint/")}

    def parameter_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def token_rows(self, tokens) -> np.ndarray:
        ids = np.asarray(tokens, dtype=np.int64)
        if np.any(ids == BLANK):
            raise ValueError("blank never advances the prediction network")
        if np.any((ids < SOS) | (ids >= self.output_size)):
            raise ValueError(f"token id out of range for branch {self.lang!r}")
        return np.where(ids == SOS, 0, ids)

    def gru_step(self, tokens, hidden: Sequence[ad.Tensor]) -> list[ad.Tensor]:
        """One recurrent step for a batch of tokens; returns new per-layer hidden states."""
        P = self.config.predictor_dim
        x = ad.embedding(self._p("pred/embed"), self.token_rows(tokens))
        out = []
        for l, h in enumerate(hidden):
            gx = ad.add(ad.matmul(x, self._p(f"pred/l{l}/wx")), self._p(f"pred/l{l}/bx"))
            gh = ad.add(ad.matmul(h, self._p(f"pred/l{l}/wh")), self._p(f"pred/l{l}/bh"))
            r = ad.sigmoid(ad.add(ad.slice(gx, 0, P, axis=1), ad.slice(gh, 0, P, axis=1)))
            z = ad.sigmoid(ad.add(ad.slice(gx, P, 2 * P, axis=1), ad.slice(gh, P, 2 * P, axis=1)))
            n = ad.tanh(ad.add(ad.slice(gx, 2 * P, 3 * P, axis=1), ad.mul(r, ad.slice(gh, 2 * P, 3 * P, axis=1))))
            h_new = ad.add(n, ad.mul(z, ad.sub(h, n)))
            out.append(h_new)
            x = h_new
        return out

    def enc_proj(self, h_enc: ad.Tensor) -> ad.Tensor:
        return ad.add(ad.matmul(h_enc, self._p("joint/enc/w")), self._p("joint/enc/b"))

    def pred_proj(self, h_pre: ad.Tensor) -> ad.Tensor:
        return ad.matmul(h_pre, self._p("joint/pred/w"))

    def output(self, hidden: ad.Tensor) -> ad.Tensor:
        return ad.add(ad.matmul(ad.tanh(hidden), self._p("joint/out/w")), self._p("joint/out/b"))

    def joint_grid(self, e: ad.Tensor, q: ad.Tensor) -> ad.Tensor:
        """Logits for every (frame, label) pair: (T, U+1, V) from projected inputs."""
        T, U1 = e.shape[0], q.shape[0]
        g = ad.reshape(ad.outer_add(e, q), (T * U1, self.config.joint_dim))
        return ad.reshape(self.output(g), (T, U1, self.output_size))


# ---------------------------------------------------------------- model


class TransducerModel:
    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        self.seed = seed
        self.encoder = Encoder(self.config, np.random.default_rng(seed))
        self.branches: dict[str, Branch] = {}
        self.encoder_frozen = False

    # -- branches

    def add_branch(self, target_lang: str, vocab: Sequence[str], seed: int | None = None) -> int:
        if target_lang in self.branches:
            raise ValueError(f"branch for language {target_lang!r} already exists")
        branch_id = len(self.branches)
        if seed is None:
            seed = self.seed + 1000 + branch_id
        rng = np.random.default_rng(seed)
        self.branches[target_lang] = Branch(branch_id, target_lang, vocab, self.config, rng)
        return branch_id

    def branch(self, key) -> Branch:
        if isinstance(key, Branch):
            key = key.lang
        if isinstance(key, int):
            for b in self.branches.values():
                if b.branch_id == key:
                    return b
            raise KeyError(f"unknown branch id {key}")
        if key not in self.branches:
            raise KeyError(f"unknown branch {key!r}")
        return self.branches[key]

    def freeze_encoder(self) -> None:
        self.encoder_frozen = True
        for t in self.encoder.params.values():
            t.requires_grad = False
            t.trainable = False
            t.grad = None

    def unfreeze_encoder(self) -> None:
        self.encoder_frozen = False
        for t in self.encoder.params.values():
            t.requires_grad = True
            t.trainable = True

    # -- parameters

    def named_parameters(self) -> dict[str, ad.Tensor]:
        out = dict(self.encoder.params)
        for b in self.branches.values():
            out.update(b.params)
        return out

    def trainable_parameters(self, branch=None) -> dict[str, ad.Tensor]:
        out = {} if self.encoder_frozen else dict(self.encoder.params)
        branches = self.branches.values() if branch is None else [self.branch(branch)]
        for b in branches:
            out.update(b.params)
        return out

    def parameter_count(self) -> int:
        return sum(t.size for t in self.named_parameters().values())

    # -- encoder

    def _spec(self, spec: ChunkMaskSpec | None) -> ChunkMaskSpec:
        if spec is None:
            return self.config.mask_spec
        return ChunkMaskSpec(spec.chunk_size, spec.left_chunks, self.config.num_layers)

    def encode(self, features, spec: ChunkMaskSpec | None = None) -> np.ndarray:
        """Encoder output (T, H) for one utterance, no graph recorded."""
        frames = _frames_of(features)
        if frames.shape[0] == 0:
            return np.zeros((0, self.config.hidden_dim))
        with ad.no_grad():
            return self.encoder.forward_packed([frames], self._spec(spec)).data

    def encode_batch(self, features: Sequence, spec: ChunkMaskSpec | None = None) -> ad.Tensor:
        """Packed encoder output tensor; records the graph unless the encoder is frozen."""
        return self.encoder.forward_packed([_frames_of(f) for f in features], self._spec(spec))

    def new_stream(self, spec: ChunkMaskSpec | None = None) -> StreamState:
        spec = self._spec(spec)
        return StreamState(spec=spec, cache=[[] for _ in range(self.config.num_layers)])

    def encode_incremental(self, state: StreamState, chunk, offset: int | None = None) -> tuple[np.ndarray, StreamState]:
        """Encode the next chunk of a stream; returns its encoder rows and the new state.

        ``chunk`` holds at most ``chunk_size`` frames.  A short chunk ends the
        stream.  ``offset``, when given, must equal the number of frames
        already consumed.
        """
        frames = _frames_of(chunk)
        n = frames.shape[0]
        U = state.spec.chunk_size
        if offset is not None and offset != state.frames_seen:
            raise StreamOrderError(f"chunk starts at frame {offset}, stream is at frame {state.frames_seen}")
        if n == 0:
            return np.zeros((0, self.config.hidden_dim)), state
        if state.finished:
            raise StreamOrderError("stream already ended with a partial chunk")
        if n > U:
            raise StreamOrderError(f"chunk of {n} frames exceeds chunk size {U}")
        enc = self.encoder
        L = state.spec.left_chunks
        new_cache = []
        with ad.no_grad():
            x = enc._embed(frames, sinusoidal_positions(state.frames_seen, n, self.config.hidden_dim))
            for i in range(self.config.num_layers):
                q, k, v = enc._qkv(i, x)
                past = state.cache[i]
                k_all = ad.concat([ad.constant(pk) for pk, _ in past] + [k], axis=0)
                v_all = ad.concat([ad.constant(pv) for _, pv in past] + [v], axis=0)
                x = enc._attention(i, x, k_all, v_all, q, None)
                x = enc._feedforward(i, x)
                kept = (past + [(k.data, v.data)])[-L:] if L else []
                new_cache.append(kept)
            out = enc._final(x).data
        new_state = StreamState(spec=state.spec, frames_seen=state.frames_seen + n,
                                finished=n < U, cache=new_cache)
        return out, new_state

    # -- predictor / joint

    def initial_predictor_state(self, branch) -> PredictorState:
        b = self.branch(branch)
        P = self.config.predictor_dim
        return PredictorState(hidden=tuple(np.zeros(P) for _ in range(b.config.predictor_layers)))

    def predict(self, branch, token: int, state: PredictorState) -> tuple[np.ndarray, PredictorState]:
        """Advance the predictor by one non-blank token (or ``SOS``)."""
        b = self.branch(branch)
        if token == BLANK:
            raise ValueError("blank never advances the prediction network")
        with ad.no_grad():
            hidden = [ad.constant(h[None, :]) for h in state.hidden]
            new = b.gru_step([token], hidden)
        new_hidden = tuple(h.data[0].copy() for h in new)
        return new_hidden[-1], PredictorState(hidden=new_hidden, last_token=token)

    def joint(self, h_enc, h_pre, branch) -> np.ndarray:
        """Unnormalised logits over blank + vocabulary for one (frame, label) pair."""
        b = self.branch(branch)
        with ad.no_grad():
            e = b.enc_proj(ad.constant(np.atleast_2d(h_enc)))
            q = b.pred_proj(ad.constant(np.atleast_2d(h_pre)))
            return b.output(ad.add(e, q)).data[0]

    def predictor_outputs(self, branch, targets: Sequence[Sequence[int]]) -> list[ad.Tensor]:
        """Teacher-forced predictor outputs, one (U_i+1, P) tensor per target sequence."""
        b = self.branch(branch)
        B = len(targets)
        maxU = max(len(t) for t in targets)
        P = self.config.predictor_dim
        hidden = [ad.constant(np.zeros((B, P))) for _ in range(self.config.predictor_layers)]
        steps = []
        for s in range(maxU + 1):
            toks = [SOS if s == 0 or s > len(t) else int(t[s - 1]) for t in targets]
            hidden = b.gru_step(toks, hidden)
            steps.append(hidden[-1])
        stacked = ad.concat(steps, axis=0) if len(steps) > 1 else steps[0]
        return [ad.embedding(stacked, [s * B + i for s in range(len(t) + 1)]) for i, t in enumerate(targets)]

    def loss(self, branch, features: Sequence, targets: Sequence[Sequence[int]],
             spec: ChunkMaskSpec | None = None, encoded: Sequence | None = None) -> ad.Tensor:
        """Token-normalised transducer loss for a batch.

        ``encoded`` optionally supplies precomputed (T_i, H) encoder outputs,
        which is valid only while the encoder is frozen.
        """
        b = self.branch(branch)
        if encoded is None:
            enc = self.encode_batch(features, spec)
            lengths = [_frames_of(f).shape[0] for f in features]
            e_all = b.enc_proj(enc)
            bounds = np.cumsum([0] + lengths)
            e_list = [ad.slice(e_all, bounds[i], bounds[i + 1], axis=0) for i in range(len(lengths))]
        else:
            e_all = b.enc_proj(ad.constant(np.concatenate(list(encoded), axis=0)))
            bounds = np.cumsum([0] + [x.shape[0] for x in encoded])
            e_list = [ad.slice(e_all, bounds[i], bounds[i + 1], axis=0) for i in range(len(encoded))]
        h_pre = self.predictor_outputs(b, targets)
        items = []
        for e, hp, y in zip(e_list, h_pre, targets):
            logits = b.joint_grid(e, b.pred_proj(hp))
            items.append((ad.log_softmax(logits), list(y)))
        return batch_transducer_loss(items)

    # -- checkpoints

    def save(self, path) -> None:
        header = {
            "config": asdict(self.config),
            "seed": self.seed,
            "encoder_frozen": self.encoder_frozen,
            "branches": [{"id": b.branch_id, "lang": b.lang, "vocab": b.vocab} for b in self.branches.values()],
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        params = self.named_parameters()
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", len(params)))
            for name, t in params.items():
                nb = name.encode("utf-8")
                fh.write(struct.pack("<H", len(nb)))
                fh.write(nb)
                fh.write(struct.pack("<B", t.data.ndim))
                fh.write(struct.pack(f"<{t.data.ndim}I", *t.shape))
                fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "TransducerModel":
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:4] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack_from("<II", raw, 4)
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        model = cls(ModelConfig(**header["config"]), seed=header["seed"])
        for b in sorted(header["branches"], key=lambda b: b["id"]):
            model.add_branch(b["lang"], b["vocab"], seed=0)
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        params = model.named_parameters()
        seen = set()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            n = int(np.prod(shape))
            data = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(shape)
            pos += 8 * n
            if name not in params or params[name].shape != tuple(shape):
                raise ValueError(f"{path}: unexpected parameter {name} {shape}")
            params[name].data = data.astype(np.float64)
            seen.add(name)
        missing = set(params) - seen
        if missing:
            raise ValueError(f"{path}: missing parameters {sorted(missing)[:3]}")
        if header["encoder_frozen"]:
            model.freeze_encoder()
        return model

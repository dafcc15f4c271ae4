"""Synthetic multilingual speech/text corpora with controlled language pairs.

A suite fixes a semantic vocabulary.  Every source language renders a
semantic token as a short random feature motif (its "pronunciation"), and
every target language spells it with its own token id via a bijection, so
the suite doubles as an exact translator.  Corpora list which
(source, target) pairs were generated, which makes held-out pairs checkable
from the manifest alone.

File formats
------------
Feature file: two little-endian int64 (T, D) followed by T*D little-endian
float64 values, row-major.

Manifest: UTF-8, one utterance per line, tab-separated columns
``id, source_lang, target_lang, feature_path, target_ids, semantic_ids,
split``; id lists are space-joined.  Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import os
import struct
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import FeatureSequence

SOURCE_NAMES = "ABCDEFGHIJKL"
TARGET_NAMES = "MNOPQRSTUVWXYZ"
MANIFEST_COLUMNS = ("id", "source_lang", "target_lang", "feature_path", "target_ids", "semantic_ids", "split")


class SuiteGenerationError(RuntimeError):
    pass


@dataclass
class LanguageSuite:
    vocab_size: int
    feature_dim: int
    motifs: dict[str, list[np.ndarray]]  # source lang -> per semantic token (len, D) motif
    spellings: dict[str, np.ndarray]  # target lang -> text id (1..V) for each semantic token
    seed: int

    @property
    def source_langs(self) -> list[str]:
        return list(self.motifs)

    @property
    def target_langs(self) -> list[str]:
        return list(self.spellings)

    def target_vocab(self, target_lang: str) -> list[str]:
        """Display strings for text ids 1..V of ``target_lang``."""
        return [f"{target_lang.lower()}{i}" for i in range(1, self.vocab_size + 1)]


def _motif_distance(a: np.ndarray, b: np.ndarray, width: int) -> float:
    pa = np.zeros((width, a.shape[1]))
    pb = np.zeros((width, b.shape[1]))
    pa[: len(a)] = a
    pb[: len(b)] = b
    return float(np.linalg.norm(pa - pb))


def motif_bank_min_distance(suite: LanguageSuite) -> float:
    """Smallest distance between any two motifs of the suite (zero-padded, flattened)."""
    bank = [m for lang in suite.motifs.values() for m in lang]
    width = max(len(m) for m in bank)
    flat = np.stack([np.pad(m, ((0, width - len(m)), (0, 0))).ravel() for m in bank])
    sq = (flat * flat).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2 * flat @ flat.T
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(max(d2.min(), 0.0)))


def make_suite(
    num_source: int,
    num_target: int,
    vocab_size: int = 20,
    feature_dim: int = 16,
    seed: int = 0,
    motif_len: tuple[int, int] = (2, 4),
    floor: float = 0.5,
    max_tries: int = 100,
) -> LanguageSuite:
    """Draw motif banks and spelling bijections deterministically from ``seed``."""
    if min(num_source, num_target, vocab_size, feature_dim) < 1:
        raise ValueError("all suite sizes must be positive")
    if num_source > len(SOURCE_NAMES) or num_target > len(TARGET_NAMES):
        raise ValueError("too many languages for the naming scheme")
    lo, hi = motif_len
    for attempt in range(max_tries):
        rng = np.random.default_rng([seed, attempt])
        motifs = {
            SOURCE_NAMES[i]: [rng.normal(size=(int(rng.integers(lo, hi + 1)), feature_dim)) for _ in range(vocab_size)]
            for i in range(num_source)
        }
        spellings = {TARGET_NAMES[j]: rng.permutation(vocab_size) + 1 for j in range(num_target)}
        suite = LanguageSuite(vocab_size, feature_dim, motifs, spellings, seed)
        if motif_bank_min_distance(suite) > floor:
            return suite
    raise SuiteGenerationError(f"motif distance floor {floor} not reached after {max_tries} tries")


def render_utterance(suite: LanguageSuite, semantics: Sequence[int], source_lang, sigma: float = 0.05,
                     rng: np.random.Generator | int | None = None) -> FeatureSequence:
    """Concatenate the motifs of ``semantics`` and add Gaussian noise.

    ``source_lang`` may also be a per-token list of languages, which yields a
    code-switched utterance.
    """
    langs = [source_lang] * len(semantics) if isinstance(source_lang, str) else list(source_lang)
    if len(langs) != len(semantics):
        raise ValueError("need one source language per semantic token")
    for s in semantics:
        if not 0 <= s < suite.vocab_size:
            raise ValueError(f"semantic token {s} out of range")
    parts = [suite.motifs[lang][s] for s, lang in zip(semantics, langs)]
    clean = np.concatenate(parts, axis=0) if parts else np.zeros((0, suite.feature_dim))
    if sigma > 0:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        clean = clean + rng.normal(scale=sigma, size=clean.shape)
    meta = {"source_lang": source_lang if isinstance(source_lang, str) else tuple(langs),
            "semantics": tuple(int(s) for s in semantics)}
    return FeatureSequence(clean, metadata=meta)


def render_text(suite: LanguageSuite, semantics: Sequence[int], target_lang: str) -> list[int]:
    spell = suite.spellings[target_lang]
    for s in semantics:
        if not 0 <= s < suite.vocab_size:
            raise ValueError(f"semantic token {s} out of range")
    return [int(spell[s]) for s in semantics]


def read_text(suite: LanguageSuite, text_ids: Sequence[int], target_lang: str) -> list[int]:
    """Inverse of :func:`render_text`."""
    inv = np.empty(suite.vocab_size + 1, dtype=np.int64)
    inv[suite.spellings[target_lang]] = np.arange(suite.vocab_size)
    return [int(inv[t]) for t in text_ids]


def frame_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    noise = noisy - clean
    return float(10 * np.log10((clean * clean).sum() / (noise * noise).sum()))


# ---------------------------------------------------------------- files


def write_features(path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<qq", *frames.shape))
        fh.write(frames.tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    T, D = struct.unpack_from("<qq", raw, 0)
    if len(raw) != 16 + 8 * T * D:
        raise ValueError(f"{path}: size does not match header ({T}, {D})")
    return np.frombuffer(raw, dtype="<f8", offset=16).reshape(T, D).astype(np.float64)


@dataclass(frozen=True)
class ManifestEntry:
    uid: str
    source_lang: str
    target_lang: str
    feature_path: str
    target_ids: tuple[int, ...]
    semantic_ids: tuple[int, ...]
    split: str

    def to_line(self) -> str:
        return "\t".join([self.uid, self.source_lang, self.target_lang, self.feature_path,
                          " ".join(map(str, self.target_ids)), " ".join(map(str, self.semantic_ids)), self.split])

    @classmethod
    def from_line(cls, line: str) -> "ManifestEntry":
        cols = line.rstrip("\n").split("\t")
        if len(cols) != len(MANIFEST_COLUMNS):
            raise ValueError(f"manifest line has {len(cols)} columns, expected {len(MANIFEST_COLUMNS)}")
        ids = lambda s: tuple(int(x) for x in s.split())  # noqa: E731
        return cls(cols[0], cols[1], cols[2], cols[3], ids(cols[4]), ids(cols[5]), cols[6])


@dataclass
class Utterance:
    uid: str
    features: FeatureSequence
    target_ids: list[int]
    source_lang: str
    target_lang: str


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    root: Path | None = None
    features: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def pairs(self, split: str | None = None) -> Counter:
        return Counter((e.source_lang, e.target_lang) for e in self.entries if split is None or e.split == split)

    def select(self, split: str | None = None, pairs: Iterable[tuple[str, str]] | None = None) -> "CorpusManifest":
        keep = None if pairs is None else set(map(tuple, pairs))
        entries = [e for e in self.entries
                   if (split is None or e.split == split) and (keep is None or (e.source_lang, e.target_lang) in keep)]
        feats = {e.uid: self.features[e.uid] for e in entries if e.uid in self.features}
        return CorpusManifest(entries, self.root, feats)

    def frames(self, entry: ManifestEntry) -> np.ndarray:
        if entry.uid in self.features:
            return self.features[entry.uid]
        path = Path(entry.feature_path)
        if not path.is_absolute() and self.root is not None:
            path = self.root / path
        if not path.exists():
            raise FileNotFoundError(f"missing feature file {path}")
        return read_features(path)

    def utterances(self, split: str | None = None) -> list[Utterance]:
        return [Utterance(e.uid, FeatureSequence(self.frames(e), {"source_lang": e.source_lang}),
                          list(e.target_ids), e.source_lang, e.target_lang)
                for e in self.entries if split is None or e.split == split]

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# " + "\t".join(MANIFEST_COLUMNS) + "\n")
            for e in self.entries:
                fh.write(e.to_line() + "\n")

    @classmethod
    def read(cls, path) -> "CorpusManifest":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            entries = [ManifestEntry.from_line(l) for l in fh if l.strip() and not l.startswith("#")]
        return cls(entries, root=path.parent)

    def __len__(self):
        return len(self.entries)


def utterance_rng(seed: int, uid: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(uid.encode("utf-8"))])


def parse_pairs(spec: str) -> list[tuple[str, str]]:
    """Parse ``"A>M,B>M"`` into ``[("A", "M"), ("B", "M")]``."""
    pairs = []
    for item in spec.split(","):
        item = item.strip()
        parts = item.split(">")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise ValueError(f"malformed pair {item!r}; expected SRC>TGT")
        pairs.append((parts[0].strip(), parts[1].strip()))
    if not pairs:
        raise ValueError("empty pair spec")
    return pairs


def generate_corpus(
    suite: LanguageSuite,
    pairs: Sequence[tuple[str, str]],
    out_dir=None,
    train_per_pair: int = 200,
    test_per_pair: int = 50,
    length_range: tuple[int, int] = (3, 8),
    sigma: float = 0.05,
    seed: int = 0,
    exclude: Iterable[Sequence[int]] = (),
) -> CorpusManifest:
    """Render utterances for every declared (source, target) pair.

    Test semantics never repeat a training semantic sequence (nor anything in
    ``exclude``).  With ``out_dir`` the manifest and feature files are written
    there; otherwise features stay in memory.
    """
    pairs = [tuple(p) for p in pairs]
    if not pairs:
        raise ValueError("pair set must not be empty")
    for s, t in pairs:
        if s not in suite.motifs:
            raise ValueError(f"unknown source language {s!r}")
        if t not in suite.spellings:
            raise ValueError(f"unknown target language {t!r}")
    lo, hi = length_range
    if not 1 <= lo <= hi:
        raise ValueError("bad length range")
    root = None
    if out_dir is not None:
        root = Path(out_dir)
        (root / "feats").mkdir(parents=True, exist_ok=True)

    taken = {tuple(x) for x in exclude}
    entries: list[ManifestEntry] = []
    feats: dict[str, np.ndarray] = {}

    def emit(split, src, tgt, k):
        uid = f"{split}-{src}{tgt}-{k:05d}"
        rng = utterance_rng(seed, uid)
        while True:
            sem = tuple(int(x) for x in rng.integers(0, suite.vocab_size, size=int(rng.integers(lo, hi + 1))))
            if split == "train" or sem not in taken:
                break
        if split == "train":
            train_sems.add(sem)
        fs = render_utterance(suite, sem, src, sigma, rng)
        rel = os.path.join("feats", f"{uid}.f64")
        if root is not None:
            write_features(root / rel, fs.frames)
        else:
            feats[uid] = fs.frames
        entries.append(ManifestEntry(uid, src, tgt, rel, tuple(render_text(suite, sem, tgt)), sem, split))

    train_sems: set = set()
    for src, tgt in pairs:
        for k in range(train_per_pair):
            emit("train", src, tgt, k)
    taken |= train_sems
    for src, tgt in pairs:
        for k in range(test_per_pair):
            emit("test", src, tgt, k)

    manifest = CorpusManifest(entries, root, feats)
    if root is not None:
        manifest.write(root / "manifest.tsv")
    return manifest

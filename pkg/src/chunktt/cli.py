"""Command-line entry point: ``chunktt <subcommand> [flags]``.

Every subcommand prints its effective configuration (all defaults filled in)
as ``key=value`` lines, which can be saved and passed back with ``--config``.
Flags given on the command line override values from the config file.

Exit codes: 0 success, 1 usage error, 2 verification failure, 3 runtime or
data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from . import checks
from .corpus import CorpusManifest, generate_corpus, make_suite, parse_pairs
from .decoding import MAX_BEAM, DecodeConfig, read_decode_log, write_decode_log
from .masking import FRAME_MS, ChunkMaskSpec
from .metrics import corpus_latency, write_latency_tsv, write_report
from .model import ModelConfig, TransducerModel
from .training import ExpansionPlan, TrainConfig, TrainingError, evaluate, expand, parse_key_values, train

log = logging.getLogger("chunktt")

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_RUNTIME = 0, 1, 2, 3
SUITE_FILE = "suite.cfg"
MANIFEST_FILE = "manifest.tsv"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class Option:
    dest: str
    type: Callable[[str], Any]
    default: Any
    help: str


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _pairs(text: str) -> list[tuple[str, str]]:
    try:
        return parse_pairs(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _flag(text: str) -> bool:
    if text.lower() in ("1", "true", "yes"):
        return True
    if text.lower() in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _format(value) -> str:
    if isinstance(value, list):
        return ",".join(f"{s}>{t}" for s, t in value)
    return "" if value is None else str(value)


TRAIN_OPTIONS = [
    Option("lr", float, TrainConfig.lr, "peak learning rate"),
    Option("warmup_steps", _positive, TrainConfig.warmup_steps, "linear warmup steps"),
    Option("batch_size", _positive, TrainConfig.batch_size, "utterances per batch"),
    Option("max_steps", _positive, TrainConfig.max_steps, "optimizer steps"),
    Option("seed", int, TrainConfig.seed, "seed for initialisation and batch order"),
    Option("clip_norm", float, TrainConfig.clip_norm, "global gradient-norm clip"),
    Option("eval_interval", _positive, TrainConfig.eval_interval, "steps between evaluations"),
]

_mc = ModelConfig()
MODEL_OPTIONS = [
    Option("hidden_dim", _positive, _mc.hidden_dim, "encoder width"),
    Option("num_layers", _positive, _mc.num_layers, "encoder layers"),
    Option("num_heads", _positive, _mc.num_heads, "attention heads"),
    Option("ff_dim", _positive, _mc.ff_dim, "feed-forward width"),
    Option("predictor_dim", _positive, _mc.predictor_dim, "prediction network width"),
    Option("joint_dim", _positive, _mc.joint_dim, "joint network width"),
    Option("chunk_frames", _positive, _mc.chunk_size, "chunk size U in frames"),
    Option("left_chunks", _non_negative, _mc.left_chunks, "left chunks L per layer"),
]

DECODE_OPTIONS = [
    Option("beam", _positive, 1, f"beam width (1 = greedy, max {MAX_BEAM})"),
    Option("max_symbols", _positive, 5, "symbol cap per frame"),
    Option("chunk_frames", _positive, None, "chunk size U (default: the model's)"),
    Option("left_chunks", _non_negative, None, "left chunks L (default: the model's)"),
    Option("offline", _flag, False, "one chunk per utterance (full context)"),
]

COMMANDS: dict[str, list[Option]] = {
    "gen-data": [
        Option("out", Path, None, "output directory"),
        Option("suite_seed", int, 0, "seed for motif banks and spellings"),
        Option("sources", _positive, 4, "number of source languages (A, B, ...)"),
        Option("targets", _positive, 2, "number of target languages (M, N, ...)"),
        Option("pairs", _pairs, None, "comma list of src>tgt pairs, e.g. A>M,B>M"),
        Option("vocab_size", _positive, 20, "semantic vocabulary size"),
        Option("feature_dim", _positive, 16, "feature dimension"),
        Option("train_per_pair", _non_negative, 200, "training utterances per pair"),
        Option("test_per_pair", _non_negative, 50, "test utterances per pair"),
        Option("min_len", _positive, 3, "shortest utterance in tokens"),
        Option("max_len", _positive, 8, "longest utterance in tokens"),
        Option("sigma", float, 0.05, "frame noise standard deviation"),
        Option("seed", int, 0, "seed for utterance sampling and noise"),
    ],
    "train": [
        Option("data", Path, None, "corpus directory from gen-data"),
        Option("out", Path, None, "checkpoint to write"),
        Option("branch", str, "M", "target language of the output branch"),
        Option("pairs", _pairs, None, "training pairs (default: every pair into --branch)"),
        Option("trace", Path, None, "optional loss trace TSV"),
        *MODEL_OPTIONS,
        *TRAIN_OPTIONS,
    ],
    "expand": [
        Option("base", Path, None, "checkpoint to expand"),
        Option("data", Path, None, "corpus directory from gen-data"),
        Option("target", str, None, "new target language"),
        Option("pairs", _pairs, None, "training pairs for the new branch"),
        Option("out", Path, None, "checkpoint to write"),
        Option("trace", Path, None, "optional loss trace TSV"),
        *TRAIN_OPTIONS,
    ],
    "decode": [
        Option("model", Path, None, "checkpoint"),
        Option("data", Path, None, "corpus directory"),
        Option("branch", str, "M", "output branch"),
        Option("split", str, "test", "manifest split"),
        Option("pairs", _pairs, None, "restrict to these pairs"),
        Option("out", Path, None, "decode log TSV to write"),
        *DECODE_OPTIONS,
    ],
    "eval": [
        Option("model", Path, None, "checkpoint"),
        Option("data", Path, None, "corpus directory"),
        Option("branch", str, "M", "output branch"),
        Option("split", str, "test", "manifest split"),
        Option("pairs", _pairs, None, "restrict to these pairs"),
        Option("report", Path, None, "optional metric TSV"),
        Option("log", Path, None, "optional decode log TSV"),
        *DECODE_OPTIONS,
    ],
    "latency": [
        Option("log", Path, None, "decode log TSV"),
        Option("frame_ms", float, FRAME_MS, "milliseconds per frame"),
        Option("out", Path, None, "optional per-utterance TSV"),
    ],
    "verify": [
        Option("only", str, None, f"comma list of checks ({', '.join(checks.CHECKS)})"),
    ],
}

REQUIRED = {
    "gen-data": ["out", "pairs"],
    "train": ["data", "out"],
    "expand": ["base", "data", "target", "pairs", "out"],
    "decode": ["model", "data", "out"],
    "eval": ["model", "data"],
    "latency": ["log"],
    "verify": [],
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chunktt", description="Streaming multilingual transducer toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, options in COMMANDS.items():
        p = sub.add_parser(name, help=HANDLERS[name].__doc__.splitlines()[0])
        p.add_argument("--config", type=Path, help="key=value file; flags override it")
        for opt in options:
            flag = "--" + opt.dest.replace("_", "-")
            shown = _format(opt.default) or "none"
            p.add_argument(flag, dest=opt.dest, type=opt.type, default=None, help=f"{opt.help} (default {shown})")
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults, the ``--config`` file and explicit flags, in increasing priority."""
    options = {o.dest: o for o in COMMANDS[command]}
    values = {k: o.default for k, o in options.items()}
    if args.config is not None:
        if not args.config.is_file():
            raise DataError(f"config file not found: {args.config}")
        try:
            raw = parse_key_values(args.config.read_text(encoding="utf-8"), list(options))
            for k, text in raw.items():
                values[k] = options[k].type(text) if text else None
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{args.config}: {exc}") from None
    for k in options:
        if getattr(args, k) is not None:
            values[k] = getattr(args, k)
    missing = [k for k in REQUIRED[command] if values[k] is None]
    if missing:
        raise UsageError(f"{command}: missing required option(s) " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return values


def banner(command: str, values: dict[str, Any]) -> str:
    lines = [f"# chunktt {command} effective config"]
    lines += [f"{k}={_format(v)}" for k, v in values.items()]
    return "\n".join(lines) + "\n# end config"


def _need_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise DataError(f"{what} not found: {path}")
    return path


def _load_corpus(data: Path) -> tuple[CorpusManifest, dict[str, str]]:
    manifest = CorpusManifest.read(_need_file(data / MANIFEST_FILE, "manifest"))
    suite = parse_key_values(_need_file(data / SUITE_FILE, "suite file").read_text(encoding="utf-8"),
                             [o.dest for o in COMMANDS["gen-data"]])
    return manifest, suite


def _target_vocab(suite: dict[str, str], lang: str) -> list[str]:
    return [f"{lang.lower()}{k}" for k in range(1, int(suite["vocab_size"]) + 1)]


def _select(manifest: CorpusManifest, split, target: str, pairs) -> CorpusManifest:
    pairs = pairs or [p for p in manifest.pairs(split) if p[1] == target]
    chosen = manifest.select(split, pairs)
    if not len(chosen):
        raise DataError(f"no {split or 'any'} utterances for pairs {_format(list(pairs)) or '(none)'}")
    return chosen


def _train_config(v: dict[str, Any]) -> TrainConfig:
    return TrainConfig(**{o.dest: v[o.dest] for o in TRAIN_OPTIONS})


def _decode_config(v: dict[str, Any], model: TransducerModel, utts) -> DecodeConfig:
    base = model.config.mask_spec
    U = v["chunk_frames"] or base.chunk_size
    L = base.left_chunks if v["left_chunks"] is None else v["left_chunks"]
    if v["offline"]:
        U = max(u.features.T for u in utts)
    return DecodeConfig(v["branch"], v["beam"], v["max_symbols"], ChunkMaskSpec(U, L, model.config.num_layers))


def cmd_gen_data(v) -> int:
    """Generate a synthetic multilingual corpus (manifest + feature files)."""
    if v["min_len"] > v["max_len"]:
        raise UsageError("--min-len must not exceed --max-len")
    suite = make_suite(v["sources"], v["targets"], v["vocab_size"], v["feature_dim"], seed=v["suite_seed"])
    manifest = generate_corpus(suite, v["pairs"], v["out"], v["train_per_pair"], v["test_per_pair"],
                               (v["min_len"], v["max_len"]), v["sigma"], v["seed"])
    (v["out"] / SUITE_FILE).write_text("".join(f"{k}={_format(x)}\n" for k, x in v.items() if k != "out"),
                                       encoding="utf-8")
    print("pair\ttrain\ttest")
    train_counts, test_counts = manifest.pairs("train"), manifest.pairs("test")
    for pair in v["pairs"]:
        print(f"{pair[0]}>{pair[1]}\t{train_counts[pair]}\t{test_counts[pair]}")
    print(f"wrote {len(manifest)} utterances to {v['out']}")
    return EXIT_OK


def cmd_train(v) -> int:
    """Train a model with one output branch on pooled multilingual data."""
    manifest, suite = _load_corpus(v["data"])
    corpus = _select(manifest, "train", v["branch"], v["pairs"])
    config = ModelConfig(feature_dim=int(suite["feature_dim"]), hidden_dim=v["hidden_dim"], num_layers=v["num_layers"],
                         num_heads=v["num_heads"], ff_dim=v["ff_dim"], predictor_dim=v["predictor_dim"],
                         joint_dim=v["joint_dim"], chunk_size=v["chunk_frames"], left_chunks=v["left_chunks"])
    model = TransducerModel(config, seed=v["seed"])
    model.add_branch(v["branch"], _target_vocab(suite, v["branch"]))
    result = train(model, corpus.utterances(), v["branch"], _train_config(v))
    model.save(v["out"])
    if v["trace"] is not None:
        result.write_trace(v["trace"])
    print(f"final loss {result.trace[-1][1]:.6f} after {len(result.trace)} steps; wrote {v['out']}")
    return EXIT_OK


def cmd_expand(v) -> int:
    """Add a branch for a new target language on top of a frozen encoder."""
    manifest, suite = _load_corpus(v["data"])
    base = TransducerModel.load(_need_file(v["base"], "checkpoint"))
    try:
        base.branch(v["target"])
    except KeyError:
        pass
    else:
        raise DataError(f"checkpoint already has a branch for {v['target']!r}")
    before = base.parameter_count()
    plan = ExpansionPlan(base, v["target"], _target_vocab(suite, v["target"]), v["pairs"], _train_config(v))
    result = expand(plan, manifest.select("train"))
    result.model.save(v["out"])
    if v["trace"] is not None:
        result.write_trace(v["trace"])
    added = result.model.parameter_count() - before
    print(f"added {added} parameters for branch {v['target']}; final loss {result.trace[-1][1]:.6f}; wrote {v['out']}")
    return EXIT_OK


def _decode_setup(v):
    model = TransducerModel.load(_need_file(v["model"], "checkpoint"))
    manifest, _ = _load_corpus(v["data"])
    model.branch(v["branch"])
    utts = _select(manifest, v["split"], v["branch"], v["pairs"]).utterances()
    return model, utts, _decode_config(v, model, utts)


def cmd_decode(v) -> int:
    """Stream-decode a manifest split and write a decode log."""
    model, utts, decode = _decode_setup(v)
    records = evaluate(model, v["branch"], utts, decode).records
    write_decode_log(v["out"], records)
    print(f"decoded {len(records)} utterances with U={decode.spec.chunk_size} L={decode.spec.left_chunks}; "
          f"wrote {v['out']}")
    return EXIT_OK


def cmd_eval(v) -> int:
    """Decode a manifest split and report WER, BLEU, token accuracy and latency."""
    model, utts, decode = _decode_setup(v)
    res = evaluate(model, v["branch"], utts, decode)
    rows = res.report.rows()
    print("metric\tvalue\tcount")
    for name, value, count in rows:
        print(f"{name}\t{value:.6f}\t{count}")
    if v["report"] is not None:
        write_report(v["report"], rows)
    if v["log"] is not None:
        write_decode_log(v["log"], res.records)
    return EXIT_OK


def cmd_latency(v) -> int:
    """Compute AP, AL and DAL from a decode log."""
    records = read_decode_log(_need_file(v["log"], "decode log"))
    kept = [r for r in records if r.delays]
    report = corpus_latency([(r.delays, r.num_frames) for r in records])
    ms = report.scaled(v["frame_ms"])
    print("metric\tframes\tms\tcount")
    print(f"AP\t{report.AP:.6f}\t{ms.AP:.6f}\t{report.count}")
    print(f"AL\t{report.AL:.6f}\t{ms.AL:.6f}\t{report.count}")
    print(f"DAL\t{report.DAL:.6f}\t{ms.DAL:.6f}\t{report.count}")
    print(f"skipped (empty hypotheses)\t{report.skipped}")
    if v["out"] is not None:
        write_latency_tsv(v["out"], [r.uid for r in kept], report)
    return EXIT_OK


def cmd_verify(v) -> int:
    """Run the built-in oracle suite and print a pass/fail table."""
    names = None
    if v["only"]:
        names = [n.strip() for n in v["only"].split(",")]
        unknown = [n for n in names if n not in checks.CHECKS]
        if unknown:
            raise UsageError(f"unknown check(s): {', '.join(unknown)}")
    results = checks.run_checks(names)
    print(checks.format_table(results))
    failed = [r.name for r in results if not r.passed]
    print("all checks passed" if not failed else f"FAILED: {', '.join(failed)}")
    return EXIT_OK if not failed else EXIT_VERIFY


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "expand": cmd_expand,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "latency": cmd_latency,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        values = resolve(args.command, args)
        print(banner(args.command, values))
        return HANDLERS[args.command](values)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (DataError, TrainingError, FileNotFoundError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

import math

import numpy as np
import pytest

from chunktt import autodiff as ad
from chunktt.corpus import generate_corpus, make_suite
from chunktt.decoding import DecodeConfig, greedy_stream_decode
from chunktt.masking import ChunkMaskSpec
from chunktt.metrics import evaluate_hypotheses
from chunktt.model import TransducerModel
from chunktt.training import (
    ExpansionPlan,
    TrainConfig,
    TrainingError,
    evaluate,
    expand,
    parse_key_values,
    read_train_config,
    train,
    write_train_config,
)

from conftest import SMALL


@pytest.fixture(scope="module")
def suite():
    return make_suite(2, 2, vocab_size=5, feature_dim=SMALL.feature_dim, seed=0)


@pytest.fixture(scope="module")
def corpus(suite):
    pairs = [("A", "M"), ("B", "M"), ("A", "N"), ("B", "N")]
    return generate_corpus(suite, pairs, train_per_pair=6, test_per_pair=3, length_range=(2, 4))


def fresh_model(suite, seed=0):
    m = TransducerModel(SMALL, seed=seed)
    m.add_branch("M", suite.target_vocab("M"))
    return m


def quick(steps=4, seed=0):
    return TrainConfig(lr=1e-3, warmup_steps=2, batch_size=3, max_steps=steps, seed=seed)


def test_lr_schedule():
    c = TrainConfig()
    assert c.lr_at(1) == pytest.approx(3e-3 / 200)
    assert c.lr_at(100) == pytest.approx(1.5e-3)
    assert c.lr_at(200) == pytest.approx(3e-3)
    assert c.lr_at(800) == pytest.approx(1.5e-3)
    peak = max(range(1, 1000), key=c.lr_at)
    assert peak == 200


@pytest.mark.parametrize("field", ["lr", "warmup_steps", "batch_size", "max_steps", "clip_norm", "eval_interval"])
def test_config_rejects_non_positive(field):
    with pytest.raises(ValueError):
        TrainConfig(**{field: 0})


def test_config_file_round_trip(tmp_path):
    p = tmp_path / "train.cfg"
    write_train_config(p, TrainConfig(lr=0.01, max_steps=7))
    assert read_train_config(p) == TrainConfig(lr=0.01, max_steps=7)
    assert read_train_config(p, max_steps=9, seed=None).max_steps == 9


def test_config_file_rejects_unknown_key(tmp_path):
    p = tmp_path / "train.cfg"
    p.write_text("# comment\nlr = 0.1\n\nmomentum=0.9\n")
    with pytest.raises(ValueError, match="momentum"):
        read_train_config(p)
    with pytest.raises(ValueError):
        parse_key_values("lr 0.1", ["lr"])


def test_same_seed_same_trace(suite, corpus):
    utts = corpus.utterances("train")
    a = train(fresh_model(suite), utts, "M", quick())
    b = train(fresh_model(suite), [u for u in utts], "M", quick())
    assert a.trace == b.trace
    c = train(fresh_model(suite), utts, "M", quick(seed=1))
    assert a.trace != c.trace
    assert len(a.trace) == 4 and a.trace[1][2] == pytest.approx(1e-3)


def test_trace_file(suite, corpus, tmp_path):
    res = train(fresh_model(suite), corpus.utterances("train"), "M", quick(2))
    res.write_trace(tmp_path / "trace.tsv")
    lines = (tmp_path / "trace.tsv").read_text().splitlines()
    assert lines[0] == "step\tloss\tlr" and len(lines) == 3
    step, loss, lr = lines[1].split("\t")
    assert int(step) == 1 and math.isclose(float(loss), res.trace[0][1], rel_tol=1e-9)


def test_non_finite_loss_aborts_with_batch_ids(suite, corpus):
    m = fresh_model(suite)
    m.encoder.params["encoder/input/w"].data[:] = np.nan
    ad.set_debug(False)
    try:
        with pytest.raises(TrainingError, match="train-"):
            train(m, corpus.utterances("train"), "M", quick(1))
    finally:
        ad.set_debug(True)


def test_targets_must_fit_branch(suite, corpus):
    m = TransducerModel(SMALL, seed=0)
    m.add_branch("M", ["x", "y"])
    with pytest.raises(TrainingError, match="vocabulary"):
        train(m, corpus.utterances("train"), "M", quick(1))


def test_eval_callback_runs_at_interval(suite, corpus):
    test = corpus.select("test", [("A", "M")]).utterances()
    cfg = TrainConfig(lr=1e-3, warmup_steps=2, batch_size=2, max_steps=4, eval_interval=2)
    res = train(fresh_model(suite), corpus.utterances("train"), "M", cfg,
                eval_fn=lambda model: evaluate(model, "M", test).report)
    assert [s for s, _ in res.evals] == [2, 4]


def test_expand_freezes_and_adds_only_the_branch(suite, corpus):
    base = fresh_model(suite)
    x = corpus.utterances("test")[0].features
    before_dec = greedy_stream_decode(base, x, DecodeConfig("M"))
    enc_bytes = {k: p.data.tobytes() for k, p in base.encoder.params.items()}
    m_bytes = {k: p.data.tobytes() for k, p in base.branch("M").params.items()}
    count = base.parameter_count()
    plan = ExpansionPlan(base, "N", suite.target_vocab("N"), [("A", "N")], quick(3))
    res = expand(plan, corpus.utterances("train"))
    m = res.model
    n = m.branch("N")
    assert m.encoder_frozen
    assert {k: p.data.tobytes() for k, p in m.encoder.params.items()} == enc_bytes
    assert {k: p.data.tobytes() for k, p in m.branch("M").params.items()} == m_bytes
    sizes = sum(p.size for p in n.predictor_params().values()) + sum(p.size for p in n.joint_params().values())
    assert m.parameter_count() - count == sizes == n.parameter_count()
    after = greedy_stream_decode(m, x, DecodeConfig("M"))
    assert (after.tokens, after.score, after.delays) == (before_dec.tokens, before_dec.score, before_dec.delays)


def test_expand_from_checkpoint(suite, corpus, tmp_path):
    base = fresh_model(suite)
    base.save(tmp_path / "base.ckpt")
    res = expand(ExpansionPlan(tmp_path / "base.ckpt", "N", suite.target_vocab("N"), [("B", "N")], quick(1)),
                 corpus.utterances("train"))
    assert list(res.model.branches) == ["M", "N"]


def test_expand_errors(suite, corpus):
    utts = corpus.utterances("train")
    vocab = suite.target_vocab("N")
    with pytest.raises(ValueError, match="does not target"):
        expand(ExpansionPlan(fresh_model(suite), "N", vocab, [("A", "M")], quick(1)), utts)
    with pytest.raises(ValueError, match="no training data"):
        expand(ExpansionPlan(fresh_model(suite), "N", vocab, [("N", "N")], quick(1)), utts)
    with pytest.raises(ValueError):
        expand(ExpansionPlan(fresh_model(suite), "N", vocab, [], quick(1)), utts)
    with pytest.raises(ValueError):
        expand(ExpansionPlan(fresh_model(suite), "M", vocab, [("A", "M")], quick(1)), utts)


def test_oracle_hypotheses_score_perfectly(corpus):
    refs = [u.target_ids for u in corpus.utterances("test")]
    rep = evaluate_hypotheses(refs, refs)
    assert rep.WER == 0.0 and rep.BLEU == 100.0 and rep.accuracy == 1.0


def test_untrained_model_near_chance():
    suite = make_suite(2, 1, vocab_size=20, feature_dim=SMALL.feature_dim, seed=0)
    corpus = generate_corpus(suite, [("A", "M"), ("B", "M")], train_per_pair=0, test_per_pair=20)
    accs = []
    for seed in range(3):
        m = TransducerModel(SMALL, seed=seed)
        m.add_branch("M", suite.target_vocab("M"))
        accs.append(evaluate(m, "M", corpus).report.accuracy)
    assert max(accs) <= 2 / 21


def test_offline_evaluation_has_unit_ap(suite, corpus):
    m = fresh_model(suite)
    m.branch("M").params["branch/M/joint/out/b"].data[0] = -3.0
    test = corpus.utterances("test")
    offline = ChunkMaskSpec(max(u.features.T for u in test), 1)
    res = evaluate(m, "M", test, DecodeConfig(spec=offline))
    assert res.report.latency.count > 0
    assert res.report.latency.AP == 1.0
    for rec in res.records:
        assert all(d == rec.num_frames for d in rec.delays)
    chunked = evaluate(m, "M", test, DecodeConfig(spec=ChunkMaskSpec(1, 1)))
    assert chunked.report.latency.AP < 1.0


def test_evaluate_missing_features(suite, tmp_path):
    m = generate_corpus(suite, [("A", "M")], tmp_path, train_per_pair=1, test_per_pair=1)
    from chunktt.corpus import CorpusManifest
    loaded = CorpusManifest.read(tmp_path / "manifest.tsv")
    (tmp_path / m.entries[0].feature_path).unlink()
    with pytest.raises(FileNotFoundError):
        evaluate(fresh_model(suite), "M", loaded)

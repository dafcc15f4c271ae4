import numpy as np
import pytest

from chunktt import autodiff as ad
from chunktt.decoding import DecodeConfig, greedy_stream_decode
from chunktt.masking import ChunkMaskSpec, receptive_field
from chunktt.model import (
    BLANK,
    SOS,
    FeatureSequence,
    ModelConfig,
    StreamOrderError,
    TransducerModel,
)
from chunktt.training import Adam

from conftest import SMALL, TINY


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(hidden_dim=10, num_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(num_layers=0)


def test_single_frame_ignores_chunking(small_model, rng):
    x = rng.normal(size=(1, SMALL.feature_dim))
    ref = small_model.encode(x, ChunkMaskSpec(1, 0))
    for U, L in [(1, 2), (3, 0), (8, 1)]:
        assert np.array_equal(small_model.encode(x, ChunkMaskSpec(U, L)), ref)


def test_dimension_mismatch(small_model, rng):
    with pytest.raises(ad.DimensionError):
        small_model.encode(rng.normal(size=(4, SMALL.feature_dim + 1)))


@pytest.mark.parametrize("U,L", [(1, 0), (2, 1), (3, 1), (4, 2)])
def test_causality_outside_receptive_field(small_model, rng, U, L):
    T = 14
    spec = ChunkMaskSpec(U, L, SMALL.num_layers)
    x = rng.normal(size=(T, SMALL.feature_dim))
    base = small_model.encode(x, spec)
    for t in range(1, T + 1):
        lo, hi = receptive_field(t, SMALL.num_layers, spec, T)
        outside = np.ones(T, bool)
        outside[lo - 1:hi] = False
        for fill in (0.0, 50.0):
            y = x.copy()
            y[outside] = fill
            assert np.abs(small_model.encode(y, spec)[t - 1] - base[t - 1]).max() < 1e-12


def test_mask_changes_the_output(small_model, rng):
    x = rng.normal(size=(12, SMALL.feature_dim))
    full = small_model.encode(x, ChunkMaskSpec(12, 0))
    chunked = small_model.encode(x, ChunkMaskSpec(3, 1))
    assert np.abs(full - chunked).max() > 1e-3


def test_metadata_is_invisible_to_the_encoder(small_model, rng):
    x = rng.normal(size=(6, SMALL.feature_dim))
    a = small_model.encode(FeatureSequence(x, {"source_lang": "A"}))
    b = small_model.encode(FeatureSequence(x, {"source_lang": "B"}))
    assert np.array_equal(a, b)
    with pytest.raises(TypeError):
        FeatureSequence(x, {"source_lang": "A"}).metadata["source_lang"] = "C"


def _stream(model, x, spec):
    state = model.new_stream(spec)
    outs = []
    for i in range(0, len(x), spec.chunk_size):
        out, state = model.encode_incremental(state, x[i:i + spec.chunk_size], offset=i)
        outs.append(out)
    return np.concatenate(outs), state


def test_streaming_equals_offline(small_model):
    rng = np.random.default_rng(99)
    for T in (1, 5, 9, 16, 32):
        x = rng.normal(size=(T, SMALL.feature_dim))
        for U in (1, 2, 4):
            for L in (0, 1, 2):
                spec = ChunkMaskSpec(U, L, SMALL.num_layers)
                inc, _ = _stream(small_model, x, spec)
                assert np.abs(inc - small_model.encode(x, spec)).max() < 1e-10, (T, U, L)


def test_stream_cache_keeps_only_visible_history(small_model, rng):
    spec = ChunkMaskSpec(2, 1, SMALL.num_layers)
    _, state = _stream(small_model, rng.normal(size=(10, SMALL.feature_dim)), spec)
    for layer_cache in state.cache:
        assert len(layer_cache) == 1
    _, state = _stream(small_model, rng.normal(size=(10, SMALL.feature_dim)), ChunkMaskSpec(2, 0))
    assert all(c == [] for c in state.cache)


def test_empty_chunk_leaves_state_unchanged(small_model):
    state = small_model.new_stream()
    out, new = small_model.encode_incremental(state, np.zeros((0, SMALL.feature_dim)))
    assert out.shape == (0, SMALL.hidden_dim)
    assert new is state


def test_single_chunk_stream_is_exact(small_model, rng):
    x = rng.normal(size=(2, SMALL.feature_dim))
    spec = ChunkMaskSpec(2, 1)
    out, _ = small_model.encode_incremental(small_model.new_stream(spec), x)
    assert np.array_equal(out, small_model.encode(x, spec))


def test_out_of_order_chunks_rejected(small_model, rng):
    spec = ChunkMaskSpec(2, 1)
    state = small_model.new_stream(spec)
    _, state = small_model.encode_incremental(state, rng.normal(size=(2, SMALL.feature_dim)), offset=0)
    with pytest.raises(StreamOrderError):
        small_model.encode_incremental(state, rng.normal(size=(2, SMALL.feature_dim)), offset=4)
    _, state = small_model.encode_incremental(state, rng.normal(size=(1, SMALL.feature_dim)))
    with pytest.raises(StreamOrderError):
        small_model.encode_incremental(state, rng.normal(size=(2, SMALL.feature_dim)))
    with pytest.raises(StreamOrderError):
        small_model.encode_incremental(small_model.new_stream(spec), rng.normal(size=(3, SMALL.feature_dim)))


def test_predict_is_deterministic(small_model):
    s0 = small_model.initial_predictor_state("M")
    h1, s1 = small_model.predict("M", SOS, s0)
    h1b, _ = small_model.predict("M", SOS, s0)
    assert np.array_equal(h1, h1b)
    h2, _ = small_model.predict("M", 3, s1)
    h2b, _ = small_model.predict("M", 3, s1)
    assert np.array_equal(h2, h2b)
    assert not np.array_equal(h1, h2)


def test_start_state_is_zero(small_model):
    s0 = small_model.initial_predictor_state("M")
    assert all(np.array_equal(h, np.zeros(SMALL.predictor_dim)) for h in s0.hidden)


def test_predict_rejects_blank(small_model):
    with pytest.raises(ValueError):
        small_model.predict("M", BLANK, small_model.initial_predictor_state("M"))


def test_teacher_forced_predictor_matches_stepwise(small_model):
    targets = [[1, 4, 2], [5]]
    outs = small_model.predictor_outputs("M", targets)
    for y, out in zip(targets, outs):
        state = small_model.initial_predictor_state("M")
        for u, tok in enumerate([SOS] + y):
            h, state = small_model.predict("M", tok, state)
            assert np.allclose(out.data[u], h, atol=1e-14)


def test_predictor_grad_through_two_steps(tiny_model):
    b = tiny_model.branch("M")
    params = list(b.predictor_params().values())
    w = ad.tensor(np.random.default_rng(5).normal(size=(1, TINY.predictor_dim)))

    def f():
        h = [ad.constant(np.zeros((1, TINY.predictor_dim)))]
        h = b.gru_step([SOS], h)
        h = b.gru_step([2], h)
        return ad.sum(ad.mul(h[-1], w))

    assert ad.grad_check(f, params) < 1e-4


def test_joint_output_size_and_nonlinearity(small_model, rng):
    b = small_model.branch("M")
    a = rng.normal(size=SMALL.hidden_dim)
    p = rng.normal(size=SMALL.predictor_dim)
    out = small_model.joint(a, p, "M")
    assert out.shape == (b.output_size,)
    zero_e, zero_p = np.zeros(SMALL.hidden_dim), np.zeros(SMALL.predictor_dim)
    lhs = small_model.joint(a, zero_p, "M") + small_model.joint(zero_e, p, "M")
    assert np.abs(lhs - out).max() > 1e-6
    with pytest.raises(KeyError):
        small_model.joint(a, p, "Q")


def test_joint_grad_check(tiny_model, rng):
    b = tiny_model.branch("M")
    params = list(b.joint_params().values())
    e = ad.tensor(rng.normal(size=(2, TINY.hidden_dim)))
    p = ad.tensor(rng.normal(size=(3, TINY.predictor_dim)))
    w = ad.tensor(rng.normal(size=(2, 3, b.output_size)))
    f = lambda: ad.sum(ad.mul(b.joint_grid(b.enc_proj(e), b.pred_proj(p)), w))  # noqa: E731
    assert ad.grad_check(f, params) < 1e-4


def test_full_model_gradient_matches_finite_differences(tiny_model):
    rng = np.random.default_rng(11)
    feats = [rng.normal(size=(6, TINY.feature_dim))]
    targets = [[1, 3, 2]]
    params = list(tiny_model.trainable_parameters().values())
    err = ad.grad_check(lambda: tiny_model.loss("M", feats, targets), params)
    assert err < 1e-4


def test_packed_batch_equals_separate_losses(small_model, rng):
    feats = [rng.normal(size=(n, SMALL.feature_dim)) for n in (5, 7, 3)]
    targets = [[1, 2], [3, 4, 5], [2]]
    joint = small_model.loss("M", feats, targets).data[0] * 6
    separate = sum(small_model.loss("M", [f], [t]).data[0] * len(t) for f, t in zip(feats, targets))
    assert joint == pytest.approx(separate, abs=1e-10)


def test_add_branch_keeps_existing_branch(small_model, rng):
    x = FeatureSequence(rng.normal(size=(9, SMALL.feature_dim)))
    cfg = DecodeConfig("M")
    before = greedy_stream_decode(small_model, x, cfg)
    logits_before = small_model.joint(small_model.encode(x)[0], np.ones(SMALL.predictor_dim), "M")
    n0 = small_model.parameter_count()
    bid = small_model.add_branch("N", ["x", "y", "z"])
    after = greedy_stream_decode(small_model, x, cfg)
    assert bid == 1
    assert (before.tokens, before.score, before.delays) == (after.tokens, after.score, after.delays)
    assert np.array_equal(logits_before, small_model.joint(small_model.encode(x)[0], np.ones(SMALL.predictor_dim), "M"))
    b = small_model.branch("N")
    size = sum(t.size for t in b.predictor_params().values()) + sum(t.size for t in b.joint_params().values())
    assert small_model.parameter_count() - n0 == size


def test_add_branch_duplicate_rejected(small_model):
    with pytest.raises(ValueError):
        small_model.add_branch("M", ["q"])


def test_same_seed_same_branch_init():
    a = TransducerModel(SMALL, seed=3)
    b = TransducerModel(SMALL, seed=4)
    a.add_branch("N", ["x", "y"], seed=42)
    b.add_branch("N", ["x", "y"], seed=42)
    for k, t in a.branch("N").params.items():
        assert np.array_equal(t.data, b.branch("N").params[k].data)


def _sgd_step(model, branch, feats, targets):
    params = model.trainable_parameters(branch)
    for p in params.values():
        p.grad = None
    ad.backward(model.loss(branch, feats, targets), params.values())
    Adam(params).step(1e-2)


def test_freeze_encoder_blocks_updates(small_model, rng):
    feats = [rng.normal(size=(6, SMALL.feature_dim))]
    enc_before = {k: t.data.tobytes() for k, t in small_model.encoder.params.items()}
    br_before = {k: t.data.copy() for k, t in small_model.branch("M").params.items()}
    small_model.freeze_encoder()
    for _ in range(3):
        _sgd_step(small_model, "M", feats, [[1, 2]])
    assert all(t.data.tobytes() == enc_before[k] for k, t in small_model.encoder.params.items())
    changed = [not np.array_equal(t.data, br_before[k]) for k, t in small_model.branch("M").params.items()]
    assert all(changed)


def test_unfrozen_control_moves_encoder(small_model, rng):
    feats = [rng.normal(size=(6, SMALL.feature_dim))]
    before = {k: t.data.copy() for k, t in small_model.encoder.params.items()}
    _sgd_step(small_model, "M", feats, [[1, 2]])
    assert any(not np.array_equal(t.data, before[k]) for k, t in small_model.encoder.params.items())


def test_branch_isolation_under_frozen_training(small_model, rng):
    small_model.add_branch("N", ["x", "y", "z"])
    x = FeatureSequence(rng.normal(size=(8, SMALL.feature_dim)))
    cfg = DecodeConfig("M")
    before = greedy_stream_decode(small_model, x, cfg)
    m_params = {k: t.data.tobytes() for k, t in small_model.branch("M").params.items()}
    small_model.freeze_encoder()
    for _ in range(3):
        _sgd_step(small_model, "N", [x.frames], [[1, 3]])
    after = greedy_stream_decode(small_model, x, cfg)
    assert (before.tokens, before.score, before.delays) == (after.tokens, after.score, after.delays)
    assert all(t.data.tobytes() == m_params[k] for k, t in small_model.branch("M").params.items())


def test_checkpoint_round_trip_is_bitwise(small_model, tmp_path):
    small_model.add_branch("N", ["x", "y"])
    small_model.freeze_encoder()
    path = tmp_path / "model.ckpt"
    small_model.save(path)
    loaded = TransducerModel.load(path)
    assert loaded.config == small_model.config
    assert loaded.encoder_frozen
    assert [b.lang for b in loaded.branches.values()] == ["M", "N"]
    assert loaded.branch("N").vocab == ["x", "y"]
    a, b = small_model.named_parameters(), loaded.named_parameters()
    assert list(a) == list(b)
    for k in a:
        assert a[k].data.tobytes() == b[k].data.tobytes()
    loaded.save(tmp_path / "again.ckpt")
    assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()


def test_checkpoint_names_branch_parameters(small_model):
    names = list(small_model.named_parameters())
    assert any(n.startswith("branch/M/pred/") for n in names)
    assert any(n.startswith("branch/M/joint/") for n in names)


def test_bad_checkpoint_rejected(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"nope")
    with pytest.raises(ValueError):
        TransducerModel.load(p)

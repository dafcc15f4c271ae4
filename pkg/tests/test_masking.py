import numpy as np
import pytest

from chunktt.masking import (
    ChunkMaskSpec,
    build_chunk_mask,
    chunk_end,
    packed_chunk_mask,
    reachable_keys,
    receptive_field,
)


def visible(mask, frame):
    """1-based frames visible to 1-based query ``frame``."""
    return set(np.flatnonzero(mask[frame - 1]) + 1)


def test_figure_example_frame_10():
    mask = build_chunk_mask(12, ChunkMaskSpec(chunk_size=3, left_chunks=1))
    assert visible(mask, 10) == set(range(7, 13))


def test_offline_mask_is_full():
    assert build_chunk_mask(7, ChunkMaskSpec(chunk_size=7, left_chunks=0)).all()
    assert build_chunk_mask(7, ChunkMaskSpec(chunk_size=50, left_chunks=0)).all()


def test_unit_chunks_without_history_is_diagonal():
    assert np.array_equal(build_chunk_mask(4, ChunkMaskSpec(1, 0)), np.eye(4, dtype=bool))


def test_mask_never_sees_future_chunks_and_fills_own_chunk():
    spec = ChunkMaskSpec(3, 2)
    T = 11
    m = build_chunk_mask(T, spec)
    c = np.arange(T) // 3
    for q in range(T):
        for k in range(T):
            if m[q, k]:
                assert c[k] <= c[q]
            if c[k] == c[q]:
                assert m[q, k]


def test_receptive_field_layer_one_matches_figure():
    assert receptive_field(10, 1, ChunkMaskSpec(3, 1, num_layers=2)) == (7, 12)


def test_receptive_field_layer_two():
    spec = ChunkMaskSpec(3, 1, num_layers=2)
    assert receptive_field(10, 2, spec) == (4, 12)
    reach = reachable_keys(12, 2, spec)
    assert set(np.flatnonzero(reach[9]) + 1) == set(range(4, 13))


def test_no_history_keeps_own_chunk_at_any_depth():
    spec = ChunkMaskSpec(4, 0, num_layers=5)
    for t in range(1, 18):
        for layer in range(1, 6):
            lo, hi = receptive_field(t, layer, spec, num_frames=17)
            assert lo == ((t - 1) // 4) * 4 + 1
            assert hi == chunk_end(t, 4, 17)


def test_layer_out_of_range():
    with pytest.raises(ValueError):
        receptive_field(1, 3, ChunkMaskSpec(2, 1, num_layers=2))


def test_bad_spec_rejected():
    with pytest.raises(ValueError):
        ChunkMaskSpec(0)
    with pytest.raises(ValueError):
        ChunkMaskSpec(2, -1)


def test_receptive_field_matches_composition_oracle_exhaustively():
    for T in range(1, 65):
        for U in range(1, 9):
            for L in range(0, 4):
                spec = ChunkMaskSpec(U, L, num_layers=4)
                for layer in range(1, 5):
                    reach = reachable_keys(T, layer, spec)
                    for t in range(1, T + 1):
                        lo, hi = receptive_field(t, layer, spec, num_frames=T)
                        expected = np.zeros(T, bool)
                        expected[lo - 1:hi] = True
                        assert np.array_equal(reach[t - 1], expected), (T, U, L, layer, t)
                        # lookahead never passes the end of the frame's chunk
                        assert hi == chunk_end(t, U, T)


def test_mask_monotone_in_chunk_size_and_history():
    T = 20
    for U in range(1, 8):
        for L in range(0, 3):
            m = build_chunk_mask(T, ChunkMaskSpec(U, L))
            assert not (m & ~build_chunk_mask(T, ChunkMaskSpec(U, L + 1))).any()
    # a larger chunk that nests the smaller ones keeps every entry
    for U in (1, 2, 3, 4):
        for L in range(0, 3):
            small = build_chunk_mask(T, ChunkMaskSpec(U, L))
            big = build_chunk_mask(T, ChunkMaskSpec(2 * U, L))
            assert not (small & ~big).any()


def test_partial_final_chunk():
    m = build_chunk_mask(7, ChunkMaskSpec(3, 0))
    assert visible(m, 7) == {7}
    assert chunk_end(7, 3, 7) == 7


def test_latency_is_chunk_size():
    spec = ChunkMaskSpec(8, 1)
    assert spec.latency_frames == 8
    assert spec.latency_ms() == 320.0


def test_packed_mask_is_block_diagonal():
    spec = ChunkMaskSpec(2, 1)
    m = packed_chunk_mask([3, 4], spec)
    assert np.array_equal(m[:3, :3], build_chunk_mask(3, spec))
    assert np.array_equal(m[3:, 3:], build_chunk_mask(4, spec))
    assert not m[:3, 3:].any() and not m[3:, :3].any()

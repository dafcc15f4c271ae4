"""Chunk attention masks: what each frame can see, per layer."""

import numpy as np

from chunktt.masking import ChunkMaskSpec, build_chunk_mask, reachable_keys, receptive_field

spec = ChunkMaskSpec(chunk_size=3, left_chunks=1, num_layers=3)
mask = build_chunk_mask(13, spec)
print("U=3, L=1 mask (row = query frame, column = key frame):")
for q, row in enumerate(mask, 1):
    print(f"{q:3d} " + "".join("#" if v else "." for v in row))

print("\nframe 10 sees", (np.flatnonzero(mask[9]) + 1).tolist(), "at layer 1")
for layer in (1, 2, 3):
    lo, hi = receptive_field(10, layer, spec, 13)
    brute = np.flatnonzero(reachable_keys(13, layer, spec)[9]) + 1
    print(f"layer {layer}: closed form {lo}..{hi}, composed mask {brute[0]}..{brute[-1]}")

print("\nlatency of one chunk:", spec.latency_ms(), "ms")

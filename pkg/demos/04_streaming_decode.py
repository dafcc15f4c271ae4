"""Streaming decode: memorise one utterance, then push its chunks one at a time.

Tokens appear as soon as the chunk holding their motif has arrived, and each
token's delay is the number of frames received when it was emitted.
"""

from chunktt import autodiff as ad
from chunktt.corpus import Utterance, make_suite, render_text, render_utterance
from chunktt.decoding import DecodeConfig, StreamingDecoder, beam_decode
from chunktt.model import ModelConfig, TransducerModel
from chunktt.training import TrainConfig, train

ad.set_debug(False)
suite = make_suite(1, 1, seed=0)
meaning = [3, 1, 4, 1, 5]
x = render_utterance(suite, meaning, "A", 0.05, rng=0)
target = render_text(suite, meaning, "M")

model = TransducerModel(ModelConfig(), seed=0)
model.add_branch("M", suite.target_vocab("M"))
train(model, [Utterance("u0", x, target, "A", "M")], "M", TrainConfig(max_steps=200))
print("reference", target, "over", x.T, "frames")

session = StreamingDecoder(model, DecodeConfig("M"))
for chunk in x.chunks(model.config.chunk_size):
    session.push(chunk)
    best = session.beam[0]
    print(f"after {session.frames_seen:2d} frames: tokens {best.tokens} delays {best.delays}")
hyp = session.finish()[0]
print("final", hyp.tokens, "score", round(hyp.score, 4))

# beam scores add up merged alignments of a prefix, so they exceed the single greedy path
for h in beam_decode(model, x, DecodeConfig("M", beam=4)):
    print("beam", h.tokens, round(h.score, 4))

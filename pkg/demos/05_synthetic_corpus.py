"""Synthetic language suite: motif banks per source language, spelling bijections per target language."""

import numpy as np

from chunktt.corpus import generate_corpus, make_suite, motif_bank_min_distance, render_text, render_utterance

suite = make_suite(num_source=4, num_target=2, seed=0)
print("sources", suite.source_langs, "targets", suite.target_langs)
print("closest pair of motifs", round(motif_bank_min_distance(suite), 3))

meaning = [3, 1, 4]
for src in ("A", "B"):
    fs = render_utterance(suite, meaning, src, sigma=0.05, rng=0)
    print(f"{src}: {fs.T} frames of dim {fs.D}")
for tgt in ("M", "N"):
    print(f"{tgt} text ids:", render_text(suite, meaning, tgt))

# a zero-shot layout: C>N is absent from the corpus
corpus = generate_corpus(suite, [("A", "M"), ("B", "M"), ("C", "M"), ("A", "N"), ("B", "N")],
                         train_per_pair=20, test_per_pair=5)
for (s, t), n in sorted(corpus.pairs().items()):
    print(f"{s}>{t}: {n} utterances")
print("C>N present:", ("C", "N") in corpus.pairs())

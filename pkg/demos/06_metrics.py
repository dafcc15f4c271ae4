"""WER, BLEU and streaming latency (AP, AL, DAL) on small hand-checkable inputs."""

from chunktt.metrics import bleu, corpus_latency, latency, wer

refs = ["the cat sat on the mat", "a b c d e"]
hyps = ["the cat sat on a mat", "a b c d e"]
print("WER ", wer(refs, hyps))
print("BLEU", round(bleu(refs, hyps), 4))

print("every token after the whole input:", latency([4, 4, 4, 4], 4))
print("one token per frame:              ", latency([1, 2, 3, 4], 4))

report = corpus_latency([([2, 4], 4), ([1, 2, 3, 4], 4)])
print("corpus AP", report.AP, "AL in ms", report.scaled(40.0).AL)

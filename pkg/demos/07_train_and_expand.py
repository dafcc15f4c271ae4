"""Train on pooled {A,B,C}->M data, then add an N branch from A,B only and try C>N zero-shot.

Uses a reduced model and step count so it finishes in a couple of minutes;
the acceptance suite runs the full-size version of this experiment.
"""

from chunktt import autodiff as ad
from chunktt.corpus import generate_corpus, make_suite
from chunktt.model import ModelConfig, TransducerModel
from chunktt.training import ExpansionPlan, TrainConfig, evaluate, expand, train

ad.set_debug(False)
suite = make_suite(3, 2, seed=0)
pairs = [("A", "M"), ("B", "M"), ("C", "M"), ("A", "N"), ("B", "N"), ("C", "N")]
corpus = generate_corpus(suite, pairs, train_per_pair=100, test_per_pair=20)
train_utts, test_utts = corpus.utterances("train"), corpus.utterances("test")

model = TransducerModel(ModelConfig(hidden_dim=32, ff_dim=64, num_layers=2), seed=0)
model.add_branch("M", suite.target_vocab("M"))
result = train(model, [u for u in train_utts if u.target_lang == "M"], "M", TrainConfig(max_steps=600))
print("base loss", round(result.trace[-1][1], 4))
m_eval = evaluate(model, "M", [u for u in test_utts if u.target_lang == "M"]).report
print("M accuracy", round(m_eval.accuracy, 3), "AP", round(m_eval.latency.AP, 3))

before = model.parameter_count()
plan = ExpansionPlan(model, "N", suite.target_vocab("N"), [("A", "N"), ("B", "N")], TrainConfig(max_steps=600))
expand(plan, train_utts)
print("parameters added for N:", model.parameter_count() - before, "of", model.parameter_count())
for src in ("A", "B", "C"):
    rep = evaluate(model, "N", [u for u in test_utts if u.source_lang == src and u.target_lang == "N"]).report
    tag = "zero-shot" if src == "C" else "trained"
    print(f"{src}>N ({tag}) accuracy {rep.accuracy:.3f}")

import numpy as np
import pytest

from protclass.dataset import BuildConfig, LabeledDataset, build_dataset
from protclass.errors import VocabularyMismatch
from protclass.nn import AdadeltaState, Checkpoint, ModelConfig, init_params, load_checkpoint, read_checkpoint_header, save_checkpoint
from protclass.seq_core import Vocabulary, decode
from protclass.toy import markov_corpus
from protclass.train import (
    ConfusionMatrix,
    EpochRecord,
    TrainConfig,
    confusion_by_length,
    default_report_paths,
    evaluate,
    export_history,
    predict,
    read_history_csv,
    train,
)

L = 24
SMALL = dict(embed_dim=4, conv1_filters=4, conv2_filters=4, conv3_filters=4, pool1_window=2, pool2_window=2, input_len=L)


@pytest.fixture(scope="module")
def built():
    return build_dataset(markov_corpus(60, 8, L, seed=5), BuildConfig(max_len=L, seed=2))


def small_cfg(vocab, **kw):
    return ModelConfig(vocab_size=len(vocab), **{**SMALL, **kw})


def fresh_model(vocab, seed=0):
    cfg = small_cfg(vocab)
    params = init_params(cfg, np.random.default_rng(seed))
    return Checkpoint(cfg, params, AdadeltaState.zeros_like(params), vocab)


def test_single_full_batch_epoch(built):
    res = train(small_cfg(built.vocab), built.train, built.test, TrainConfig(epochs=1, batch_size=len(built.train)))
    assert len(res.history) == 1
    assert res.final.state.steps == 1


def test_short_final_batch_is_kept(built):
    n = len(built.train)
    res = train(small_cfg(built.vocab), built.train, built.test, TrainConfig(epochs=2, batch_size=n - 1))
    assert res.final.state.steps == 4


def test_best_checkpoint_tracks_validation(built, tmp_path):
    path = tmp_path / "m.psc"
    res = train(small_cfg(built.vocab), built.train, built.test, TrainConfig(epochs=4, batch_size=16, checkpoint_path=str(path)))
    accs = [r.val_acc for r in res.history]
    best_epoch = accs.index(max(accs)) + 1
    assert res.best.epoch == best_epoch
    header, _ = read_checkpoint_header(path)
    assert header["epoch"] == best_epoch
    assert header["val_acc"] == max(accs)
    ev = evaluate(load_checkpoint(path), built.test)
    assert abs(ev.accuracy - header["val_acc"]) <= 1e-9


def test_training_is_reproducible(built):
    cfg = TrainConfig(epochs=2, batch_size=10, seed=7)
    a = train(small_cfg(built.vocab), built.train, built.test, cfg)
    b = train(small_cfg(built.vocab), built.train, built.test, cfg)
    assert a.history == b.history
    assert all(np.array_equal(a.final.params[k], b.final.params[k]) for k in a.final.params)


def _dataset(vocab, labels, lengths):
    idx = np.zeros((len(labels), L), dtype=np.int64)
    for i, n in enumerate(lengths):
        idx[i, :n] = 1
    return LabeledDataset([f"s{i}" for i in range(len(labels))], idx, np.array(labels), vocab, "test")


def test_threshold_tie_predicts_real():
    vocab = Vocabulary(["ALA", "GLY"])
    model = fresh_model(vocab)
    for k in model.params:
        model.params[k][...] = 0.0
    ds = _dataset(vocab, [1, 0, 1], [3, 5, 24])
    ev = evaluate(model, ds)
    assert np.all(ev.probabilities == 0.5)
    assert ev.confusion == ConfusionMatrix(tp=2, fp=1, tn=0, fn=0)
    assert ev.accuracy == pytest.approx(2 / 3)


def test_all_positive_dataset():
    vocab = Vocabulary(["ALA", "GLY"])
    model = fresh_model(vocab)
    model.params["bd"][0] = 20.0
    ev = evaluate(model, _dataset(vocab, [1, 1, 1, 1], [4, 4, 4, 4]))
    assert ev.accuracy == 1.0
    assert ev.confusion.fp == ev.confusion.tn == 0


def test_confusion_consistency(built):
    model = fresh_model(built.vocab, seed=3)
    ev = evaluate(model, built.test)
    cm = ev.confusion
    assert cm.total == len(built.test)
    assert cm.tp + cm.fn == built.test.positives
    assert cm.accuracy == pytest.approx(ev.accuracy)
    by_len = confusion_by_length(built.test, ev.probabilities)
    assert sum(c.total for c in by_len.values()) == len(built.test)


def test_batch_size_invariance(built):
    model = fresh_model(built.vocab, seed=1)
    a = evaluate(model, built.test, batch_size=1)
    b = evaluate(model, built.test, batch_size=1000)
    np.testing.assert_allclose(a.probabilities, b.probabilities, rtol=1e-12, atol=1e-15)
    assert a.confusion == b.confusion


def test_vocabulary_mismatch(built):
    model = fresh_model(Vocabulary(list(built.vocab.codes) + ["ZZZ"]))
    with pytest.raises(VocabularyMismatch):
        evaluate(model, built.test)


def test_predict_roundtrip(built, tmp_path):
    res = train(small_cfg(built.vocab), built.train, built.test, TrainConfig(epochs=1, batch_size=32))
    path = tmp_path / "m.psc"
    save_checkpoint(res.final, path)
    back = load_checkpoint(path)
    tokens = decode(built.test.indices[0], built.vocab)
    assert predict(res.final, tokens) == predict(back, tokens)
    assert predict(back, tokens)[0] == evaluate(back, built.test).probabilities[0]


def test_history_export(built, tmp_path):
    res = train(small_cfg(built.vocab), built.train, built.test, TrainConfig(epochs=1, batch_size=64))
    csv_path, svg_path = default_report_paths(tmp_path / "model.psc")
    assert csv_path.name == "model_history.csv"
    export_history(res.history, csv_path, svg_path)
    assert read_history_csv(csv_path) == res.history
    assert svg_path.read_text().lstrip().startswith("<?xml")


def test_history_csv_line_count(tmp_path):
    hist = [EpochRecord(e, 0.5 / e, 0.5, 0.6 / e, 0.4) for e in range(1, 51)]
    export_history(hist, tmp_path / "h.csv", tmp_path / "h.svg")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert len(lines) == 51
    assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
    first = (tmp_path / "h.svg").read_bytes()
    export_history(hist, tmp_path / "h.csv", tmp_path / "h.svg")
    assert (tmp_path / "h.svg").read_bytes() == first

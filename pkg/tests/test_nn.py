import os

import numpy as np
import pytest

from capcompress import nn, tensor
from capcompress.caption import sample_generator
from capcompress.errors import ShapeError, VocabError
from capcompress.pruning import SparsitySchedule

from gradcheck import assert_close, numeric_grad
from helpers import tiny_model
from layer_checks import LAYER_CHECKS

GOLDEN = os.path.join(os.path.dirname(__file__), "data", "golden_logits.npz")


def test_dense_examples(rng):
    x = rng.standard_normal((3, 4)).astype(np.float32)
    assert np.array_equal(nn.dense_forward(x, np.eye(4, dtype=np.float32), np.zeros(4, np.float32)), x)
    relu = nn.dense_forward(np.array([[-1.0, 2.0]]), np.eye(2), np.zeros(2), "relu")
    assert relu.tolist() == [[0.0, 2.0]]
    W = rng.standard_normal((5, 4)).astype(np.float32)
    b = rng.standard_normal(5).astype(np.float32)
    oracle = tensor.elementwise("add", tensor.matmul(x, W.T), np.tile(b, (3, 1)))
    assert np.array_equal(nn.dense_forward(x, W, b), oracle)
    with pytest.raises(ShapeError):
        nn.dense_forward(x, W.T, b)


def test_embedding_examples(rng):
    E = rng.standard_normal((5, 3))
    assert np.array_equal(nn.embedding_forward([0], E)[0], E[0])
    rows = nn.embedding_forward([2, 2], E)
    assert np.array_equal(rows[0], rows[1])
    with pytest.raises(VocabError):
        nn.embedding_forward([5], E)


def test_embedding_gradient_accumulates_repeats():
    dE = nn.embedding_backward(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]), [1, 1, 0], 3)
    assert dE.tolist() == [[5.0, 6.0], [4.0, 6.0], [0.0, 0.0]]


def test_lstm_examples():
    H, D = 4, 3
    (h, c), _ = nn.lstm_step(np.zeros(D), (np.zeros(H), np.zeros(H)),
                             np.zeros((4 * H, D + H)), np.zeros(4 * H))
    assert not np.any(h) and not np.any(c)
    c0 = np.array([0.3, -0.7, 1.2, 0.05])
    b = np.zeros(4 * H)
    b[:H] = -50.0       # input gate shut
    b[H:2 * H] = 50.0   # forget gate fully open
    (_, c1), _ = nn.lstm_step(np.ones(D), (np.zeros(H), c0), np.zeros((4 * H, D + H)), b)
    assert np.allclose(c1, c0, atol=1e-12)


@pytest.mark.parametrize("name", sorted(LAYER_CHECKS))
def test_layer_gradients(name):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    for _ in range(20):
        assert LAYER_CHECKS[name](rng) <= 0


def _relu_margin(model, feature, ids):
    tape = {}
    nn._run(model, feature, ids, nn._Ctx(use_int8=False, record=True), tape)
    return min(np.min(np.abs(tape["feat"][1])), np.min(np.abs(tape["head"][1])))


@pytest.mark.parametrize("seed", range(3))
def test_full_decoder_gradient(seed):
    rng = np.random.default_rng(seed)
    ids, target = [1, 4, 6], 2
    # resample until no relu input sits within a few eps of the kink
    while True:
        model = tiny_model(vocab_size=7, seed=int(rng.integers(1 << 30)), init_scale=0.5)
        model = model.astype(np.float64)
        feature = rng.standard_normal(5)
        if _relu_margin(model, feature, ids) > 1e-2:
            break
    _, grads = nn.loss_and_grads(model, feature, ids, target)

    def loss():
        return nn.loss_and_grads(model, feature, ids, target)[0]

    for layer, key in model.parameters(nn.DECODER):
        p = layer.params[key]
        assert_close(grads[layer.full_name(key)], numeric_grad(loss, p))


def test_softmax_normalised_and_uniform(rng):
    model = tiny_model()
    logits = nn.decoder_forward(model, rng.standard_normal(5).astype(np.float32), [1, 5])
    assert logits.shape == (12,)
    assert abs(nn.softmax(logits).sum() - 1.0) <= 1e-6
    for layer, key in model.parameters():
        layer.params[key][...] = 0
    p = nn.softmax(nn.decoder_forward(model, np.zeros(5, np.float32), [1]))
    assert np.allclose(p, 1 / 12, atol=1e-12)


def test_golden_logits_bit_exact():
    import sys
    sys.path.insert(0, os.path.dirname(GOLDEN))
    try:
        import make_golden
    finally:
        sys.path.pop(0)
    got = make_golden.compute()
    want = np.load(GOLDEN)["logits"]
    assert got.dtype == want.dtype == np.float32
    assert got.tobytes() == want.tobytes()


def test_incremental_decoder_matches_full_forward(rng):
    model = tiny_model()
    feature = rng.standard_normal(5).astype(np.float32)
    state = nn.DecoderState(model, feature)
    seq = [1, 7, 4, 9]
    for i, tok in enumerate(seq):
        assert np.array_equal(state.step(tok), nn.decoder_forward(model, feature, seq[:i + 1]))


def test_topology_layers():
    m = tiny_model()
    kinds = [(l.name, l.kind) for l in m.layers]
    assert kinds == [("enc_dense", "dense"), ("feat_dense", "dense"), ("feat_dropout", "dropout"),
                     ("embed", "embedding"), ("lstm", "lstm"), ("merge", "merge_add"),
                     ("hidden_dense", "dense"), ("out_dense", "dense"), ("softmax", "softmax")]
    b = m["lstm"].params["b"]
    assert np.all(b[4:8] == 1.0) and not np.any(b[:4]) and not np.any(b[8:])
    assert all(np.all(np.abs(l.params[k]) <= 0.08) for l, k in m.prunable())


def _toy_samples(toy_data, features):
    return list(sample_generator(features, toy_data.train, toy_data.vocab))


def _small_decoder(toy_data, seed=0):
    return nn.build_model(len(toy_data.vocab), raw_dim=64, feature_dim=128, hidden=32, embed=16,
                          dropout=0.0, seed=seed, encoder=False)


def test_lr_zero_leaves_params(toy_data, toy_baseline):
    samples = _toy_samples(toy_data, toy_baseline[2])[:20]
    model = _small_decoder(toy_data)
    before = model.copy()
    nn.train(model, samples, nn.TrainConfig(lr=0.0, epochs=3))
    for (la, k), (lb, _) in zip(model.parameters(), before.parameters()):
        assert np.array_equal(la.params[k], lb.params[k])


@pytest.mark.slow
def test_200_epochs_cut_loss_below_quarter(toy_data, toy_baseline):
    samples = _toy_samples(toy_data, toy_baseline[2])
    model = _small_decoder(toy_data)
    result = nn.train(model, samples, nn.TrainConfig(lr=0.05, epochs=200))
    assert result.losses[-1] < 0.25 * result.losses[0]


def test_pruning_schedule_hits_exact_sparsity(toy_data, toy_baseline):
    samples = _toy_samples(toy_data, toy_baseline[2])
    model = _small_decoder(toy_data)
    sched = SparsitySchedule(0.0, 0.5, t0=0, delta_t=1, n=4)
    nn.train(model, samples, nn.TrainConfig(lr=0.05, epochs=6, schedule=sched))
    for layer, key in model.prunable(nn.DECODER):
        w = layer.params[key]
        assert int(np.sum(w == 0)) == w.size // 2
        assert layer.masks[key].frozen


def test_schedule_must_fit_training():
    with pytest.raises(ValueError):
        nn.TrainConfig(epochs=5, schedule=SparsitySchedule(0.0, 0.5, n=10))


def test_training_is_deterministic(toy_data, toy_baseline):
    samples = _toy_samples(toy_data, toy_baseline[2])[:30]
    runs = []
    for _ in range(2):
        model = _small_decoder(toy_data, seed=4)
        model["feat_dropout"].attrs["rate"] = 0.5
        nn.train(model, samples, nn.TrainConfig(lr=0.05, epochs=2, dropout=0.5, seed=9))
        runs.append(model)
    for (la, k), (lb, _) in zip(runs[0].parameters(), runs[1].parameters()):
        assert np.array_equal(la.params[k], lb.params[k])


def test_int8_path_tracks_float_path(toy_data, toy_baseline, toy_cfg):
    from capcompress import pipeline
    model = pipeline.compress(toy_baseline[0], toy_data,
                              pipeline.CompressionConfig.parse("baseline-ptq"), toy_cfg)
    feature = toy_baseline[2][toy_data.train[0][0]]
    ids = toy_data.vocab.encode(toy_data.train[0][1])[:3]
    q = nn.decoder_forward(model, feature, ids)
    f = nn.decoder_forward(model, feature, ids, use_int8=False)
    assert int(np.argmax(q)) == int(np.argmax(f))
    assert np.max(np.abs(q - f)) < 0.1 * np.max(np.abs(f))

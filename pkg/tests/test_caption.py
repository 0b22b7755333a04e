import numpy as np
import pytest

from capcompress import nn
from capcompress.caption import (CaptionSample, FeatureStore, Vocabulary, build_vocabulary,
                                 count_triples, generate_caption, preprocess_caption,
                                 read_captions, sample_generator, write_captions)
from capcompress.errors import DomainError, FormatError

from helpers import single_sample_set, tiny_model


def test_preprocess_examples():
    assert preprocess_caption("A Dog runs!") == ["a", "dog", "runs"]
    assert preprocess_caption("") == []
    assert preprocess_caption("123 456") == []
    assert preprocess_caption("dog's  “ball”, 2x") == ["dogs", "ball", "x"]


def test_vocabulary_examples():
    v = build_vocabulary(["a dog", "a cat"])
    assert v.tokens == ["<pad>", "<start>", "<end>", "<unk>", "a", "cat", "dog"]
    assert len(build_vocabulary(["x"])) == 5
    for tok in v.tokens:
        assert v.token(v.id(tok)) == tok
    assert v.id("zebra") == v.unk_id
    assert v.encode("A cat!") == [1, 4, 5, 2]
    assert v.decode([1, 4, 5, 2]) == "a cat"
    with pytest.raises(DomainError):
        build_vocabulary([])


def test_vocabulary_min_count():
    v = build_vocabulary(["a dog", "a cat", "a dog"], min_count=2)
    assert v.tokens[4:] == ["a", "dog"]


def test_vocabulary_file_round_trip(tmp_path):
    v = build_vocabulary(["the quick fox", "a lazy dog"])
    path = tmp_path / "vocab.txt"
    v.save(path)
    assert Vocabulary.load(path).tokens == v.tokens
    path.write_text("<pad>\n<start>\n<end>\n<unk>\nx\nx\n\n")
    with pytest.raises(FormatError):
        Vocabulary.load(path)


def test_sample_generator_unrolls():
    store = FeatureStore(2, {"i": [1.0, 2.0]})
    triples = list(sample_generator(store, [("i", [1, 4, 6, 2])], None))
    assert [(p, t) for _, p, t in triples] == [([1], 4), ([1, 4], 6), ([1, 4, 6], 2)]
    assert len(list(sample_generator(store, [("i", [1, 2])], None))) == 1


def test_triple_count_matches(toy_data):
    n = sum(1 for _ in sample_generator(toy_data.raw, toy_data.train, toy_data.vocab))
    assert n == count_triples(toy_data.train, toy_data.vocab)
    assert n == sum(len(toy_data.vocab.encode(t)) - 1 for _, t in toy_data.train)


def test_caption_sample_validation():
    CaptionSample("i", np.zeros(2), (1, 5, 2))
    with pytest.raises(DomainError):
        CaptionSample("i", np.zeros(2), (1, 2))


def test_generate_end_favoured_gives_empty():
    model = tiny_model()
    for layer, key in model.parameters():
        layer.params[key][...] = 0
    model["out_dense"].params["b"][2] = 5.0
    assert generate_caption(model, np.zeros(5, np.float32), build_vocabulary(["a b c d e f g h"])) == ""


def test_generate_respects_max_len_and_is_deterministic(rng):
    vocab = build_vocabulary(["a b c d e f g h"])
    for seed in range(10):
        model = tiny_model(seed=seed)
        model["out_dense"].params["b"][2] = -10.0  # never stop on its own
        feature = rng.standard_normal(5).astype(np.float32)
        for max_len in (1, 2, 5, 34):
            text = generate_caption(model, feature, vocab, max_len)
            assert len(text.split()) <= max_len - 1
            assert text == generate_caption(model, feature, vocab, max_len)
            assert not {"<pad>", "<start>", "<unk>", "<end>"} & set(text.split())
        assert len(generate_caption(model, feature, vocab, 34).split()) == 33


def test_overfit_one_caption_reproduced(rng):
    vocab = build_vocabulary(["a dog runs on grass"])
    feature = np.abs(rng.standard_normal(64)).astype(np.float32)
    model = nn.build_model(len(vocab), feature_dim=64, hidden=128, embed=64, dropout=0.0,
                           encoder=False)
    samples = single_sample_set(vocab, "a dog runs on grass", feature)
    nn.train(model, samples, nn.TrainConfig(lr=0.2, epochs=300))
    assert generate_caption(model, feature, vocab) == "a dog runs on grass"


def test_feature_store_round_trip(tmp_path, rng):
    store = FeatureStore(3)
    for i in range(4):
        store.add(f"im{i}", rng.standard_normal(3))
    path = tmp_path / "f.ckf"
    store.save(path)
    back = FeatureStore.load(path)
    assert back.ids() == store.ids()
    assert all(back[k].tobytes() == store[k].tobytes() for k in store.ids())
    assert back.dumps() == store.dumps()
    empty = FeatureStore(7).dumps()
    assert len(empty) == 12 and len(FeatureStore.loads(empty)) == 0


def test_feature_store_truncation_is_format_error(rng):
    store = FeatureStore(5, {f"x{i}": rng.standard_normal(5) for i in range(3)})
    buf = store.dumps()
    for cut in range(len(buf)):
        with pytest.raises(FormatError):
            FeatureStore.loads(buf[:cut])


def test_captions_file_round_trip(tmp_path):
    records = [("a", "One caption."), ("b", "Another, with\ttab? no")]
    path = tmp_path / "c.tsv"
    write_captions(path, records[:1])
    assert read_captions(path) == records[:1]
    path.write_text("no tab here\n")
    with pytest.raises(DomainError):
        read_captions(path)

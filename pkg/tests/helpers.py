"""Small builders shared by several test modules."""

from capcompress import nn


def tiny_model(vocab_size=12, seed=0, **kw):
    kw.setdefault("raw_dim", 6)
    kw.setdefault("feature_dim", 5)
    kw.setdefault("hidden", 4)
    kw.setdefault("embed", 3)
    kw.setdefault("dropout", 0.0)
    return nn.build_model(vocab_size, seed=seed, **kw)


def single_sample_set(vocab, text, feature):
    ids = vocab.encode(text)
    return [(feature, ids[:i], ids[i]) for i in range(1, len(ids))]


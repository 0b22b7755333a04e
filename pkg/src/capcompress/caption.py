"""Captions: text cleanup, vocabulary, stored features, training streams, greedy decoding."""

import string
import struct
import unicodedata
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError, ShapeError
from .nn import DecoderState, encode

PAD, START, END, UNK = "<pad>", "<start>", "<end>", "<unk>"
RESERVED = (PAD, START, END, UNK)
DEFAULT_MAX_LEN = 34

_ASCII_SYMBOLS = frozenset(string.punctuation)


def _dropped(ch):
    cat = unicodedata.category(ch)
    return cat.startswith("P") or cat == "Nd" or ch in _ASCII_SYMBOLS


def preprocess_caption(text):
    """Lowercase, delete punctuation/symbol/digit characters, split on whitespace."""
    cleaned = "".join(ch for ch in text.lower() if not _dropped(ch))
    return cleaned.split()


class Vocabulary:
    """Bijective token <-> id map; ids 0..3 are pad, start, end, unk."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise DomainError(f"vocabulary must start with {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise DomainError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.index = {tok: i for i, tok in enumerate(tokens)}

    pad_id, start_id, end_id, unk_id = 0, 1, 2, 3

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def id(self, token):
        return self.index.get(token, self.unk_id)

    def token(self, idx):
        return self.tokens[idx]

    def encode(self, text):
        """Caption text -> [start, ..., end] ids; unseen words map to unk."""
        return [self.start_id] + [self.id(t) for t in preprocess_caption(text)] + [self.end_id]

    def decode(self, ids):
        return " ".join(self.tokens[i] for i in ids if i not in (0, 1, 2, 3))

    def dumps(self):
        # one token per line (line index = id), then an empty terminator line
        return "".join(tok + "\n" for tok in self.tokens) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.loads(fh.read())

    @classmethod
    def loads(cls, buf):
        try:
            text = bytes(buf).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("vocabulary is not valid UTF-8", exc.start) from None
        if not text.endswith("\n\n"):
            raise FormatError("vocabulary file lacks its terminating empty line",
                              len(text.encode("utf-8")))
        tokens = text[:-2].split("\n")
        for i, tok in enumerate(tokens):
            if not tok or tok != tok.strip():
                offset = len("\n".join(tokens[:i]).encode("utf-8")) + (1 if i else 0)
                raise FormatError(f"bad token on line {i + 1}", offset)
        try:
            return cls(tokens)
        except DomainError as exc:
            raise FormatError(str(exc), 0) from None


def build_vocabulary(corpus, min_count=1):
    """Reserved tokens first, then every token seen >= ``min_count`` times, sorted."""
    counts = Counter()
    n = 0
    for text in corpus:
        counts.update(preprocess_caption(text))
        n += 1
    if n == 0:
        raise DomainError("cannot build a vocabulary from an empty corpus")
    words = sorted(t for t, c in counts.items() if c >= min_count and t not in RESERVED)
    return Vocabulary(list(RESERVED) + words)


@dataclass(frozen=True)
class CaptionSample:
    image_id: str
    feature: np.ndarray
    token_ids: tuple

    def __post_init__(self):
        if len(self.token_ids) < 3:
            raise DomainError("caption needs start, at least one word, and end")
        if self.token_ids[0] != Vocabulary.start_id or self.token_ids[-1] != Vocabulary.end_id:
            raise DomainError("caption must begin with start and end with end")


# --------------------------------------------------------------------------
# feature store ("CKF1")

FEATURE_MAGIC = b"CKF1"


class FeatureStore:
    """Image id -> fixed-length float32 feature vector."""

    def __init__(self, dim, items=None):
        self.dim = int(dim)
        self._data = {}
        for key, vec in (items or {}).items():
            self.add(key, vec)

    def add(self, image_id, vector):
        vec = np.asarray(vector, dtype=np.float32).reshape(-1)
        if vec.size != self.dim:
            raise ShapeError(f"feature for {image_id!r} has length {vec.size}, store expects {self.dim}")
        if image_id in self._data:
            raise DomainError(f"duplicate image id {image_id!r}")
        self._data[image_id] = vec

    def __getitem__(self, image_id):
        try:
            return self._data[image_id]
        except KeyError:
            raise KeyError(f"no feature stored for image {image_id!r}") from None

    def __contains__(self, image_id):
        return image_id in self._data

    def __len__(self):
        return len(self._data)

    def ids(self):
        return list(self._data)

    def items(self):
        return self._data.items()

    def dumps(self):
        parts = [FEATURE_MAGIC, struct.pack("<II", len(self._data), self.dim)]
        for key, vec in self._data.items():
            raw = key.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)) + raw + vec.astype("<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def loads(cls, buf):
        buf = bytes(buf)

        def need(pos, n, what):
            if pos + n > len(buf):
                raise FormatError(f"truncated {what}", pos)

        need(0, 12, "header")
        if buf[:4] != FEATURE_MAGIC:
            raise FormatError("bad magic, expected CKF1", 0)
        count, dim = struct.unpack_from("<II", buf, 4)
        store = cls(dim)
        pos = 12
        for _ in range(count):
            need(pos, 2, "id length")
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            need(pos, n, "image id")
            try:
                key = buf[pos:pos + n].decode("utf-8")
            except UnicodeDecodeError:
                raise FormatError("image id is not UTF-8", pos) from None
            pos += n
            need(pos, 4 * dim, f"feature of {key!r}")
            vec = np.frombuffer(buf, dtype="<f4", count=dim, offset=pos).astype(np.float32)
            if key in store:
                raise FormatError(f"duplicate image id {key!r}", pos - n - 2)
            store.add(key, vec)
            pos += 4 * dim
        if pos != len(buf):
            raise FormatError(f"{len(buf) - pos} trailing bytes", pos)
        return store

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.loads(fh.read())


def read_captions(path):
    """``image_id<TAB>caption`` per line -> list of (image_id, text)."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise DomainError(f"{path}:{lineno}: expected image_id<TAB>caption")
            image_id, text = line.split("\t", 1)
            records.append((image_id, text))
    return records


def write_captions(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for image_id, text in records:
            fh.write(f"{image_id}\t{text}\n")


def sample_generator(store, records, vocab, order=None):
    """Stream ``(feature, prefix_ids, target_id)`` one triple at a time.

    A caption of L ids (start and end included) yields L - 1 triples.
    ``order`` optionally permutes the caption records.
    """
    indices = range(len(records)) if order is None else order
    for idx in indices:
        image_id, text = records[idx]
        feature = store[image_id]
        ids = text if isinstance(text, (list, tuple)) else vocab.encode(text)
        for k in range(1, len(ids)):
            yield feature, ids[:k], ids[k]


def count_triples(records, vocab):
    return sum(len(vocab.encode(text)) - 1 for _, text in records)


def generate_caption(model, feature, vocab, max_len=DEFAULT_MAX_LEN, use_int8=True):
    """Greedy decoding from the start token.

    ``max_len`` bounds the sequence including the start token, so at most
    ``max_len - 1`` words come back. Pad, start and unk are never emitted;
    argmax ties go to the lowest id.
    """
    if max_len < 1:
        raise DomainError("max_len must be >= 1")
    state = DecoderState(model, feature, use_int8=use_int8)
    banned = [vocab.pad_id, vocab.start_id, vocab.unk_id]
    seq = [vocab.start_id]
    words = []
    while len(seq) < max_len:
        logits = np.array(state.step(seq[-1]), dtype=np.float64)
        logits[banned] = -np.inf
        nxt = int(np.argmax(logits))
        if nxt == vocab.end_id:
            break
        seq.append(nxt)
        words.append(vocab.token(nxt))
    return " ".join(words)


def caption_image(model, raw_feature, vocab, max_len=DEFAULT_MAX_LEN):
    """Encoder head + greedy decoding for one raw image feature."""
    return generate_caption(model, encode(model, raw_feature), vocab, max_len)


def encode_store(model, raw_store, use_int8=True):
    """Run the encoder head over every raw feature and collect the results."""
    dim = model.config["feature_dim"] if model.has_encoder else raw_store.dim
    out = FeatureStore(dim)
    for image_id, vec in raw_store.items():
        out.add(image_id, encode(model, vec, use_int8=use_int8))
    return out

"""End-to-end pipeline: train a baseline, compress it, evaluate, sweep.

Configuration is an INI-style file (``key = value`` lines in ``[data]``,
``[model]``, ``[train]``, ``[compress]`` and ``[sweep]`` sections). Relative
paths resolve against the config file's directory.
"""

import configparser
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import caption, nn, serialize
from .caption import FeatureStore, Vocabulary, caption_image, encode_store, sample_generator
from .metrics import EvalReport, bleu_scores, time_inference
from .nn import DECODER, ENCODER, TrainConfig
from .pruning import SparsitySchedule
from .quant import calibrate, compute_params_asymmetric

log = logging.getLogger(__name__)

DEFAULTS = {
    "data": {"captions": "", "features": "", "eval_captions": ""},
    "model": {"feature_dim": "256", "hidden": "256", "embed": "256",
              "dropout": "0.5", "init_scale": "0.08"},
    "train": {"epochs": "20", "lr": "0.01", "seed": "0"},
    "compress": {"encoder": "baseline", "decoder": "baseline", "sparsity": "0.5",
                 "prune_epochs": "30", "prune_t0": "0", "prune_n": "10", "prune_delta_t": "1",
                 "encoder_prune_epochs": "30", "encoder_lr": "0.05",
                 "qat_epochs": "10", "qat_lr": "0.01", "calibration_samples": "100"},
    "sweep": {"repetitions": "3", "max_len": str(caption.DEFAULT_MAX_LEN),
              "bleu_smoothing": "false"},
}

ENCODER_SCHEMES = ("baseline", "prune", "quantized", "prunequant")
DECODER_SCHEMES = ("baseline", "prune", "quantized", "ptq")
_ALIASES = {"quantize": "quantized", "quant": "quantized", "prune_quantize": "prunequant",
            "prune-quantize": "prunequant", "qat": "quantized"}

SWEEP_ROWS = (
    "baseline-baseline",
    "baseline-prune",
    "baseline-quantized",
    "prune-baseline",
    "quantized-baseline",
    "prune-prune",
    "quantized-quantized",
    "prunequant-quantized",
)
# post-training-quantized decoder variants, reported below the main table
SUPPLEMENTARY_ROWS = ("baseline-ptq", "quantized-ptq")


class Config:
    def __init__(self, parser, base_dir):
        self.parser = parser
        self.base_dir = base_dir

    @classmethod
    def load(cls, path=None, overrides=None):
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.read_dict(DEFAULTS)
        base = os.getcwd()
        if path is not None:
            if not os.path.exists(path):
                raise FileNotFoundError(f"config file not found: {path}")
            parser.read(path, encoding="utf-8")
            base = os.path.dirname(os.path.abspath(path))
        if overrides:
            parser.read_dict(overrides)
        return cls(parser, base)

    def get(self, section, key):
        return self.parser.get(section, key)

    def int(self, section, key):
        return self.parser.getint(section, key)

    def float(self, section, key):
        return self.parser.getfloat(section, key)

    def path(self, section, key):
        value = self.parser.get(section, key).strip()
        if not value:
            return None
        return value if os.path.isabs(value) else os.path.join(self.base_dir, value)


@dataclass(frozen=True)
class CompressionConfig:
    encoder: str = "baseline"
    decoder: str = "baseline"
    sparsity: float = 0.5

    def __post_init__(self):
        if self.encoder not in ENCODER_SCHEMES:
            raise ValueError(f"unknown encoder scheme {self.encoder!r}; choose from {ENCODER_SCHEMES}")
        if self.decoder not in DECODER_SCHEMES:
            raise ValueError(f"unknown decoder scheme {self.decoder!r}; choose from {DECODER_SCHEMES}")
        if not (0.0 <= self.sparsity < 1.0):
            raise ValueError("sparsity must be in [0, 1)")

    @classmethod
    def parse(cls, label, sparsity=0.5):
        parts = label.strip().lower().split("-")
        if len(parts) != 2:
            raise ValueError(f"scheme must look like ENCODER-DECODER, got {label!r}")
        enc, dec = (_ALIASES.get(p, p) for p in parts)
        return cls(enc, dec, sparsity)

    @property
    def label(self):
        return f"{self.encoder}-{self.decoder}"


@dataclass
class Dataset:
    raw: FeatureStore
    train: list
    eval: list
    vocab: Vocabulary


def load_dataset(cfg):
    captions_path = cfg.path("data", "captions")
    features_path = cfg.path("data", "features")
    for what, p in (("captions", captions_path), ("features", features_path)):
        if p is None or not os.path.exists(p):
            raise FileNotFoundError(f"{what} file not found: {p}")
    raw = FeatureStore.load(features_path)
    train = caption.read_captions(captions_path)
    eval_path = cfg.path("data", "eval_captions")
    if eval_path is not None and not os.path.exists(eval_path):
        raise FileNotFoundError(f"eval captions file not found: {eval_path}")
    evals = caption.read_captions(eval_path) if eval_path else train
    for image_id, _ in train + evals:
        if image_id not in raw:
            raise KeyError(f"no feature stored for image {image_id!r}")
    vocab = caption.build_vocabulary(text for _, text in train)
    return Dataset(raw, train, evals, vocab)


def decoder_samples(store, records, vocab, seed):
    """Per-epoch streaming generator over shuffled caption records."""
    def epoch_stream(epoch):
        order = np.random.default_rng([seed, epoch]).permutation(len(records))
        return sample_generator(store, records, vocab, order)
    return epoch_stream


def _schedule(cfg, sparsity):
    return SparsitySchedule(0.0, sparsity, cfg.int("compress", "prune_t0"),
                            cfg.int("compress", "prune_delta_t"), cfg.int("compress", "prune_n"))


def train_baseline(cfg, data, seed=None, log_fn=None):
    """Encode raw features once, store them, and train the decoder on the stored features."""
    seed = cfg.int("train", "seed") if seed is None else seed
    model = nn.build_model(
        len(data.vocab), raw_dim=data.raw.dim,
        feature_dim=cfg.int("model", "feature_dim"), hidden=cfg.int("model", "hidden"),
        embed=cfg.int("model", "embed"), dropout=cfg.float("model", "dropout"),
        seed=seed, init_scale=cfg.float("model", "init_scale"))
    features = encode_store(model, data.raw)
    tc = TrainConfig(lr=cfg.float("train", "lr"), epochs=cfg.int("train", "epochs"),
                     dropout=cfg.float("model", "dropout"), seed=seed)
    result = nn.train(model, decoder_samples(features, data.train, data.vocab, seed), tc, log=log_fn)
    return model, result.losses, features


def _train_image_ids(data):
    seen = []
    for image_id, _ in data.train:
        if image_id not in seen:
            seen.append(image_id)
    return seen


def compress_encoder(baseline, data, scheme, cfg, seed):
    """Copy of ``baseline`` with the encoder head pruned and/or quantized."""
    model = baseline.copy()
    ids = _train_image_ids(data)
    raws = [data.raw[i] for i in ids]
    if scheme in ("prune", "prunequant"):
        targets = [nn.encode(baseline, r) for r in raws]
        epochs = cfg.int("compress", "encoder_prune_epochs")
        tc = TrainConfig(lr=cfg.float("compress", "encoder_lr"), epochs=epochs, seed=seed,
                         schedule=_schedule(cfg, cfg.float("compress", "sparsity")))
        nn.train_encoder(model, raws, targets, tc)
    if scheme in ("quantized", "prunequant"):
        n = cfg.int("compress", "calibration_samples")
        calib = calibrate(model, raws[:n], part="encoder")
        nn.quantize_weights(model, ENCODER, calib.params)
    return model


def compress_decoder(model, data, features, scheme, cfg, seed):
    """Apply the decoder scheme in place, starting from the current (baseline) weights."""
    samples = decoder_samples(features, data.train, data.vocab, seed)
    if scheme == "prune":
        tc = TrainConfig(lr=cfg.float("train", "lr"), epochs=cfg.int("compress", "prune_epochs"),
                         dropout=cfg.float("model", "dropout"), seed=seed,
                         schedule=_schedule(cfg, cfg.float("compress", "sparsity")))
        nn.train(model, samples, tc)
    elif scheme == "ptq":
        n = cfg.int("compress", "calibration_samples")
        calib_set = [(f, p) for f, p, _ in
                     _take(sample_generator(features, data.train, data.vocab), n)]
        calib = calibrate(model, calib_set, part="decoder")
        nn.quantize_weights(model, DECODER, calib.params)
    elif scheme == "quantized":
        tc = TrainConfig(lr=cfg.float("compress", "qat_lr"), epochs=cfg.int("compress", "qat_epochs"),
                         dropout=cfg.float("model", "dropout"), seed=seed, qat=True)
        result = nn.train(model, samples, tc)
        act = {site: compute_params_asymmetric(lo, hi)
               for site, (lo, hi) in result.qat_ranges.items()}
        nn.quantize_weights(model, DECODER, act)
    return model


def _take(iterable, n):
    for i, item in enumerate(iterable):
        if i >= n:
            return
        yield item


def compress(baseline, data, scheme, cfg, seed=None, encoder_cache=None):
    """Build the compressed model for ``scheme`` (a :class:`CompressionConfig`)."""
    seed = cfg.int("train", "seed") if seed is None else seed
    cache = encoder_cache if encoder_cache is not None else {}
    if scheme.encoder not in cache:
        enc_model = compress_encoder(baseline, data, scheme.encoder, cfg, seed)
        # features extracted by the (compressed) encoder are stored once per scheme
        cache[scheme.encoder] = (enc_model, encode_store(enc_model, data.raw))
    enc_model, features = cache[scheme.encoder]
    model = enc_model.copy()
    return compress_decoder(model, data, features, scheme.decoder, cfg, seed)


def references_by_image(data):
    refs = {}
    for image_id, text in data.eval:
        tokens = [t if t in data.vocab else caption.UNK for t in caption.preprocess_caption(text)]
        refs.setdefault(image_id, []).append(tokens)
    return refs


def evaluate_bleu(model, data, max_len=caption.DEFAULT_MAX_LEN, smoothing=False):
    refs = references_by_image(data)
    generated = {}
    pairs = []
    for image_id, references in refs.items():
        text = caption_image(model, data.raw[image_id], data.vocab, max_len)
        generated[image_id] = text
        pairs.append((text.split(), references))
    return bleu_scores(pairs, 4, smoothing), generated


def time_model(model, data, repetitions, max_len=caption.DEFAULT_MAX_LEN):
    ids = list(references_by_image(data))
    return time_inference(lambda i: caption_image(model, data.raw[i], data.vocab, max_len),
                          ids, repetitions)


def model_paths(out_dir, stem="model"):
    return (os.path.join(out_dir, f"{stem}.json"), os.path.join(out_dir, f"{stem}.ckt"))


def save_bundle(model, vocab, out_dir):
    """Write topology, weights and vocabulary; returns the weight file size."""
    os.makedirs(out_dir, exist_ok=True)
    topo, weights = model_paths(out_dir)
    serialize.save_model(model, topo, weights)
    vocab.save(os.path.join(out_dir, "vocab.txt"))
    return os.path.getsize(weights)


def load_bundle(model_dir):
    topo, weights = model_paths(model_dir)
    for p in (topo, weights, os.path.join(model_dir, "vocab.txt")):
        if not os.path.exists(p):
            raise FileNotFoundError(f"model file not found: {p}")
    return serialize.load_model(topo, weights), Vocabulary.load(os.path.join(model_dir, "vocab.txt"))


@dataclass
class SweepResult:
    reports: list
    supplementary: list = field(default_factory=list)
    captions: dict = field(default_factory=dict)

    @property
    def failed(self):
        return any(r.status != "ok" for r in self.reports + self.supplementary)


def run_sweep(cfg, out_dir, seed=None, baseline=None, rows=SWEEP_ROWS,
              supplementary=SUPPLEMENTARY_ROWS, data=None):
    """Build, store and score every configuration, then time them one after another.

    Row models are written to ``out_dir/<label>/``. The size column is the
    on-disk size of each weight container. A failing row is marked FAILED and
    the sweep carries on.
    """
    seed = cfg.int("train", "seed") if seed is None else seed
    data = data or load_dataset(cfg)
    if baseline is None:
        log.info("training baseline")
        baseline, _, _ = train_baseline(cfg, data, seed)
    sparsity = cfg.float("compress", "sparsity")
    max_len = cfg.int("sweep", "max_len")
    smoothing = cfg.parser.getboolean("sweep", "bleu_smoothing")
    cache = {}
    built = {}
    reports = {}
    captions = {}
    for label in tuple(rows) + tuple(supplementary):
        try:
            scheme = CompressionConfig.parse(label, sparsity)
            log.info("building %s", label)
            model = compress(baseline, data, scheme, cfg, seed, cache)
            size = save_bundle(model, data.vocab, os.path.join(out_dir, label))
            bleu, generated = evaluate_bleu(model, data, max_len, smoothing)
            built[label] = model
            captions[label] = generated
            reports[label] = EvalReport(label, bleu, size, 0.0)
        except Exception as exc:  # a failed row must not stop the sweep
            log.exception("configuration %s failed", label)
            reports[label] = EvalReport(label, [], 0, 0.0, status=f"{type(exc).__name__}: {exc}")
    # timing runs serially after every model is built
    reps = cfg.int("sweep", "repetitions")
    for label, model in built.items():
        t = time_model(model, data, reps, max_len)
        reports[label].inference_time_s = t.total_s
        reports[label].per_sample_s = t.per_sample_s
    main = [reports[l] for l in rows]
    extra = [reports[l] for l in supplementary]
    base = main[0] if main else None
    for r in main + extra:
        if base is not None:
            r.compare(base)
    return SweepResult(main, extra, captions)

"""Layers, the captioning model graph, and an SGD trainer.

The model has two parts. The *encoder* is a single dense head (raw image
feature -> encoded feature), standing in for the dense top of a pretrained
CNN. The *decoder* has two branches: a feature branch (dense + relu +
dropout) and a text branch (embedding + LSTM). The branch outputs are added,
then pass through dense + relu and a vocabulary-sized dense layer that
produces logits.

Every affine op ("site") can run three ways:

* float32, the baseline;
* fake-quantized (QAT), where weights and the site's input/output
  activations are snapped to the int8 grid and gradients pass straight
  through;
* int8, once a layer carries quantized weights and calibrated activation
  params, using :func:`capcompress.quant.qmatmul`.

Gradients are hand-written per layer. All float math runs in the
parameters' dtype (float32 normally, float64 for gradient checks), except
the nonlinearities, which are evaluated in float64 and cast back.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DivergenceError, ShapeError, VocabError
from .pruning import PruneMask, SparsitySchedule, masked_gradient, prune_step
from .quant import (
    MinMaxObserver,
    QuantizedTensor,
    compute_params_asymmetric,
    compute_params_symmetric,
    dequantize,
    fake_quant_backward,
    fake_quant_forward,
    qmatmul,
    quantize,
)

ENCODER = "encoder"
DECODER = "decoder"

# weight tensors eligible for pruning / per-axis quantization, by layer kind
PRUNABLE = {"dense": "W", "lstm": "W", "embedding": "E"}


# --------------------------------------------------------------------------
# elementwise helpers


def _sigmoid(z):
    z64 = np.asarray(z, dtype=np.float64)
    return (0.5 * (1.0 + np.tanh(0.5 * z64))).astype(z.dtype, copy=False)


def _tanh(z):
    return np.tanh(np.asarray(z, dtype=np.float64)).astype(z.dtype, copy=False)


def _relu(z):
    return np.maximum(z, np.zeros((), dtype=z.dtype))


# --------------------------------------------------------------------------
# layer primitives (float path)


def dense_forward(x, W, b, activation="none"):
    """``activation(x @ W.T + b)`` for ``x`` [batch x in], ``W`` [out x in]."""
    x = np.atleast_2d(x)
    if x.shape[1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(f"dense: x {x.shape}, W {W.shape}, b {b.shape}")
    z = kernels.matmul_nt(np.ascontiguousarray(x, dtype=W.dtype), W) + b
    if activation == "relu":
        return _relu(z)
    if activation == "none":
        return z
    raise ValueError(f"unknown activation {activation!r}")


def dense_backward(dy, x, W, y, activation="none"):
    """Gradients ``(dx, dW, db)`` of :func:`dense_forward` given its output ``y``."""
    x = np.atleast_2d(x)
    dz = np.atleast_2d(dy)
    if activation == "relu":
        dz = dz * (y > 0)
    dW = kernels.matmul(np.ascontiguousarray(dz.T), np.ascontiguousarray(x, dtype=W.dtype))
    db = dz.sum(axis=0)
    dx = kernels.matmul(np.ascontiguousarray(dz), W)
    return dx, dW, db


def embedding_forward(ids, E):
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= E.shape[0]):
        bad = int(ids[(ids < 0) | (ids >= E.shape[0])][0])
        raise VocabError(f"token id {bad} outside vocabulary of size {E.shape[0]}")
    return E[ids]


def embedding_backward(dout, ids, vocab_size):
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    dout = np.atleast_2d(dout)
    dE = np.zeros((vocab_size, dout.shape[1]), dtype=dout.dtype)
    np.add.at(dE, ids, dout)
    return dE


def lstm_step(x, state, W, b):
    """One LSTM cell step. Gate order in ``W`` rows: input, forget, cell, output.

    ``W`` is [4H x (D + H)] acting on ``concat(x, h)``. Returns ``(h', c')``
    and a cache for :func:`lstm_step_backward`.
    """
    h, c = state
    H = h.shape[-1]
    if W.shape != (4 * H, x.shape[-1] + H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm: x {x.shape}, h {h.shape}, W {W.shape}, b {b.shape}")
    xh = np.concatenate([x.reshape(1, -1), h.reshape(1, -1)], axis=1).astype(W.dtype)
    z = kernels.matmul_nt(xh, W)[0] + b
    h_new, c_new, cache = _lstm_gates(z, c)
    return (h_new, c_new), (xh, W) + cache


def _lstm_gates(z, c):
    H = c.shape[-1]
    i = _sigmoid(z[:H])
    f = _sigmoid(z[H:2 * H])
    g = _tanh(z[2 * H:3 * H])
    o = _sigmoid(z[3 * H:])
    c_new = f * c + i * g
    tc = _tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (c, i, f, g, o, tc)


def _lstm_gates_backward(dh, dc, cache):
    c, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1 - tc * tc)
    df = dc * c
    di = dc * g
    dg = dc * i
    dc_prev = dc * f
    dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)])
    return dz, dc_prev


def lstm_step_backward(dh, dc, cache):
    """Returns ``(dx, dh_prev, dc_prev, dW, db)``."""
    xh, W = cache[:2]
    dz, dc_prev = _lstm_gates_backward(dh, dc, cache[2:])
    dz2 = dz.reshape(1, -1)
    dW = kernels.matmul(np.ascontiguousarray(dz2.T), xh)
    dxh = kernels.matmul(dz2, W)[0]
    D = xh.shape[1] - dh.shape[-1]
    return dxh[:D], dxh[D:], dc_prev, dW, dz


def merge_add_forward(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"merge: {a.shape} vs {b.shape}")
    return a + b


def merge_add_backward(dout):
    return dout, dout


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, target):
    """Returns ``(loss, dlogits)`` for a single target index."""
    p = softmax(logits)
    loss = -math.log(max(float(p[target]), 1e-300))
    d = p.copy()
    d[target] -= 1.0
    return loss, d.astype(logits.dtype)


def dropout_forward(x, rate, rng, train):
    if not train or rate <= 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * keep, keep


# --------------------------------------------------------------------------
# model graph


@dataclass
class Layer:
    name: str
    kind: str
    group: str
    params: dict = field(default_factory=dict)
    attrs: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)
    qweights: dict = field(default_factory=dict)

    @property
    def prunable_key(self):
        return PRUNABLE.get(self.kind)

    def full_name(self, key):
        return f"{self.name}.{key}"

    def weight(self, key):
        """Float view of a parameter (dequantized when stored as int8)."""
        if key in self.qweights:
            return dequantize(self.qweights[key]).astype(np.float32)
        return self.params[key]


class ModelGraph:
    """Ordered layer list plus activation quantization params per site."""

    def __init__(self, layers, config):
        self.layers = list(layers)
        self.config = dict(config)
        self.act_params = {}
        self._by_name = {}
        for layer in self.layers:
            if layer.name in self._by_name:
                raise ValueError(f"duplicate layer name {layer.name!r}")
            self._by_name[layer.name] = layer
        names = [layer.full_name(k) for layer in self.layers for k in layer.params]
        if len(names) != len(set(names)):
            raise ValueError("parameter names must be unique")

    def __getitem__(self, name):
        return self._by_name[name]

    def __contains__(self, name):
        return name in self._by_name

    def parameters(self, group=None):
        """Yield ``(layer, key)`` for every parameter tensor, in layer order."""
        for layer in self.layers:
            if group is not None and layer.group != group:
                continue
            for key in layer.params:
                yield layer, key

    def prunable(self, group=None):
        for layer in self.layers:
            if layer.prunable_key and (group is None or layer.group == group):
                yield layer, layer.prunable_key

    def is_quantized(self, group):
        return any(layer.qweights for layer in self.layers if layer.group == group)

    @property
    def has_encoder(self):
        return "enc_dense" in self

    @property
    def vocab_size(self):
        return self["out_dense"].params["W"].shape[0]

    def copy(self):
        layers = [
            Layer(l.name, l.kind, l.group,
                  {k: v.copy() for k, v in l.params.items()}, dict(l.attrs),
                  {k: PruneMask(m.bits, m.frozen) for k, m in l.masks.items()},
                  dict(l.qweights))
            for l in self.layers
        ]
        out = ModelGraph(layers, self.config)
        out.act_params = dict(self.act_params)
        return out

    def astype(self, dtype):
        out = self.copy()
        for layer in out.layers:
            for k, v in layer.params.items():
                layer.params[k] = v.astype(dtype)
        return out


def build_model(vocab_size, raw_dim=64, feature_dim=256, hidden=256, embed=256,
                dropout=0.5, seed=0, init_scale=0.08, encoder=True):
    """Construct the captioning model with seeded uniform(+-init_scale) weights.

    Biases start at zero except the LSTM forget gate, which starts at 1.
    """
    rng = np.random.default_rng(seed)

    def uni(*shape):
        return rng.uniform(-init_scale, init_scale, size=shape).astype(np.float32)

    def zeros(n):
        return np.zeros(n, dtype=np.float32)

    layers = []
    if encoder:
        layers.append(Layer("enc_dense", "dense", ENCODER,
                            {"W": uni(feature_dim, raw_dim), "b": zeros(feature_dim)},
                            {"in": raw_dim, "out": feature_dim, "activation": "relu"}))
    lstm_b = zeros(4 * hidden)
    lstm_b[hidden:2 * hidden] = 1.0
    layers += [
        Layer("feat_dense", "dense", DECODER,
              {"W": uni(hidden, feature_dim), "b": zeros(hidden)},
              {"in": feature_dim, "out": hidden, "activation": "relu"}),
        Layer("feat_dropout", "dropout", DECODER, attrs={"rate": dropout}),
        Layer("embed", "embedding", DECODER, {"E": uni(vocab_size, embed)},
              {"vocab": vocab_size, "dim": embed}),
        Layer("lstm", "lstm", DECODER, {"W": uni(4 * hidden, embed + hidden), "b": lstm_b},
              {"in": embed, "hidden": hidden}),
        Layer("merge", "merge_add", DECODER, attrs={"dim": hidden}),
        Layer("hidden_dense", "dense", DECODER,
              {"W": uni(hidden, hidden), "b": zeros(hidden)},
              {"in": hidden, "out": hidden, "activation": "relu"}),
        Layer("out_dense", "dense", DECODER,
              {"W": uni(vocab_size, hidden), "b": zeros(vocab_size)},
              {"in": hidden, "out": vocab_size, "activation": "none"}),
        Layer("softmax", "softmax", DECODER, attrs={"dim": vocab_size}),
    ]
    config = {"vocab_size": vocab_size, "raw_dim": raw_dim, "feature_dim": feature_dim,
              "hidden": hidden, "embed": embed, "dropout": dropout, "seed": seed}
    return ModelGraph(layers, config)


# --------------------------------------------------------------------------
# execution context: float / QAT / int8 per affine site


class QATState:
    """Running activation ranges used by fake quantization during QAT."""

    def __init__(self, ranges=None):
        self.observer = MinMaxObserver()
        if ranges:
            self.observer.ranges.update(ranges)

    def fake_quant(self, site, value):
        self.observer(site, value)
        params = compute_params_asymmetric(*self.observer.ranges[site])
        return fake_quant_forward(value, params), params


@dataclass
class _Ctx:
    train: bool = False
    rng: np.random.Generator | None = None
    dropout: float = 0.0
    qat: QATState | None = None
    observer: object = None
    use_int8: bool = True
    record: bool = False


def _weight_for(layer, key, ctx):
    """Effective float weight and its STE mask (None = identity)."""
    W = layer.params[key] if key in layer.params else layer.weight(key)
    if ctx.qat is not None and key == layer.prunable_key:
        params = compute_params_symmetric(W, axis=0)
        Wq = fake_quant_forward(W, params)
        mask = fake_quant_backward(np.ones_like(W), W, params)
        return Wq, (None if mask.all() else mask)
    return W, None


def _affine(model, layer, x, ctx):
    """Pre-activation ``x @ W.T + b`` for a dense or LSTM site; returns (z, tape)."""
    x = np.atleast_2d(x)
    site_in, site_out = f"{layer.name}.in", f"{layer.name}.out"
    if ctx.use_int8 and "W" in layer.qweights:
        qx = quantize(x, model.act_params[site_in])
        qz = qmatmul(qx, layer.qweights["W"].T, model.act_params[site_out], bias=layer.params["b"])
        return dequantize(qz).astype(np.float32), None
    if ctx.observer is not None:
        ctx.observer(site_in, x)
    ste_in = ste_out = None
    if ctx.qat is not None:
        x_raw = x
        x, p_in = ctx.qat.fake_quant(site_in, x_raw)
        ste_in = fake_quant_backward(np.ones_like(x_raw), x_raw, p_in)
    W, ste_w = _weight_for(layer, "W", ctx)
    z = kernels.matmul_nt(np.ascontiguousarray(x, dtype=W.dtype), W) + layer.params["b"]
    if ctx.observer is not None:
        ctx.observer(site_out, z)
    if ctx.qat is not None:
        z_raw = z
        z, p_out = ctx.qat.fake_quant(site_out, z_raw)
        ste_out = fake_quant_backward(np.ones_like(z_raw), z_raw, p_out)
    tape = (x, W, ste_in, ste_w, ste_out) if ctx.record else None
    return z, tape


def _affine_backward(dz, tape):
    x, W, ste_in, ste_w, ste_out = tape
    dz = np.atleast_2d(dz)
    if ste_out is not None:
        dz = dz * ste_out
    dW = kernels.matmul(np.ascontiguousarray(dz.T), np.ascontiguousarray(x, dtype=W.dtype))
    db = dz.sum(axis=0)
    dx = kernels.matmul(np.ascontiguousarray(dz), W)
    if ste_w is not None:
        dW = dW * ste_w
    if ste_in is not None:
        dx = dx * ste_in
    return dx, dW, db


def _embedding_matrix(model, ctx):
    layer = model["embed"]
    if ctx.use_int8 and "E" in layer.qweights:
        return layer.weight("E"), None
    return _weight_for(layer, "E", ctx)


# --------------------------------------------------------------------------
# forward passes


def encode(model, raw, observer=None, use_int8=True):
    """Encoder head: raw image feature -> encoded feature vector."""
    if not model.has_encoder:
        return np.asarray(raw, dtype=np.float32)
    ctx = _Ctx(observer=observer, use_int8=use_int8)
    z, _ = _affine(model, model["enc_dense"], np.asarray(raw, dtype=np.float32), ctx)
    return _relu(z)[0]


def _feature_branch(model, feature, ctx, tape):
    layer = model["feat_dense"]
    feature = np.asarray(feature)
    if feature.shape != (layer.params["W"].shape[1],):
        raise ShapeError(f"feature length {feature.shape} != {layer.params['W'].shape[1]}")
    z, t = _affine(model, layer, feature.astype(layer.params["W"].dtype), ctx)
    y = _relu(z)[0]
    y, keep = dropout_forward(y, ctx.dropout, ctx.rng, ctx.train)
    if tape is not None:
        tape["feat"] = (t, z[0], keep)
    return y


def _lstm_advance(model, E, token, h, c, ctx, tape):
    layer = model["lstm"]
    if not (0 <= token < E.shape[0]):
        raise VocabError(f"token id {token} outside vocabulary of size {E.shape[0]}")
    xh = np.concatenate([E[token], h])
    z, t = _affine(model, layer, xh, ctx)
    h_new, c_new, cache = _lstm_gates(z[0], c)
    if tape is not None:
        tape["steps"].append((token, t, cache))
    return h_new, c_new


def _head(model, fb, h, ctx, tape):
    m = merge_add_forward(fb, h)
    hd = model["hidden_dense"]
    z1, t1 = _affine(model, hd, m, ctx)
    a1 = _relu(z1)
    z2, t2 = _affine(model, model["out_dense"], a1, ctx)
    if tape is not None:
        tape["head"] = (t1, z1, t2)
    return z2[0]


def _run(model, feature, token_ids, ctx, tape=None):
    ids = [int(t) for t in token_ids]
    if not ids:
        raise ValueError("decoder needs at least one input token")
    fb = _feature_branch(model, feature, ctx, tape)
    E, ste_e = _embedding_matrix(model, ctx)
    if tape is not None:
        tape["steps"] = []
        tape["ids"] = ids
        tape["ste_e"] = ste_e
    H = model.config["hidden"]
    h = np.zeros(H, dtype=fb.dtype)
    c = np.zeros(H, dtype=fb.dtype)
    for token in ids:
        h, c = _lstm_advance(model, E, token, h, c, ctx, tape)
    return _head(model, fb, h, ctx, tape)


def decoder_forward(model, feature, token_ids, *, observer=None, use_int8=True):
    """Logits over the vocabulary for the next token after ``token_ids``."""
    ctx = _Ctx(observer=observer, use_int8=use_int8)
    return _run(model, feature, token_ids, ctx)


class DecoderState:
    """Incremental decoder for greedy generation; same arithmetic as :func:`decoder_forward`."""

    def __init__(self, model, feature, use_int8=True):
        self.model = model
        self.ctx = _Ctx(use_int8=use_int8)
        self.fb = _feature_branch(model, feature, self.ctx, None)
        self.E, _ = _embedding_matrix(model, self.ctx)
        H = model.config["hidden"]
        self.h = np.zeros(H, dtype=self.fb.dtype)
        self.c = np.zeros(H, dtype=self.fb.dtype)

    def step(self, token):
        self.h, self.c = _lstm_advance(self.model, self.E, int(token), self.h, self.c, self.ctx, None)
        return _head(self.model, self.fb, self.h, self.ctx, None)


def _backward(model, tape, dlogits):
    grads = {}
    t1, z1, t2 = tape["head"]
    da1, grads["out_dense.W"], grads["out_dense.b"] = _affine_backward(dlogits, t2)
    dz1 = da1 * (z1 > 0)
    dm, grads["hidden_dense.W"], grads["hidden_dense.b"] = _affine_backward(dz1, t1)
    dm = dm[0]
    dfb, dh = merge_add_backward(dm)

    lstm = model["lstm"]
    E_shape = model["embed"].params["E"].shape
    D = E_shape[1]
    dW_l = np.zeros_like(lstm.params["W"])
    db_l = np.zeros_like(lstm.params["b"])
    dE = np.zeros(E_shape, dtype=dm.dtype)
    dc = np.zeros_like(dh)
    for token, t, cache in reversed(tape["steps"]):
        dz, dc = _lstm_gates_backward(dh, dc, cache)
        dxh, dW, db = _affine_backward(dz, t)
        dW_l += dW
        db_l += db
        dE[token] += dxh[0, :D]
        dh = dxh[0, D:]
    grads["lstm.W"], grads["lstm.b"] = dW_l, db_l
    if tape["ste_e"] is not None:
        dE = dE * tape["ste_e"]
    grads["embed.E"] = dE

    tf, zf, keep = tape["feat"]
    if keep is not None:
        dfb = dfb * keep
    dzf = dfb * (zf > 0)
    _, grads["feat_dense.W"], grads["feat_dense.b"] = _affine_backward(dzf, tf)
    return grads


def loss_and_grads(model, feature, token_ids, target, *, ctx=None):
    """Cross-entropy of predicting ``target`` after ``token_ids`` and all decoder gradients."""
    ctx = ctx or _Ctx(use_int8=False)
    ctx.record = True
    tape = {}
    logits = _run(model, feature, token_ids, ctx, tape)
    loss, dlogits = softmax_cross_entropy(logits, int(target))
    return loss, _backward(model, tape, dlogits)


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    lr: float = 0.01
    epochs: int = 10
    dropout: float = 0.0
    seed: int = 0
    schedule: SparsitySchedule | None = None
    qat: bool = False

    def __post_init__(self):
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise ValueError("learning rate must be a finite non-negative number")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")
        if self.schedule is not None and self.schedule.end > self.epochs - 1:
            raise ValueError(
                f"pruning schedule ends at epoch {self.schedule.end}, "
                f"beyond the last epoch {self.epochs - 1}")


@dataclass
class TrainResult:
    model: ModelGraph
    losses: list
    qat_ranges: dict | None = None


def _epoch_samples(samples, epoch):
    return samples(epoch) if callable(samples) else samples


def _apply_pruning(model, group, sched, t):
    for layer, key in model.prunable(group):
        mask = layer.masks.get(key)
        if mask is None:
            mask = PruneMask.ones(layer.params[key].shape)
        layer.params[key], layer.masks[key] = prune_step(layer.params[key], mask, sched, t)


def _sgd(model, grads, lr, group):
    for layer, key in model.parameters(group):
        g = grads.get(layer.full_name(key))
        if g is None:
            continue
        mask = layer.masks.get(key)
        if mask is not None:
            g = masked_gradient(g, mask)
        p = layer.params[key]
        p -= p.dtype.type(lr) * g.astype(p.dtype, copy=False)


def train(model, samples, config, *, qat_ranges=None, log=None):
    """Train the decoder one sample at a time with plain SGD.

    ``samples`` yields ``(feature, prefix_ids, target_id)`` triples; it may be
    a callable taking the epoch index so each epoch streams afresh. With a
    pruning schedule, decoder weight masks are updated at the start of each
    epoch (one schedule step per epoch). With ``config.qat`` the forward pass
    fake-quantizes weights and activations.

    The model is modified in place and also returned in the result.
    """
    rng = np.random.default_rng(config.seed)
    qat = QATState(qat_ranges) if config.qat else None
    losses = []
    for epoch in range(config.epochs):
        if config.schedule is not None:
            _apply_pruning(model, DECODER, config.schedule, epoch)
        total = 0.0
        count = 0
        for feature, prefix, target in _epoch_samples(samples, epoch):
            ctx = _Ctx(train=True, rng=rng, dropout=config.dropout, qat=qat, use_int8=False)
            loss, grads = loss_and_grads(model, feature, prefix, target, ctx=ctx)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, loss)
            if config.lr:
                _sgd(model, grads, config.lr, DECODER)
            total += loss
            count += 1
        if count == 0:
            raise ValueError("training set is empty")
        mean = total / count
        if not math.isfinite(mean):
            raise DivergenceError(epoch, mean)
        losses.append(mean)
        if log is not None:
            log(epoch, mean)
    return TrainResult(model, losses, dict(qat.observer.ranges) if qat else None)


def evaluate_loss(model, samples, *, qat_ranges=None, use_int8=False):
    """Mean cross-entropy over ``samples`` without updating anything."""
    qat = QATState(qat_ranges) if qat_ranges is not None else None
    total = 0.0
    count = 0
    for feature, prefix, target in samples:
        ctx = _Ctx(qat=qat, use_int8=use_int8)
        logits = _run(model, feature, prefix, ctx)
        total += softmax_cross_entropy(logits, int(target))[0]
        count += 1
    return total / count


def train_encoder(model, raw_features, targets, config, log=None):
    """Retrain the encoder head to reproduce ``targets`` (mean squared error).

    Used for prune-and-retrain of the encoder: the targets are the outputs of
    the uncompressed encoder, so the head is refit without touching the
    decoder.
    """
    rng = np.random.default_rng(config.seed)
    layer = model["enc_dense"]
    order = np.arange(len(raw_features))
    losses = []
    for epoch in range(config.epochs):
        if config.schedule is not None:
            _apply_pruning(model, ENCODER, config.schedule, epoch)
        rng.shuffle(order)
        total = 0.0
        for idx in order:
            x = np.asarray(raw_features[idx], dtype=np.float32).reshape(1, -1)
            W, b = layer.params["W"], layer.params["b"]
            y = dense_forward(x, W, b, "relu")
            diff = y[0] - targets[idx]
            loss = float(np.mean(diff.astype(np.float64) ** 2))
            if not math.isfinite(loss):
                raise DivergenceError(epoch, loss)
            dy = (2.0 / diff.size) * diff
            _, dW, db = dense_backward(dy.astype(np.float32), x, W, y, "relu")
            _sgd(model, {"enc_dense.W": dW, "enc_dense.b": db}, config.lr, ENCODER)
            total += loss
        losses.append(total / len(order))
        if log is not None:
            log(epoch, losses[-1])
    return TrainResult(model, losses)


# --------------------------------------------------------------------------
# conversion to int8


def quantize_weights(model, group, act_params):
    """Attach per-axis int8 weights and activation params to every layer in ``group``.

    The float copy of each weight is replaced by its dequantized value, so
    the float path of a converted model sees exactly what is stored.
    """
    for layer, key in list(model.prunable(group)):
        W = layer.params[key]
        layer.qweights[key] = quantize(W, compute_params_symmetric(W, axis=0))
        layer.params[key] = layer.weight(key)
    for site, params in act_params.items():
        if site.split(".")[0] in model and model[site.split(".")[0]].group == group:
            model.act_params[site] = params
    return model

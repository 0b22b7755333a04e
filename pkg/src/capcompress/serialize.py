"""Model files: a JSON topology document plus a CKT1 weight container.

Weights are written as int8 when the layer carries quantized weights, as a
sparse bitmap when the tensor has a pruning mask, and as dense float32
otherwise. A ``schemes`` mapping of ``{"layer.key": scheme}`` overrides the
choice per tensor. Calibrated activation params are stored as float32
``[scale, zero_point]`` pairs under ``act:<site>`` keys, so the container
alone is enough for int8 inference.
"""

import json

import numpy as np

from . import container
from .container import SparseTensor
from .errors import FormatError
from .nn import Layer, ModelGraph
from .pruning import PruneMask
from .quant import QuantParams, QuantizedTensor, compute_params_symmetric, quantize

TOPOLOGY_FORMAT = "capcompress-topology/1"
ACT_PREFIX = "act:"


def _auto_scheme(layer, key):
    if key in layer.qweights:
        return "int8"
    if key in layer.masks:
        return "sparse_bitmap"
    return "dense_f32"


def tensor_schemes(model, schemes=None):
    """Resolved storage scheme for every parameter tensor."""
    schemes = schemes or {}
    out = {}
    for layer, key in model.parameters():
        name = layer.full_name(key)
        scheme = schemes.get(name, _auto_scheme(layer, key))
        if scheme not in container.SCHEMES:
            raise ValueError(f"unknown storage scheme {scheme!r} for {name}")
        out[name] = scheme
    return out


def container_entries(model, schemes=None):
    resolved = tensor_schemes(model, schemes)
    entries = {}
    for layer, key in model.parameters():
        name = layer.full_name(key)
        scheme = resolved[name]
        if scheme == "int8":
            q = layer.qweights.get(key)
            if q is None:
                w = layer.params[key]
                q = quantize(w, compute_params_symmetric(w, axis=0 if w.ndim > 1 else None))
            entries[name] = q
        elif scheme == "sparse_bitmap":
            w = layer.weight(key)
            mask = layer.masks.get(key)
            entries[name] = SparseTensor.from_dense(w, None if mask is None else mask.bits)
        else:
            entries[name] = np.asarray(layer.weight(key), dtype=np.float32)
    for site in sorted(model.act_params):
        p = model.act_params[site]
        entries[ACT_PREFIX + site] = np.array(
            [p.scale[0], p.zero_point[0]], dtype=np.float32)
    return entries


def topology(model, schemes=None):
    resolved = tensor_schemes(model, schemes)
    return {
        "format": TOPOLOGY_FORMAT,
        "config": model.config,
        "layers": [
            {
                "name": layer.name,
                "kind": layer.kind,
                "group": layer.group,
                "attrs": layer.attrs,
                "params": {k: layer.full_name(k) for k in layer.params},
                "storage": {k: resolved[layer.full_name(k)] for k in layer.params},
            }
            for layer in model.layers
        ],
        "activations": sorted(model.act_params),
    }


def save_model(model, topology_path, weights_path, schemes=None):
    """Write both files; returns the container size in bytes."""
    with open(topology_path, "w", encoding="utf-8") as fh:
        json.dump(topology(model, schemes), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return container.save(weights_path, container_entries(model, schemes))


def load_model(topology_path, weights_path):
    with open(topology_path, encoding="utf-8") as fh:
        try:
            topo = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"topology is not valid JSON: {exc.msg}", exc.pos) from None
    if topo.get("format") != TOPOLOGY_FORMAT:
        raise FormatError(f"unsupported topology format {topo.get('format')!r}", 0)
    entries = container.load(weights_path)
    layers = []
    for spec in topo["layers"]:
        layer = Layer(spec["name"], spec["kind"], spec["group"], attrs=spec.get("attrs", {}))
        for key, full in spec.get("params", {}).items():
            if full not in entries:
                raise FormatError(f"weight container lacks tensor {full!r}", 0)
            value = entries[full]
            if isinstance(value, QuantizedTensor):
                layer.qweights[key] = value
                layer.params[key] = layer.weight(key)
            elif isinstance(value, SparseTensor):
                layer.params[key] = value.to_dense()
                layer.masks[key] = PruneMask(value.mask().astype(np.uint8), frozen=True)
            else:
                layer.params[key] = np.array(value, dtype=np.float32)
        layers.append(layer)
    model = ModelGraph(layers, topo["config"])
    for site in topo.get("activations", []):
        raw = entries.get(ACT_PREFIX + site)
        if raw is None or raw.shape != (2,):
            raise FormatError(f"missing activation params for {site!r}", 0)
        model.act_params[site] = QuantParams([raw[0]], [int(raw[1])], None, symmetric=False)
    return model

"""Synthetic captioning data for desk-scale runs.

Each image is a combination of three attributes (animal, action, place).
Its raw feature is a sum of fixed per-attribute prototype vectors plus
noise, and its caption names the attributes, so a decoder can learn the
mapping. Captions use an 8-word vocabulary.
"""

import os
from importlib import resources

import numpy as np

from .caption import FeatureStore, write_captions

ANIMALS = ("dog", "cat")
ACTIONS = ("runs", "sits")
PLACES = ("grass", "sand")
WORDS = ("a", "on") + ANIMALS + ACTIONS + PLACES


def make_toy_dataset(n_images=20, dim=64, seed=0, noise=0.3):
    """Return ``(FeatureStore, records)`` for ``n_images`` synthetic images."""
    rng = np.random.default_rng(seed)
    protos = {w: rng.standard_normal(dim) for w in ANIMALS + ACTIONS + PLACES}
    store = FeatureStore(dim)
    records = []
    for k in range(n_images):
        animal = ANIMALS[k % 2]
        action = ACTIONS[(k // 2) % 2]
        place = PLACES[(k // 4) % 2]
        vec = protos[animal] + protos[action] + protos[place] + noise * rng.standard_normal(dim)
        image_id = f"img{k:03d}"
        store.add(image_id, vec.astype(np.float32))
        records.append((image_id, f"A {animal} {action} on {place}."))
    return store, records


TOY_CONFIG = """\
# Bundled synthetic dataset: 20 images, 64-dim features, 8-word vocabulary.
[data]
captions = captions.tsv
features = features.ckf

[model]
feature_dim = 128
hidden = 128
embed = 128
dropout = 0.0
init_scale = 0.08

[train]
epochs = 60
lr = 0.05
seed = 0

[compress]
sparsity = 0.5
prune_epochs = 30
prune_t0 = 0
prune_n = 10
prune_delta_t = 1
encoder_prune_epochs = 30
encoder_lr = 0.05
qat_epochs = 15
qat_lr = 0.02
calibration_samples = 100

[sweep]
repetitions = 3
max_len = 34
"""


def write_toy_dataset(out_dir, **kwargs):
    """Write ``captions.tsv``, ``features.ckf`` and ``toy.cfg`` into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    store, records = make_toy_dataset(**kwargs)
    store.save(os.path.join(out_dir, "features.ckf"))
    write_captions(os.path.join(out_dir, "captions.tsv"), records)
    with open(os.path.join(out_dir, "toy.cfg"), "w", encoding="utf-8") as fh:
        fh.write(TOY_CONFIG)
    return out_dir


def bundled_config_path():
    """Path of the toy config shipped inside the package."""
    return str(resources.files("capcompress").joinpath("data/toy/toy.cfg"))

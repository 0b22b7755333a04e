"""Regenerates golden_logits.npz. Run only when the forward pass is meant to change."""

import os

import numpy as np

from capcompress import nn

HERE = os.path.dirname(os.path.abspath(__file__))
SEQUENCES = [[1], [1, 4], [1, 4, 6, 9], [1, 11, 10, 5, 7, 8]]


def golden_model():
    # 8 words plus the 4 reserved tokens
    return nn.build_model(12, raw_dim=16, feature_dim=24, hidden=20, embed=10, dropout=0.0, seed=7)


def golden_inputs():
    rng = np.random.default_rng(2024)
    return rng.standard_normal((3, 16)).astype(np.float32)


def compute():
    model = golden_model()
    out = []
    for raw in golden_inputs():
        feature = nn.encode(model, raw)
        for seq in SEQUENCES:
            out.append(nn.decoder_forward(model, feature, seq))
    return np.stack(out)


if __name__ == "__main__":
    np.savez(os.path.join(HERE, "golden_logits.npz"), logits=compute())

"""Gradual magnitude pruning.

The sparsity target ramps from ``s_i`` to ``s_f`` along a cubic schedule over
``n`` mask updates spaced ``delta_t`` steps apart, starting at ``t0``. At
each update the smallest-magnitude weights are masked to zero; masked
weights receive no gradient, and once the final sparsity is reached the
mask freezes.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FrozenMaskError, ShapeError


@dataclass(frozen=True)
class SparsitySchedule:
    s_i: float = 0.0
    s_f: float = 0.5
    t0: int = 0
    delta_t: int = 1
    n: int = 10

    def __post_init__(self):
        if not (0.0 <= self.s_i <= self.s_f < 1.0):
            raise DomainError(f"need 0 <= s_i <= s_f < 1, got s_i={self.s_i}, s_f={self.s_f}")
        if self.t0 < 0:
            raise DomainError("t0 must be non-negative")
        if self.delta_t < 1 or self.n < 1:
            raise DomainError("delta_t and n must be >= 1")

    @property
    def end(self):
        """Step at which the schedule reaches ``s_f``."""
        return self.t0 + self.n * self.delta_t


class PruneMask:
    """Binary keep-mask for one weight tensor (1 = keep, 0 = pruned)."""

    __slots__ = ("_bits", "frozen")

    def __init__(self, bits, frozen=False):
        bits = np.array(bits, dtype=np.uint8)
        if np.any(bits > 1):
            raise DomainError("mask bits must be 0 or 1")
        bits.setflags(write=False)
        self._bits = bits
        self.frozen = bool(frozen)

    @classmethod
    def ones(cls, shape):
        return cls(np.ones(shape, dtype=np.uint8))

    @property
    def bits(self):
        return self._bits

    @bits.setter
    def bits(self, value):
        if self.frozen:
            raise FrozenMaskError("mask is frozen")
        self._bits = PruneMask(value)._bits

    @property
    def shape(self):
        return self._bits.shape

    @property
    def sparsity(self):
        return 1.0 - float(self._bits.sum()) / self._bits.size

    def zeros(self):
        return int(self._bits.size - self._bits.sum())

    def __eq__(self, other):
        return (isinstance(other, PruneMask) and self.frozen == other.frozen
                and self._bits.shape == other._bits.shape
                and self._bits.tobytes() == other._bits.tobytes())

    def __repr__(self):
        return f"PruneMask(shape={self.shape}, sparsity={self.sparsity:.4f}, frozen={self.frozen})"


def target_sparsity(sched, t):
    """Scheduled sparsity at step ``t``, clamped to ``s_i`` before ``t0`` and ``s_f`` after the end."""
    if t <= sched.t0:
        return sched.s_i
    if t >= sched.end:
        return sched.s_f
    frac = 1.0 - (t - sched.t0) / (sched.n * sched.delta_t)
    return sched.s_f + (sched.s_i - sched.s_f) * frac ** 3


def _prune_count(sparsity, count):
    if not (0.0 <= sparsity < 1.0):
        raise DomainError(f"sparsity must be in [0, 1), got {sparsity}")
    # guard against 0.29 * 100 == 28.999999999999996
    return int(math.floor(sparsity * count + 1e-9))


def prune_order(weights):
    """Flat indices sorted by |w| ascending, ties broken by lowest index."""
    return np.argsort(np.abs(np.asarray(weights)).reshape(-1), kind="stable")


def magnitude_threshold(weights, sparsity):
    """k-th smallest magnitude, k = floor(sparsity * count).

    Elements ranked below k (by magnitude, then flat index) are the ones to
    prune; the returned value is the magnitude of the first survivor, or
    +inf when everything below it is pruned.
    """
    w = np.asarray(weights)
    if w.size == 0:
        raise DomainError("cannot threshold an empty tensor")
    k = _prune_count(sparsity, w.size)
    mags = np.sort(np.abs(w).reshape(-1), kind="stable")
    return float(mags[k]) if k < w.size else math.inf


def update_mask(weights, mask, sparsity):
    """New mask zeroing exactly floor(sparsity * count) smallest-magnitude weights."""
    if mask.frozen:
        raise FrozenMaskError("cannot update a frozen mask")
    w = np.asarray(weights)
    if w.shape != mask.shape:
        raise ShapeError(f"weights {w.shape} vs mask {mask.shape}")
    k = _prune_count(sparsity, w.size)
    bits = np.ones(w.size, dtype=np.uint8)
    bits[prune_order(w)[:k]] = 0
    return PruneMask(bits.reshape(w.shape))


def apply_mask(weights, mask):
    w = np.asarray(weights)
    if w.shape != mask.shape:
        raise ShapeError(f"weights {w.shape} vs mask {mask.shape}")
    return w * mask.bits.astype(w.dtype)


def masked_gradient(grad, mask):
    g = np.asarray(grad)
    if g.shape != mask.shape:
        raise ShapeError(f"gradient {g.shape} vs mask {mask.shape}")
    return g * mask.bits.astype(g.dtype)


def is_update_step(sched, t):
    return t >= sched.t0 and (t - sched.t0) % sched.delta_t == 0


def prune_step(weights, mask, sched, t):
    """One scheduled pruning step; returns ``(weights, mask)``.

    On update steps the mask is recomputed for the scheduled sparsity and
    applied. It freezes once the achieved sparsity reaches ``s_f`` or the
    schedule window has ended, whichever comes first.
    """
    if mask.frozen or not is_update_step(sched, t):
        return weights, mask
    new_mask = update_mask(weights, mask, target_sparsity(sched, t))
    if new_mask.sparsity >= sched.s_f or t >= sched.end:
        new_mask.frozen = True
    return apply_mask(weights, new_mask), new_mask

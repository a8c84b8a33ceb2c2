"""Uniform action-space discretization and its ordinal (thermometer) codec.

Each action dimension is cut into `bins` equal cells between `low` and
`high`. A cell index k is encoded as k+1 ones followed by zeros, one block of
length `bins` per dimension, concatenated to a vector of length bins*dim.
Decoding thresholds at 0.5 and counts ones per block without assuming the
pattern is monotone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, InvalidActionError


@dataclass(frozen=True)
class RegionSpec:
    bins: int
    action_dim: int
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.asarray(self.low, dtype=np.float64)
        high = np.asarray(self.high, dtype=np.float64)
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)
        if self.bins < 2:
            raise ContractViolation(f"RegionSpec needs bins >= 2, got {self.bins}")
        if low.shape != (self.action_dim,) or high.shape != (self.action_dim,):
            raise ContractViolation("RegionSpec bounds must have shape (action_dim,)")
        if not np.all(low < high):
            raise ContractViolation("RegionSpec requires low < high per dimension")

    @property
    def code_length(self):
        return self.bins * self.action_dim


def discretize(action, spec: RegionSpec) -> np.ndarray:
    """Map an action to its per-dimension bin indices.

    Out-of-range values clamp to the boundary bins; the upper bound maps into
    the last bin. NaN raises.
    """
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (spec.action_dim,):
        raise ContractViolation(
            f"action shape {a.shape} does not match action_dim {spec.action_dim}"
        )
    if np.isnan(a).any():
        raise InvalidActionError(f"cannot discretize NaN action: {action}")
    a = np.clip(a, spec.low, spec.high)
    frac = (a - spec.low) / (spec.high - spec.low)
    idx = np.floor(frac * spec.bins).astype(np.int64)
    return np.minimum(idx, spec.bins - 1)


def ordinal_encode(idx, spec: RegionSpec) -> np.ndarray:
    """Thermometer-encode bin indices: bin k -> k+1 leading ones per dimension."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != (spec.action_dim,):
        raise ContractViolation(
            f"index shape {idx.shape} does not match action_dim {spec.action_dim}"
        )
    if np.any(idx < 0) or np.any(idx >= spec.bins):
        raise ContractViolation(f"bin index {idx.tolist()} outside [0, {spec.bins})")
    steps = np.arange(spec.bins)
    code = (steps[None, :] <= idx[:, None]).astype(np.float64)
    return code.reshape(-1)


def ordinal_decode(probs, spec: RegionSpec) -> np.ndarray:
    """Threshold at 0.5 and count ones per dimension: bin = max(0, popcount-1).

    Total over arbitrary bit patterns; no ordering is enforced on the bits.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (spec.code_length,):
        raise ContractViolation(
            f"probs length {p.shape} does not match code length {spec.code_length}"
        )
    bits = (p > 0.5).reshape(spec.action_dim, spec.bins)
    counts = bits.sum(axis=1)
    return np.maximum(counts - 1, 0).astype(np.int64)


def encode_actions(actions, spec: RegionSpec) -> np.ndarray:
    """Vectorized discretize+encode for a (n, action_dim) batch of actions."""
    a = np.asarray(actions, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != spec.action_dim:
        raise ContractViolation(f"expected (n, {spec.action_dim}) actions, got {a.shape}")
    if np.isnan(a).any():
        raise InvalidActionError("cannot discretize NaN actions")
    a = np.clip(a, spec.low, spec.high)
    frac = (a - spec.low) / (spec.high - spec.low)
    idx = np.minimum(np.floor(frac * spec.bins).astype(np.int64), spec.bins - 1)
    steps = np.arange(spec.bins)
    codes = (steps[None, None, :] <= idx[:, :, None]).astype(np.float64)
    return codes.reshape(a.shape[0], spec.code_length)

"""Prediction-head likelihoods and the scalarized multi-objective loss.

Four components: the action NLL under a diagonal Gaussian policy, state and
return NLLs under Gaussian heads (targets exist from the second step of a
window onward), and for the trust-region variant a Bernoulli NLL over the
ordinal region bits. Each component is averaged over its own target count,
then combined as a weighted sum whose coefficients sum to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError
from .model import head_read_positions
from .tokens import VARIANT_MODT, VARIANT_MOTRDT

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GaussianParams:
    """Diagonal Gaussian: per-position means plus a shared log-std vector."""

    mean: ad.Tensor
    log_std: ad.Tensor


@dataclass
class BernoulliParams:
    """Per-bit probabilities in (0,1) for the ordinal region code."""

    probs: ad.Tensor


@dataclass(frozen=True)
class LossWeights:
    lam0: float
    lam1: float
    lam2: float
    lam3: float = 0.0

    def __post_init__(self):
        lams = (self.lam0, self.lam1, self.lam2, self.lam3)
        if any(l < 0.0 or l > 1.0 for l in lams):
            raise ConfigError(f"loss weights must lie in [0,1], got {lams}")
        if abs(sum(lams) - 1.0) > 1e-9:
            raise ConfigError(f"loss weights must sum to 1, got {sum(lams)!r}")

    @classmethod
    def uniform(cls, variant):
        if variant == VARIANT_MOTRDT:
            return cls(0.25, 0.25, 0.25, 0.25)
        return cls(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0)

    @classmethod
    def action_only(cls):
        return cls(1.0, 0.0, 0.0, 0.0)

    def as_tuple(self):
        return (self.lam0, self.lam1, self.lam2, self.lam3)


def gaussian_nll(x, params: GaussianParams):
    """Summed Gaussian NLL: sum over every element of
    0.5*((x-mu)/sigma)^2 + log sigma + 0.5*log 2pi.

    `x` is a constant target array shaped like params.mean. log_std may have
    the same shape (per-position) or be a trailing-shape vector shared across
    positions."""
    mean, log_std = params.mean, params.log_std
    xv = np.asarray(x, dtype=mean.values.dtype)
    inv_sigma = ad.exp(ad.scale(log_std, -1.0))
    z = ad.mul(ad.sub(ad.as_tensor(xv), mean), inv_sigma)
    half_sq = ad.scale(ad.sum_all(ad.mul(z, z)), 0.5)
    n_shared = xv.size // log_std.values.size
    sig_term = ad.sum_all(log_std)
    if n_shared > 1:
        sig_term = ad.scale(sig_term, float(n_shared))
    return half_sq + sig_term + (0.5 * LOG_2PI * xv.size)


def bernoulli_nll(bits, params: BernoulliParams):
    """Summed Bernoulli NLL -sum(b*log p + (1-b)*log(1-p)); probs must be
    strictly inside (0,1)."""
    p = params.probs
    b = np.asarray(bits, dtype=p.values.dtype)
    one = ad.as_tensor(np.ones_like(p.values))
    term1 = ad.mul(ad.log(p), ad.as_tensor(b))
    term0 = ad.mul(ad.log(ad.sub(one, p)), ad.as_tensor(1.0 - b))
    return ad.scale(ad.sum_all(ad.add(term1, term0)), -1.0)


@dataclass
class LossBundle:
    """Per-window-averaged loss components; absent ones are None."""

    j_dt: ad.Tensor
    j1: ad.Tensor | None
    j2: ad.Tensor | None
    j3: ad.Tensor | None

    def values(self):
        def v(t):
            return float(t.values) if t is not None else None
        return {"j_dt": v(self.j_dt), "j1": v(self.j1), "j2": v(self.j2),
                "j3": v(self.j3)}


def compute_losses(hidden, batch, model) -> LossBundle:
    """Losses for one same-length window batch from its forward pass.

    Reads each head at its designated token position and averages each
    component over its own target count. One-step windows have no state or
    return targets, so J1/J2 come back absent.
    """
    k = batch.step_count
    b = batch.batch_size
    reads = head_read_positions(batch.variant, k)

    h_act = ad.gather_axis1(hidden, reads.action_pos)
    a_mean, a_log_std = model.action_head(h_act)
    j_dt = ad.scale(
        gaussian_nll(batch.actions, GaussianParams(a_mean, a_log_std)),
        1.0 / (b * k))

    j1 = j2 = j3 = None
    if k >= 2:
        h_state = ad.gather_axis1(hidden, reads.state_pos)
        s_mean, s_log_std = model.state_head(h_state)
        j1 = ad.scale(
            gaussian_nll(batch.states[:, 1:, :], GaussianParams(s_mean, s_log_std)),
            1.0 / (b * (k - 1)))
        h_ret = ad.gather_axis1(hidden, reads.return_pos)
        g_mean, g_log_std = model.return_head(h_ret)
        j2 = ad.scale(
            gaussian_nll(batch.returns[:, 1:, None], GaussianParams(g_mean, g_log_std)),
            1.0 / (b * (k - 1)))
    if batch.variant == VARIANT_MOTRDT:
        h_reg = ad.gather_axis1(hidden, reads.region_pos)
        logits = model.region_head(h_reg)
        j3 = ad.scale(ad.sum_all(ad.bce_with_logits(logits, batch.regions)),
                      1.0 / (b * k))
    return LossBundle(j_dt=j_dt, j1=j1, j2=j2, j3=j3)


def combine_bundles(bundles, sizes) -> LossBundle:
    """Window-count-weighted average of per-group bundles (for batches that
    were split by window length)."""

    def merge(key):
        parts = [(getattr(bu, key), n) for bu, n in zip(bundles, sizes)
                 if getattr(bu, key) is not None]
        if not parts:
            return None
        total = sum(n for _, n in parts)
        acc = None
        for t, n in parts:
            term = ad.scale(t, n / total)
            acc = term if acc is None else ad.add(acc, term)
        return acc

    return LossBundle(j_dt=merge("j_dt"), j1=merge("j1"), j2=merge("j2"),
                      j3=merge("j3"))


def scalarize(bundle: LossBundle, weights: LossWeights, variant):
    """Weighted sum of the loss components; absent components contribute 0."""
    if variant == VARIANT_MODT and weights.lam3 != 0.0:
        raise ConfigError("lam3 must be 0 for the base variant")
    total = ad.scale(bundle.j_dt, weights.lam0)
    for lam, t in ((weights.lam1, bundle.j1), (weights.lam2, bundle.j2),
                   (weights.lam3, bundle.j3)):
        if t is not None:
            total = ad.add(total, ad.scale(t, lam))
    return total

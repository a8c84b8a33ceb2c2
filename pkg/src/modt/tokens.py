"""Context windows and their interleaved token layout.

A window of k steps becomes the token sequence (g_1, s_1, a_1, ...) for the
base variant or (g_1, s_1, r_1, a_1, ...) with action-region tokens for the
trust-region variant. During rollouts the final step is partial: its return
and state tokens exist but the action has not been produced yet.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LayoutError

VARIANT_MODT = "modt"
VARIANT_MOTRDT = "motrdt"
VARIANTS = (VARIANT_MODT, VARIANT_MOTRDT)

ROLE_RETURN = "return"
ROLE_STATE = "state"
ROLE_REGION = "region"
ROLE_ACTION = "action"

STEP_ROLES = {
    VARIANT_MODT: (ROLE_RETURN, ROLE_STATE, ROLE_ACTION),
    VARIANT_MOTRDT: (ROLE_RETURN, ROLE_STATE, ROLE_REGION, ROLE_ACTION),
}


def tokens_per_step(variant):
    return len(STEP_ROLES[variant])


def role_map_for(variant, step_count, partial_last_step=False):
    """Per-token (role, step_index) labels; step_index is 0-based in-window."""
    roles = STEP_ROLES[variant]
    out = []
    for t in range(step_count):
        last = t == step_count - 1
        for role in roles:
            if partial_last_step and last and role in (ROLE_REGION, ROLE_ACTION):
                continue
            out.append((role, t))
    return out


@dataclass
class ContextWindow:
    """One training or rollout context: up to K steps of a single episode.

    States and returns are stored in model units (normalized / scaled);
    actions are raw. `timesteps` holds absolute episode step indices.
    When `partial_last_step` is set, `actions` (and `regions`) have one row
    fewer than `step_count`.
    """

    variant: str
    returns: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    regions: np.ndarray | None = None
    timesteps: np.ndarray | None = None
    partial_last_step: bool = False
    role_map: list = field(default_factory=list)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise LayoutError(f"unknown variant {self.variant!r}")
        k = len(self.returns)
        if k < 1:
            raise LayoutError("window must contain at least one step")
        expect_a = k - 1 if self.partial_last_step else k
        if len(self.states) != k or len(self.actions) != expect_a:
            raise LayoutError(
                f"component lengths disagree: returns {k}, states {len(self.states)}, "
                f"actions {len(self.actions)} (partial={self.partial_last_step})"
            )
        if self.variant == VARIANT_MOTRDT:
            if self.regions is None:
                raise LayoutError("trust-region variant requires region tokens")
            if len(self.regions) != expect_a:
                raise LayoutError(
                    f"regions length {len(self.regions)} != actions length {expect_a}"
                )
        elif self.regions is not None:
            raise LayoutError("region tokens are only valid for the trust-region variant")
        if self.timesteps is None:
            self.timesteps = np.arange(k, dtype=np.int64)
        if not self.role_map:
            self.role_map = role_map_for(self.variant, k, self.partial_last_step)

    @property
    def step_count(self):
        return len(self.returns)

    @property
    def token_count(self):
        return len(self.role_map)


def layout_tokens(returns, states, actions, variant, regions=None, timesteps=None,
                  partial_last_step=False) -> ContextWindow:
    """Build a ContextWindow from a contiguous trajectory segment."""
    return ContextWindow(
        variant=variant,
        returns=np.asarray(returns, dtype=np.float64),
        states=np.asarray(states, dtype=np.float64),
        actions=np.asarray(actions, dtype=np.float64),
        regions=None if regions is None else np.asarray(regions, dtype=np.float64),
        timesteps=None if timesteps is None else np.asarray(timesteps, dtype=np.int64),
        partial_last_step=partial_last_step,
    )


@dataclass
class WindowBatch:
    """Windows of identical step count stacked for a batched forward pass."""

    variant: str
    returns: np.ndarray    # (B, k)
    states: np.ndarray     # (B, k, state_dim)
    actions: np.ndarray    # (B, ka, action_dim)
    regions: np.ndarray | None
    timesteps: np.ndarray  # (B, k)
    partial_last_step: bool
    role_map: list

    @property
    def batch_size(self):
        return self.returns.shape[0]

    @property
    def step_count(self):
        return self.returns.shape[1]

    @property
    def token_count(self):
        return len(self.role_map)


def collate(windows) -> WindowBatch:
    """Stack same-length windows; raises LayoutError on a ragged batch."""
    if not windows:
        raise LayoutError("cannot collate an empty batch")
    first = windows[0]
    for w in windows[1:]:
        if (w.variant != first.variant or w.step_count != first.step_count
                or w.partial_last_step != first.partial_last_step):
            raise LayoutError("collate requires homogeneous windows")
    regions = None
    if first.variant == VARIANT_MOTRDT:
        regions = np.stack([w.regions for w in windows])
    return WindowBatch(
        variant=first.variant,
        returns=np.stack([w.returns for w in windows]),
        states=np.stack([w.states for w in windows]),
        actions=np.stack([w.actions for w in windows]),
        regions=regions,
        timesteps=np.stack([w.timesteps for w in windows]),
        partial_last_step=first.partial_last_step,
        role_map=list(first.role_map),
    )


def group_by_length(windows):
    """Group windows by (step_count, partial flag) for batched forwards."""
    groups = {}
    for w in windows:
        groups.setdefault((w.step_count, w.partial_last_step), []).append(w)
    return [collate(ws) for _, ws in sorted(groups.items())]

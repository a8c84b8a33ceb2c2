"""Causal transformer backbone with per-token-type embeddings and capture of
attention weights.

The architecture is a pre-norm GPT stack: per block, layernorm -> causal
self-attention -> residual, layernorm -> relu feedforward (4x width) ->
residual. There is no positional embedding by default; an optional learned
timestep embedding sits behind a config flag. Prediction heads read the final
hidden states at fixed token positions:

  action mean   at the state token of the same step
  region logits at the state token of the same step
  state mean    at the return token of the same step
  return mean   at the action token of the previous step

which realizes each head's conditioning set purely through the causal mask;
in particular the action prediction for step t can never see step t's region
token, which sits after the state token.
"""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from dataclasses import dataclass, asdict, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractViolation, LayoutError
from .tokens import (VARIANT_MODT, VARIANT_MOTRDT, VARIANTS, WindowBatch,
                     collate, tokens_per_step)

LN_EPS = 1e-5
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


@dataclass
class ModelConfig:
    state_dim: int
    action_dim: int
    variant: str = VARIANT_MODT
    num_layers: int = 4
    num_heads: int = 4
    embed_dim: int = 256
    context_len_K: int = 20
    dropout_rate: float = 0.1
    region_bins: int = 3
    use_timestep_embedding: bool = False
    max_timestep: int = 512

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.context_len_K < 1:
            raise ConfigError("context_len_K must be >= 1")
        if self.variant == VARIANT_MOTRDT and self.region_bins < 2:
            raise ConfigError("trust-region variant needs region_bins >= 2")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError(f"dropout_rate {self.dropout_rate} outside [0, 1)")

    @property
    def region_code_len(self):
        return self.region_bins * self.action_dim

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def config_digest(config_dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class AttentionRecord:
    """Attention probabilities for one (block, head); rows sum to one and the
    upper triangle is exactly zero."""

    block_index: int
    head_index: int
    weights: np.ndarray


@dataclass
class HeadReads:
    """Read positions (token indices) and in-window step indices per head."""

    action_pos: np.ndarray
    action_steps: np.ndarray
    state_pos: np.ndarray
    state_steps: np.ndarray
    return_pos: np.ndarray
    return_steps: np.ndarray
    region_pos: np.ndarray = field(default_factory=lambda: np.zeros(0, np.intp))
    region_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, np.intp))


def head_read_positions(variant, step_count) -> HeadReads:
    """Token indices each head reads in a full k-step window."""
    s = tokens_per_step(variant)
    ks = np.arange(step_count, dtype=np.intp)
    reads = HeadReads(
        # action target a_t read at the state token of step t
        action_pos=s * ks + 1, action_steps=ks,
        # state target s_t (t >= 1, 0-based) read at the return token of step t
        state_pos=s * ks[1:], state_steps=ks[1:],
        # return target g_t (t >= 1) read at the action token of step t-1
        return_pos=s * (ks[1:] - 1) + (s - 1), return_steps=ks[1:],
    )
    if variant == VARIANT_MOTRDT:
        # region target r_t read at the state token of step t
        reads.region_pos = (s * ks + 1).copy()
        reads.region_steps = ks.copy()
    return reads


class DecisionModel:
    """Backbone plus prediction heads over a named parameter map."""

    def __init__(self, config: ModelConfig, seed=0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = OrderedDict()
        rng = np.random.default_rng([seed, 0])
        c = config
        e = c.embed_dim

        def w(name, shape):
            self.params[name] = ad.parameter(
                rng.normal(0.0, 0.02, size=shape), dtype=self.dtype)

        def zeros(name, shape):
            self.params[name] = ad.parameter(np.zeros(shape), dtype=self.dtype)

        def ones(name, shape):
            self.params[name] = ad.parameter(np.ones(shape), dtype=self.dtype)

        w("embed.return.w", (1, e)); zeros("embed.return.b", (e,))
        w("embed.state.w", (c.state_dim, e)); zeros("embed.state.b", (e,))
        w("embed.action.w", (c.action_dim, e)); zeros("embed.action.b", (e,))
        if c.variant == VARIANT_MOTRDT:
            w("embed.region.w", (c.region_code_len, e)); zeros("embed.region.b", (e,))
        if c.use_timestep_embedding:
            w("embed.time.w", (c.max_timestep, e))
        for i in range(c.num_layers):
            p = f"blocks.{i}."
            ones(p + "ln1.g", (e,)); zeros(p + "ln1.b", (e,))
            for proj in ("q", "k", "v"):
                w(p + f"attn.{proj}.w", (e, e)); zeros(p + f"attn.{proj}.b", (e,))
            w(p + "attn.proj.w", (e, e)); zeros(p + "attn.proj.b", (e,))
            ones(p + "ln2.g", (e,)); zeros(p + "ln2.b", (e,))
            w(p + "mlp.fc1.w", (e, 4 * e)); zeros(p + "mlp.fc1.b", (4 * e,))
            w(p + "mlp.fc2.w", (4 * e, e)); zeros(p + "mlp.fc2.b", (e,))
        ones("ln_f.g", (e,)); zeros("ln_f.b", (e,))
        for head, dim in (("action", c.action_dim), ("state", c.state_dim),
                          ("return", 1)):
            w(f"head.{head}.mu.w", (e, dim)); zeros(f"head.{head}.mu.b", (dim,))
            w(f"head.{head}.log_std.w", (e, dim))
            zeros(f"head.{head}.log_std.b", (dim,))
        if c.variant == VARIANT_MOTRDT:
            w("head.region.w", (e, c.region_code_len)); zeros("head.region.b", (c.region_code_len,))

    def param(self, name):
        return self.params[name]

    def num_params(self):
        return sum(int(p.size) for p in self.params.values())

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None

    # ------------------------------------------------------------- forward

    def _linear(self, x, prefix):
        return ad.add(ad.matmul(x, self.params[prefix + ".w"]),
                      self.params[prefix + ".b"])

    def embed_tokens(self, batch: WindowBatch):
        """Project each modality and interleave into the token sequence."""
        c = self.config
        if batch.variant != c.variant:
            raise LayoutError(
                f"window variant {batch.variant!r} != model variant {c.variant!r}")
        if batch.states.shape[-1] != c.state_dim or batch.actions.shape[-1] != c.action_dim:
            raise LayoutError(
                f"feature dims (state {batch.states.shape[-1]}, action "
                f"{batch.actions.shape[-1]}) do not match config "
                f"({c.state_dim}, {c.action_dim})")
        b, k = batch.returns.shape
        dt = self.dtype
        g_in = ad.as_tensor(batch.returns.reshape(b, k, 1), dtype=dt)
        s_in = ad.as_tensor(batch.states, dtype=dt)
        a_in = ad.as_tensor(batch.actions, dtype=dt)
        g_emb = self._linear(g_in, "embed.return")
        s_emb = self._linear(s_in, "embed.state")
        a_emb = self._linear(a_in, "embed.action")
        r_emb = None
        if c.variant == VARIANT_MOTRDT:
            if batch.regions.shape[-1] != c.region_code_len:
                raise LayoutError(
                    f"region code length {batch.regions.shape[-1]} != expected "
                    f"{c.region_code_len}")
            r_emb = self._linear(ad.as_tensor(batch.regions, dtype=dt), "embed.region")
        if c.use_timestep_embedding:
            steps = np.minimum(batch.timesteps, c.max_timestep - 1)
            t_emb = ad.gather_rows(self.params["embed.time.w"], steps)
            g_emb = ad.add(g_emb, t_emb)
            s_emb = ad.add(s_emb, t_emb)
            full = t_emb if not batch.partial_last_step else ad.gather_rows(
                self.params["embed.time.w"], steps[:, :-1])
            a_emb = ad.add(a_emb, full)
            if r_emb is not None:
                r_emb = ad.add(r_emb, full)
        per_step = [g_emb, s_emb] + ([r_emb] if r_emb is not None else []) + [a_emb]
        e = c.embed_dim
        s = len(per_step)
        if not batch.partial_last_step:
            return ad.reshape(ad.stack_axis2(per_step), (b, s * k, e))
        # partial window: the final step contributes only its return and state
        tail = ad.reshape(ad.stack_axis2(
            [ad.gather_axis1(g_emb, np.array([k - 1])),
             ad.gather_axis1(s_emb, np.array([k - 1]))]), (b, 2, e))
        if k == 1:
            return tail
        prefix = [ad.gather_axis1(g_emb, np.arange(k - 1)),
                  ad.gather_axis1(s_emb, np.arange(k - 1))]
        if r_emb is not None:
            prefix.append(r_emb)
        prefix.append(a_emb)
        full_part = ad.reshape(ad.stack_axis2(prefix), (b, s * (k - 1), e))
        return ad.concat_axis1([full_part, tail])

    def forward(self, batch, train=False, drop_rng=None, capture_attention=False):
        """Run the backbone; returns (hidden (B,T,E) tensor, attention records).

        Attention records are batch-averaged per (block, head) and captured
        before attention dropout; pass a single-window batch for raw maps.
        """
        if not isinstance(batch, WindowBatch):
            batch = collate([batch])
        c = self.config
        if batch.step_count > c.context_len_K:
            raise ContractViolation(
                f"window of {batch.step_count} steps exceeds context length "
                f"{c.context_len_K}")
        if train and c.dropout_rate > 0.0 and drop_rng is None:
            raise ContractViolation("train-mode forward needs a dropout rng")
        h = self.embed_tokens(batch)
        b, t, e = h.values.shape
        nh = c.num_heads
        dh = e // nh
        inv_sqrt_dh = 1.0 / np.sqrt(dh)
        use_drop = train and c.dropout_rate > 0.0
        if use_drop:
            h = ad.dropout(h, c.dropout_rate, drop_rng)
        records = [] if capture_attention else None
        for i in range(c.num_layers):
            p = f"blocks.{i}."
            n1 = ad.layer_norm(h, self.params[p + "ln1.g"], self.params[p + "ln1.b"],
                               LN_EPS)
            def split_heads(x):
                return ad.swap_axes(ad.reshape(x, (b, t, nh, dh)), 1, 2)
            q = split_heads(self._linear(n1, p + "attn.q"))
            k = split_heads(self._linear(n1, p + "attn.k"))
            v = split_heads(self._linear(n1, p + "attn.v"))
            scores = ad.scale(ad.matmul(q, ad.transpose_last2(k)), inv_sqrt_dh)
            probs = ad.causal_softmax(scores)
            if records is not None:
                mean_probs = probs.values.mean(axis=0)
                for head in range(nh):
                    records.append(AttentionRecord(
                        block_index=i, head_index=head,
                        weights=mean_probs[head].astype(np.float64)))
            if use_drop:
                probs = ad.dropout(probs, c.dropout_rate, drop_rng)
            ctx = ad.reshape(ad.swap_axes(ad.matmul(probs, v), 1, 2), (b, t, e))
            attn_out = self._linear(ctx, p + "attn.proj")
            if use_drop:
                attn_out = ad.dropout(attn_out, c.dropout_rate, drop_rng)
            h = ad.add(h, attn_out)
            n2 = ad.layer_norm(h, self.params[p + "ln2.g"], self.params[p + "ln2.b"],
                               LN_EPS)
            mlp = self._linear(ad.relu(self._linear(n2, p + "mlp.fc1")), p + "mlp.fc2")
            if use_drop:
                mlp = ad.dropout(mlp, c.dropout_rate, drop_rng)
            h = ad.add(h, mlp)
        hidden = ad.layer_norm(h, self.params["ln_f.g"], self.params["ln_f.b"], LN_EPS)
        return hidden, records

    # --------------------------------------------------------------- heads

    def _gaussian_head(self, hidden_at, which):
        """Gaussian head: one mean and one log-std projection, the same head
        weights applied at every read position; log-std clamped for
        stability."""
        mean = ad.add(ad.matmul(hidden_at, self.params[f"head.{which}.mu.w"]),
                      self.params[f"head.{which}.mu.b"])
        log_std = ad.clip(
            ad.add(ad.matmul(hidden_at, self.params[f"head.{which}.log_std.w"]),
                   self.params[f"head.{which}.log_std.b"]),
            LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    def action_head(self, hidden_at):
        return self._gaussian_head(hidden_at, "action")

    def state_head(self, hidden_at):
        return self._gaussian_head(hidden_at, "state")

    def return_head(self, hidden_at):
        return self._gaussian_head(hidden_at, "return")

    def region_head(self, hidden_at):
        return ad.add(ad.matmul(hidden_at, self.params["head.region.w"]),
                      self.params["head.region.b"])


def export_attention(records, config_dict, role_map):
    """Assemble the serializable attention document.

    Schema: {"config": {...}, "config_digest": str, "token_roles": [str],
    "blocks": [[T x T matrix per head] per block]} with 64-bit values.
    """
    if not records:
        raise ContractViolation("export_attention needs at least one record")
    n_blocks = max(r.block_index for r in records) + 1
    n_heads = max(r.head_index for r in records) + 1
    blocks = [[None] * n_heads for _ in range(n_blocks)]
    for r in records:
        blocks[r.block_index][r.head_index] = np.asarray(
            r.weights, dtype=np.float64).tolist()
    return {
        "config": dict(config_dict),
        "config_digest": config_digest(config_dict),
        "token_roles": [role for role, _ in role_map],
        "blocks": blocks,
    }

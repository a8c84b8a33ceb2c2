"""Training loop: layerwise-adaptive optimizer, linear warmup, gradient
clipping, periodic rollout evaluation, checkpointing, and a metrics CSV.

The optimizer follows the LAMB update: bias-corrected first/second moments,
r = m_hat / (sqrt(v_hat) + eps), u = r + wd * w, and a per-parameter-tensor
trust ratio ||w|| / ||u|| (1 when either norm is zero). Weight decay applies
only to matrices (ndim >= 2); biases, normalization gains, and log-std
vectors are left undecayed.

Determinism contract: the metrics log and final checkpoint are a pure
function of (dataset, configs, seed). Every stochastic draw comes from a
generator seeded by (seed, stream, step).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import rollout as rolloutmod
from .checkpoint import save_checkpoint
from .data import sample_batch
from .errors import ConfigError, NumericalError
from .losses import LossWeights, combine_bundles, compute_losses, scalarize
from .model import DecisionModel
from .tokens import VARIANT_MOTRDT, group_by_length

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-6

METRICS_COLUMNS = ("step", "j_dt", "j1", "j2", "j3", "total", "lr",
                   "eval_return_mean", "eval_return_std")


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-4
    weight_decay: float = 1e-3
    grad_clip: float = 0.25
    warmup_steps: int = 10_000
    total_updates: int = 100_000
    eval_every: int = 1000
    eval_episodes: int = 10
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=lambda: LossWeights.uniform("modt"))
    precision: int = 32

    def __post_init__(self):
        for name in ("batch_size", "learning_rate", "weight_decay", "grad_clip",
                     "warmup_steps", "total_updates", "eval_every", "eval_episodes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.warmup_steps > self.total_updates:
            raise ConfigError("warmup_steps must not exceed total_updates")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    def to_dict(self):
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights.as_tuple())
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        lw = d.pop("loss_weights", None)
        cfg = cls(**d)
        if lw is not None:
            cfg.loss_weights = LossWeights(*lw)
        return cfg


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def fresh(cls, params):
        return cls(m={n: np.zeros_like(p.values) for n, p in params.items()},
                   v={n: np.zeros_like(p.values) for n, p in params.items()})


def lr_schedule(step, config: TrainConfig):
    if step < 1:
        raise ConfigError("schedule steps are 1-based")
    return config.learning_rate * min(1.0, step / config.warmup_steps)


def clip_grad_norm(params, max_norm):
    """Scale all gradients so the global L2 norm is at most max_norm."""
    if max_norm <= 0:
        raise ConfigError("max_norm must be positive")
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= np.asarray(factor, dtype=p.grad.dtype)
    return norm


def _decayed(name, p):
    return p.values.ndim >= 2


def lamb_step(params, state: OptimizerState, config: TrainConfig, lr_t):
    """One LAMB update over the named parameter map, in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - BETA1 ** t
    bc2 = 1.0 - BETA2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.values)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter {name}")
        m = state.m[name]
        v = state.v[name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * np.square(g)
        update = (m / bc1) / (np.sqrt(v / bc2) + EPS)
        if config.weight_decay != 0.0 and _decayed(name, p):
            update = update + config.weight_decay * p.values
        w_norm = float(np.linalg.norm(p.values))
        u_norm = float(np.linalg.norm(update))
        trust = w_norm / u_norm if w_norm > 0.0 and u_norm > 0.0 else 1.0
        p.values -= np.asarray(lr_t * trust, dtype=p.values.dtype) * update.astype(
            p.values.dtype, copy=False)


def _format_cell(x):
    if x is None:
        return ""
    return repr(float(x))


@dataclass
class TrainResult:
    model: DecisionModel
    opt_state: OptimizerState
    metrics: list
    checkpoint_dir: str | None


def train(dataset, model_config, train_config: TrainConfig, out_dir=None,
          progress=None, stop_when=None) -> TrainResult:
    """Run the optimization loop.

    Per update: sample a batch of contexts, group by window length, forward,
    compute and scalarize the losses, backward, clip, LAMB step. The loss
    logged at step t is the pre-update value. Evaluation rollouts run every
    eval_every steps on the current parameters. `stop_when(step, row_dict)`
    may end the run early (used by smoke tests); a non-finite loss aborts,
    keeping the last good checkpoint.
    """
    cfg = train_config
    variant = model_config.variant
    if model_config.state_dim != dataset.header.state_dim or \
            model_config.action_dim != dataset.header.action_dim:
        raise ConfigError(
            f"model dims (state {model_config.state_dim}, action "
            f"{model_config.action_dim}) do not match dataset "
            f"(state {dataset.header.state_dim}, action {dataset.header.action_dim})")
    model = DecisionModel(model_config, seed=cfg.seed, dtype=cfg.dtype)
    opt = OptimizerState.fresh(model.params)
    region_spec = None
    if variant == VARIANT_MOTRDT:
        region_spec = dataset.header.region_spec(model_config.region_bins)
    metrics_rows = []
    csv_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        csv_fh = open(os.path.join(out_dir, "metrics.csv"), "w")
        csv_fh.write(",".join(METRICS_COLUMNS) + "\n")
    last_ckpt = None

    def write_ckpt(tag, step):
        nonlocal last_ckpt
        if out_dir is None:
            return None
        path = os.path.join(out_dir, tag)
        tail = [",".join(_format_cell(c) if not isinstance(c, str) else c
                         for c in row) for row in metrics_rows[-5:]]
        save_checkpoint(path, model, cfg.to_dict(), dataset.header, step,
                        opt_state=opt, metrics_tail=tail)
        last_ckpt = path
        return path

    try:
        for step in range(1, cfg.total_updates + 1):
            lr_t = lr_schedule(step, cfg)
            batch_rng = np.random.default_rng([cfg.seed, 1, step])
            drop_rng = np.random.default_rng([cfg.seed, 2, step])
            windows = sample_batch(dataset, model_config.context_len_K,
                                   cfg.batch_size, batch_rng, variant, region_spec)
            groups = group_by_length(windows)
            with ad.Tape():
                bundles = []
                sizes = []
                for gb in groups:
                    hidden, _ = model.forward(gb, train=True, drop_rng=drop_rng)
                    bundles.append(compute_losses(hidden, gb, model))
                    sizes.append(gb.batch_size)
                bundle = combine_bundles(bundles, sizes)
                total = scalarize(bundle, cfg.loss_weights, variant)
                loss_val = float(total.values)
                if not np.isfinite(loss_val):
                    raise NumericalError(
                        f"non-finite loss {loss_val} at step {step}")
                model.zero_grads()
                ad.backward(total)
            clip_grad_norm(model.params, cfg.grad_clip)
            lamb_step(model.params, opt, cfg, lr_t)

            vals = bundle.values()
            eval_mean = eval_std = None
            if step % cfg.eval_every == 0:
                report = rolloutmod.evaluate(
                    model, dataset.header, episodes=cfg.eval_episodes,
                    target_return=2.0 * dataset.header.expert_ref,
                    seed=cfg.seed * 1000 + step, variant=variant)
                eval_mean, eval_std = report.mean_return, report.std_return
                write_ckpt(f"checkpoint_step_{step}", step)
            row = (step, vals["j_dt"], vals["j1"], vals["j2"], vals["j3"],
                   loss_val, lr_t, eval_mean, eval_std)
            metrics_rows.append(row)
            if csv_fh is not None:
                csv_fh.write(",".join(
                    repr(step) if i == 0 else _format_cell(c)
                    for i, c in enumerate(row)) + "\n")
                csv_fh.flush()
            if progress is not None:
                progress(step, row)
            if stop_when is not None and stop_when(step, vals):
                break
    except NumericalError:
        if csv_fh is not None:
            csv_fh.close()
        raise
    write_ckpt("checkpoint_final", metrics_rows[-1][0] if metrics_rows else 0)
    if csv_fh is not None:
        csv_fh.close()
    return TrainResult(model=model, opt_state=opt, metrics=metrics_rows,
                       checkpoint_dir=last_ckpt)


# Presets: "paper" uses the documented reference hyperparameters; "desk" is
# scaled for CPU-minute runs (fewer updates, shorter warmup, smaller embed
# and batch) while keeping the network depth and context length.
PRESETS = {
    "paper": {
        "model": {"num_layers": 4, "num_heads": 4, "embed_dim": 256,
                  "context_len_K": 20, "dropout_rate": 0.1, "region_bins": 3},
        "train": {"batch_size": 256, "learning_rate": 1e-4, "weight_decay": 1e-3,
                  "grad_clip": 0.25, "warmup_steps": 10_000,
                  "total_updates": 100_000, "eval_every": 1000,
                  "eval_episodes": 10, "precision": 32},
    },
    "desk": {
        "model": {"num_layers": 4, "num_heads": 4, "embed_dim": 128,
                  "context_len_K": 20, "dropout_rate": 0.1, "region_bins": 3},
        "train": {"batch_size": 64, "learning_rate": 1e-4, "weight_decay": 1e-3,
                  "grad_clip": 0.25, "warmup_steps": 1000,
                  "total_updates": 20_000, "eval_every": 1000,
                  "eval_episodes": 10, "precision": 32},
    },
}

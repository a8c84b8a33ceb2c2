"""Command-line interface.

Subcommands: gen-data (build a behavior dataset), train, eval (rollout
evaluation of a checkpoint), attn (attention-map export plus entropy /
divergence diagnostics), inspect (dataset summary).

Exit codes: 0 success, 2 usage or config error, 3 I/O or data error,
4 numerical failure during training or evaluation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import rollout as rolloutmod
from .checkpoint import header_digest, load_checkpoint
from .data import generate_dataset, parse_mix, read_dataset, write_dataset
from .env import ENV_NAME
from .errors import ConfigError, DataFormatError, ModtError, NumericalError
from .losses import LossWeights
from .model import ModelConfig
from .tokens import VARIANTS
from .train import PRESETS, TrainConfig, train

_CONFIG_SECTIONS = ("model", "train", "loss_weights", "eval")
_MODEL_KEYS = {"num_layers", "num_heads", "embed_dim", "context_len_K",
               "dropout_rate", "region_bins", "use_timestep_embedding",
               "max_timestep", "state_dim", "action_dim", "variant"}
_TRAIN_KEYS = {"batch_size", "learning_rate", "weight_decay", "grad_clip",
               "warmup_steps", "total_updates", "eval_every", "eval_episodes",
               "seed", "precision"}
_EVAL_KEYS = {"episodes", "target_return", "return_mode"}


def _load_config_file(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise DataFormatError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config file must be a JSON object")
    unknown = set(doc) - set(_CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for section, allowed in (("model", _MODEL_KEYS), ("train", _TRAIN_KEYS),
                             ("eval", _EVAL_KEYS)):
        sub = doc.get(section, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        bad = set(sub) - allowed
        if bad:
            raise ConfigError(f"unknown keys in config section {section!r}: "
                              f"{sorted(bad)}")
    if "loss_weights" in doc:
        lw = doc["loss_weights"]
        if not (isinstance(lw, list) and len(lw) in (3, 4)
                and all(isinstance(x, (int, float)) for x in lw)):
            raise ConfigError("loss_weights must be a list of 3 or 4 numbers")
    return doc


def cmd_gen_data(args):
    mix = parse_mix(args.mix)
    if args.env != ENV_NAME:
        raise ConfigError(f"unknown env {args.env!r} (available: {ENV_NAME})")
    if args.episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    ds = generate_dataset(mix, args.episodes, args.seed)
    write_dataset(ds, args.out)
    rets = np.array([r.episode_return for r in ds.records])
    print(f"wrote {ds.num_episodes} episodes to {args.out}")
    print(f"returns: mean {rets.mean():.3f}  min {rets.min():.3f}  "
          f"max {rets.max():.3f}")
    print(f"references: random {ds.header.random_ref:.3f}  "
          f"expert {ds.header.expert_ref:.3f}  "
          f"return_scale {ds.header.return_scale:.3f}")
    return 0


def cmd_train(args):
    dataset = read_dataset(args.data)
    preset = PRESETS[args.preset]
    model_kw = dict(preset["model"])
    train_kw = dict(preset["train"])
    lw_list = None
    eval_kw = {}
    if args.config:
        doc = _load_config_file(args.config)
        file_model = dict(doc.get("model", {}))
        file_variant = file_model.pop("variant", None)
        if file_variant is not None and file_variant != args.variant:
            raise ConfigError(
                f"config variant {file_variant!r} conflicts with --variant "
                f"{args.variant!r}")
        for key in ("state_dim", "action_dim"):
            if key in file_model:
                want = file_model.pop(key)
                have = getattr(dataset.header, key)
                if want != have:
                    raise ConfigError(
                        f"config {key}={want} does not match dataset {key}={have}")
        model_kw.update(file_model)
        train_kw.update(doc.get("train", {}))
        lw_list = doc.get("loss_weights")
        eval_kw = doc.get("eval", {})
    if args.seed is not None:
        train_kw["seed"] = args.seed
    if lw_list is None:
        weights = LossWeights.uniform(args.variant)
    else:
        weights = LossWeights(*(list(lw_list) + [0.0] * (4 - len(lw_list))))
    model_config = ModelConfig(
        state_dim=dataset.header.state_dim,
        action_dim=dataset.header.action_dim,
        variant=args.variant, **model_kw)
    train_config = TrainConfig(loss_weights=weights, **train_kw)
    os.makedirs(args.out, exist_ok=True)
    effective = {
        "variant": args.variant,
        "preset": args.preset,
        "model": model_config.to_dict(),
        "train": train_config.to_dict(),
        "eval": eval_kw,
        "data": os.path.abspath(args.data),
        "dataset_header_digest": header_digest(dataset.header),
    }
    with open(os.path.join(args.out, "effective_config.json"), "w") as fh:
        json.dump(effective, fh, indent=1)
        fh.write("\n")

    def progress(step, row):
        if step % max(1, args.log_every) == 0:
            parts = [f"step {step}", f"total {row[5]:.4f}", f"lr {row[6]:.2e}"]
            if row[7] is not None:
                parts.append(f"eval {row[7]:.2f}+-{row[8]:.2f}")
            print("  ".join(parts))

    result = train(dataset, model_config, train_config, out_dir=args.out,
                   progress=progress if args.log_every else None)
    print(f"finished {result.metrics[-1][0]} updates; "
          f"checkpoint at {result.checkpoint_dir}")
    return 0


def cmd_eval(args):
    model, manifest, header, _ = load_checkpoint(args.ckpt)
    target = args.target_return
    if target is None:
        target = 2.0 * header.expert_ref
    report = rolloutmod.evaluate(
        model, header, episodes=args.episodes, target_return=target,
        seed=args.seed, return_mode=args.return_mode,
        context_len=args.context_len)
    if args.json:
        print(report.to_json())
    else:
        print(f"checkpoint      {args.ckpt} (step {manifest['step']})")
        print(f"target return   {report.target_return:.3f}")
        print(f"episodes        {len(report.episode_returns)}")
        print(f"mean return     {report.mean_return:.3f}")
        print(f"std return      {report.std_return:.3f}")
        if report.normalized_score is not None:
            print(f"normalized      {report.normalized_score:.2f}")
        else:
            print(f"normalized      n/a ({report.normalization_warning})")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.to_json())
            fh.write("\n")
    return 0


def cmd_attn(args):
    model, _, _, _ = load_checkpoint(args.ckpt)
    dataset = read_dataset(args.data)
    doc, records = rolloutmod.capture_eval_attention(
        model, dataset, n_contexts=args.contexts, seed=args.seed)
    with open(args.out, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    stats = rolloutmod.attention_stats(records)
    stats_path = args.stats_out or (os.path.splitext(args.out)[0] + ".stats.csv")
    rolloutmod.write_attention_stats_csv(stats, stats_path)
    n_blocks = len(doc["blocks"])
    n_heads = len(doc["blocks"][0])
    print(f"wrote {n_blocks * n_heads} attention maps "
          f"({n_blocks} blocks x {n_heads} heads, {len(doc['token_roles'])} tokens) "
          f"to {args.out}")
    print(f"wrote entropy/divergence stats to {stats_path}")
    return 0


def _quantile(sorted_vals, q):
    n = len(sorted_vals)
    if n == 1:
        return float(sorted_vals[0])
    pos = q * (n - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return float(sorted_vals[lo] * (1 - frac) + sorted_vals[hi] * frac)


def cmd_inspect(args):
    dataset = read_dataset(args.data)
    h = dataset.header
    print(f"env             {h.env} (format_version {h.format_version})")
    print(f"dims            state {h.state_dim}  action {h.action_dim}")
    print(f"horizon         {h.horizon}")
    print(f"episodes        {dataset.num_episodes}")
    print(f"return_scale    {h.return_scale:.6f}")
    print(f"references      random {h.random_ref:.3f}  expert {h.expert_ref:.3f}")
    tags = {}
    for rec in dataset.records:
        tags[rec.policy_tag] = tags.get(rec.policy_tag, 0) + 1
    for tag in sorted(tags):
        print(f"episodes[{tag}]  {tags[tag]}")
    if dataset.records:
        rets = sorted(r.episode_return for r in dataset.records)
        qs = {q: _quantile(rets, q) for q in (0.0, 0.25, 0.5, 0.75, 1.0)}
        print("return quantiles  " + "  ".join(
            f"q{int(q * 100):02d} {v:.3f}" for q, v in qs.items()))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="modt",
        description="Multi-objective decision transformer: dataset generation, "
                    "training, evaluation, and attention export.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a behavior-policy dataset")
    p.add_argument("--env", default=ENV_NAME, help="environment name")
    p.add_argument("--mix", required=True,
                   help="policy mix, e.g. random:0.3,pd_weak:0.4,expert:0.3")
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset path (jsonl)")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", choices=list(VARIANTS), required=True)
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--config", help="JSON config overriding preset values")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--log-every", type=int, default=0,
                   help="print progress every N steps (0 = quiet)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with rollouts")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--target-return", type=float, default=None,
                   help="return prompt; default is twice the expert reference")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--return-mode",
                   choices=[rolloutmod.RETURN_MODE_PREDICTED,
                            rolloutmod.RETURN_MODE_SUBTRACT],
                   default=rolloutmod.RETURN_MODE_PREDICTED)
    p.add_argument("--context-len", type=int, default=None,
                   help="evaluation context length; defaults to the "
                        "training context length")
    p.add_argument("--json", action="store_true", help="print report as JSON")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("attn", help="export averaged attention maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--contexts", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="attention JSON path")
    p.add_argument("--stats-out", help="companion stats CSV path")
    p.set_defaults(fn=cmd_attn)

    p = sub.add_parser("inspect", help="summarize a dataset file")
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except ModtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Offline trajectory datasets: generation, persistence, and context sampling.

A dataset is one JSON object per line: line 1 is the header (env metadata,
normalization stats, reference returns, format version), every further line
is one trajectory record. Generation is a pure function of (mix, episodes,
seed): episode i uses rng(seed + i) and the reference returns come from
separate seeded reference rollouts, so identical inputs yield byte-identical
files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import env as envmod
from .errors import ConfigError, DataFormatError
from .regions import RegionSpec, encode_actions
from .tokens import VARIANT_MOTRDT, layout_tokens

FORMAT_VERSION = 1
STD_FLOOR = 1e-6
_REF_EPISODES = 20
_REF_SEED_BASE = {"random": 900_000, "expert": 910_000}


def returns_to_go(rewards):
    """Reverse cumulative sum: g[t] = r[t] + g[t+1], g[-1] = r[-1]."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise ConfigError("returns_to_go needs a non-empty reward sequence")
    return np.cumsum(r[::-1])[::-1]


@dataclass
class TrajectoryRecord:
    states: np.ndarray        # (T, state_dim)
    actions: np.ndarray       # (T, action_dim)
    rewards: np.ndarray       # (T,)
    rtg: np.ndarray           # (T,)
    policy_tag: str
    seed: int

    @property
    def length(self):
        return len(self.rewards)

    @property
    def episode_return(self):
        return float(self.rtg[0])


@dataclass
class DatasetHeader:
    env: str
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    horizon: int
    state_mean: np.ndarray
    state_std: np.ndarray
    return_scale: float
    random_ref: float
    expert_ref: float
    format_version: int = FORMAT_VERSION

    def to_json_dict(self):
        return {
            "format_version": self.format_version,
            "env": self.env,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "action_low": self.action_low.tolist(),
            "action_high": self.action_high.tolist(),
            "horizon": self.horizon,
            "state_mean": self.state_mean.tolist(),
            "state_std": self.state_std.tolist(),
            "return_scale": self.return_scale,
            "random_ref": self.random_ref,
            "expert_ref": self.expert_ref,
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            env=d["env"],
            state_dim=int(d["state_dim"]),
            action_dim=int(d["action_dim"]),
            action_low=np.asarray(d["action_low"], dtype=np.float64),
            action_high=np.asarray(d["action_high"], dtype=np.float64),
            horizon=int(d["horizon"]),
            state_mean=np.asarray(d["state_mean"], dtype=np.float64),
            state_std=np.asarray(d["state_std"], dtype=np.float64),
            return_scale=float(d["return_scale"]),
            random_ref=float(d["random_ref"]),
            expert_ref=float(d["expert_ref"]),
            format_version=int(d["format_version"]),
        )

    def normalize_states(self, states):
        return (np.asarray(states, dtype=np.float64) - self.state_mean) / self.state_std

    def scale_returns(self, g):
        return np.asarray(g, dtype=np.float64) / self.return_scale

    def region_spec(self, bins):
        return RegionSpec(bins=bins, action_dim=self.action_dim,
                          low=self.action_low, high=self.action_high)


@dataclass
class Dataset:
    header: DatasetHeader
    records: list = field(default_factory=list)

    @property
    def num_episodes(self):
        return len(self.records)

    def behavior_mean_return(self):
        if not self.records:
            raise ConfigError("empty dataset has no behavior return")
        return float(np.mean([r.episode_return for r in self.records]))


def parse_mix(text):
    """Parse 'random:0.3,pd_weak:0.4,expert:0.3' into [(name, frac), ...]."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ConfigError(f"mix entry {part!r} is not name:fraction")
        name, frac = part.rsplit(":", 1)
        try:
            out.append((name.strip(), float(frac)))
        except ValueError:
            raise ConfigError(f"mix fraction {frac!r} is not a number") from None
    return out


def _allocate(mix, episodes):
    fracs = np.array([f for _, f in mix], dtype=np.float64)
    counts = np.floor(fracs * episodes).astype(int)
    remainder = episodes - counts.sum()
    by_frac_part = np.argsort(-(fracs * episodes - counts), kind="stable")
    for j in range(remainder):
        counts[by_frac_part[j]] += 1
    return counts


def _reference_return(policy_name, seed):
    pol = envmod.make_policy(policy_name)
    base = _REF_SEED_BASE["random" if policy_name == "random" else "expert"]
    rets = []
    for i in range(_REF_EPISODES):
        rng = np.random.default_rng(seed + base + i)
        _, _, rewards = envmod.run_episode(pol, rng)
        rets.append(rewards.sum())
    return float(np.mean(rets))


def generate_dataset(mix, episodes, seed) -> Dataset:
    """Generate a policy-mix dataset with fully seed-derived randomness."""
    if not mix:
        raise ConfigError("policy mix is empty")
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    fracs = [f for _, f in mix]
    if any(f < 0 for f in fracs):
        raise ConfigError(f"mix fractions must be nonnegative: {mix}")
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise ConfigError(f"mix fractions must sum to 1, got {sum(fracs)!r}")
    for name, _ in mix:
        envmod.make_policy(name)  # validate names up front
    counts = _allocate(mix, episodes)
    records = []
    ep_index = 0
    for (name, _), count in zip(mix, counts):
        pol = envmod.make_policy(name)
        for _ in range(count):
            ep_seed = seed + ep_index
            rng = np.random.default_rng(ep_seed)
            states, actions, rewards = envmod.run_episode(pol, rng)
            records.append(TrajectoryRecord(
                states=states, actions=actions, rewards=rewards,
                rtg=returns_to_go(rewards), policy_tag=name, seed=ep_seed))
            ep_index += 1
    all_states = np.concatenate([r.states for r in records])
    state_mean = all_states.mean(axis=0)
    state_std = np.maximum(all_states.std(axis=0), STD_FLOOR)
    random_ref = _reference_return("random", seed)
    expert_ref = _reference_return("expert", seed)
    header = DatasetHeader(
        env=envmod.ENV_NAME, state_dim=envmod.STATE_DIM, action_dim=envmod.ACTION_DIM,
        action_low=envmod.ACTION_LOW.copy(), action_high=envmod.ACTION_HIGH.copy(),
        horizon=envmod.HORIZON, state_mean=state_mean, state_std=state_std,
        return_scale=max(1.0, abs(expert_ref)), random_ref=random_ref,
        expert_ref=expert_ref)
    return Dataset(header=header, records=records)


# ------------------------------------------------------------- persistence

_RECORD_KEYS = {"states", "actions", "rewards", "returns_to_go", "policy_tag", "seed"}


def write_dataset(dataset: Dataset, path):
    with open(path, "w") as fh:
        fh.write(json.dumps(dataset.header.to_json_dict()) + "\n")
        for rec in dataset.records:
            fh.write(json.dumps({
                "states": rec.states.tolist(),
                "actions": rec.actions.tolist(),
                "rewards": rec.rewards.tolist(),
                "returns_to_go": rec.rtg.tolist(),
                "policy_tag": rec.policy_tag,
                "seed": rec.seed,
            }) + "\n")


def read_dataset(path) -> Dataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise DataFormatError("missing dataset header", line=1)
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"header is not valid JSON ({exc.msg})", line=1) from None
    if not isinstance(head, dict) or "format_version" not in head:
        raise DataFormatError("header lacks format_version", line=1)
    if head["format_version"] != FORMAT_VERSION:
        raise DataFormatError(
            f"unsupported format_version {head['format_version']} "
            f"(expected {FORMAT_VERSION})", line=1)
    try:
        header = DatasetHeader.from_json_dict(head)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed header field: {exc}", line=1) from None
    records = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            raise DataFormatError("blank line inside dataset", line=lineno)
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"record is not valid JSON ({exc.msg})",
                                  line=lineno) from None
        if not isinstance(obj, dict) or not _RECORD_KEYS.issubset(obj):
            missing = _RECORD_KEYS - set(obj) if isinstance(obj, dict) else _RECORD_KEYS
            raise DataFormatError(f"record missing fields {sorted(missing)}",
                                  line=lineno)
        try:
            rec = TrajectoryRecord(
                states=np.asarray(obj["states"], dtype=np.float64),
                actions=np.asarray(obj["actions"], dtype=np.float64),
                rewards=np.asarray(obj["rewards"], dtype=np.float64),
                rtg=np.asarray(obj["returns_to_go"], dtype=np.float64),
                policy_tag=str(obj["policy_tag"]), seed=int(obj["seed"]))
        except (TypeError, ValueError) as exc:
            raise DataFormatError(f"malformed record arrays: {exc}",
                                  line=lineno) from None
        n = rec.length
        if not (len(rec.states) == len(rec.actions) == len(rec.rtg) == n) or n == 0:
            raise DataFormatError("record arrays have inconsistent lengths",
                                  line=lineno)
        records.append(rec)
    return Dataset(header=header, records=records)


# ---------------------------------------------------------------- sampling


def sample_context(dataset: Dataset, K, rng, variant, region_spec=None):
    """Draw one training window: trajectory chosen with probability
    proportional to its length, then a uniform end offset; the window is the
    at-most-K steps ending there. States/returns come out in model units."""
    if not dataset.records:
        raise ConfigError("cannot sample from an empty dataset")
    if variant == VARIANT_MOTRDT and region_spec is None:
        raise ConfigError("trust-region sampling needs a region spec")
    lengths = np.array([r.length for r in dataset.records], dtype=np.float64)
    probs = lengths / lengths.sum()
    idx = int(rng.choice(len(dataset.records), p=probs))
    rec = dataset.records[idx]
    end = int(rng.integers(1, rec.length + 1))
    start = max(0, end - K)
    h = dataset.header
    actions = rec.actions[start:end]
    regions = None
    if variant == VARIANT_MOTRDT:
        regions = encode_actions(actions, region_spec)
    return layout_tokens(
        returns=h.scale_returns(rec.rtg[start:end]),
        states=h.normalize_states(rec.states[start:end]),
        actions=actions,
        variant=variant,
        regions=regions,
        timesteps=np.arange(start, end, dtype=np.int64),
    )


def sample_batch(dataset, K, batch_size, rng, variant, region_spec=None):
    return [sample_context(dataset, K, rng, variant, region_spec)
            for _ in range(batch_size)]

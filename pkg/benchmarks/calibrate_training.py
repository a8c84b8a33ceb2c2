"""Development calibration: desk-preset training curves and policy quality.

Trains both variants on the canonical mixed dataset and logs loss components
plus rollout returns at checkpoints, to size the acceptance-test budgets.
"""

import json
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from modt.data import generate_dataset  # noqa: E402
from modt.losses import LossWeights  # noqa: E402
from modt.model import ModelConfig  # noqa: E402
from modt.rollout import evaluate  # noqa: E402
from modt.train import PRESETS, TrainConfig, train  # noqa: E402

MIX = [("random", 0.4), ("pd_weak", 0.3), ("expert", 0.3)]
EPISODES = 300
SEED = 20240

def main(variant, total_updates, eval_every):
    t0 = time.time()
    ds = generate_dataset(MIX, EPISODES, SEED)
    behavior = ds.behavior_mean_return()
    print(f"dataset ready ({time.time()-t0:.0f}s); behavior mean {behavior:.2f}, "
          f"random_ref {ds.header.random_ref:.2f}, expert_ref {ds.header.expert_ref:.2f}",
          flush=True)
    mc = ModelConfig(state_dim=4, action_dim=2, variant=variant,
                     **PRESETS["desk"]["model"])
    tk = dict(PRESETS["desk"]["train"])
    tk["total_updates"] = total_updates
    tk["eval_every"] = eval_every
    tk["eval_episodes"] = 10
    tk["seed"] = 1
    tc = TrainConfig(loss_weights=LossWeights.uniform(variant), **tk)

    t1 = time.time()
    def progress(step, row):
        if step % 50 == 0 or row[7] is not None:
            el = time.time() - t1
            msg = (f"[{variant}] step {step} ({el:.0f}s, {el/step*1000:.0f}ms/u) "
                   f"j_dt {row[1]:.3f} j1 {row[2]:.3f} j2 {row[3]:.3f} "
                   f"j3 {'-' if row[4] is None else f'{row[4]:.3f}'} total {row[5]:.3f}")
            if row[7] is not None:
                msg += f"  EVAL {row[7]:.2f}+-{row[8]:.2f}"
            print(msg, flush=True)

    res = train(ds, mc, tc, progress=progress)
    report = evaluate(res.model, ds.header, episodes=10,
                      target_return=2.0 * ds.header.expert_ref, seed=555,
                      variant=variant)
    print(f"[{variant}] FINAL eval mean {report.mean_return:.2f} "
          f"std {report.std_return:.2f} vs behavior {behavior:.2f}", flush=True)
    print(f"[{variant}] total wall {time.time()-t1:.0f}s", flush=True)


if __name__ == "__main__":
    variant = sys.argv[1] if len(sys.argv) > 1 else "modt"
    total = int(sys.argv[2]) if len(sys.argv) > 2 else 2000
    every = int(sys.argv[3]) if len(sys.argv) > 3 else 200
    main(variant, total, every)

import numpy as np
import pytest

from modt.data import DatasetHeader
from modt.env import PointMassEnv
from modt.errors import ConfigError
from modt.model import DecisionModel
from modt.rollout import (RolloutBuffer, attention_stats,
                          capture_eval_attention, evaluate, normalized_score,
                          rollout_episode, write_attention_stats_csv)

from conftest import tiny_config


def env_header(**kw):
    base = dict(env="point_mass", state_dim=4, action_dim=2,
                action_low=-np.ones(2), action_high=np.ones(2), horizon=64,
                state_mean=np.zeros(4), state_std=np.ones(4),
                return_scale=36.0, random_ref=-125.0, expert_ref=-36.0)
    base.update(kw)
    return DatasetHeader(**base)


def env_model(variant="modt", **kw):
    cfg = tiny_config(state_dim=4, action_dim=2, variant=variant,
                      context_len_K=kw.pop("context_len_K", 5), **kw)
    return DecisionModel(cfg, seed=0), cfg


class TestBuffer:
    def test_truncation_keeps_latest_steps(self):
        buf = RolloutBuffer("modt", K=20, action_dim=2)
        for t in range(25):
            buf.g.append(float(t))
            buf.s.append(np.zeros(4))
            if t < 24:
                buf.a.append(np.zeros(2))
        w = buf.window(partial=True)
        assert w.step_count == 20
        assert w.timesteps.tolist() == list(range(5, 25))
        assert w.returns[-1] == 24.0  # newest step always retained

    def test_partial_window_shapes(self):
        buf = RolloutBuffer("motrdt", K=4, action_dim=2, region_code_len=6)
        buf.g.append(0.0)
        buf.s.append(np.zeros(4))
        w = buf.window(partial=True)
        assert w.step_count == 1 and w.actions.shape == (0, 2)
        assert w.regions.shape == (0, 6)


class TestRolloutEpisode:
    @pytest.mark.parametrize("variant", ["modt", "motrdt"])
    def test_episode_runs_to_horizon(self, variant):
        model, _ = env_model(variant)
        total, length, trace = rollout_episode(
            model, env_header(), target_return=-72.0,
            rng=np.random.default_rng(0))
        assert length == 64
        assert len(trace["actions"]) == 64
        assert total < 0

    def test_memoryless_context_still_terminates(self):
        model, _ = env_model(context_len_K=1)
        total, length, _ = rollout_episode(model, env_header(), -72.0,
                                           np.random.default_rng(1))
        assert length == 64

    def test_deterministic_given_seed(self):
        model, _ = env_model()
        a = rollout_episode(model, env_header(), -72.0,
                            np.random.default_rng(5))
        b = rollout_episode(model, env_header(), -72.0,
                            np.random.default_rng(5))
        assert a[0] == b[0]
        assert a[2]["actions"] == b[2]["actions"]
        assert a[2]["predicted_returns"] == b[2]["predicted_returns"]

    def test_subtract_return_mode(self):
        model, _ = env_model()
        total, length, trace = rollout_episode(
            model, env_header(), -72.0, np.random.default_rng(2),
            return_mode="subtract")
        assert length == 64
        g = trace["predicted_returns"]
        assert len(g) == 64  # one prompt + one per non-final step
        assert g[1] != g[0]

    def test_region_head_never_queried(self):
        """Poisoning the region head must not change rollout behavior."""
        model, cfg = env_model("motrdt")
        clean = rollout_episode(model, env_header(), -72.0,
                                np.random.default_rng(3))
        model.params["head.region.w"].values[:] = np.nan
        model.params["head.region.b"].values[:] = np.nan
        poisoned = rollout_episode(model, env_header(), -72.0,
                                   np.random.default_rng(3))
        assert clean[0] == poisoned[0]
        assert clean[2]["actions"] == poisoned[2]["actions"]
        assert clean[2]["predicted_returns"] == poisoned[2]["predicted_returns"]


class TestEvaluate:
    def test_report_is_reproducible(self):
        model, _ = env_model()
        r1 = evaluate(model, env_header(), episodes=3, target_return=-72.0,
                      seed=9)
        r2 = evaluate(model, env_header(), episodes=3, target_return=-72.0,
                      seed=9)
        assert r1.to_json() == r2.to_json()
        assert len(r1.episode_returns) == 3

    def test_normalized_score_formula(self):
        assert normalized_score(-36.0, -125.0, -36.0) == pytest.approx(100.0)
        assert normalized_score(-125.0, -125.0, -36.0) == pytest.approx(0.0)

    def test_degenerate_references_disable_normalization(self):
        model, _ = env_model()
        header = env_header(random_ref=-50.0, expert_ref=-50.0)
        report = evaluate(model, header, episodes=1, target_return=-72.0,
                          seed=0)
        assert report.normalized_score is None
        assert report.normalization_warning

    def test_requires_episodes(self):
        model, _ = env_model()
        with pytest.raises(ConfigError):
            evaluate(model, env_header(), episodes=0, target_return=-1.0,
                     seed=0)


class TestAttentionCapture:
    def test_averaged_maps_stay_row_stochastic(self, small_dataset):
        model, cfg = env_model(context_len_K=6)
        doc, records = capture_eval_attention(model, small_dataset,
                                              n_contexts=4, seed=0)
        assert len(doc["token_roles"]) == 3 * 6
        for rec in records:
            w = rec.weights
            for i in range(w.shape[0]):
                assert abs(w[i, :i + 1].sum() - 1.0) < 1e-6
                assert np.all(w[i, i + 1:] == 0.0)

    def test_single_context_matches_raw_forward(self, small_dataset):
        model, cfg = env_model(context_len_K=6)
        doc, records = capture_eval_attention(model, small_dataset,
                                              n_contexts=1, seed=4)
        doc2, records2 = capture_eval_attention(model, small_dataset,
                                                n_contexts=1, seed=4)
        for a, b in zip(records, records2):
            np.testing.assert_array_equal(a.weights, b.weights)

    def test_trust_region_roles(self, small_dataset):
        model, cfg = env_model("motrdt", context_len_K=5)
        doc, _ = capture_eval_attention(model, small_dataset, n_contexts=2,
                                        seed=0)
        assert len(doc["token_roles"]) == 4 * 5
        assert doc["token_roles"][:4] == ["return", "state", "region", "action"]


class TestAttentionStats:
    def test_rows_per_block_head_plus_pairs(self, small_dataset, tmp_path):
        model, cfg = env_model(context_len_K=5)
        _, records = capture_eval_attention(model, small_dataset, 2, seed=1)
        rows = attention_stats(records)
        ent = [r for r in rows if r["metric"] == "entropy"]
        div = [r for r in rows if r["metric"] == "js_divergence"]
        assert len(ent) == cfg.num_layers * cfg.num_heads
        n = cfg.num_layers
        assert len(div) == n * (n - 1) // 2
        assert all(r["value"] >= 0 for r in rows)
        path = tmp_path / "stats.csv"
        write_attention_stats_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "metric,block,head,block_b,value"
        assert len(lines) == 1 + len(rows)


class TestEvalContextLength:
    def test_shorter_eval_context_runs(self):
        model, _ = env_model(context_len_K=5)
        total, length, _ = rollout_episode(model, env_header(), -72.0,
                                           np.random.default_rng(0),
                                           context_len=2)
        assert length == 64

    def test_context_len_must_not_exceed_training_K(self):
        model, _ = env_model(context_len_K=5)
        with pytest.raises(ConfigError):
            rollout_episode(model, env_header(), -72.0,
                            np.random.default_rng(0), context_len=9)

import numpy as np
import pytest

from modt.errors import LayoutError
from modt.tokens import (VARIANT_MODT, VARIANT_MOTRDT, collate,
                         group_by_length, layout_tokens, role_map_for,
                         tokens_per_step)

from conftest import make_windows, tiny_config


def _window(k, variant=VARIANT_MODT, partial=False, regions=None):
    na = k - 1 if partial else k
    return layout_tokens(
        returns=np.zeros(k), states=np.zeros((k, 3)),
        actions=np.zeros((na, 2)), variant=variant, regions=regions,
        partial_last_step=partial)


class TestRoleMap:
    def test_two_step_base_order(self):
        roles = [r for r, _ in role_map_for(VARIANT_MODT, 2)]
        assert roles == ["return", "state", "action"] * 2

    def test_two_step_trust_region_order(self):
        roles = [r for r, _ in role_map_for(VARIANT_MOTRDT, 2)]
        assert roles == ["return", "state", "region", "action"] * 2

    def test_single_step_counts(self):
        assert len(role_map_for(VARIANT_MODT, 1)) == 3
        assert len(role_map_for(VARIANT_MOTRDT, 1)) == 4

    def test_partial_last_step_drops_region_and_action(self):
        rm = role_map_for(VARIANT_MOTRDT, 3, partial_last_step=True)
        assert [r for r, _ in rm[-2:]] == ["return", "state"]
        assert len(rm) == 2 * tokens_per_step(VARIANT_MOTRDT) + 2


class TestContextWindow:
    def test_step_and_token_counts(self):
        w = _window(4)
        assert w.step_count == 4 and w.token_count == 12

    def test_missing_regions_raises_layout_error(self):
        with pytest.raises(LayoutError):
            _window(2, variant=VARIANT_MOTRDT)

    def test_regions_on_base_variant_rejected(self):
        with pytest.raises(LayoutError):
            layout_tokens(returns=np.zeros(2), states=np.zeros((2, 3)),
                          actions=np.zeros((2, 2)), variant=VARIANT_MODT,
                          regions=np.zeros((2, 6)))

    def test_empty_window_rejected(self):
        with pytest.raises(LayoutError):
            _window(0)

    def test_component_length_mismatch(self):
        with pytest.raises(LayoutError):
            layout_tokens(returns=np.zeros(3), states=np.zeros((2, 3)),
                          actions=np.zeros((3, 2)), variant=VARIANT_MODT)

    def test_partial_window_has_one_less_action(self):
        w = _window(3, partial=True)
        assert w.step_count == 3 and len(w.actions) == 2
        assert w.token_count == 8


class TestCollate:
    def test_stacks_homogeneous_windows(self):
        cfg = tiny_config()
        batch = collate(make_windows(cfg, 3, 4))
        assert batch.batch_size == 3 and batch.step_count == 4
        assert batch.states.shape == (3, 4, cfg.state_dim)

    def test_ragged_batch_rejected(self):
        with pytest.raises(LayoutError):
            collate([_window(2), _window(3)])

    def test_empty_batch_rejected(self):
        with pytest.raises(LayoutError):
            collate([])

    def test_group_by_length_partitions(self):
        wins = [_window(2), _window(3), _window(2), _window(5)]
        groups = group_by_length(wins)
        assert sorted(g.step_count for g in groups) == [2, 3, 5]
        assert sum(g.batch_size for g in groups) == 4

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modt.errors import ContractViolation, InvalidActionError
from modt.regions import (RegionSpec, discretize, encode_actions,
                          ordinal_decode, ordinal_encode)


def spec1d(b=3):
    return RegionSpec(bins=b, action_dim=1, low=np.array([-1.0]),
                      high=np.array([1.0]))


def spec2d(b=3):
    return RegionSpec(bins=b, action_dim=2, low=np.array([-1.0, -1.0]),
                      high=np.array([1.0, 1.0]))


class TestDiscretize:
    def test_interior_point(self):
        assert discretize([0.5], spec1d()).tolist() == [2]

    def test_boundaries(self):
        assert discretize([-1.0], spec1d()).tolist() == [0]
        assert discretize([1.0], spec1d()).tolist() == [2]

    def test_two_dims(self):
        assert discretize([-0.9, 0.0], spec2d()).tolist() == [0, 1]

    def test_out_of_range_clamps(self):
        assert discretize([-5.0], spec1d()).tolist() == [0]
        assert discretize([4.2], spec1d()).tolist() == [2]

    def test_nan_raises(self):
        with pytest.raises(InvalidActionError):
            discretize([float("nan")], spec1d())

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-1, 1), st.floats(-1, 1))
    def test_monotone_per_dimension(self, a, b):
        lo, hi = sorted((a, b))
        s = spec1d(5)
        assert discretize([lo], s)[0] <= discretize([hi], s)[0]

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-1, 1))
    def test_partition_every_action_has_one_bin(self, a):
        idx = discretize([a], spec1d(4))
        assert idx.shape == (1,) and 0 <= idx[0] < 4


class TestOrdinalEncode:
    def test_definition(self):
        assert ordinal_encode([0], spec1d()).tolist() == [1, 0, 0]
        assert ordinal_encode([2], spec1d()).tolist() == [1, 1, 1]

    def test_concatenation(self):
        assert ordinal_encode([0, 2], spec2d()).tolist() == [1, 0, 0, 1, 1, 1]

    @pytest.mark.parametrize("b,d", [(2, 1), (3, 2), (5, 3), (4, 6)])
    def test_length_is_bins_times_dims(self, b, d):
        s = RegionSpec(bins=b, action_dim=d, low=-np.ones(d), high=np.ones(d))
        code = ordinal_encode([0] * d, s)
        assert code.shape == (b * d,)

    def test_out_of_range_index_raises(self):
        with pytest.raises(ContractViolation):
            ordinal_encode([3], spec1d())
        with pytest.raises(ContractViolation):
            ordinal_encode([-1], spec1d())


class TestOrdinalDecode:
    def test_two_ones(self):
        assert ordinal_decode([0.9, 0.8, 0.1], spec1d()).tolist() == [1]

    def test_all_below_threshold_falls_back_to_zero(self):
        assert ordinal_decode([0.2, 0.2, 0.2], spec1d()).tolist() == [0]

    def test_non_monotone_pattern_uses_popcount(self):
        assert ordinal_decode([0.9, 0.1, 0.9], spec1d()).tolist() == [1]

    def test_exhaustive_patterns_match_popcount_rule(self):
        s = spec1d()
        for bits in itertools.product([0.0, 1.0], repeat=3):
            got = ordinal_decode(list(bits), s)[0]
            assert got == max(0, int(sum(bits)) - 1)

    @pytest.mark.parametrize("b", [2, 3, 5])
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_round_trip(self, b, d):
        s = RegionSpec(bins=b, action_dim=d, low=-np.ones(d), high=np.ones(d))
        for combo in itertools.product(range(b), repeat=d):
            idx = np.array(combo)
            assert np.array_equal(ordinal_decode(ordinal_encode(idx, s), s), idx)


def test_encode_actions_matches_scalar_path():
    rng = np.random.default_rng(0)
    s = spec2d(4)
    actions = rng.uniform(-1.2, 1.2, size=(20, 2))
    batch = encode_actions(actions, s)
    for i, a in enumerate(actions):
        np.testing.assert_array_equal(
            batch[i], ordinal_encode(discretize(a, s), s))

"""
Tests for seed splitting.
"""

import numpy as np
import pytest

from lipirm.rng import derive_seed, make_rng, seed_sequence


class TestDeriveSeed:
    """Test derived integer seeds."""

    def test_deterministic(self):
        """Test that the same keys give the same seed."""
        assert derive_seed(3, 1, "final") == derive_seed(3, 1, "final")

    @pytest.mark.parametrize(
        "other",
        [(4, 1, "final"), (3, 2, "final"), (3, 1, "auxiliary")],
    )
    def test_keys_separate_streams(self, other):
        """Test that master seed, seed index and stage all matter."""
        assert derive_seed(3, 1, "final") != derive_seed(*other)

    def test_key_order_matters(self):
        """Test that keys are positional."""
        assert derive_seed(0, "data", 1) != derive_seed(0, 1, "data")

    def test_range(self):
        """Test 32-bit outputs."""
        assert 0 <= derive_seed(123, "noise", 7) < 2**32

    def test_negative_key(self):
        """Test that integer keys must be non-negative."""
        with pytest.raises(ValueError, match="non-negative"):
            seed_sequence(0, -1)


class TestMakeRng:
    """Test derived generators."""

    def test_same_stream(self):
        """Test identical draws for identical keys."""
        a = make_rng(5, "data", 2, "x").random(4)
        b = make_rng(5, "data", 2, "x").random(4)
        np.testing.assert_array_equal(a, b)

    def test_independent_of_other_draws(self):
        """Test that drawing from one stream does not shift another."""
        first = make_rng(5, "data", 0).random(3)
        make_rng(5, "data", 1).random(1000)
        np.testing.assert_array_equal(make_rng(5, "data", 0).random(3), first)

    def test_numpy_integer_keys(self):
        """Test that numpy integers behave like Python integers."""
        assert derive_seed(0, np.int64(4)) == derive_seed(0, 4)

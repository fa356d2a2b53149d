import pytest

from cst_seld.config import AugmentConfig, CtaiConfig
from cst_seld.reflection import accepted_keywords, safe_call

# --- Sample functions for testing ---


def simple_func(a, b=2):
    """Standard function with one default argument."""
    return a + b


# --- Test Cases ---


class TestAcceptedKeywords:

    def test_dataclass_reports_init_fields(self):
        """Dataclass types report their init fields."""
        names = accepted_keywords(AugmentConfig)
        assert "mixup_alpha" in names
        assert "max_mask_frames" in names

    def test_other_callables_are_rejected(self):
        """Plain functions and dataclass instances have no field list to offer."""
        with pytest.raises(TypeError):
            accepted_keywords(simple_func)
        with pytest.raises(TypeError):
            accepted_keywords(CtaiConfig())


class TestSafeCall:

    def test_exact_match(self):
        """Verify behavior when all parameters match the accepted keys."""
        result, rejected = safe_call(simple_func, {"b": 10}, {"a", "b"}, a=5)

        assert result == 15
        assert rejected == {}

    def test_partial_match_with_rejection(self):
        """Verify that extra parameters are filtered and returned as rejected."""
        params = {"b": 10, "extra_param": "ignore_me"}
        result, rejected = safe_call(simple_func, params, {"a", "b"}, a=5)

        assert result == 15
        assert rejected == {"extra_param": "ignore_me"}

    def test_fixed_kwargs_override_params(self):
        """Fixed kwargs take priority; the superseded value is rejected."""
        result, rejected = safe_call(simple_func, {"a": 1, "b": 10}, {"a", "b"}, a=100)

        assert result == 110
        assert rejected == {"a": 1}

    def test_valid_params_filter_strictly(self):
        """Keys outside the accepted set are held back even if the function takes them."""
        params = {"a": 1, "b": 5}
        result, rejected = safe_call(simple_func, params, valid_params={"a"})

        assert result == 3
        assert rejected == {"b": 5}

    def test_routes_configuration_keys(self):
        """Configuration keys split between a dataclass and the leftovers."""
        params = {"mixup_alpha": 0.3, "acs_count": 8}
        augment, rejected = safe_call(AugmentConfig, params, accepted_keywords(AugmentConfig))

        assert augment.mixup_alpha == 0.3
        assert rejected == {"acs_count": 8}

    def test_errors_from_target_propagate(self):
        """Errors raised by the target are not swallowed."""
        with pytest.raises(TypeError):
            safe_call(simple_func, {"b": None}, {"a", "b"}, a=1)

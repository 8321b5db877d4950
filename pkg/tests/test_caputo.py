import math

import numpy as np
import pytest
from scipy import integrate

from qefpinn.caputo import FunctionTimeField, caputo_rule, caputo_tgamma


def power_field(k):
    return FunctionTimeField(lambda x, t: np.asarray(t) ** k, lambda x, t: k * np.asarray(t) ** max(k - 1, 0) if k else 0 * t)


def power_rule(k, gamma, t):
    # Caputo derivative of t^(gamma + k)
    p = gamma + k
    return math.gamma(p + 1) / math.gamma(p + 1 - gamma) * t ** (p - gamma)


@pytest.mark.parametrize("gamma", [0.25, 0.5, 0.75])
@pytest.mark.parametrize("k", [0, 1, 2, 5, 10])
def test_polynomial_exactness(gamma, k):
    t = 0.83
    got = caputo_tgamma(power_field(k), None, t, gamma, 8)
    assert got == pytest.approx(power_rule(k, gamma, t), rel=1e-10)


def test_matches_definition_by_adaptive_quadrature():
    gamma, t = 0.4, 0.9
    u = lambda s: s**gamma * np.sin(s)  # noqa: E731
    du = lambda s: gamma * s ** (gamma - 1) * np.sin(s) + s**gamma * np.cos(s)  # noqa: E731
    ref, _ = integrate.quad(du, 0, t, weight="alg", wvar=(0, -gamma))
    ref /= math.gamma(1 - gamma)
    phi = FunctionTimeField(lambda x, s: np.sin(s), lambda x, s: np.cos(s))
    assert caputo_tgamma(phi, None, t, gamma, 12) == pytest.approx(ref, rel=1e-10)


def test_vectorised_times_and_heads():
    gamma = 0.5
    t = np.array([0.0, 0.3, 1.0])
    phi = FunctionTimeField(lambda x, s: np.stack([s, s**2], -1), lambda x, s: np.stack([np.ones_like(s), 2 * s], -1))
    got = caputo_tgamma(phi, None, t, gamma, 8)
    assert got.shape == (3, 2)
    assert np.all(got[0] == 0.0)
    assert got[1, 0] == pytest.approx(power_rule(1, gamma, 0.3), rel=1e-12)
    assert got[2, 1] == pytest.approx(power_rule(2, gamma, 1.0), rel=1e-12)


def test_rule_weight_sum_is_beta_function():
    g = 0.3
    rule = caputo_rule(g, 8)
    assert rule.weights.sum() == pytest.approx(math.gamma(1 - g) * math.gamma(g), rel=1e-13)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        caputo_rule(1.0, 8)
    with pytest.raises(ValueError):
        caputo_tgamma(power_field(1), None, -0.1, 0.5)

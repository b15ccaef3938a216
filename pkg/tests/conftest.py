"""
Pytest configuration and fixtures.

This module provides shared fixtures for all test files:
- Small analytic systems (scalar integrator, stable and unstable lines)
- Quadratic costs
- Tiny networks for gradient and serialization checks
- A fast run configuration for pipeline tests
"""

import numpy as np
import pytest

from zubov_clf.expr import parse_expression
from zubov_clf.interval import Box
from zubov_clf.models import (
    BenchConfig,
    PMPConfig,
    RunConfig,
    SimulateConfig,
    TrainConfig,
    TransformSpec,
    VerifyConfig,
)
from zubov_clf.pinn import NeuralValueFunction
from zubov_clf.system import ControlAffineSystem, quadratic_cost


def make_system(name, f, g, half_width, data_half_width=None):
    """System from expression strings on a symmetric box."""
    n = len(f)
    return ControlAffineSystem(
        name=name,
        f=tuple(parse_expression(t, n) for t in f),
        g=tuple(tuple(parse_expression(t, n) for t in row) for row in g),
        domain=Box.cube(n, half_width),
        data_domain=Box.cube(n, data_half_width) if data_half_width else None,
    )


# ============================================================================
# Systems
# ============================================================================

@pytest.fixture
def integrator():
    """ẋ = u on [-2, 2] with q = x², R = 1 (V(x) = x², u* = -x)."""
    return make_system("integrator", ["0"], [["1"]], 2.0)


@pytest.fixture
def unit_cost():
    """q = x², R = 1."""
    return quadratic_cost(np.eye(1), np.eye(1))


@pytest.fixture
def stable_line():
    """ẋ = -x with no effective input on [-5, 5]."""
    return make_system("stable_line", ["-x1"], [["0"]], 5.0)


@pytest.fixture
def unstable_line():
    """ẋ = x with no effective input on [-5, 5]."""
    return make_system("unstable_line", ["x1"], [["0"]], 5.0)


@pytest.fixture
def linear_2d():
    """A lightly damped oscillator with input on the second state."""
    return make_system("linear_2d", ["x2", "-x1 - 0.5*x2"], [["0"], ["1"]], 2.0)


# ============================================================================
# Networks
# ============================================================================

@pytest.fixture
def tiny_net():
    """A random 2 → 4 → 1 tanh network."""
    return NeuralValueFunction.initialize([2, 4, 1], TransformSpec(), np.random.default_rng(7))


@pytest.fixture
def deep_net():
    """A random 2 → 5 → 3 → 1 tanh network with non-zero biases."""
    rng = np.random.default_rng(11)
    net = NeuralValueFunction.initialize([2, 5, 3, 1], TransformSpec(), rng)
    for b in net.biases:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    return net


# ============================================================================
# Configurations
# ============================================================================

@pytest.fixture
def fast_run_config():
    """A run configuration small enough for the default test selection."""
    return RunConfig(
        benchmark="vdp_input",
        pmp=PMPConfig(T=10.0, N=60, n_samples=4, tol=1e-5, domain=[[-0.5, 0.5], [-0.5, 0.5]]),
        train=TrainConfig(hidden=[6], n_collocation=64, batch_size=32, epochs=1),
        verify=VerifyConfig(budget=20_000, tolerance=5e-2),
        simulate=SimulateConfig(x0=[[0.2, -0.1]], T=2.0),
        bench=BenchConfig(grid_resolution=5, area_samples=1_000, roa=False),
    )

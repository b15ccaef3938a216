"""
Test Suite: Configuration and Record Models

PURPOSE: Validate pydantic models, their defaults and validators
COVERAGE: zubov_clf/models.py

Tests cover:
- Transform functions and their identities
- Stage configuration validation
- Run configuration source and seed handling
- Record validation (certificates, samples, levels)
"""

import numpy as np
import pytest
from pydantic import ValidationError

from zubov_clf.models import (
    NeuralLevels,
    PMPConfig,
    PMPSample,
    QuadraticCertificate,
    RunConfig,
    TrainConfig,
    TransformKind,
    TransformSpec,
    VerifyConfig,
)


class TestTransformSpec:
    """β, ψ, φ and the inverse."""

    @pytest.mark.parametrize("kind", list(TransformKind))
    def test_derivative_identity(self, kind):
        """β'(V) = φ(β(V)) = (1 − β)ψ(β)."""
        spec = TransformSpec(kind=kind, alpha=0.3)
        V = np.linspace(0.0, 10.0, 21)
        h = 1e-6
        numeric = (spec.beta(V + h) - spec.beta(np.maximum(V - h, 0.0))) / (V + h - np.maximum(V - h, 0.0))
        assert np.allclose(numeric, spec.phi(spec.beta(V)), rtol=1e-5)
        assert np.allclose(spec.phi(spec.beta(V)), (1.0 - spec.beta(V)) * spec.psi(spec.beta(V)))

    @pytest.mark.parametrize("kind", list(TransformKind))
    def test_dphi(self, kind):
        """dφ/dW matches finite differences."""
        spec = TransformSpec(kind=kind, alpha=0.2)
        W = np.linspace(0.05, 0.95, 10)
        h = 1e-6
        numeric = (spec.phi(W + h) - spec.phi(W - h)) / (2 * h)
        assert np.allclose(spec.dphi(W), numeric, atol=1e-8)

    def test_defaults_and_validation(self):
        """tanh with α = 0.1; α must be positive."""
        spec = TransformSpec()
        assert spec.kind == TransformKind.TANH and spec.alpha == 0.1
        with pytest.raises(ValidationError):
            TransformSpec(alpha=0.0)

    def test_frozen(self):
        """Transforms are hashable values."""
        assert hash(TransformSpec()) == hash(TransformSpec())


class TestStageConfigs:
    """Validators of the stage configurations."""

    def test_pmp_defaults(self):
        """T = 200, N = 2000."""
        config = PMPConfig()
        assert config.T == 200.0 and config.N == 2000

    @pytest.mark.parametrize("kwargs", [
        {"N": 5},
        {"T": 0.0},
        {"continuation": [50.0, 20.0]},
        {"continuation": [300.0]},
    ])
    def test_pmp_invalid(self, kwargs):
        """Mesh size, horizon and continuation order."""
        with pytest.raises(ValidationError):
            PMPConfig(**kwargs)

    def test_train_sizes(self):
        """Collocation points cover a batch; λ_b needs boundary points."""
        with pytest.raises(ValidationError):
            TrainConfig(n_collocation=10, batch_size=32)
        with pytest.raises(ValidationError):
            TrainConfig(lambda_b=1.0)
        with pytest.raises(ValidationError):
            TrainConfig(hidden=[])
        assert TrainConfig(lambda_b=1.0, n_boundary=100).n_boundary == 100

    def test_delta_by_dimension(self):
        """δ = 1e-4 up to two states, else 1e-3, unless set."""
        assert VerifyConfig().delta_for(2) == 1e-4
        assert VerifyConfig().delta_for(4) == 1e-3
        assert VerifyConfig(delta=0.5).delta_for(12) == 0.5
        with pytest.raises(ValidationError):
            VerifyConfig(delta=0.0)


class TestRunConfig:
    """Top-level configuration."""

    def test_source_exclusive(self):
        """benchmark and system cannot both be set."""
        with pytest.raises(ValidationError):
            RunConfig(benchmark="vdp_input", system="system.yaml")

    def test_seed_propagates(self):
        """A top-level seed overrides stage seeds."""
        config = RunConfig(seed=42)
        assert config.pmp.seed == 42 and config.train.seed == 42

    def test_canonical_json(self):
        """Sorted keys, stable bytes."""
        config = RunConfig(benchmark="pendulum")
        assert config.canonical_json() == RunConfig(benchmark="pendulum").canonical_json()
        assert b'"benchmark": "pendulum"' in config.canonical_json()


class TestRecords:
    """Certificates, samples and levels."""

    def test_certificate_level_order(self):
        """c_P must not be below c_P1."""
        with pytest.raises(ValidationError):
            QuadraticCertificate(P=[[1.0]], K=[[0.0]], c_P1=2.0, c_P=1.0)
        cert = QuadraticCertificate(P=[[1.0]], K=[[-1.0]], c_P1=1.0, c_P=2.0)
        assert cert.P_matrix.shape == (1, 1)

    def test_sample_clamps_W0(self):
        """Round-off outside [0, 1) is clamped."""
        assert PMPSample(x0=[0.0], V0=0.0, W0=-1e-17, converged=True).W0 == 0.0
        assert PMPSample(x0=[9.0], V0=1e3, W0=1.0, converged=True).W0 < 1.0

    def test_sample_negative_value(self):
        """V0 ≥ 0."""
        with pytest.raises(ValidationError):
            PMPSample(x0=[0.0], V0=-1.0, W0=0.0, converged=True)

    def test_neural_levels(self):
        """c1 in (0, 1) and c2 > c1."""
        assert NeuralLevels(c1=0.2, c2=0.5, c_max=0.9).c2 == 0.5
        with pytest.raises(ValidationError):
            NeuralLevels(c1=0.5, c2=0.2, c_max=0.9)
        with pytest.raises(ValidationError):
            NeuralLevels(c1=0.5, c2=0.5, c_max=0.9)
        with pytest.raises(ValidationError):
            NeuralLevels(c1=1.0, c_max=0.9)

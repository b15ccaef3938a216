"""
Neural value function W_N and physics-informed training on the Zubov-HJB equation.

With φ(W) = (1 − W)ψ(W), G = gR⁻¹gᵀ and p = ∇W the residual

    F = −∇W·(fφ + g k̂) − k̂ᵀR k̂ − qφ²,   k̂ = −½R⁻¹gᵀp,

simplifies to F = −φ p·f + ¼pᵀGp − qφ², which has no (1 − W)
denominators. Training minimizes

    λ_r·mean F² + λ_b·mean (W − h)² + λ_d·mean (W − Ŵ)²

with Adam. Parameter gradients are exact: the loss depends on θ through
W and through the directional derivative p·v, so one reverse sweep over
the forward pass and its tangent (direction v = ∂(loss)/∂p) gives them.
"""

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .errors import TrainingDivergedError
from .interval import Box
from .logging_config import get_logger
from .models import TrainConfig, TransformSpec
from .pmp import PMPDataset
from .storage import read_json, write_csv, write_json
from .system import ControlAffineSystem, CostSpec

logger = get_logger(__name__)

HISTORY_COLUMNS = ("epoch", "step", "residual", "data", "boundary", "total")


class ValueFunction(Protocol):
    """Anything with a value and an input gradient over point batches."""

    def forward(self, X: np.ndarray) -> np.ndarray: ...

    def input_gradient(self, X: np.ndarray) -> np.ndarray: ...


# =============================================================================
# Network
# =============================================================================

@dataclass
class NeuralValueFunction:
    """
    Feedforward tanh network x ↦ W_N(x) with a linear scalar output.

    Attributes:
        weights: W_l with shape (out, in), one per layer
        biases: b_l with shape (out,)
        transform: The β the network's values refer to
    """
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    transform: TransformSpec = field(default_factory=TransformSpec)

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("network needs matching, non-empty weight and bias lists")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {l}: weight {w.shape} does not match bias {b.shape}")
            if l > 0 and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l}: input width {w.shape[1]} does not match previous output")
        if self.weights[-1].shape[0] != 1:
            raise ValueError("output layer must have a single unit")

    @classmethod
    def initialize(cls, widths: Sequence[int], transform: Optional[TransformSpec] = None,
                   rng: Optional[np.random.Generator] = None) -> "NeuralValueFunction":
        """Glorot-uniform weights, zero biases."""
        rng = rng if rng is not None else np.random.default_rng(0)
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, transform or TransformSpec())

    @property
    def widths(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n(self) -> int:
        return self.weights[0].shape[1]

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self) -> List[np.ndarray]:
        """Weights and biases interleaved: [W_0, b_0, W_1, b_1, ...]."""
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def copy(self) -> "NeuralValueFunction":
        return NeuralValueFunction([w.copy() for w in self.weights],
                                   [b.copy() for b in self.biases], self.transform)

    # -------------------------------------------------------------------------
    # Evaluation
    # -------------------------------------------------------------------------

    def _hidden(self, X: np.ndarray) -> List[np.ndarray]:
        """Activations z_0 = x, z_1, ..., z_{L-1}."""
        z = [X]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z.append(np.tanh(z[-1] @ w.T + b))
        return z

    def forward(self, X: np.ndarray) -> np.ndarray:
        """W_N at (n,) → scalar array or (m, n) → (m,)."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        z = self._hidden(np.atleast_2d(X))
        out = (z[-1] @ self.weights[-1].T + self.biases[-1])[:, 0]
        return out[0] if single else out

    def forward_with_gradient(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        z = self._hidden(np.atleast_2d(X))
        value = (z[-1] @ self.weights[-1].T + self.biases[-1])[:, 0]
        grad = np.broadcast_to(self.weights[-1], (z[0].shape[0], self.weights[-1].shape[1]))
        for l in range(len(self.weights) - 2, -1, -1):
            grad = (grad * (1.0 - z[l + 1] ** 2)) @ self.weights[l]
        if single:
            return value[0], np.array(grad[0])
        return value, np.array(grad)

    def input_gradient(self, X: np.ndarray) -> np.ndarray:
        """Exact ∇_x W_N by reverse accumulation."""
        return self.forward_with_gradient(X)[1]

    # -------------------------------------------------------------------------
    # Parameter gradients
    # -------------------------------------------------------------------------

    def parameter_gradient(self, X: np.ndarray, value_adjoint: np.ndarray,
                           direction: np.ndarray) -> List[np.ndarray]:
        """
        ∂/∂θ Σ_i [a_i W(x_i) + ∇W(x_i)·v_i] for fixed a (value_adjoint) and v (direction).

        Returns gradients in the order of ``parameters()``.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        a = np.asarray(value_adjoint, dtype=np.float64).reshape(-1, 1)
        v = np.atleast_2d(np.asarray(direction, dtype=np.float64))
        L = len(self.weights)

        # primal and tangent forward pass
        z = [X]
        zdot = [v]
        slopes: List[np.ndarray] = []
        adot: List[np.ndarray] = []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            pre_dot = zdot[-1] @ w.T
            act = np.tanh(z[-1] @ w.T + b)
            slope = 1.0 - act * act
            z.append(act)
            slopes.append(slope)
            adot.append(pre_dot)
            zdot.append(slope * pre_dot)

        grads: List[np.ndarray] = [np.empty(0)] * (2 * L)
        out_bar = a                                   # adjoint of W
        outdot_bar = np.ones_like(a)                  # adjoint of ∇W·v
        w_last = self.weights[-1]
        grads[2 * (L - 1)] = out_bar.T @ z[-1] + outdot_bar.T @ zdot[-1]
        grads[2 * (L - 1) + 1] = out_bar.sum(axis=0)
        z_bar = out_bar @ w_last
        zdot_bar = outdot_bar @ w_last

        for l in range(L - 2, -1, -1):
            act, slope, pre_dot = z[l + 1], slopes[l], adot[l]
            pre_dot_bar = slope * zdot_bar
            slope_bar = pre_dot * zdot_bar
            z_bar = z_bar - 2.0 * act * slope_bar
            pre_bar = z_bar * slope
            grads[2 * l] = pre_bar.T @ z[l] + pre_dot_bar.T @ zdot[l]
            grads[2 * l + 1] = pre_bar.sum(axis=0)
            if l > 0:
                z_bar = pre_bar @ self.weights[l]
                zdot_bar = pre_dot_bar @ self.weights[l]
        return grads

    # -------------------------------------------------------------------------
    # Serialization
    # -------------------------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return {
            "widths": self.widths,
            "layers": [{"W": w.tolist(), "b": b.tolist()} for w, b in zip(self.weights, self.biases)],
            "activation": "tanh",
            "transform": self.transform.model_dump(mode="json"),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NeuralValueFunction":
        if data.get("activation", "tanh") != "tanh":
            raise ValueError(f"unsupported activation '{data.get('activation')}'")
        layers = data["layers"]
        net = cls(
            weights=[np.asarray(layer["W"], dtype=np.float64) for layer in layers],
            biases=[np.asarray(layer["b"], dtype=np.float64) for layer in layers],
            transform=TransformSpec(**data.get("transform", {})),
        )
        if "widths" in data and list(data["widths"]) != net.widths:
            raise ValueError(f"declared widths {data['widths']} do not match layers {net.widths}")
        return net

    def save(self, path: Union[str, Path]) -> Path:
        return write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "NeuralValueFunction":
        return cls.from_dict(read_json(path))


# =============================================================================
# Residual
# =============================================================================

@dataclass
class CollocationBatch:
    """Collocation points with f, G = gR⁻¹gᵀ and q evaluated once."""
    x: np.ndarray
    f: np.ndarray
    G: np.ndarray
    q: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, index: np.ndarray) -> "CollocationBatch":
        return CollocationBatch(self.x[index], self.f[index], self.G[index], self.q[index])


@dataclass
class TargetBatch:
    """Points with target values (PMP data or boundary values)."""
    x: np.ndarray
    target: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, index: np.ndarray) -> "TargetBatch":
        return TargetBatch(self.x[index], self.target[index])

    @classmethod
    def empty(cls, n: int) -> "TargetBatch":
        return cls(np.zeros((0, n)), np.zeros(0))


def collocation_batch(sys: ControlAffineSystem, cost: CostSpec, X: np.ndarray) -> CollocationBatch:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    g = sys.input_matrix(X)
    R = cost.R_matrix(X)
    R_inv_gT = np.linalg.solve(R, np.swapaxes(g, -1, -2))
    return CollocationBatch(
        x=X,
        f=sys.drift(X),
        G=g @ R_inv_gT,
        q=cost.running_state_cost(X),
    )


def residual_terms(W: np.ndarray, p: np.ndarray, batch: CollocationBatch,
                   transform: TransformSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """F together with ∂F/∂W and ∂F/∂p at every point."""
    phi = transform.phi(W)
    dphi = transform.dphi(W)
    pf = np.einsum("mi,mi->m", p, batch.f)
    Gp = np.einsum("mij,mj->mi", batch.G, p)
    F = -phi * pf + 0.25 * np.einsum("mi,mi->m", p, Gp) - batch.q * phi * phi
    F_W = -dphi * pf - 2.0 * batch.q * phi * dphi
    F_p = -phi[:, None] * batch.f + 0.5 * Gp
    return F, F_W, F_p


def zubov_residual(sys: ControlAffineSystem, cost: CostSpec, fn: ValueFunction,
                   x: np.ndarray, transform: Optional[TransformSpec] = None) -> np.ndarray:
    """
    Zubov-HJB residual assembled term by term with k̂ = −½R⁻¹gᵀ∇Wᵀ.

    Accepts one point (n,) or many (m, n).
    """
    transform = transform or getattr(fn, "transform", None) or TransformSpec()
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    W = np.atleast_1d(fn.forward(X))
    p = np.atleast_2d(fn.input_gradient(X))
    f = sys.drift(X)
    g = sys.input_matrix(X)
    R = cost.R_matrix(X)
    q = cost.running_state_cost(X)
    factor = (1.0 - W) * transform.psi(W)
    gT_p = np.einsum("mik,mi->mk", g, p)
    k_hat = -0.5 * np.linalg.solve(R, gT_p[..., None])[..., 0]
    closed = f * factor[:, None] + np.einsum("mik,mk->mi", g, k_hat)
    residual = (
        -np.einsum("mi,mi->m", p, closed)
        - np.einsum("mk,mkl,ml->m", k_hat, R, k_hat)
        - q * factor * factor
    )
    return residual[0] if single else residual


# =============================================================================
# Loss
# =============================================================================

@dataclass
class LossWeights:
    residual: float = 1.0
    data: float = 1.0
    boundary: float = 0.0


def loss_components(fn: ValueFunction, transform: TransformSpec, colloc: Optional[CollocationBatch],
                    data: Optional[TargetBatch], boundary: Optional[TargetBatch],
                    weights: LossWeights) -> Dict[str, float]:
    """Unweighted mean-square terms and the weighted total."""
    terms = {"residual": 0.0, "data": 0.0, "boundary": 0.0}
    if colloc is not None and len(colloc) and weights.residual > 0.0:
        W, p = fn.forward(colloc.x), fn.input_gradient(colloc.x)
        F, _, _ = residual_terms(np.atleast_1d(W), np.atleast_2d(p), colloc, transform)
        terms["residual"] = float(np.mean(F * F))
    if data is not None and len(data) and weights.data > 0.0:
        terms["data"] = float(np.mean((np.atleast_1d(fn.forward(data.x)) - data.target) ** 2))
    if boundary is not None and len(boundary) and weights.boundary > 0.0:
        terms["boundary"] = float(np.mean((np.atleast_1d(fn.forward(boundary.x)) - boundary.target) ** 2))
    terms["total"] = (weights.residual * terms["residual"] + weights.data * terms["data"]
                      + weights.boundary * terms["boundary"])
    return terms


def loss(fn: ValueFunction, transform: TransformSpec, colloc: Optional[CollocationBatch],
         data: Optional[TargetBatch], boundary: Optional[TargetBatch],
         lambda_d: float, lambda_b: float, lambda_r: float = 1.0) -> float:
    """λ_r·mean F² + λ_b·mean boundary error² + λ_d·mean data error²."""
    weights = LossWeights(residual=lambda_r, data=lambda_d, boundary=lambda_b)
    return loss_components(fn, transform, colloc, data, boundary, weights)["total"]


def loss_gradient(net: NeuralValueFunction, colloc: Optional[CollocationBatch],
                  data: Optional[TargetBatch], boundary: Optional[TargetBatch],
                  weights: LossWeights) -> Tuple[Dict[str, float], List[np.ndarray]]:
    """Loss terms and exact parameter gradients (order of ``net.parameters()``)."""
    n = net.n
    points: List[np.ndarray] = []
    value_adjoints: List[np.ndarray] = []
    directions: List[np.ndarray] = []
    terms = {"residual": 0.0, "data": 0.0, "boundary": 0.0}

    if colloc is not None and len(colloc) and weights.residual > 0.0:
        W, p = net.forward_with_gradient(colloc.x)
        F, F_W, F_p = residual_terms(W, p, colloc, net.transform)
        terms["residual"] = float(np.mean(F * F))
        coef = 2.0 * weights.residual * F / len(colloc)
        points.append(colloc.x)
        value_adjoints.append(coef * F_W)
        directions.append(coef[:, None] * F_p)

    for name, batch, weight in (("data", data, weights.data), ("boundary", boundary, weights.boundary)):
        if batch is None or not len(batch) or weight <= 0.0:
            continue
        error = net.forward(batch.x) - batch.target
        terms[name] = float(np.mean(error * error))
        points.append(batch.x)
        value_adjoints.append(2.0 * weight * error / len(batch))
        directions.append(np.zeros((len(batch), n)))

    terms["total"] = (weights.residual * terms["residual"] + weights.data * terms["data"]
                      + weights.boundary * terms["boundary"])
    if not points:
        return terms, [np.zeros_like(p) for p in net.parameters()]
    grads = net.parameter_gradient(np.concatenate(points), np.concatenate(value_adjoints),
                                   np.concatenate(directions))
    return terms, grads


# =============================================================================
# Training
# =============================================================================

class Adam:
    """Adam optimizer updating parameter arrays in place."""

    def __init__(self, parameters: List[np.ndarray], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.parameters = parameters
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in parameters]
        self.v = [np.zeros_like(p) for p in parameters]

    def step(self, grads: List[np.ndarray]) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for param, grad, m, v in zip(self.parameters, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


@dataclass
class TrainingResult:
    net: NeuralValueFunction
    history: List[Dict[str, float]]
    final_residual_mse: float
    elapsed: float

    def summary(self) -> Dict[str, Any]:
        return {
            "final_residual_mse": self.final_residual_mse,
            "steps": int(self.history[-1]["step"]) if self.history else 0,
            "elapsed_s": self.elapsed,
            "parameters": self.net.parameter_count,
        }

    def write_history(self, path: Union[str, Path]) -> Path:
        rows = np.array([[row[c] for c in HISTORY_COLUMNS] for row in self.history])
        return write_csv(path, HISTORY_COLUMNS, rows.reshape(-1, len(HISTORY_COLUMNS)))


def sample_boundary(box: Box, rng: np.random.Generator, count: int) -> np.ndarray:
    """Uniform points on the faces of a box."""
    points = box.sample(rng, count)
    axes = rng.integers(0, box.dim, size=count)
    upper = rng.random(count) < 0.5
    points[np.arange(count), axes] = np.where(upper, box.hi[axes], box.lo[axes])
    return points


def train(sys: ControlAffineSystem, cost: CostSpec, dataset: Optional[PMPDataset],
          config: TrainConfig, transform: Optional[TransformSpec] = None,
          history_every: int = 100, evaluation_points: int = 20_000) -> TrainingResult:
    """
    Train W_N with Adam on residual, data and boundary terms.

    Collocation points are drawn once and reshuffled every epoch; each step
    pairs a collocation batch with a random data batch and boundary batch
    of the same size.

    Raises:
        TrainingDivergedError: the loss became NaN or infinite
    """
    if transform is None:
        if dataset is not None and "transform" in dataset.config:
            transform = TransformSpec(**dataset.config["transform"])
        else:
            transform = TransformSpec()
    rng = np.random.default_rng(config.seed)
    domain = Box.from_bounds(config.domain) if config.domain is not None else sys.domain
    net = NeuralValueFunction.initialize([sys.n] + list(config.hidden) + [1], transform, rng)
    weights = LossWeights(residual=config.lambda_r, data=config.lambda_d, boundary=config.lambda_b)

    colloc = collocation_batch(sys, cost, domain.sample(rng, config.n_collocation))
    data = TargetBatch(dataset.X, dataset.W) if dataset is not None and len(dataset) else TargetBatch.empty(sys.n)
    if config.n_boundary:
        boundary = TargetBatch(sample_boundary(domain, rng, config.n_boundary),
                               np.full(config.n_boundary, config.boundary_value))
    else:
        boundary = TargetBatch.empty(sys.n)
    if weights.data > 0.0 and not len(data):
        logger.warning("No PMP data available; training on the PDE residual only")

    optimizer = Adam(net.parameters(), learning_rate=config.learning_rate)
    bs = config.batch_size
    steps_per_epoch = math.ceil(len(colloc) / bs)
    history: List[Dict[str, float]] = []
    running = {"residual": 0.0, "data": 0.0, "boundary": 0.0, "total": 0.0}
    window = 0
    started = time.perf_counter()
    step = 0
    logger.info("Training %s network: %d collocation points, %d data points, %d epochs",
                net.widths, len(colloc), len(data), config.epochs)

    for epoch in range(config.epochs):
        order = rng.permutation(len(colloc))
        for batch_index in range(steps_per_epoch):
            index = order[batch_index * bs:(batch_index + 1) * bs]
            data_batch = data.subset(rng.integers(0, len(data), size=bs)) if len(data) else None
            boundary_batch = boundary.subset(rng.integers(0, len(boundary), size=bs)) if len(boundary) else None
            terms, grads = loss_gradient(net, colloc.subset(index), data_batch, boundary_batch, weights)
            step += 1
            if not math.isfinite(terms["total"]):
                raise TrainingDivergedError(epoch, step, terms["total"])
            optimizer.step(grads)
            for key in running:
                running[key] += terms[key]
            window += 1
            if step % history_every == 0 or batch_index == steps_per_epoch - 1:
                history.append({"epoch": epoch, "step": step,
                                **{key: running[key] / window for key in running}})
                running = {key: 0.0 for key in running}
                window = 0
        logger.info("Epoch %d/%d: total loss %.3e (residual %.3e, data %.3e)",
                    epoch + 1, config.epochs, history[-1]["total"], history[-1]["residual"],
                    history[-1]["data"])

    points = colloc.subset(rng.choice(len(colloc), size=min(evaluation_points, len(colloc)), replace=False))
    W, p = net.forward_with_gradient(points.x)
    F, _, _ = residual_terms(W, p, points, transform)
    final_mse = float(np.mean(F * F))
    elapsed = time.perf_counter() - started
    logger.info("Training finished in %.1fs: residual MSE %.3e", elapsed, final_mse)
    return TrainingResult(net=net, history=history, final_residual_mse=final_mse, elapsed=elapsed)

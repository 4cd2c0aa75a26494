"""Dense toy models, cross-entropy loss, analytic gradients and the local optimizers.

This module provides:
- Forward and backward passes for logistic regression and small perceptrons
- Cross-entropy loss with an optional proximal term (the FedProx client hook)
- SGD, Adam and fixed-step L-BFGS steps as pure functions over value types
- Empirical smoothness estimation and a minibatch local training loop
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, NamedTuple, Sequence, TypeVar, Union

import numpy as np

from ledgerfl.core.errors import DomainError, NumericalError, SchemaError
from ledgerfl.core.models import Activation, Batch, ParamVector

logger = logging.getLogger(__name__)

Params = TypeVar("Params", ParamVector, np.ndarray)
GradFn = Callable[[Params], Union[ParamVector, np.ndarray]]


class ProxTerm(NamedTuple):
    """Proximal regularizer μ/2·‖ω − anchor‖² added to the local loss."""

    mu: float
    anchor: ParamVector


class OptimizerKind(Enum):
    """Local optimizer families."""

    SGD = "sgd"
    ADAM = "adam"
    LBFGS = "lbfgs"


@dataclass(frozen=True, eq=False)
class OptimizerState:
    """Optimizer hyper-parameters plus the state carried between steps."""

    kind: OptimizerKind
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.9
    eps: float = 1e-8
    window: int = 5
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0
    history: tuple[tuple[np.ndarray, np.ndarray], ...] = field(default_factory=tuple)
    prev_params: np.ndarray | None = None
    prev_grad: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise DomainError(f"learning rate must be positive, got {self.learning_rate}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise DomainError("adam betas must lie in (0, 1)")
        if self.window < 1:
            raise DomainError("lbfgs window must be at least 1")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_input(params: ParamVector, features: np.ndarray) -> None:
    if features.ndim != 2 or features.shape[1] != params.schema.input_dim:
        raise SchemaError(
            f"features of shape {features.shape} do not match input dim "
            f"{params.schema.input_dim}"
        )


def forward_cache(params: ParamVector, features: np.ndarray) -> list[np.ndarray]:
    """Return the layer inputs h_0..h_L followed by the logits."""
    relu = params.schema.activation is Activation.RELU
    activations = [features]
    layers = params.layers()
    h = features
    for i, (weights, bias) in enumerate(layers):
        z = h @ weights + bias
        if i < len(layers) - 1:
            h = np.maximum(z, 0.0) if relu else z
        else:
            h = z
        activations.append(h)
    return activations


def forward(params: ParamVector, features: np.ndarray) -> np.ndarray:
    """Logits D(x; ω) for a feature matrix."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    _check_input(params, features)
    return forward_cache(params, features)[-1]


def backward(
    params: ParamVector, activations: list[np.ndarray], dlogits: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Back-propagate ``dlogits`` through the cached forward pass.

    Returns:
        Flat parameter gradient (same layout as ``params.values``) and the input gradient.
    """
    relu = params.schema.activation is Activation.RELU
    layers = params.layers()
    grads: list[np.ndarray] = []
    delta = dlogits
    for i in range(len(layers) - 1, -1, -1):
        weights, _ = layers[i]
        h_in = activations[i]
        grads.append(delta.sum(axis=0))
        grads.append((h_in.T @ delta).ravel())
        upstream = delta @ weights.T
        if i > 0 and relu:
            upstream = upstream * (activations[i] > 0.0)
        delta = upstream
    return np.concatenate(grads[::-1]), delta


def soft_target_loss_and_grad(
    params: ParamVector, features: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy against probability targets, with its flat gradient."""
    activations = forward_cache(params, features)
    logits = activations[-1]
    n = logits.shape[0]
    loss = float(-(targets * log_softmax(logits)).sum() / n)
    grad, _ = backward(params, activations, (softmax(logits) - targets) / n)
    return loss, grad


def loss_and_grad(
    params: ParamVector, batch: Batch, prox: ProxTerm | None = None
) -> tuple[float, ParamVector]:
    """Mean cross-entropy F(ω; ζ) and its exact gradient.

    Args:
        params: Model parameters.
        batch: Non-empty batch whose feature width matches the schema.
        prox: Optional proximal term; μ=0 reproduces the plain loss.

    Returns:
        (loss, gradient) pair.

    Raises:
        DomainError: If the batch is empty.
        SchemaError: If shapes disagree with the schema.
    """
    if len(batch) == 0:
        raise DomainError("cannot evaluate the loss on an empty batch")
    _check_input(params, batch.features)
    num_classes = params.schema.num_classes
    if batch.labels.min() < 0 or batch.labels.max() >= num_classes:
        raise SchemaError(f"labels outside [0, {num_classes})")
    targets = np.eye(num_classes)[batch.labels]
    loss, grad = soft_target_loss_and_grad(params, batch.features, targets)
    if prox is not None:
        if prox.anchor.schema != params.schema:
            raise SchemaError("prox anchor schema does not match parameters")
        diff = params.values - prox.anchor.values
        loss += 0.5 * prox.mu * float(diff @ diff)
        grad = grad + prox.mu * diff
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NumericalError("loss or gradient is not finite")
    return loss, params.with_values(grad)


def predict(params: ParamVector, features: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class id."""
    return np.argmax(forward(params, features), axis=1)


def _values(x: ParamVector | np.ndarray) -> np.ndarray:
    return x.values if isinstance(x, ParamVector) else np.asarray(x, dtype=np.float64)


def _rewrap(template: Params, values: np.ndarray) -> Params:
    if isinstance(template, ParamVector):
        return template.with_values(values)
    return values


def make_optimizer(
    kind: OptimizerKind | str,
    learning_rate: float = 0.01,
    betas: tuple[float, float] = (0.9, 0.9),
    window: int = 5,
) -> OptimizerState:
    """Fresh optimizer state."""
    return OptimizerState(
        kind=OptimizerKind(kind),
        learning_rate=learning_rate,
        beta1=betas[0],
        beta2=betas[1],
        window=window,
    )


def _two_loop(grad: np.ndarray, history: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    q = grad.copy()
    coefficients = []
    for s, y in reversed(history):
        rho = 1.0 / float(y @ s)
        alpha = rho * float(s @ q)
        q -= alpha * y
        coefficients.append((rho, alpha))
    if history:
        s_last, y_last = history[-1]
        q *= float(s_last @ y_last) / float(y_last @ y_last)
    for (s, y), (rho, alpha) in zip(history, reversed(coefficients)):
        beta = rho * float(y @ q)
        q += s * (alpha - beta)
    return q


def optimizer_step(
    state: OptimizerState, params: Params, grad_fn: GradFn
) -> tuple[Params, OptimizerState]:
    """Apply one optimizer step.

    Args:
        state: Current optimizer state (never mutated).
        params: Current parameters, a ParamVector or a plain array.
        grad_fn: Deterministic gradient provider evaluated at ``params``.

    Returns:
        Updated parameters (same type as ``params``) and the new state.

    Raises:
        NumericalError: If the gradient is not finite.
    """
    x = _values(params)
    g = _values(grad_fn(params))
    if not np.all(np.isfinite(g)):
        raise NumericalError("optimizer received a non-finite gradient")
    lr = state.learning_rate

    if state.kind is OptimizerKind.SGD:
        return _rewrap(params, x - lr * g), state

    if state.kind is OptimizerKind.ADAM:
        t = state.t + 1
        m = state.m if state.m is not None else np.zeros_like(x)
        v = state.v if state.v is not None else np.zeros_like(x)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        step = lr * m_hat / (np.sqrt(v_hat) + state.eps)
        return _rewrap(params, x - step), replace(state, m=m, v=v, t=t)

    history = list(state.history)
    if state.prev_params is not None and state.prev_grad is not None:
        s = x - state.prev_params
        y = g - state.prev_grad
        if float(s @ y) > 1e-12:
            history.append((s, y))
            history = history[-state.window :]
        else:
            logger.debug("lbfgs pair skipped: curvature condition failed")
    direction = _two_loop(g, history)
    new_x = x - lr * direction
    if not np.all(np.isfinite(new_x)):
        raise NumericalError("lbfgs step produced non-finite parameters")
    new_state = replace(
        state, history=tuple(history), prev_params=x.copy(), prev_grad=g.copy(), t=state.t + 1
    )
    return _rewrap(params, new_x), new_state


def estimate_beta(
    params_samples: Sequence[ParamVector | np.ndarray],
    batch: Batch | None = None,
    grad_fn: GradFn | None = None,
) -> float:
    """Empirical smoothness constant β̂ = max ‖∇f(w1) − ∇f(w2)‖ / ‖w1 − w2‖.

    Gradients come from ``grad_fn`` when given, otherwise from the cross-entropy on ``batch``.

    Raises:
        DomainError: If fewer than two distinct samples are supplied.
    """
    if grad_fn is None:
        if batch is None:
            raise DomainError("estimate_beta needs a batch or a gradient function")

        def grad_fn(p: ParamVector) -> ParamVector:
            return loss_and_grad(p, batch)[1]

    points = [_values(p) for p in params_samples]
    grads = [_values(grad_fn(p)) for p in params_samples]
    beta = 0.0
    distinct = False
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            dw = float(np.linalg.norm(points[i] - points[j]))
            if dw == 0.0:
                continue
            distinct = True
            beta = max(beta, float(np.linalg.norm(grads[i] - grads[j])) / dw)
    if not distinct:
        raise DomainError("estimate_beta needs at least two distinct parameter samples")
    return beta


def train_epochs(
    params: ParamVector,
    batch: Batch,
    epochs: int,
    batch_size: int,
    state: OptimizerState,
    seed: int,
    prox: ProxTerm | None = None,
) -> tuple[ParamVector, OptimizerState, float]:
    """Minibatch local training over a shard.

    Returns:
        Trained parameters, the final optimizer state and the last minibatch loss.
    """
    if len(batch) == 0:
        raise DomainError("cannot train on an empty shard")
    rng = np.random.default_rng(seed)
    n = len(batch)
    size = max(1, min(batch_size, n))
    last_loss = float("nan")
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, size):
            idx = order[start : start + size]
            mini = Batch(batch.features[idx], batch.labels[idx])
            holder: list[float] = []

            def grad_fn(p: ParamVector, mini: Batch = mini, holder: list[float] = holder):
                loss, grad = loss_and_grad(p, mini, prox)
                holder.append(loss)
                return grad

            params, state = optimizer_step(state, params, grad_fn)
            last_loss = holder[-1]
    return params, state, last_loss

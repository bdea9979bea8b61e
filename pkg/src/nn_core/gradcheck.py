from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from nn_core.tensor import Parameter, Tensor, lift

ABSOLUTE_FLOOR = 1e-8
# Multiple of machine epsilon allowed for cancellation in each loss difference.
ROUNDING_SLACK = 16.0


def _scalar_loss(output: Tensor, projection: np.ndarray | None) -> Tensor:
    if output.size == 1:
        return output.sum()
    # A fixed random projection keeps the check from collapsing to zero on
    # outputs whose plain sum is constant (e.g. train-mode batch-norm).
    return (output * projection).sum()


def _relative_error(analytic: float, numeric: float, resolution: float) -> float:
    scale = max(abs(analytic), abs(numeric))
    error = max(abs(analytic - numeric) - resolution, 0.0)
    if scale >= ABSOLUTE_FLOOR:
        error /= scale
    return error


def check_gradients(
    model: Callable[[Tensor], Tensor],
    inputs,
    delta: float = 1e-5,
    parameters: Iterable[Parameter] | None = None,
    seed: int = 0,
) -> float:
    """Compare analytic gradients with central differences.

    Returns the maximum relative error over every parameter entry; where both
    gradients are below 1e-8 in magnitude the absolute error is used instead.
    Differences smaller than the rounding resolution of the loss at step
    ``delta`` count as zero. When a step crosses a ReLU kink the central
    difference mixes two slopes, so the one-sided difference that stays on
    the analytic side is accepted too, as is a Richardson estimate from steps
    ``delta`` and ``delta / 2`` for strongly curved coordinates.
    ``model`` must be deterministic (dropout off or in eval mode).
    """
    if delta <= 0:
        raise ValueError(f"Finite-difference step must be positive, got {delta}")
    if parameters is None:
        parameters = model.parameters() if hasattr(model, "parameters") else []
    parameters = list(parameters)
    if not parameters:
        return 0.0

    if isinstance(inputs, (np.ndarray, float, int)):
        inputs = lift(inputs)
    first_output = model(inputs)
    projection = None
    if first_output.size != 1:
        projection = np.random.default_rng(seed).normal(size=first_output.shape)

    def loss_value() -> float:
        return _scalar_loss(model(inputs), projection).item()

    for p in parameters:
        p.zero_grad()
    centre_loss = _scalar_loss(model(inputs), projection)
    centre_loss.backward()
    centre = centre_loss.item()
    analytic = [p.grad.copy() for p in parameters]

    worst = 0.0
    for p, grad in zip(parameters, analytic):
        flat = p.data.reshape(-1)
        grad_flat = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + delta
            upper = loss_value()
            flat[i] = original - delta
            lower = loss_value()
            flat[i] = original + delta / 2.0
            half_upper = loss_value()
            flat[i] = original - delta / 2.0
            half_lower = loss_value()
            flat[i] = original
            central = (upper - lower) / (2.0 * delta)
            half_central = (half_upper - half_lower) / delta
            magnitude = max(abs(upper), abs(lower), abs(centre), 1.0)
            resolution = ROUNDING_SLACK * np.finfo(np.float64).eps * magnitude / delta
            a = float(grad_flat[i])
            error = min(
                _relative_error(a, central, resolution),
                _relative_error(a, (4.0 * half_central - central) / 3.0, 3.0 * resolution),
                _relative_error(a, (upper - centre) / delta, 2.0 * resolution),
                _relative_error(a, (centre - lower) / delta, 2.0 * resolution),
            )
            worst = max(worst, error)

    for p in parameters:
        p.zero_grad()
    return worst

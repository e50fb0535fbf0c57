from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from rftpy.exceptions import InputError, TrainingDivergenceError
from rftpy.policy import Gradient, PolicyParams

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass(frozen=True, eq=False)
class AdamState:
    """Adam moment estimates.

    Args:
        step: number of updates taken so far.
        m: first moment per array name.
        v: second moment per array name.
    """

    step: int
    m: Mapping[str, np.ndarray]
    v: Mapping[str, np.ndarray]


def init_adam_state(values: PolicyParams | Mapping[str, np.ndarray]) -> AdamState:
    arrays = values.arrays() if isinstance(values, PolicyParams) else values
    return AdamState(
        step=0,
        m={name: np.zeros_like(arr, dtype=np.float64) for name, arr in arrays.items()},
        v={name: np.zeros_like(arr, dtype=np.float64) for name, arr in arrays.items()},
    )


def adam_step(
    values: Mapping[str, np.ndarray],
    grad: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Takes one Adam step descending `grad` and returns new arrays and state.

    Raises:
        InputError: if names or shapes of `values` and `grad` differ.
        TrainingDivergenceError: if the gradient or the result is not finite.
    """

    if set(values) != set(grad):
        raise InputError(f"gradient keys {sorted(grad)} differ from {sorted(values)}")
    for name, g in grad.items():
        if g.shape != values[name].shape:
            raise InputError(f"gradient {name} has shape {g.shape}, expected {values[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"gradient {name}")

    step = state.step + 1
    new_values, new_m, new_v = {}, {}, {}
    for name, value in values.items():
        g = grad[name]
        m = BETA1 * state.m[name] + (1 - BETA1) * g
        v = BETA2 * state.v[name] + (1 - BETA2) * g * g
        m_hat = m / (1 - BETA1**step)
        v_hat = v / (1 - BETA2**step)
        updated = value - lr * m_hat / (np.sqrt(v_hat) + EPS)
        if not np.all(np.isfinite(updated)):
            raise TrainingDivergenceError(f"parameter {name}")
        new_values[name], new_m[name], new_v[name] = updated, m, v
    return new_values, AdamState(step=step, m=new_m, v=new_v)


def apply_update(
    params: PolicyParams, grad: Gradient, opt_state: AdamState, lr: float
) -> tuple[PolicyParams, AdamState]:
    """Applies one Adam step to the policy.

    `grad` is the gradient of the loss; the step descends it.

    Args:
        params (PolicyParams)
        grad (Gradient): loss gradient keyed by parameter name.
        opt_state (AdamState)
        lr (float): learning rate.

    Returns:
        Updated parameters and optimizer state. Inputs are not modified.

    Raises:
        TrainingDivergenceError: if the gradient contains NaN or Inf.
    """

    values, state = adam_step(params.arrays(), grad, opt_state, lr)
    return params.with_arrays(values), state


def add_gradients(a: Gradient, b: Gradient) -> Gradient:
    return {name: a[name] + b[name] for name in a}


def scale_gradient(g: Gradient, factor: float) -> Gradient:
    return {name: arr * factor for name, arr in g.items()}


def gradient_norm(g: Gradient) -> float:
    return float(np.sqrt(sum(float(np.sum(arr * arr)) for arr in g.values())))

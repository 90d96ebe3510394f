"""AdamW over the flat parameter vector."""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError
from .numerics import FLOAT


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 6e-5
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    epsilon: float = 1e-8


def init_state(num_params: int, **hyper) -> OptimizerState:
    """Fresh moments for ``num_params`` parameters; ``hyper`` overrides the defaults."""
    return OptimizerState(
        m=np.zeros(num_params, dtype=FLOAT), v=np.zeros(num_params, dtype=FLOAT), **hyper
    )


def apply_step(
    state: OptimizerState, params: np.ndarray, grad: np.ndarray
) -> tuple[OptimizerState, np.ndarray]:
    """One bias-corrected Adam step with decoupled weight decay."""
    if params.shape != state.m.shape or grad.shape != state.m.shape:
        raise ShapeError(
            f"optimizer holds {state.m.shape}, got params {params.shape} and grad {grad.shape}"
        )
    step = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    update = m_hat / (np.sqrt(v_hat) + state.epsilon) + state.weight_decay * params
    return replace(state, m=m, v=v, step_count=step), params - state.lr * update

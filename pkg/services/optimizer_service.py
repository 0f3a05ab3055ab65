"""
Optimizer Service - global-norm gradient clipping and bias-corrected Adam.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np

from core.exceptions import CheckpointError
from core.tensor import Tensor
from models.config import OptimizerConfig
from models.parameters import ModelParameters

logger = logging.getLogger(__name__)


def global_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def clip_gradients(params: Iterable[Tensor], max_norm: float = 2.0) -> float:
    """
    Rescale all grads so their joint L2 norm is at most `max_norm`.

    Returns:
        The factor applied (1.0 when the norm was already within bounds)
    """
    params = list(params)
    norm = global_grad_norm(params)
    if norm <= max_norm:
        return 1.0
    factor = max_norm / norm
    for p in params:
        if p.grad is not None:
            p.grad = p.grad * factor
    logger.debug(f"Clipped gradient norm {norm:.4f} -> {max_norm}")
    return factor


@dataclass
class OptimizerState:
    """Adam moments per parameter name plus the step counter."""
    config: OptimizerConfig = field(default_factory=OptimizerConfig)
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_parameters(cls, params: ModelParameters, config: Optional[OptimizerConfig] = None) -> "OptimizerState":
        state = cls(config=config or OptimizerConfig())
        for name, tensor in params.items():
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        return state

    def check_against(self, params: ModelParameters) -> None:
        for name, tensor in params.items():
            if name not in self.m or self.m[name].shape != tensor.shape or self.v[name].shape != tensor.shape:
                raise CheckpointError(f"optimizer moments for {name} do not match parameter shape {tensor.shape}")


def adam_step(state: OptimizerState, params: ModelParameters) -> None:
    """
    One Adam update of every parameter in place.

    A parameter without a gradient is treated as having gradient zero.
    """
    cfg = state.config
    state.step += 1
    t = state.step
    correction1 = 1.0 - cfg.beta1 ** t
    correction2 = 1.0 - cfg.beta2 ** t
    for name, tensor in params.items():
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        m_prev = state.m.get(name, np.zeros_like(tensor.data))
        v_prev = state.v.get(name, np.zeros_like(tensor.data))
        m = cfg.beta1 * m_prev + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * v_prev + (1.0 - cfg.beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        m_hat = m / correction1
        v_hat = v / correction2
        tensor.data = tensor.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)

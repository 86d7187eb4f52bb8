import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from errors import InvalidArgumentError, TrainingDivergedError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Adam 优化器状态，学习率每 decay_every 次更新乘以 decay_factor"""
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay_every: int = 50_000
    decay_factor: float = 0.5
    grad_clip: Optional[float] = None  # 全局梯度范数上限，None 为不裁剪
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], **kwargs) -> "AdamState":
        state = cls(**kwargs)
        state.m = {name: np.zeros_like(value) for name, value in params.items()}
        state.v = {name: np.zeros_like(value) for name, value in params.items()}
        return state

    @property
    def current_learning_rate(self) -> float:
        if self.decay_every <= 0:
            return self.learning_rate
        return self.learning_rate * self.decay_factor ** (self.step // self.decay_every)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> dict[str, np.ndarray]:
    """带偏差修正的 Adam 更新（原地修改参数并返回）"""
    for name, grad in grads.items():
        if name not in params or params[name].shape != grad.shape:
            raise InvalidArgumentError(f"梯度 {name} 与参数形状不一致")
        if not np.all(np.isfinite(grad)):
            logger.error(f"梯度 {name} 出现非有限值，第 {state.step} 次更新")
            raise TrainingDivergedError(f"梯度 {name} 出现非有限值")

    if state.grad_clip is not None:
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        if norm > state.grad_clip:
            scale = state.grad_clip / norm
            grads = {name: g * scale for name, g in grads.items()}

    lr = state.current_learning_rate
    state.step += 1
    t = state.step
    for name, grad in grads.items():
        m = state.m.setdefault(name, np.zeros_like(grad))
        v = state.v.setdefault(name, np.zeros_like(grad))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params

"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: Tensor, **hyper) -> "AdamState":
        return cls(np.zeros_like(param.data), np.zeros_like(param.data), **hyper)


def adam_step(param: Tensor, state: AdamState) -> None:
    """Apply one in-place Adam update to ``param`` from ``param.grad``."""
    if param.grad is None:
        raise ContractError(f"adam_step on {param.name or 'parameter'} without a gradient")
    if state.m.shape != param.shape or state.v.shape != param.shape:
        raise ShapeError(f"Adam moments {state.m.shape} do not match parameter {param.shape}")
    g = param.grad
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    param.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class Adam:
    """Adam over a fixed, ordered list of trainable parameters."""

    params: list[Tensor]
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: list[AdamState] = field(init=False)

    def __post_init__(self):
        hyper = dict(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)
        self.states = [AdamState.for_param(p, **hyper) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, state in zip(self.params, self.states):
            if p.grad is None:
                # parameter did not take part in this forward pass
                p.grad = np.zeros_like(p.data)
            adam_step(p, state)

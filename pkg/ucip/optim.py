"""
Adam optimizer over named parameters
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from ucip.errors import OptimizerError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    @classmethod
    def for_parameters(cls, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        """Fresh state with zero moments for exactly the given parameters"""
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            first_moment={name: np.zeros_like(p.data) for name, p in params.items()},
            second_moment={name: np.zeros_like(p.data) for name, p in params.items()},
        )

    def names(self):
        return list(self.first_moment)

    def copy(self):
        return AdamState(
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps, step=self.step,
            first_moment={k: v.copy() for k, v in self.first_moment.items()},
            second_moment={k: v.copy() for k, v in self.second_moment.items()},
        )


def adam_step(params, state):
    """Bias-corrected Adam update of every registered parameter, then zero the grads"""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise OptimizerError(f"missing grad for registered parameter(s): {', '.join(missing)}")
    unknown = [name for name in params if name not in state.first_moment]
    if unknown:
        raise OptimizerError(f"parameter(s) not registered with the optimizer: {', '.join(unknown)}")

    state.step += 1
    b1 = 1.0 - state.beta1 ** state.step
    b2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        m = state.first_moment[name]
        v = state.second_moment[name]
        if m.shape != p.data.shape:
            raise OptimizerError(f"{name}: moment shape {m.shape} does not match parameter {p.data.shape}")
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / b1) / (np.sqrt(v / b2) + state.eps)
        p.grad = np.zeros_like(p.data)

"""Adam with named per-Gaussian parameter groups.

Moment rows follow the cloud through pruning (compaction) and densification
(zero-initialized rows), mirroring the usual splatting training setup.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError


@dataclass
class ParamGroup:
    lr: float
    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    groups: dict = field(default_factory=dict)

    def add_group(self, name: str, shape: tuple, lr: float) -> None:
        self.groups[name] = ParamGroup(lr=lr, m=np.zeros(shape), v=np.zeros(shape))

    def set_lr(self, name: str, lr: float) -> None:
        self.groups[name].lr = lr

    def update(self, name: str, param: np.ndarray, grad: np.ndarray) -> None:
        """One Adam step for a single group, in place on `param`."""
        g = self.groups[name]
        if g.m.shape != param.shape:
            raise ContractViolationError(
                f"optimizer rows for {name!r} have shape {g.m.shape}, parameters {param.shape}"
            )
        g.step += 1
        g.m = self.beta1 * g.m + (1.0 - self.beta1) * grad
        g.v = self.beta2 * g.v + (1.0 - self.beta2) * grad * grad
        m_hat = g.m / (1.0 - self.beta1**g.step)
        v_hat = g.v / (1.0 - self.beta2**g.step)
        param -= g.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def compact(self, keep_indices: np.ndarray) -> None:
        """Keep only the given rows (axis 0) of every group's moments."""
        for g in self.groups.values():
            g.m = g.m[keep_indices].copy()
            g.v = g.v[keep_indices].copy()

    def extend(self, n_new: int) -> None:
        """Append zero-initialized moment rows for newly created Gaussians."""
        for g in self.groups.values():
            pad = (n_new,) + g.m.shape[1:]
            g.m = np.concatenate([g.m, np.zeros(pad)], axis=0)
            g.v = np.concatenate([g.v, np.zeros(pad)], axis=0)

    def rows(self) -> int:
        return next(iter(self.groups.values())).m.shape[0] if self.groups else 0


def exponential_lr(step: int, lr_init: float, lr_final: float, max_steps: int) -> float:
    """Log-linear interpolation from lr_init to lr_final over max_steps."""
    if step >= max_steps:
        return lr_final
    t = max(step, 0) / max_steps
    return float(np.exp((1.0 - t) * np.log(lr_init) + t * np.log(lr_final)))

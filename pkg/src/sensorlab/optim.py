"""AdamW with decoupled weight decay, plus the warmup-cosine LR schedule.

The optimizer works on named dicts of flat numpy arrays and updates parameters
in place; graph bookkeeping (building losses, accumulating `.grad`) stays in
the training loop. This keeps optimizer state trivially checkpointable.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels


class DivergenceError(RuntimeError):
    """Training produced a non-finite gradient."""


class AdamW:
    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-4):
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {betas}")
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float | None = None) -> None:
        """One update over every named parameter, in place.

        `grads` must contain an entry per parameter; missing gradients are an
        error (a parameter that never receives gradient should not be in the
        dict). Non-finite gradients raise DivergenceError.
        """
        self.t += 1
        lr_now = self.lr if lr is None else float(lr)
        for name in params:
            if name not in grads:
                raise KeyError(f"no gradient supplied for parameter '{name}'")
            p = params[name]
            g = np.ascontiguousarray(grads[name], dtype=np.float64)
            if g.shape != p.shape:
                raise ValueError(
                    f"gradient shape {g.shape} != parameter shape {p.shape} "
                    f"for '{name}'"
                )
            if not np.all(np.isfinite(g)):
                raise DivergenceError(
                    f"non-finite gradient for '{name}' at step {self.t}"
                )
            if name not in self._m:
                self._m[name] = np.zeros(p.size)
                self._v[name] = np.zeros(p.size)
            kernels.adamw_update(
                p.reshape(-1), g.reshape(-1), self._m[name], self._v[name],
                self.t, lr_now, self.beta1, self.beta2, self.eps,
                self.weight_decay,
            )

    def state(self) -> dict:
        return {"t": self.t, "m": dict(self._m), "v": dict(self._v)}


def cosine_lr(step: int, total_steps: int, base_lr: float,
              warmup_frac: float = 0.05) -> float:
    """Linear warmup to `base_lr` over `warmup_frac` of training, then cosine
    annealing to zero at `total_steps`."""
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if not 0.0 <= warmup_frac < 1.0:
        raise ValueError(f"warmup_frac must lie in [0, 1), got {warmup_frac}")
    warm = warmup_frac * total_steps
    if warm > 0 and step < warm:
        return base_lr * step / warm
    span = total_steps - warm
    progress = (step - warm) / span
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))

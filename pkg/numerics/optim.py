import logging

import numpy as np

from errors import ContractViolation, TrainingDivergenceError

logger = logging.getLogger(__name__)


class LinearWarmupSchedule:
    """
    Linear ramp from 0 to base_lr over the warmup steps, then linear decay to 0 at the last step.
    """

    def __init__(self, base_lr, total_steps, warmup_fraction):
        if total_steps < 1:
            raise ContractViolation("schedule needs at least one step", total_steps=total_steps)
        if not 0.0 <= warmup_fraction < 1.0:
            raise ContractViolation("warmup fraction must lie in [0, 1)", warmup_fraction=warmup_fraction)
        self.base_lr = base_lr
        self.total_steps = total_steps
        self.warmup_steps = int(round(total_steps * warmup_fraction))

    def __call__(self, step):
        if step < self.warmup_steps:
            return self.base_lr * (step + 1) / self.warmup_steps
        decay_span = self.total_steps - 1 - self.warmup_steps
        if decay_span <= 0:
            return self.base_lr
        return self.base_lr * max(0.0, (self.total_steps - 1 - step) / decay_span)


class Adam:
    """
    Adaptive-moment gradient descent over a name → array parameter dict.
    Parameters are updated in place; `params` is the live dict.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = {name: np.array(value, copy=True) for name, value in params.items()}
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {name: np.zeros_like(value) for name, value in self.params.items()}
        self.v = {name: np.zeros_like(value) for name, value in self.params.items()}
        self.t = 0

    def step(self, grads, lr):
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name in sorted(grads):
            if name not in self.params:
                raise ContractViolation(f"gradient for unknown parameter '{name}'", parameter=name)
            grad = grads[name]
            if not np.all(np.isfinite(grad)):
                raise TrainingDivergenceError(f"non-finite gradient for '{name}'", parameter=name, step=self.t)
            param = self.params[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            update = lr * (self.m[name] / correction1) / (np.sqrt(self.v[name] / correction2) + self.eps)
            param -= update.astype(param.dtype, copy=False)
        return self.params

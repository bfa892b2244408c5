"""AdamW with bias correction and a linear warmup/decay schedule.

Decoupled weight decay applies to matrices only; vectors (biases, norm gains,
the tied head bias) are exempt. Updates iterate parameter names in sorted
order so accumulation order is fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OptimizerDivergenceError, ValidationError


def lr_schedule(step: int, lr_peak: float, warmup: int, total: int) -> float:
    """Linear ramp 0 -> lr_peak over `warmup` steps, then linear decay to 0 at
    `total`."""
    if step < 0 or step > total:
        raise ValidationError(f"step {step} outside [0, {total}]")
    if warmup > total:
        raise ValidationError("warmup must not exceed total")
    if step <= warmup:
        if warmup == 0:
            return lr_peak
        return lr_peak * step / warmup
    return lr_peak * (total - step) / (total - warmup)


@dataclass
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamWState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


def step_optimizer(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    lr: float,
    cfg: AdamWConfig = AdamWConfig(),
    frozen: frozenset[str] = frozenset(),
) -> dict[str, np.ndarray]:
    """One AdamW step in place; `frozen` names are left bit-identical (their
    moments do not advance either)."""
    state.t += 1
    t = state.t
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name in sorted(params):
        if name in frozen:
            continue
        g = grads[name]
        if not np.isfinite(g).all():
            raise OptimizerDivergenceError(
                f"non-finite gradient in {name!r} at optimizer step {t}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        if cfg.weight_decay and params[name].ndim >= 2:
            update = update + cfg.weight_decay * params[name]
        params[name] -= (lr * update).astype(params[name].dtype)
    return params

"""Warmup-then-linear-decay schedule and Adam with decoupled weight decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from ..errors import ConfigError, NumericError


def warmup_steps(total: int, warmup_frac: float) -> int:
    return int(math.floor(warmup_frac * total + 0.5))


def lr_at(step: int, total: int, warmup_frac: float, peak: float, decay: str = "linear") -> float:
    """Linear 0 -> peak over the warmup steps, then linear peak -> 0 at ``total``.

    ``decay="constant"`` holds the peak after warmup instead.
    """
    if not 0.0 <= warmup_frac < 1.0:
        raise ConfigError(f"warmup_frac must lie in [0, 1), got {warmup_frac}")
    if not 0 <= step <= total:
        raise ConfigError(f"step {step} outside [0, {total}]")
    w = warmup_steps(total, warmup_frac)
    if step < w:
        return peak * step / w
    if decay == "constant":
        return peak
    if decay != "linear":
        raise ConfigError(f"unknown decay {decay!r}")
    return peak * (total - step) / (total - w)


@dataclass
class OptimizerState:
    peak_lr: float = 1e-4
    total_steps: int = 1
    warmup_frac: float = 0.048
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-6
    weight_decay: float = 1e-2
    decay: str = "linear"
    step: int = 0
    exp_avg: dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[str, torch.Tensor] = field(default_factory=dict)

    def current_lr(self, step: int | None = None) -> float:
        t = self.step if step is None else step
        return lr_at(min(t, self.total_steps), self.total_steps, self.warmup_frac, self.peak_lr, self.decay)


def decays(name: str, p: torch.Tensor) -> bool:
    """Weight decay applies to matrices and embedding tables, not to biases, norms or vectors."""
    return p.ndim >= 2 and not name.endswith("_bias")


@torch.no_grad()
def adam_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: OptimizerState,
    lr: float | None = None,
) -> OptimizerState:
    """One in-place update of ``params``. The step counter advances first.

    Decoupled decay ``p -= lr * wd * p`` is applied before the
    bias-corrected Adam step. Missing gradients count as zero.
    """
    for name, g in grads.items():
        if g is not None and not torch.isfinite(g).all():
            bad = int((~torch.isfinite(g)).sum())
            raise NumericError(f"non-finite gradient in {name} ({bad} entries)")
    state.step += 1
    t = state.step
    lr = state.current_lr(t) if lr is None else lr
    b1, b2 = state.betas
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = torch.zeros_like(p)
        m = state.exp_avg.setdefault(name, torch.zeros_like(p))
        v = state.exp_avg_sq.setdefault(name, torch.zeros_like(p))
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        if state.weight_decay and decays(name, p):
            p.mul_(1 - lr * state.weight_decay)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + state.eps))
    return state

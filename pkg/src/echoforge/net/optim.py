"""Adam with bias correction, stepping a list of tensors in place."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[torch.Tensor] = field(default_factory=list)
    v: list[torch.Tensor] = field(default_factory=list)


@torch.no_grad()
def adam_step(params, grads, state: AdamState, lr: float) -> None:
    params, grads = list(params), list(grads)
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + state.eps))

"""Bias-corrected ADAM over :class:`GruParams` blocks."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import DivergenceError, InvalidInputError
from ..rnn import BLOCKS, GruParams


@dataclass(frozen=True)
class AdamState:
    m: GruParams
    v: GruParams
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: GruParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: GruParams, grads: GruParams):
    """One ADAM update. Returns ``(new_state, new_params)``; inputs are not modified."""
    if not grads.is_finite():
        raise DivergenceError("non-finite gradient")
    t = state.step + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_m, new_v, new_p = {}, {}, {}
    for name in BLOCKS:
        g = getattr(grads, name)
        p = getattr(params, name)
        if g.shape != p.shape:
            raise InvalidInputError(f"gradient block {name} has shape {g.shape}, expected {p.shape}")
        m = state.beta1 * getattr(state.m, name) + (1.0 - state.beta1) * g
        v = state.beta2 * getattr(state.v, name) + (1.0 - state.beta2) * (g * g)
        new_p[name] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_m[name] = m
        new_v[name] = v
    new_state = replace(state, m=GruParams(**new_m), v=GruParams(**new_v), step=t)
    return new_state, GruParams(**new_p)

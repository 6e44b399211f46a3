"""ADAM with bias correction, updating parameter arrays in place."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import InvalidStateError


@dataclass
class AdamState:
    """First/second moment buffers keyed by parameter name plus the step count."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
    lr: float,
) -> AdamState:
    """Apply one ADAM update to every array in ``params``.

    Moment buffers are created lazily with zeros. The arithmetic is carried out
    in the parameter dtype so that repeated runs are bit-identical.
    """
    for name in params:
        if grads.get(name) is None:
            raise InvalidStateError(f"no gradient for parameter {name!r}")

    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        if g.shape != p.shape:
            raise InvalidStateError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        if m.shape != p.shape:
            raise InvalidStateError(f"moment buffer shape mismatch for {name!r}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / p.dtype.type(1 - b1 ** t)
        v_hat = v / p.dtype.type(1 - b2 ** t)
        p -= p.dtype.type(lr) * m_hat / (np.sqrt(v_hat) + p.dtype.type(state.eps))
    return state

"""Central finite-difference check of tape gradients, evaluated in float64."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .autodiff import Tape, Tensor, backward, precision
from .errors import InvalidArgumentError

Objective = Callable[[dict[str, Tensor]], Tensor]


def finite_diff_check(
    objective: Objective,
    inputs: Mapping[str, np.ndarray],
    h: float = 1e-6,
    samples: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Largest ``|g_ad - g_fd| / max(|g_fd|, floor)`` over checked coordinates.

    ``objective`` receives a dict of tensors built from ``inputs`` and must
    return a scalar. Both the tape gradient and the central differences are
    computed in float64. ``samples`` limits the number of coordinates checked
    per input (drawn without replacement with ``seed``); ``None`` checks all.
    """
    errors = finite_diff_errors(objective, inputs, h=h, samples=samples, seed=seed, floor=floor)
    return max(errors.values()) if errors else 0.0


def finite_diff_errors(
    objective: Objective,
    inputs: Mapping[str, np.ndarray],
    h: float = 1e-6,
    samples: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> dict[str, float]:
    """Per-input maximum relative error; see :func:`finite_diff_check`."""
    rng = np.random.default_rng(seed)
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}

    with precision(np.float64):
        leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in base.items()}
        with Tape() as tape:
            out = objective(leaves)
        if out.size != 1:
            raise InvalidArgumentError(f"objective must be scalar, got shape {out.shape}")
        backward(out, tape)

        def evaluate(name: str, flat_idx: int, delta: float) -> float:
            arrays = dict(base)
            shifted = base[name].copy()
            shifted.reshape(-1)[flat_idx] += delta
            arrays[name] = shifted
            return objective({k: Tensor(v) for k, v in arrays.items()}).item()

        errors = {}
        for name, arr in base.items():
            grad = leaves[name].grad
            g_ad = np.zeros(arr.size) if grad is None else grad.reshape(-1)
            n = arr.size
            idx = np.arange(n) if samples is None or samples >= n else rng.choice(n, samples, replace=False)
            worst = 0.0
            for i in idx:
                g_fd = (evaluate(name, i, h) - evaluate(name, i, -h)) / (2 * h)
                worst = max(worst, abs(g_ad[i] - g_fd) / max(abs(g_fd), floor))
            errors[name] = worst
    return errors


def _weighted(t: Tensor, coeffs: np.ndarray) -> Tensor:
    # A random linear read-out avoids objectives with identically zero gradient
    # (e.g. the row sums of a softmax).
    return (t * coeffs).sum()


def op_gradient_errors(seed: int = 0, h: float = 1e-6) -> dict[str, float]:
    """Max relative error of every differentiable op at a random interior point."""
    from . import autodiff as ad
    from . import losses

    rng = np.random.default_rng(seed)

    def coeffs(shape):
        return rng.uniform(-1, 1, shape)

    cases: dict[str, tuple[Objective, dict[str, np.ndarray]]] = {}
    r_conv = coeffs((4, 8, 8))
    cases["conv2d"] = (lambda t: _weighted(ad.relu(ad.conv2d(t["x"], t["k"], t["b"])), r_conv),
                       {"x": rng.normal(size=(2, 8, 8)), "k": rng.normal(size=(4, 2, 3, 3)), "b": rng.normal(size=4)})
    r_conv2 = coeffs((3, 4, 4))
    cases["conv2d_stride2"] = (lambda t: _weighted(ad.conv2d(t["x"], t["k"], t["b"], stride=2), r_conv2),
                               {"x": rng.normal(size=(1, 8, 8)), "k": rng.normal(size=(3, 1, 3, 3)), "b": rng.normal(size=3)})
    r_pow = coeffs((5, 6))
    cases["elementwise_pow"] = (lambda t: _weighted(ad.elementwise_pow(t["b"], t["e"]), r_pow),
                                {"b": rng.uniform(0.05, 1.0, (5, 6)), "e": rng.uniform(0.1, 1.0, (5, 6))})
    r_sm = coeffs((4, 8))
    cases["softmax_rows"] = (lambda t: _weighted(ad.softmax_rows(t["x"]), r_sm), {"x": rng.normal(size=(4, 8))})
    r_ln = coeffs((4, 8))
    cases["layer_norm"] = (lambda t: _weighted(ad.layer_norm(t["x"], t["g"], t["s"]), r_ln),
                           {"x": rng.normal(size=(4, 8)), "g": rng.normal(size=8), "s": rng.normal(size=8)})
    r_mm = coeffs((3, 5))
    cases["matmul"] = (lambda t: _weighted(t["a"] @ t["b"], r_mm), {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 5))})
    r_el = coeffs((6, 6))
    cases["sigmoid"] = (lambda t: _weighted(ad.sigmoid(t["x"]), r_el), {"x": rng.normal(size=(6, 6)) * 3})
    cases["abs"] = (lambda t: _weighted(ad.tabs(t["x"]), r_el), {"x": rng.choice([-1, 1], (6, 6)) * rng.uniform(0.1, 1, (6, 6))})
    cases["power"] = (lambda t: _weighted(ad.power(t["x"], 3), r_el), {"x": rng.uniform(0.1, 1, (6, 6))})
    cases["exp_log"] = (lambda t: _weighted(ad.log(ad.exp(t["x"]) + 1.0), r_el), {"x": rng.normal(size=(6, 6))})
    cases["div"] = (lambda t: _weighted(t["a"] / t["b"], r_el), {"a": rng.normal(size=(6, 6)), "b": rng.uniform(0.5, 2, (6, 6))})
    cases["clamp"] = (lambda t: _weighted(ad.clamp(t["x"], -0.5, 0.5), r_el), {"x": rng.uniform(-1, 1, (6, 6))})
    r_pool = coeffs((2, 3))
    cases["avg_pool2d"] = (lambda t: _weighted(ad.avg_pool2d(t["x"], 4), r_pool), {"x": rng.normal(size=(9, 13))})
    r_cat = coeffs((3, 5))
    cases["concat_getitem"] = (
        lambda t: _weighted(ad.concat([t["a"][0:1], t["b"][:, ::2]], axis=0) * 2.0, r_cat),
        {"a": rng.normal(size=(2, 5)), "b": rng.normal(size=(2, 9))})
    r_bc = coeffs((4, 6))
    cases["broadcast_bias"] = (lambda t: _weighted(ad.broadcast_to(t["s"], (4, 6)) * t["x"] + t["b"], r_bc),
                               {"s": rng.normal(size=()), "x": rng.normal(size=(4, 6)), "b": rng.normal(size=6)})

    gin = rng.uniform(0, 0.3, (32, 32))
    gout = gin + rng.uniform(0.01, 0.3, (32, 32))
    cases["l_dan"] = (lambda t: losses.l_dan(gin, t["o"]), {"o": gout})
    cases["l_spa"] = (lambda t: losses.l_spa(gin, t["o"]), {"o": rng.uniform(0, 1, (32, 32))})
    cases["l_exp"] = (lambda t: losses.l_exp(t["o"]), {"o": rng.uniform(0, 1, (32, 32))})
    cases["l_tv"] = (lambda t: losses.l_tv(t["m"]), {"m": rng.uniform(0, 1, (16, 16))})

    return {name: finite_diff_check(fn, inputs, h=h) for name, (fn, inputs) in cases.items()}


def pipeline_gradient_error(size: int = 16, seed: int = 0, h: float = 1e-5, samples: int = 6) -> dict[str, float]:
    """Per-weight-tensor error of the full training loss on a random size x size image.

    Uses the default initialisation plus random biases so that no ReLU sits
    exactly at its kink. ``samples`` coordinates of every weight tensor are
    checked. Images below 32 px get their 32x32 thumbnail by area upsampling.
    """
    from .enhancer import ModelWeights, downsample_32, forward_gray
    from .imageio import resize_area
    from .losses import total_loss

    rng = np.random.default_rng(seed)
    gray = rng.uniform(0, 0.5, (size, size))
    low = downsample_32(gray) if size >= 32 else resize_area(gray, 32, 32)
    low = low.astype(np.float64)
    arrays = {k: v.astype(np.float64) for k, v in ModelWeights.init(seed).arrays.items()}
    for k in arrays:
        if k.endswith((".bias", ".shift")):
            arrays[k] = rng.normal(0, 0.1, arrays[k].shape)

    def objective(t):
        res = forward_gray(gray, low, t)
        return total_loss(gray, res.output, res.mask).tensor

    return finite_diff_errors(objective, arrays, h=h, samples=samples, seed=seed)

"""Forward enhancement pipeline.

The RGB input is reduced to a gray working image plus per-pixel channel
ratios. A small CNN predicts a per-pixel range mask, a Transformer head
looking at a 32x32 thumbnail predicts a global constraint ``alpha`` and a
truncation threshold ``beta``. The gray image is brightened with a per-pixel
gamma curve ``G ** (alpha ** M)``, a cubic anti-noise term driven by ``beta``
is added, and colour is restored from the stored ratios.

All building blocks accept numpy arrays (returning numpy) or tensors
(returning tensors, so they can be differentiated inside a tape).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidArgumentError, InvalidStateError

RATIO_EPS = 1e-4
POW_EPS = 1e-4
ALPHA_MIN, ALPHA_MAX = 0.1, 1.0
BETA_MAX = 0.16
DEFAULT_TAU = 100.0

LOW_RES = 32
TOKENS = 16
D_MODEL = 256
HEADS = 4
D_HEAD = 64
D_FFN = 512
ENCODER_LAYERS = 2
# Fixed scale on the flattened encoder output entering the FC layer. ADAM moves
# every FC weight by ~lr per step, so without it one step shifts the logits by
# ~lr * 4096 and saturates the sigmoids.
FC_INPUT_SCALE = 1.0 / math.sqrt(TOKENS * D_MODEL)

# (name, out channels, in channels); layers 5-7 see skip concatenations.
RANGE_MASK_LAYERS = (
    ("rm1", 4, 1),
    ("rm2", 4, 4),
    ("rm3", 4, 4),
    ("rm4", 4, 4),
    ("rm5", 4, 8),
    ("rm6", 4, 8),
    ("rm7", 1, 8),
)


def weight_shapes() -> dict[str, tuple[int, ...]]:
    """Name -> shape of every learned parameter, in checkpoint order."""
    shapes: dict[str, tuple[int, ...]] = {}
    for name, co, ci in RANGE_MASK_LAYERS:
        shapes[f"{name}.weight"] = (co, ci, 3, 3)
        shapes[f"{name}.bias"] = (co,)
    shapes["head_conv.weight"] = (TOKENS, 1, 3, 3)
    shapes["head_conv.bias"] = (TOKENS,)
    shapes["pos_embed"] = (TOKENS, D_MODEL)
    for layer in range(ENCODER_LAYERS):
        p = f"enc{layer}"
        shapes[f"{p}.wq"] = (HEADS, D_MODEL, D_HEAD)
        shapes[f"{p}.wk"] = (HEADS, D_MODEL, D_HEAD)
        shapes[f"{p}.wv"] = (HEADS, D_MODEL, D_HEAD)
        shapes[f"{p}.wo"] = (HEADS * D_HEAD, D_MODEL)
        shapes[f"{p}.ln1.gain"] = (D_MODEL,)
        shapes[f"{p}.ln1.shift"] = (D_MODEL,)
        shapes[f"{p}.ffn1"] = (D_MODEL, D_FFN)
        shapes[f"{p}.ffn2"] = (D_FFN, D_MODEL)
        shapes[f"{p}.ln2.gain"] = (D_MODEL,)
        shapes[f"{p}.ln2.shift"] = (D_MODEL,)
    shapes["fc.weight"] = (TOKENS * D_MODEL, 2)
    shapes["fc.bias"] = (2,)
    return shapes


class ModelWeights:
    """All learned arrays of the enhancer, validated against :func:`weight_shapes`."""

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        expected = weight_shapes()
        missing = expected.keys() - arrays.keys()
        extra = arrays.keys() - expected.keys()
        if missing or extra:
            raise InvalidStateError(f"weight names mismatch; missing={sorted(missing)} extra={sorted(extra)}")
        self.arrays: dict[str, np.ndarray] = {}
        for name, shape in expected.items():
            arr = np.asarray(arrays[name], dtype=np.float32)
            if arr.shape != shape:
                raise InvalidStateError(f"{name}: shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidStateError(f"{name}: non-finite values")
            self.arrays[name] = arr

    @classmethod
    def init(cls, seed: int = 0, std: float = 0.02) -> "ModelWeights":
        """Normal(0, std) for kernels, matrices and the position embedding; zero biases; unit LN gains."""
        rng = np.random.default_rng(seed)
        arrays = {}
        for name, shape in weight_shapes().items():
            if name.endswith(".gain"):
                arrays[name] = np.ones(shape, np.float32)
            elif name.endswith((".bias", ".shift")):
                arrays[name] = np.zeros(shape, np.float32)
            else:
                arrays[name] = (rng.standard_normal(shape) * std).astype(np.float32)
        return cls(arrays)

    def copy(self) -> "ModelWeights":
        return ModelWeights({k: v.copy() for k, v in self.arrays.items()})

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.arrays.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelWeights):
            return NotImplemented
        return all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays)

    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays.values())


@dataclass(frozen=True)
class EnhanceConfig:
    """Runtime switches for the three modules and the truncation strength.

    With ``use_tpa`` off, ``fixed_alpha``/``fixed_beta`` replace the head output.
    """

    use_rm: bool = True
    use_tpa: bool = True
    use_st: bool = True
    tau: float = DEFAULT_TAU
    fixed_alpha: float = 0.55
    fixed_beta: float = 0.08

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidArgumentError("tau must be positive")
        if not ALPHA_MIN <= self.fixed_alpha <= ALPHA_MAX:
            raise InvalidArgumentError(f"fixed_alpha must lie in [{ALPHA_MIN}, {ALPHA_MAX}]")
        if not 0 <= self.fixed_beta <= BETA_MAX:
            raise InvalidArgumentError(f"fixed_beta must lie in [0, {BETA_MAX}]")

    @classmethod
    def identity(cls) -> "EnhanceConfig":
        """Every module off and alpha pinned to 1, so the gamma map is 1 everywhere."""
        return cls(use_rm=False, use_tpa=False, use_st=False, fixed_alpha=1.0, fixed_beta=0.0)


@dataclass(frozen=True)
class EnhanceParams:
    alpha: float
    beta: float
    tau: float = DEFAULT_TAU


def _lift(x) -> tuple[Tensor, bool]:
    if isinstance(x, Tensor):
        return x, False
    return Tensor(x), True


def _weight_tensors(weights) -> Mapping[str, Tensor]:
    if isinstance(weights, ModelWeights):
        return weights.tensors()
    missing = weight_shapes().keys() - weights.keys()
    if missing:
        raise InvalidStateError(f"missing weights: {sorted(missing)}")
    return weights


# ----------------------------------------------------------- colour handling

def to_gray(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split an HxWx3 image in [0, 1] into its mean gray and channel ratios."""
    rgb = np.asarray(rgb, dtype=np.float32)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InvalidArgumentError(f"expected HxWx3 image, got {rgb.shape}")
    if not np.all(np.isfinite(rgb)) or rgb.min() < 0 or rgb.max() > 1:
        raise InvalidArgumentError("image values must lie in [0, 1]")
    gray = (rgb[..., 0] + rgb[..., 1] + rgb[..., 2]) / np.float32(3)
    ratios = rgb / np.maximum(gray, np.float32(RATIO_EPS))[..., None]
    return gray, ratios


def restore_color(gray: np.ndarray, ratios: np.ndarray) -> np.ndarray:
    gray = np.asarray(gray, dtype=np.float32)
    ratios = np.asarray(ratios, dtype=np.float32)
    if ratios.shape != gray.shape + (3,):
        raise InvalidArgumentError(f"ratio shape {ratios.shape} does not match gray {gray.shape}")
    return np.clip(gray[..., None] * ratios, 0, 1)


def downsample_32(gray: np.ndarray) -> np.ndarray:
    """Area-average over the integer partition of the image into a 32x32 grid."""
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise InvalidArgumentError("downsample_32 expects a 2-d gray image")
    h, w = gray.shape
    if h < LOW_RES or w < LOW_RES:
        raise InvalidArgumentError(f"image {h}x{w} is smaller than {LOW_RES}x{LOW_RES}")
    rows = (np.arange(LOW_RES + 1) * h) // LOW_RES
    cols = (np.arange(LOW_RES + 1) * w) // LOW_RES
    sums = np.add.reduceat(np.add.reduceat(gray.astype(np.float64), rows[:-1], axis=0), cols[:-1], axis=1)
    counts = np.outer(np.diff(rows), np.diff(cols))
    return (sums / counts).astype(np.float32)


# ----------------------------------------------------------- range mask

def range_mask(gray, weights):
    """Seven-layer same-resolution CNN with mirrored skip concatenations, sigmoid output."""
    g, as_np = _lift(gray)
    w = _weight_tensors(weights)
    if g.ndim != 2:
        raise InvalidArgumentError("range_mask expects a 2-d gray image")
    h, wd = g.shape

    def conv(x, name):
        return ad.conv2d(x, w[f"{name}.weight"], w[f"{name}.bias"], stride=1, padding=1)

    x = ad.reshape(g, (1, h, wd))
    o1 = ad.relu(conv(x, "rm1"))
    o2 = ad.relu(conv(o1, "rm2"))
    o3 = ad.relu(conv(o2, "rm3"))
    o4 = ad.relu(conv(o3, "rm4"))
    o5 = ad.relu(conv(ad.concat([o4, o3]), "rm5"))
    o6 = ad.relu(conv(ad.concat([o5, o2]), "rm6"))
    m = ad.sigmoid(conv(ad.concat([o6, o1]), "rm7"))
    m = ad.reshape(m, (h, wd))
    return m.data if as_np else m


# ----------------------------------------------------------- parameter head

def _encoder_layer(f: Tensor, w: Mapping[str, Tensor], p: str) -> Tensor:
    scale = 1.0 / math.sqrt(D_HEAD)
    heads = []
    for j in range(HEADS):
        q = f @ w[f"{p}.wq"][j]
        k = f @ w[f"{p}.wk"][j]
        v = f @ w[f"{p}.wv"][j]
        att = ad.softmax_rows((q @ k.T) * scale)
        heads.append(att @ v)
    mha = ad.concat(heads, axis=1) @ w[f"{p}.wo"]
    f1 = ad.layer_norm(mha + f, w[f"{p}.ln1.gain"], w[f"{p}.ln1.shift"])
    ffn = ad.relu(f1 @ w[f"{p}.ffn1"]) @ w[f"{p}.ffn2"]
    return ad.layer_norm(ffn + f1, w[f"{p}.ln2.gain"], w[f"{p}.ln2.shift"])


def param_head_tensors(low: Tensor, weights) -> tuple[Tensor, Tensor]:
    """Differentiable (alpha, beta), each a scalar tensor."""
    w = _weight_tensors(weights)
    if low.shape != (LOW_RES, LOW_RES):
        raise InvalidArgumentError(f"parameter head expects {LOW_RES}x{LOW_RES}, got {low.shape}")
    feat = ad.conv2d(ad.reshape(low, (1, LOW_RES, LOW_RES)), w["head_conv.weight"], w["head_conv.bias"],
                     stride=2, padding=1)
    f = ad.reshape(feat, (TOKENS, D_MODEL)) + w["pos_embed"]
    for layer in range(ENCODER_LAYERS):
        f = _encoder_layer(f, w, f"enc{layer}")
    flat = ad.reshape(f, (1, TOKENS * D_MODEL)) * FC_INPUT_SCALE
    logits = flat @ w["fc.weight"] + w["fc.bias"]
    s = ad.sigmoid(ad.reshape(logits, (2,)))
    alpha = ALPHA_MIN + (ALPHA_MAX - ALPHA_MIN) * s[0]
    beta = BETA_MAX * s[1]
    return alpha, beta


def param_head(low: np.ndarray, weights, tau: float = DEFAULT_TAU) -> EnhanceParams:
    alpha, beta = param_head_tensors(Tensor(low), weights)
    return EnhanceParams(alpha=alpha.item(), beta=beta.item(), tau=tau)


# ----------------------------------------------------------- curve and truncation

def fuse(mask, alpha):
    """Gamma map ``alpha ** M``, which lies in [alpha, 1] for M in [0, 1]."""
    m, as_np = _lift(mask)
    a = alpha if isinstance(alpha, Tensor) else Tensor(alpha)
    gamma = ad.elementwise_pow(ad.broadcast_to(a, m.shape), m)
    return gamma.data if as_np else gamma


def apply_curve(gray, gamma):
    """Per-pixel gamma curve on the gray image, base clamped to [1e-4, 1]."""
    g, as_np = _lift(gray)
    gm = gamma if isinstance(gamma, Tensor) else Tensor(gamma)
    out = ad.elementwise_pow(ad.clamp(g, POW_EPS, 1.0), gm)
    return out.data if as_np else out


def soft_truncate(gray, beta, tau: float = DEFAULT_TAU):
    """Anti-noise map ``-tau * max(beta - G, 0) ** 3``; zero wherever G >= beta."""
    g, as_np = _lift(gray)
    b = beta if isinstance(beta, Tensor) else Tensor(beta)
    gap = ad.relu(ad.broadcast_to(b, g.shape) - g)
    t = ad.power(gap, 3) * (-float(tau))
    return t.data if as_np else t


# ----------------------------------------------------------- full pipeline

@dataclass
class PipelineResult:
    """Intermediate maps of one forward pass (tensors, possibly on a tape)."""

    mask: Tensor
    alpha: Tensor
    beta: Tensor
    gamma: Tensor
    curve: Tensor
    anti_noise: Tensor
    output: Tensor  # curve + anti_noise, before the final clamp


def forward_gray(gray: np.ndarray, low: np.ndarray, weights, config: EnhanceConfig = EnhanceConfig()) -> PipelineResult:
    """Run the gray-image pipeline; ``low`` is the 32x32 thumbnail fed to the head.

    The result's ``output`` is unclamped so that losses see gradients at
    saturation.
    """
    w = _weight_tensors(weights)
    g = Tensor(gray)
    mask = range_mask(g, w)
    if not config.use_rm:
        mask = ad.broadcast_to(ad.mean(mask), mask.shape)
    if config.use_tpa:
        alpha, beta = param_head_tensors(Tensor(low), w)
    else:
        alpha, beta = Tensor(config.fixed_alpha), Tensor(config.fixed_beta)
    gamma = fuse(mask, alpha)
    curve = apply_curve(g, gamma)
    if config.use_st:
        anti = soft_truncate(g, beta, config.tau)
    else:
        anti = Tensor(np.zeros(g.shape))
    return PipelineResult(mask, alpha, beta, gamma, curve, anti, curve + anti)


@dataclass
class Diagnostics:
    mask: np.ndarray
    gamma: np.ndarray
    anti_noise: np.ndarray
    gray_in: np.ndarray
    gray_out: np.ndarray
    alpha: float
    beta: float
    extras: dict = field(default_factory=dict)


def enhance(rgb: np.ndarray, weights: ModelWeights, config: EnhanceConfig = EnhanceConfig()) -> tuple[np.ndarray, Diagnostics]:
    """Enhance an HxWx3 image in [0, 1] (H, W >= 32)."""
    gray, ratios = to_gray(rgb)
    if min(gray.shape) < LOW_RES:
        raise InvalidArgumentError(f"image {gray.shape} is smaller than {LOW_RES}x{LOW_RES}")
    res = forward_gray(gray, downsample_32(gray), weights, config)
    out_gray = np.clip(res.output.data, 0, 1)
    diag = Diagnostics(
        mask=res.mask.data,
        gamma=res.gamma.data,
        anti_noise=res.anti_noise.data,
        gray_in=gray,
        gray_out=out_gray,
        alpha=res.alpha.item(),
        beta=res.beta.item(),
    )
    return restore_color(out_gray, ratios), diag

"""Non-reference training losses on (input gray, enhanced gray, range mask)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidArgumentError

DARK_THRESHOLD = 0.04
DAN_REGION = 16
SPA_CELL = 4
EXP_CELL = 16
EXPOSURE_LEVEL = 0.6


@dataclass(frozen=True)
class LossWeights:
    dan: float = 200.0
    exp: float = 50.0
    tv: float = 20.0

    def __post_init__(self):
        if min(self.dan, self.exp, self.tv) <= 0:
            raise InvalidArgumentError("loss weights must be positive")


@dataclass
class LossReport:
    l_dan: float
    l_spa: float
    l_exp: float
    l_tv: float
    total: float
    tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict[str, float]:
        return {"l_dan": self.l_dan, "l_spa": self.l_spa, "l_exp": self.l_exp,
                "l_tv": self.l_tv, "total": self.total}


def _as_out(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_pair(gray_in: np.ndarray, gray_out: Tensor) -> None:
    if gray_in.shape != gray_out.shape:
        raise InvalidArgumentError(f"shape mismatch: {gray_in.shape} vs {gray_out.shape}")
    if gray_in.ndim != 2:
        raise InvalidArgumentError("losses expect 2-d gray images")


def dan_weights(gray_in: np.ndarray) -> np.ndarray:
    """Per-pixel weight w so that l_dan = sum(w * max(O - G, 0)).

    Each 16x16 region (ragged regions at the right/bottom edges included) that
    holds dark pixels contributes the mean over its dark pixels; regions
    without dark pixels are left out of the average.
    """
    h, w = gray_in.shape
    dark = gray_in < DARK_THRESHOLD
    region = (np.arange(h)[:, None] // DAN_REGION) * (-(-w // DAN_REGION)) + np.arange(w)[None, :] // DAN_REGION
    counts = np.bincount(region.ravel(), weights=dark.ravel())
    n_regions = np.count_nonzero(counts)
    if n_regions == 0:
        return np.zeros((h, w))
    per_pixel = counts[region]
    return np.where(dark, 1.0 / (n_regions * np.maximum(per_pixel, 1)), 0.0)


def l_dan(gray_in, gray_out) -> Tensor:
    """Average enhancement of dark pixels per 16x16 region, averaged over regions.

    Darkening is not rewarded: each pixel contributes ``max(O - G, 0)``.
    """
    gray_in = np.asarray(gray_in)
    out = _as_out(gray_out)
    _check_pair(gray_in, out)
    wts = dan_weights(gray_in)
    return ad.tsum(ad.relu(out - gray_in) * wts)


def l_spa(gray_in, gray_out) -> Tensor:
    """Spatial consistency over 4x4 pooled cells and their in-bounds 4-neighbours."""
    gray_in = np.asarray(gray_in)
    out = _as_out(gray_out)
    _check_pair(gray_in, out)
    y = ad.avg_pool2d(out, SPA_CELL)
    i = ad.avg_pool2d(Tensor(gray_in), SPA_CELL).data
    n_cells = y.size
    terms = []
    if y.shape[1] > 1:
        dy = ad.tabs(y[:, 1:] - y[:, :-1]) - np.abs(i[:, 1:] - i[:, :-1])
        terms.append(ad.tsum(dy * dy))
    if y.shape[0] > 1:
        dy = ad.tabs(y[1:, :] - y[:-1, :]) - np.abs(i[1:, :] - i[:-1, :])
        terms.append(ad.tsum(dy * dy))
    if not terms:
        return ad.tsum(y * 0.0)
    total = terms[0] if len(terms) == 1 else terms[0] + terms[1]
    # Every neighbour pair is visited from both of its cells.
    return total * (2.0 / n_cells)


def l_exp(gray_out) -> Tensor:
    """Mean distance of 16x16 cell means from the exposure level 0.6."""
    out = _as_out(gray_out)
    y = ad.avg_pool2d(out, EXP_CELL)
    return ad.mean(ad.tabs(y - EXPOSURE_LEVEL))


def l_tv(mask) -> Tensor:
    """Mean squared forward difference of the mask, horizontal plus vertical."""
    m = _as_out(mask)
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
        raise InvalidArgumentError(f"l_tv needs a mask of at least 2x2, got {m.shape}")
    dh = m[:, 1:] - m[:, :-1]
    dv = m[1:, :] - m[:-1, :]
    return ad.mean(dh * dh) + ad.mean(dv * dv)


def total_loss(gray_in, gray_out, mask, weights: LossWeights = LossWeights(), include_dan: bool = True) -> LossReport:
    """Weighted sum of the four losses; ``report.tensor`` is the differentiable total.

    ``include_dan=False`` drops the dark-area term from the total (it is still
    reported).
    """
    dan = l_dan(gray_in, gray_out)
    spa = l_spa(gray_in, gray_out)
    exp_ = l_exp(gray_out)
    tv = l_tv(mask)
    total = spa + exp_ * weights.exp + tv * weights.tv
    if include_dan:
        total = total + dan * weights.dan
    return LossReport(
        l_dan=dan.item(), l_spa=spa.item(), l_exp=exp_.item(), l_tv=tv.item(),
        total=total.item(), tensor=total,
    )

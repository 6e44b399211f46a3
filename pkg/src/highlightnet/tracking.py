"""Baseline normalized cross-correlation tracker and one-pass evaluation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError, TrackingLostError

PRECISION_THRESHOLD = 20.0
IOU_THRESHOLDS = np.linspace(0.0, 1.0, 51)


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InvalidArgumentError(f"box size must be positive, got {self.w}x{self.h}")

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2, self.y + self.h / 2

    def shifted(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)


@dataclass
class TrackingReport:
    precision: float
    success_auc: float
    cle: list[float] = field(default_factory=list)

    @property
    def mean_cle(self) -> float:
        return float(np.mean(self.cle)) if self.cle else 0.0


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    ih = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def center_error(a: BoundingBox, b: BoundingBox) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return float(np.hypot(ax - bx, ay - by))


def one_pass_eval(pred: Sequence[BoundingBox], gt: Sequence[BoundingBox]) -> TrackingReport:
    """Precision at 20 px CLE and success AUC over IoU thresholds 0, 0.02, ..., 1."""
    if len(pred) != len(gt):
        raise InvalidArgumentError(f"{len(pred)} predictions for {len(gt)} ground-truth boxes")
    if not gt:
        raise InvalidArgumentError("empty sequence")
    cle = [center_error(p, g) for p, g in zip(pred, gt)]
    overlaps = np.array([iou(p, g) for p, g in zip(pred, gt)])
    precision = float(np.mean(np.array(cle) <= PRECISION_THRESHOLD))
    success = float(np.mean([(overlaps > t).mean() for t in IOU_THRESHOLDS]))
    return TrackingReport(precision=precision, success_auc=success, cle=cle)


def _gray(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3:
        return frame.mean(axis=2)
    if frame.ndim == 2:
        return frame
    raise InvalidArgumentError(f"frame must be HxW or HxWx3, got {frame.shape}")


def _ncc_map(region: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Zero-mean normalized correlation of ``template`` at every valid offset in ``region``."""
    th, tw = template.shape
    t = template - template.mean()
    t_norm = np.sqrt((t * t).sum())
    win = sliding_window_view(region, (th, tw))
    wz = win - win.mean(axis=(2, 3), keepdims=True)
    num = np.einsum("ijkl,kl->ij", wz, t)
    den = np.sqrt((wz * wz).sum(axis=(2, 3))) * t_norm
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 1e-12)
    return out


def ncc_track(
    frames: Sequence[np.ndarray],
    init: BoundingBox,
    enhancer: Callable[[np.ndarray], np.ndarray] | None = None,
) -> list[BoundingBox]:
    """Track ``init`` through ``frames`` by exhaustive NCC search.

    The search window is twice the template size, centred on the previous
    estimate and clipped to the frame. The box keeps its initial size. Ties
    go to the smallest (row, col). When ``enhancer`` is given every frame is
    passed through it before matching.
    """
    if len(frames) < 2:
        raise InvalidArgumentError("tracking needs at least two frames")

    def prep(frame):
        return _gray(enhancer(frame) if enhancer is not None else frame)

    first = prep(frames[0])
    fh, fw = first.shape
    x0, y0 = int(round(init.x)), int(round(init.y))
    w, h = int(round(init.w)), int(round(init.h))
    left, top = max(x0, 0), max(y0, 0)
    right, bottom = min(x0 + w, fw), min(y0 + h, fh)
    if right <= left or bottom <= top:
        raise TrackingLostError("initial box lies outside frame 0")
    template = first[top:bottom, left:right]
    th, tw = template.shape
    # Offset of the clipped template inside the full box.
    off_x, off_y = left - x0, top - y0

    boxes = [init]
    ty, tx = top, left
    for frame in frames[1:]:
        g = prep(frame)
        if g.shape != (fh, fw):
            raise InvalidArgumentError("all frames must share one size")
        cy, cx = ty + th / 2, tx + tw / 2
        r0 = max(int(np.floor(cy - th)), 0)
        c0 = max(int(np.floor(cx - tw)), 0)
        r1 = min(int(np.floor(cy - th)) + 2 * th, fh)
        c1 = min(int(np.floor(cx - tw)) + 2 * tw, fw)
        if r1 - r0 < th or c1 - c0 < tw:
            raise TrackingLostError("search window no longer contains the template")
        scores = _ncc_map(g[r0:r1, c0:c1], template)
        k = int(np.argmax(scores))
        dy, dx = divmod(k, scores.shape[1])
        ty, tx = r0 + dy, c0 + dx
        boxes.append(BoundingBox(float(tx - off_x), float(ty - off_y), init.w, init.h))
    return boxes


def read_ground_truth(path: str | os.PathLike) -> list[BoundingBox]:
    """Parse one ``x,y,w,h`` line per frame; blank lines are ignored."""
    boxes = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.replace("\t", ",").split(",")
        if len(parts) != 4:
            raise InvalidArgumentError(f"{path}:{lineno}: expected x,y,w,h")
        try:
            boxes.append(BoundingBox(*(float(p) for p in parts)))
        except ValueError as exc:
            raise InvalidArgumentError(f"{path}:{lineno}: {exc}") from None
    return boxes


def write_ground_truth(path: str | os.PathLike, boxes: Sequence[BoundingBox]) -> None:
    Path(path).write_text("".join(f"{b.x:g},{b.y:g},{b.w:g},{b.h:g}\n" for b in boxes))

"""Unpaired training loop with deterministic shuffling and checkpoint resume."""

from __future__ import annotations

import copy
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor, backward
from .checkpoint import Checkpoint, save_checkpoint
from .enhancer import EnhanceConfig, ModelWeights, downsample_32, forward_gray, to_gray
from .errors import InvalidArgumentError, NonFiniteLossError, NotFoundError
from .imageio import read_image, resize_area
from .losses import LossReport, LossWeights, total_loss
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    data_dir: str | None = None
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-3
    resize: int = 512
    seed: int = 0
    loss_weights: LossWeights = LossWeights()
    tau: float = 100.0
    use_rm: bool = True
    use_tpa: bool = True
    use_st: bool = True
    use_ldan: bool = True
    init_std: float = 0.02

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.resize < 32:
            raise InvalidArgumentError("resize must be >= 32")
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be > 0")
        if not self.tau > 0:
            raise InvalidArgumentError("tau must be > 0")

    def enhance_config(self) -> EnhanceConfig:
        return EnhanceConfig(use_rm=self.use_rm, use_tpa=self.use_tpa, use_st=self.use_st, tau=self.tau)

    def snapshot(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, LossWeights):
                out.update({f"lambda_dan": repr(value.dan), "lambda_exp": repr(value.exp), "lambda_tv": repr(value.tv)})
            elif value is not None:
                out[f.name] = repr(value) if isinstance(value, float) else str(value)
        return out


@dataclass
class TrainResult:
    weights: ModelWeights
    adam: AdamState
    epoch: int
    log: list[LossReport] = field(default_factory=list)
    config: TrainConfig | None = None

    def checkpoint(self) -> Checkpoint:
        snap = self.config.snapshot() if self.config is not None else {}
        return Checkpoint(weights=self.weights.copy(), adam=copy.deepcopy(self.adam), epoch=self.epoch, config=snap)


def load_dataset(data_dir: str | os.PathLike, resize: int) -> list[np.ndarray]:
    """Decode every image in ``data_dir`` (lexicographic order) and area-resize to resize x resize."""
    root = Path(data_dir)
    if not root.is_dir():
        raise NotFoundError(f"data directory {root} does not exist")
    files = sorted(p for p in root.iterdir() if p.is_file())
    if not files:
        raise NotFoundError(f"data directory {root} is empty")
    images = []
    for path in files:
        try:
            img = read_image(path)
        except Exception as exc:  # undecodable files are skipped, not fatal
            log.warning("skipping %s: %s", path.name, exc)
            continue
        if img.shape[:2] != (resize, resize):
            img = resize_area(img, resize, resize)
        images.append(np.clip(img, 0, 1))
    if not images:
        raise NotFoundError(f"no decodable images in {root}")
    return images


def _mean_report(reports: Sequence[LossReport]) -> LossReport:
    keys = ("l_dan", "l_spa", "l_exp", "l_tv", "total")
    return LossReport(**{k: float(np.mean([getattr(r, k) for r in reports])) for k in keys})


def _nonfinite_message(tape: Tape, what: str) -> str:
    hit = tape.first_nonfinite()
    if hit is None:
        return f"non-finite {what}"
    i, entry = hit
    names = [t.name or f"<{t.shape}>" for t in entry.inputs]
    return f"non-finite {what}; first non-finite tensor is output of op #{i} '{entry.op}' (inputs: {', '.join(names)})"


def train(
    config: TrainConfig,
    images: Sequence[np.ndarray] | None = None,
    resume: Checkpoint | None = None,
    checkpoint_path: str | os.PathLike | None = None,
    on_epoch: Callable[[int, LossReport], None] | None = None,
) -> TrainResult:
    """Train from scratch (or from ``resume``) up to ``config.epochs``.

    ``images`` overrides loading from ``config.data_dir``; each entry is an
    HxWx3 array in [0, 1]. When ``checkpoint_path`` is set, a checkpoint is
    written after every epoch.
    """
    if images is None:
        if config.data_dir is None:
            raise InvalidArgumentError("either images or config.data_dir is required")
        images = load_dataset(config.data_dir, config.resize)
    if not images:
        raise InvalidArgumentError("no training images")
    grays = [to_gray(img)[0] for img in images]
    lows = [downsample_32(g) for g in grays]

    if resume is not None:
        weights = resume.weights.copy()
        adam = copy.deepcopy(resume.adam) if resume.adam is not None else AdamState()
        start = resume.epoch
    else:
        weights = ModelWeights.init(config.seed, config.init_std)
        adam = AdamState()
        start = 0
    params = weights.arrays
    ecfg = config.enhance_config()
    result = TrainResult(weights=weights, adam=adam, epoch=start, config=config)
    n = len(grays)

    for epoch in range(start, config.epochs):
        # Seeded per epoch, so a resumed run replays the same batch order.
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        reports = []
        for b0 in range(0, n, config.batch_size):
            batch = order[b0:b0 + config.batch_size]
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            for i in batch:
                leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
                with Tape() as tape:
                    res = forward_gray(grays[i], lows[i], leaves, ecfg)
                    rep = total_loss(grays[i], res.output, res.mask, config.loss_weights, include_dan=config.use_ldan)
                if not np.isfinite(rep.total):
                    raise NonFiniteLossError(_nonfinite_message(tape, f"loss at epoch {epoch + 1}, image {i}"))
                backward(rep.tensor, tape)
                for k, t in leaves.items():
                    if t.grad is not None:
                        grads[k] += t.grad
                reports.append(rep)
            scale = np.float32(1.0 / len(batch))
            for k, g in grads.items():
                g *= scale
                if not np.all(np.isfinite(g)):
                    raise NonFiniteLossError(f"non-finite gradient for {k} at epoch {epoch + 1}")
            adam_step(params, grads, adam, config.learning_rate)

        summary = _mean_report(reports)
        result.log.append(summary)
        result.epoch = epoch + 1
        log.info("epoch %d/%d total=%.5f", epoch + 1, config.epochs, summary.total)
        if on_epoch is not None:
            on_epoch(epoch + 1, summary)
        if checkpoint_path is not None:
            save_checkpoint(result.checkpoint(), checkpoint_path)
    return result


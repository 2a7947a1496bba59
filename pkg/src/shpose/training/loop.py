"""Mini-batch training with intermediate supervision."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..heatmap import DEFAULT_SIGMA, GaussianSpec, HeatmapError, mse_loss
from ..model import StackedHourglass
from ..weights import ParameterStore, load_tensors, save_tensors
from .augment import AUGMENTATIONS, AugmentConfig, augment
from .data import make_batch
from .optim import RMSProp, RMSPropConfig

log = logging.getLogger(__name__)

WEIGHTS_FILE = "weights.shw"
OPTIMIZER_FILE = "optimizer.shw"
LOSS_FILE = "loss.csv"


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, step: int, checkpoint: Optional[Path]):
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}; last finite state in {checkpoint}")
        self.epoch = epoch
        self.step = step
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2.5e-4
    rho: float = 0.99
    eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 100
    # None means one pass over the dataset per epoch
    iterations_per_epoch: Optional[int] = 1000
    augmentations: frozenset = frozenset(AUGMENTATIONS)
    crop_fraction: tuple = (0.75, 1.0)
    dither_range: tuple = (0.8, 1.2)
    rotation_range: tuple = (-30.0, 30.0)
    sigma: float = DEFAULT_SIGMA
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        object.__setattr__(self, "augmentations", frozenset(self.augmentations))

    @property
    def optimizer(self) -> RMSPropConfig:
        return RMSPropConfig(self.learning_rate, self.rho, self.eps)

    @property
    def augment(self) -> AugmentConfig:
        return AugmentConfig(self.augmentations, self.crop_fraction, self.dither_range, self.rotation_range)

    def steps_per_epoch(self, dataset_size: int) -> int:
        if self.iterations_per_epoch is not None:
            return self.iterations_per_epoch
        return max(1, dataset_size // self.batch_size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augmentations"] = sorted(self.augmentations)
        return d


@dataclass
class TrainResult:
    store: ParameterStore
    epoch_losses: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)


def total_loss(outputs, targets, mask=None):
    """Sum over stacks of the masked mean per-joint MSE against one target."""
    if len(outputs) == 0:
        raise HeatmapError("no stack outputs to supervise")
    loss = None
    for out in outputs:
        _, stack_loss = mse_loss(out, targets, mask)
        loss = stack_loss if loss is None else loss + stack_loss
    return loss


def _batch_indices(n: int, seed: int, epoch: int, steps: int, batch_size: int) -> np.ndarray:
    """Deterministic sample order for one epoch, cycling through permutations."""
    rng = np.random.default_rng([seed, epoch])
    need = steps * batch_size
    order = []
    while len(order) < need:
        order.extend(rng.permutation(n).tolist())
    return np.asarray(order[:need]).reshape(steps, batch_size)


def _epoch_batches(dataset, config: TrainConfig, model_config, epoch: int, dtype):
    gaussian = GaussianSpec(config.sigma)
    steps = config.steps_per_epoch(len(dataset))
    aug = config.augment
    for step, idx in enumerate(_batch_indices(len(dataset), config.seed, epoch, steps, config.batch_size)):
        samples = []
        for slot, i in enumerate(idx):
            rng = np.random.default_rng([config.seed, epoch, step, slot])
            samples.append(augment(dataset[i], aug, rng) if aug.enabled else dataset[i])
        yield make_batch(samples, model_config.input_side, model_config.heatmap_side, gaussian, dtype)


def save_checkpoint(directory, model: StackedHourglass, optimizer: RMSProp, epoch: int,
                    epoch_losses: list, config: TrainConfig) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ParameterStore.from_model(model, epoch=epoch).save(directory / WEIGHTS_FILE)
    state = {k: v.detach().cpu().numpy() for k, v in optimizer.state.items()}
    save_tensors(directory / OPTIMIZER_FILE, state, metadata={
        "epoch": epoch,
        "epoch_losses": list(epoch_losses),
        "train_config": config.to_dict(),
    })
    write_loss_csv(directory / LOSS_FILE, epoch_losses)
    return directory


def write_loss_csv(path, epoch_losses) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(epoch_losses, start=1):
            writer.writerow([i, repr(float(loss))])


def train(model: StackedHourglass, dataset, config: TrainConfig, checkpoint_dir=None,
          resume: bool = False, progress=None) -> TrainResult:
    """Train ``model`` in place.

    Sample order and augmentation draws depend only on ``config.seed``,
    the epoch and the step, so a run resumed from a checkpoint follows the
    same trajectory as an uninterrupted one. A checkpoint is written after
    every epoch when ``checkpoint_dir`` is given.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    dtype = next(model.parameters()).dtype
    optimizer = RMSProp(model.named_parameters(), config.optimizer)
    epoch_losses: list = []
    start_epoch = 0
    if resume and checkpoint_dir is not None and (Path(checkpoint_dir) / OPTIMIZER_FILE).is_file():
        start_epoch, epoch_losses = _restore(checkpoint_dir, model, optimizer)
        log.info("resumed from %s at epoch %d", checkpoint_dir, start_epoch)

    step_losses: list = []
    for epoch in range(start_epoch, config.epochs):
        model.train()
        running = 0.0
        count = 0
        for step, (x, y, m) in enumerate(_epoch_batches(dataset, config, model.config, epoch, dtype)):
            optimizer.zero_grad()
            loss = total_loss(model(x), y, m)
            value = loss.item()
            if not math.isfinite(value):
                ckpt = None
                if checkpoint_dir is not None:
                    # parameters have not been touched by the bad batch yet
                    ckpt = save_checkpoint(Path(checkpoint_dir) / "aborted", model, optimizer, epoch,
                                           epoch_losses, config)
                raise NonFiniteLossError(epoch, step, ckpt)
            loss.backward()
            optimizer.step()
            step_losses.append(value)
            running += value
            count += 1
        epoch_losses.append(running / max(count, 1))
        log.info("epoch %d/%d mean loss %.6f", epoch + 1, config.epochs, epoch_losses[-1])
        if progress is not None:
            progress(epoch, epoch_losses[-1])
        if checkpoint_dir is not None:
            save_checkpoint(checkpoint_dir, model, optimizer, epoch + 1, epoch_losses, config)
    model.eval()
    return TrainResult(ParameterStore.from_model(model), epoch_losses, step_losses)


def _restore(directory, model: StackedHourglass, optimizer: RMSProp):
    directory = Path(directory)
    store = ParameterStore.load(directory / WEIGHTS_FILE)
    state = {k: torch.from_numpy(v) for k, v in store.tensors.items()}
    model.load_state_dict(state)
    tensors, _, meta = load_tensors(directory / OPTIMIZER_FILE)
    optimizer.state = {k: torch.from_numpy(v) for k, v in tensors.items()}
    return int(meta["epoch"]), list(meta["epoch_losses"])

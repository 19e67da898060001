"""End-to-end generator training: Adam, plateau LR halving, patience stopping."""

from __future__ import annotations

import contextlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from latentanom.data import WindowTensor, stack_windows
from latentanom.errors import EmptyInputError, TrainingAborted
from latentanom.model import TCNVAE, init_model, save_checkpoint
from latentanom.objectives import GenConfig, LossBreakdown, total_loss

log = logging.getLogger(__name__)

LOSS_KEYS = ("recon", "perturb", "zero_perturb", "en_kl")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    recon: float
    perturb: float
    zero_perturb: float
    en_kl: float
    total: float
    psi: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__)


@dataclass
class TrainState:
    model: TCNVAE
    optimizer: torch.optim.Optimizer
    epoch: int = 0
    history: list = field(default_factory=list)
    best_total: float = math.inf
    best_state: Optional[dict] = None
    plateau: int = 0
    lr: float = 1e-4


def lr_schedule(epoch: int, plateau_counter: int, current_lr: float,
                patience: int = 25, factor: float = 0.5, floor: float = 1e-6) -> float:
    """Halve the rate once the best loss has stalled for ``patience`` epochs."""
    if current_lr <= 0:
        raise ValueError("learning rate must be positive")
    if plateau_counter >= patience:
        return max(current_lr * factor, floor)
    return current_lr


def _totals(history) -> list[float]:
    return [h.total if hasattr(h, "total") else float(h) for h in history]


def early_stop(history, patience: int = 100, max_epochs: Optional[int] = None,
               min_delta: float = 1e-5) -> bool:
    totals = _totals(history)
    if max_epochs is not None and len(totals) >= max_epochs:
        return True
    if len(totals) <= patience:
        return False
    best, since = math.inf, 0
    for v in totals:
        if v < best - min_delta:
            best, since = v, 0
        else:
            since += 1
    return since >= patience


@contextlib.contextmanager
def deterministic_mode(enabled: bool = True):
    """Single-threaded, deterministic kernels for bitwise-reproducible runs."""
    if not enabled:
        yield
        return
    prev_threads = torch.get_num_threads()
    prev_det = torch.are_deterministic_algorithms_enabled()
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.set_num_threads(prev_threads)
        torch.use_deterministic_algorithms(prev_det)


def _check_finite(bd: LossBreakdown, epoch: int) -> None:
    for key in LOSS_KEYS + ("total",):
        v = float(getattr(bd, key).detach())
        if not math.isfinite(v):
            raise TrainingAborted(f"non-finite {key} loss ({v}) at epoch {epoch}", component=key, epoch=epoch)


def train(windows: Sequence[WindowTensor] | np.ndarray, config: GenConfig, seed: int = 0,
          deterministic: bool = True, log_path: Optional[str | Path] = None,
          checkpoint_path: Optional[str | Path] = None,
          model: Optional[TCNVAE] = None) -> tuple[TCNVAE, list[EpochRecord]]:
    """Fit the generator on normalized normal windows.

    Returns the final model and one ``EpochRecord`` per completed epoch. With
    ``log_path`` each record is appended as a JSON line; with
    ``checkpoint_path`` the model is written every ``config.checkpoint_every``
    epochs and at termination.
    """
    arr = stack_windows(windows) if len(windows) else np.empty((0,))
    if arr.size == 0 or len(arr) == 0:
        raise EmptyInputError("training requires at least one window")
    if arr.shape[1:] != (config.T, config.D):
        raise EmptyInputError(
            f"windows have shape {arr.shape[1:]}, config expects ({config.T}, {config.D})"
        )

    with deterministic_mode(deterministic):
        torch.manual_seed(seed)
        if model is None:
            model = init_model(config, seed)
        data = torch.as_tensor(arr, dtype=torch.float32)
        n = len(data)
        bs = min(config.batch_size, n)
        opt = torch.optim.Adam(model.parameters(), lr=config.lr, betas=(0.9, 0.999))
        state = TrainState(model, opt, lr=config.lr)
        shuffle_rng = np.random.default_rng(seed)
        gen = torch.Generator().manual_seed(seed)
        log_fh = open(log_path, "w") if log_path else None

        try:
            model.train()
            while True:
                order = shuffle_rng.permutation(n)
                sums = dict.fromkeys(LOSS_KEYS + ("total",), 0.0)
                n_batches = 0
                for start in range(0, n, bs):
                    idx = torch.as_tensor(order[start:start + bs])
                    X = data[idx]
                    X_hat, X_tilde, lat = model(X, gen)
                    bd = total_loss(X, X_hat, X_tilde, lat, config)
                    _check_finite(bd, state.epoch + 1)
                    opt.zero_grad()
                    bd.total.backward()
                    if config.grad_clip:
                        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                    opt.step()
                    for k, v in bd.as_floats().items():
                        sums[k] += v
                    n_batches += 1

                state.epoch += 1
                means = {k: v / n_batches for k, v in sums.items()}
                rec = EpochRecord(
                    epoch=state.epoch, lr=state.lr, psi=float(model.psi.detach().mean()), **means
                )
                state.history.append(rec)
                if log_fh:
                    log_fh.write(rec.to_json() + "\n")

                if rec.total < state.best_total - config.min_delta:
                    state.best_total = rec.total
                    state.plateau = 0
                else:
                    state.plateau += 1
                new_lr = lr_schedule(state.epoch, state.plateau, state.lr,
                                     config.plateau_patience, floor=config.lr_floor)
                if new_lr != state.lr:
                    log.info("epoch %d: lr %.2e -> %.2e", state.epoch, state.lr, new_lr)
                    state.lr = new_lr
                    state.plateau = 0
                    for g in opt.param_groups:
                        g["lr"] = new_lr

                if checkpoint_path and state.epoch % config.checkpoint_every == 0:
                    save_checkpoint(model, checkpoint_path)
                if early_stop(state.history, config.patience, config.max_epochs, config.min_delta):
                    break
        finally:
            if log_fh:
                log_fh.close()
            model.eval()

        if checkpoint_path:
            save_checkpoint(model, checkpoint_path)
    return model, state.history


def save_history(history: Sequence[EpochRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in history:
            fh.write(rec.to_json() + "\n")


def load_history(path: str | Path) -> list[EpochRecord]:
    with open(path) as fh:
        return [EpochRecord(**json.loads(line)) for line in fh if line.strip()]

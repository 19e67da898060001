"""Anomaly synthesis from a trained generator and patching into the source window."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from latentanom.data import (
    BINARY_MAGIC,
    MASK_MAGIC,
    WindowTensor,
    read_binary,
    stack_windows,
    write_binary,
)
from latentanom.errors import ParameterError, ShapeError
from latentanom.model import TCNVAE, perturb_latent

PATCH_MODES = ("deviation", "length", "none")


@dataclass
class PatchConfig:
    mode: str = "deviation"
    tau: float = 0.2
    portion: float = 0.5
    seed: int = 0
    per_dimension: bool = False

    def __post_init__(self):
        if self.mode not in PATCH_MODES:
            raise ParameterError(f"patch mode must be one of {PATCH_MODES}, got {self.mode!r}")
        if self.tau < 0:
            raise ParameterError("tau must be >= 0")
        if not 0 < self.portion <= 1:
            raise ParameterError("portion must lie in (0, 1]")


@dataclass
class PatchedWindow:
    data: np.ndarray
    mask: np.ndarray
    source: tuple = ("", 0)


def _arr(X) -> np.ndarray:
    if isinstance(X, WindowTensor):
        return np.asarray(X.data, dtype=np.float64)
    if isinstance(X, torch.Tensor):
        return X.detach().cpu().numpy().astype(np.float64)
    return np.asarray(X, dtype=np.float64)


def _origin(X) -> tuple:
    return X.origin if isinstance(X, WindowTensor) else ("", 0)


def generate_anomaly(model: TCNVAE, X, rng) -> np.ndarray:
    """Encode, inflate the latent spread by psi, decode. Evaluation mode."""
    arr = _arr(X)
    single = arr.ndim == 2
    xt = torch.as_tensor(arr if not single else arr[None], dtype=torch.float32)
    gen = rng if isinstance(rng, torch.Generator) else torch.Generator().manual_seed(int(rng))
    was = model.training
    model.eval()
    try:
        with torch.no_grad():
            lat = model.encode(xt)
            z_tilde = perturb_latent(lat, model.psi, gen)
            out = model.decode(z_tilde).double().numpy()
    finally:
        model.train(was)
    return out[0] if single else out


def deviation_patch(X, X_tilde, tau: float, per_dimension: bool = False) -> PatchedWindow:
    """Replace cells whose squared deviation exceeds ``tau`` times the
    dimension's amplitude (max - min of X in that dimension).

    With ``per_dimension`` the mean deviation of a whole dimension is compared
    instead and the dimension is swapped wholesale.
    """
    x, xt = _arr(X), _arr(X_tilde)
    if x.shape != xt.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {xt.shape}")
    if tau < 0:
        raise ParameterError("tau must be >= 0")
    deviation = (x - xt) ** 2
    amplitude = x.max(axis=0) - x.min(axis=0)
    threshold = tau * amplitude
    if per_dimension:
        mask = np.broadcast_to(deviation.mean(axis=0) > threshold, x.shape).copy()
    else:
        mask = deviation > threshold
    return PatchedWindow(np.where(mask, xt, x), mask.astype(np.uint8), _origin(X))


def length_patch(X, X_tilde, portion: float, rng) -> PatchedWindow:
    """Swap one contiguous span of ``round(portion * T)`` steps across all dims."""
    if not 0 < portion <= 1:
        raise ParameterError("portion must lie in (0, 1]")
    x, xt = _arr(X), _arr(X_tilde)
    if x.shape != xt.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {xt.shape}")
    rng = np.random.default_rng(rng)
    T = x.shape[0]
    span = max(1, int(round(portion * T)))
    start = int(rng.integers(0, T - span + 1))
    mask = np.zeros(x.shape, dtype=np.uint8)
    mask[start:start + span] = 1
    return PatchedWindow(np.where(mask == 1, xt, x), mask, _origin(X))


def _window_seeds(seed: int, n: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> 1) for c in children]


def batch_inject(model: TCNVAE, windows: Sequence[WindowTensor] | np.ndarray,
                 config: PatchConfig, rng: Optional[int] = None) -> list[PatchedWindow]:
    """Generate and patch one anomaly per window.

    Each window draws its noise from its own stream derived from the seed, so
    the result for a window does not depend on its neighbours in the batch.
    """
    seed = config.seed if rng is None else int(rng)
    arr = stack_windows(windows)
    origins = ([w.origin for w in windows] if not isinstance(windows, np.ndarray)
               else [("", i) for i in range(len(arr))])
    seeds = _window_seeds(seed, len(arr))
    xt = torch.as_tensor(arr, dtype=torch.float32)
    was = model.training
    model.eval()
    try:
        with torch.no_grad():
            lat = model.encode(xt)
            eps = torch.stack([
                torch.randn(lat.mu.shape[1], generator=torch.Generator().manual_seed(s))
                for s in seeds
            ])
            gen = model.decode(perturb_latent(lat, model.psi, eps=eps)).double().numpy()
    finally:
        model.train(was)

    out = []
    for i, (x, g) in enumerate(zip(arr, gen)):
        if config.mode == "deviation":
            pw = deviation_patch(x, g, config.tau, config.per_dimension)
        elif config.mode == "length":
            pw = length_patch(x, g, config.portion, seeds[i])
        else:
            pw = PatchedWindow(g.copy(), np.ones(g.shape, dtype=np.uint8))
        pw.source = origins[i]
        out.append(pw)
    return out


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_injected(path: str | Path, patched: Sequence[PatchedWindow], manifest: dict) -> dict:
    """Write ``<path>`` (windows stacked row-wise), ``<stem>.mask`` and ``<stem>.json``."""
    path = Path(path)
    data = np.stack([p.data for p in patched])
    mask = np.stack([p.mask for p in patched])
    n, T, D = data.shape
    write_binary(path, data.reshape(n * T, D))
    write_binary(path.with_suffix(".mask"), mask.reshape(n * T, D), magic=MASK_MAGIC)
    manifest = dict(manifest, T=T, D=D, n_windows=n)
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_injected(path: str | Path) -> tuple[np.ndarray, np.ndarray, dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    T, D = manifest["T"], manifest["D"]
    data = read_binary(path, BINARY_MAGIC).reshape(-1, T, D)
    mask = read_binary(path.with_suffix(".mask"), MASK_MAGIC).reshape(-1, T, D)
    return data, mask, manifest

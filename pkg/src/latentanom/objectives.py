"""Training objectives for the generator and the hyperparameters that weight them.

All losses take batched tensors shaped ``(B, T, D)`` for windows and ``(B, L)``
for posterior parameters and return a scalar tensor, so they compose with
autograd. Batch reductions are means.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import torch

from latentanom.errors import ParameterError, ShapeError
from latentanom.model import Architecture, LatentGaussian, default_latent_dim


@dataclass
class GenConfig:
    T: int = 200
    D: int = 1
    L: Optional[int] = None
    alpha: float = 1.0
    beta: float = 0.1
    gamma: Optional[float] = None
    zeta: float = 0.1
    delta_min: float = 0.1
    delta_max: float = 0.2
    sigma_prior: float = 0.5
    kl_mode: str = "enhanced"
    batch_size: int = 100
    lr: float = 1e-4
    max_epochs: int = 1000
    patience: int = 100
    plateau_patience: int = 25
    min_delta: float = 1e-5
    lr_floor: float = 1e-6
    grad_clip: float = 5.0
    channels: tuple = (32, 64, 64)
    kernel_size: int = 3
    dilations: tuple = (1, 2, 4)
    dropout: float = 0.1
    psi_mode: str = "scalar"
    checkpoint_every: int = 100

    def __post_init__(self):
        if self.L is None:
            self.L = default_latent_dim(self.D)
        if self.gamma is None:
            self.gamma = 0.0 if self.D == 1 else 0.01
        self.channels = tuple(self.channels)
        self.dilations = tuple(self.dilations)
        for name in ("alpha", "beta", "gamma", "zeta"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative")
        if not 0 < self.delta_min < self.delta_max:
            raise ParameterError("margins must satisfy 0 < delta_min < delta_max")
        if not self.sigma_prior > 0:
            raise ParameterError("sigma_prior must be positive")
        if self.kl_mode not in ("enhanced", "exact"):
            raise ParameterError(f"kl_mode must be 'enhanced' or 'exact', got {self.kl_mode!r}")
        if self.batch_size < 1 or self.max_epochs < 1 or not self.lr > 0:
            raise ParameterError("batch_size, max_epochs and lr must be positive")

    def architecture(self) -> Architecture:
        return Architecture(
            T=self.T, D=self.D, L=self.L, channels=self.channels,
            kernel_size=self.kernel_size, dilations=self.dilations,
            dropout=self.dropout, psi_mode=self.psi_mode,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


@dataclass
class LossBreakdown:
    recon: torch.Tensor
    perturb: torch.Tensor
    zero_perturb: torch.Tensor
    en_kl: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("recon", "perturb", "zero_perturb", "en_kl", "total")}


def _batched(x: torch.Tensor) -> torch.Tensor:
    return x.unsqueeze(0) if x.dim() == 2 else x


def mse_distance(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean squared difference over the last two (time, dim) axes."""
    x, y = torch.as_tensor(x), torch.as_tensor(y)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    return ((x - y) ** 2).mean(dim=(-2, -1))


def recon_loss(X: torch.Tensor, X_hat: torch.Tensor) -> torch.Tensor:
    X, X_hat = _batched(torch.as_tensor(X)), _batched(torch.as_tensor(X_hat))
    if X.shape[0] == 0:
        raise ShapeError("empty batch")
    return mse_distance(X, X_hat).mean()


def perturb_loss(X, X_hat, X_tilde, delta_min: float, delta_max: float) -> torch.Tensor:
    """Triplet hinge (anomaly at least delta_min farther than the reconstruction)
    plus a realism hinge capping its distance at delta_max."""
    if not 0 < delta_min < delta_max:
        raise ParameterError("margins must satisfy 0 < delta_min < delta_max")
    X, X_hat, X_tilde = (_batched(torch.as_tensor(t)) for t in (X, X_hat, X_tilde))
    d_hat = mse_distance(X, X_hat)
    d_tilde = mse_distance(X, X_tilde)
    triplet = torch.clamp(d_hat - d_tilde + delta_min, min=0).mean()
    realism = torch.clamp(d_tilde - delta_max, min=0).mean()
    return triplet + realism


def zero_perturb_loss(X, X_tilde) -> torch.Tensor:
    """Mean of 1 / (squared deviation + 1) over cells of all-zero dimensions.

    Windows without an all-zero dimension are left out of the batch average;
    the loss is 0 when no window has one.
    """
    X, X_tilde = _batched(torch.as_tensor(X)), _batched(torch.as_tensor(X_tilde))
    if X.shape != X_tilde.shape:
        raise ShapeError(f"shape mismatch {tuple(X.shape)} vs {tuple(X_tilde.shape)}")
    zero = (X == 0).all(dim=1)  # (B, D)
    n_zero = zero.sum(dim=1)  # (B,)
    has = n_zero > 0
    if not bool(has.any()):
        return X_tilde.sum() * 0.0
    inv = 1.0 / ((X - X_tilde) ** 2 + 1.0)  # (B, T, D)
    per_window = (inv * zero.unsqueeze(1)).sum(dim=(1, 2)) / (X.shape[1] * n_zero.clamp_min(1))
    return per_window[has].mean()


def enhanced_kl_loss(lat: LatentGaussian, sigma_prior: float) -> torch.Tensor:
    """KL-style regularizer toward N(0, sigma_prior^2), written term by term
    as ``-1/2 sum_j [1 + log s2 - mu2 - s2/sp2 + 2 log sp]`` and averaged over
    the batch."""
    if not sigma_prior > 0:
        raise ParameterError("sigma_prior must be positive")
    mu, sigma = _batched_lat(lat)
    var = sigma ** 2
    bracket = 1 + torch.log(var) - mu ** 2 - var / sigma_prior ** 2 + 2 * math.log(sigma_prior)
    return (-0.5 * bracket.sum(dim=-1)).mean()


def exact_kl_loss(lat: LatentGaussian, sigma_prior: float) -> torch.Tensor:
    """Closed-form KL(N(mu, s2) || N(0, sp2)) summed over latents, batch mean."""
    if not sigma_prior > 0:
        raise ParameterError("sigma_prior must be positive")
    mu, sigma = _batched_lat(lat)
    ratio = sigma ** 2 / sigma_prior ** 2
    kl = 0.5 * (ratio + mu ** 2 / sigma_prior ** 2 - 1 - torch.log(ratio))
    return kl.sum(dim=-1).mean()


def _batched_lat(lat: LatentGaussian):
    mu, sigma = torch.as_tensor(lat.mu), torch.as_tensor(lat.sigma)
    if mu.dim() == 1:
        mu, sigma = mu.unsqueeze(0), sigma.unsqueeze(0)
    if mu.shape != sigma.shape:
        raise ShapeError("mu and sigma shapes differ")
    return mu, sigma


def combine(recon, perturb, zero_perturb, en_kl, config: GenConfig) -> LossBreakdown:
    recon, perturb, zero_perturb, en_kl = (torch.as_tensor(v, dtype=torch.float64)
                                           if not isinstance(v, torch.Tensor) else v
                                           for v in (recon, perturb, zero_perturb, en_kl))
    total = (config.alpha * recon + config.beta * perturb
             + config.gamma * zero_perturb + config.zeta * en_kl)
    return LossBreakdown(recon, perturb, zero_perturb, en_kl, total)


def total_loss(X, X_hat, X_tilde, lat: LatentGaussian, config: GenConfig) -> LossBreakdown:
    kl_fn = enhanced_kl_loss if config.kl_mode == "enhanced" else exact_kl_loss
    return combine(
        recon_loss(X, X_hat),
        perturb_loss(X, X_hat, X_tilde, config.delta_min, config.delta_max),
        zero_perturb_loss(X, X_tilde),
        kl_fn(lat, config.sigma_prior),
        config,
    )

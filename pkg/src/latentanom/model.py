"""TCN-VAE generator: dilated causal conv encoder, Gaussian latent, transpose-conv decoder."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from latentanom.errors import CheckpointError, ParameterError, ShapeError

SIGMA_FLOOR = 1e-4
# keeps psi strictly above 1 in float32 when rho is very negative
PSI_MARGIN = 1e-6
CHECKPOINT_MAGIC = b"GVAE"
CHECKPOINT_VERSION = 1

Generator = Union[torch.Generator, int, None]


def default_latent_dim(D: int) -> int:
    return 50 if D == 1 else 100


@dataclass
class Architecture:
    T: int
    D: int
    L: int
    channels: tuple = (32, 64, 64)
    kernel_size: int = 3
    dilations: tuple = (1, 2, 4)
    dropout: float = 0.1
    psi_mode: str = "scalar"
    psi_init: float = 2.0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.dilations = tuple(int(d) for d in self.dilations)
        if min(self.T, self.D, self.L) <= 0:
            raise ParameterError("T, D and L must be positive")
        if len(self.channels) != len(self.dilations):
            raise ParameterError("channels and dilations must have equal length")
        if self.psi_mode not in ("scalar", "vector"):
            raise ParameterError(f"psi_mode must be 'scalar' or 'vector', got {self.psi_mode!r}")
        if not self.psi_init > 1:
            raise ParameterError("psi_init must exceed 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["dilations"] = list(self.dilations)
        return d


class LatentGaussian(NamedTuple):
    mu: torch.Tensor
    sigma: torch.Tensor

    @property
    def var(self) -> torch.Tensor:
        return self.sigma ** 2


class CausalConv1d(nn.Module):
    def __init__(self, c_in, c_out, kernel_size, dilation):
        super().__init__()
        self.left_pad = (kernel_size - 1) * dilation
        self.conv = nn.Conv1d(c_in, c_out, kernel_size, dilation=dilation)

    def forward(self, x):
        return self.conv(F.pad(x, (self.left_pad, 0)))


def _inverse_softplus(y: float) -> float:
    return math.log(math.expm1(y))


class TCNVAE(nn.Module):
    """Encoder q_phi, decoder g_theta and the perturbation scale psi.

    psi is stored unconstrained as ``rho`` and exposed as ``1 + softplus(rho)``,
    floored at ``1 + PSI_MARGIN``, so it always exceeds one.
    """

    def __init__(self, arch: Architecture):
        super().__init__()
        self.arch = arch
        T, D, L = arch.T, arch.D, arch.L
        k, p = arch.kernel_size, arch.dropout

        layers = []
        c_prev = D
        for c, dil in zip(arch.channels, arch.dilations):
            layers += [CausalConv1d(c_prev, c, k, dil), nn.ReLU(), nn.Dropout(p)]
            c_prev = c
        self.encoder = nn.Sequential(*layers)
        flat = c_prev * T
        self.mu_head = nn.Linear(flat, L)
        self.logvar_head = nn.Linear(flat, L)

        self.dec_in = nn.Linear(L, c_prev * T)
        dec = []
        rev = list(reversed(arch.channels))
        outs = rev[1:] + [D]
        for i, (c_in, c_out) in enumerate(zip(rev, outs)):
            dec.append(nn.ConvTranspose1d(c_in, c_out, k, padding=(k - 1) // 2))
            if i < len(outs) - 1:
                dec += [nn.ReLU(), nn.Dropout(p)]
        self.decoder = nn.Sequential(*dec)
        self._dec_channels = c_prev

        n_psi = 1 if arch.psi_mode == "scalar" else L
        self.rho = nn.Parameter(torch.full((n_psi,), _inverse_softplus(arch.psi_init - 1.0)))

    @property
    def psi(self) -> torch.Tensor:
        return 1.0 + F.softplus(self.rho).clamp_min(PSI_MARGIN)

    def _check_input(self, X: torch.Tensor) -> torch.Tensor:
        if X.dim() == 2:
            X = X.unsqueeze(0)
        if X.dim() != 3 or tuple(X.shape[1:]) != (self.arch.T, self.arch.D):
            raise ShapeError(
                f"expected windows of shape (T={self.arch.T}, D={self.arch.D}), got {tuple(X.shape)}"
            )
        return X

    def encode(self, X: torch.Tensor) -> LatentGaussian:
        X = self._check_input(X)
        h = self.encoder(X.transpose(1, 2)).flatten(1)
        mu = self.mu_head(h)
        logvar = self.logvar_head(h)
        sigma = torch.exp(0.5 * logvar).clamp_min(SIGMA_FLOOR)
        return LatentGaussian(mu, sigma)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() == 1:
            z = z.unsqueeze(0)
        if z.shape[-1] != self.arch.L:
            raise ShapeError(f"latent length {z.shape[-1]} != L={self.arch.L}")
        h = self.dec_in(z).view(z.shape[0], self._dec_channels, self.arch.T)
        return self.decoder(h).transpose(1, 2)

    def forward(self, X, generator: Optional[torch.Generator] = None):
        lat = self.encode(X)
        z = sample_latent(lat, generator)
        z_tilde = perturb_latent(lat, self.psi, generator)
        return self.decode(z), self.decode(z_tilde), lat


def _as_generator(rng: Generator) -> Optional[torch.Generator]:
    if rng is None or isinstance(rng, torch.Generator):
        return rng
    g = torch.Generator()
    g.manual_seed(int(rng))
    return g


def _noise_like(t: torch.Tensor, rng: Generator) -> torch.Tensor:
    return torch.randn(t.shape, generator=_as_generator(rng), dtype=t.dtype, device=t.device)


def sample_latent(lat: LatentGaussian, rng: Generator = None, eps: Optional[torch.Tensor] = None):
    """z = mu + sigma * eps with eps ~ N(0, I)."""
    if eps is None:
        eps = _noise_like(lat.mu, rng)
    return lat.mu + lat.sigma.clamp_min(SIGMA_FLOOR) * eps


def perturb_latent(lat: LatentGaussian, psi, rng: Generator = None, eps: Optional[torch.Tensor] = None):
    """z_tilde = mu + psi * (sigma * eps); the mean is kept, the spread inflated."""
    if eps is None:
        eps = _noise_like(lat.mu, rng)
    psi = torch.as_tensor(psi, dtype=lat.mu.dtype)
    return lat.mu + psi * (lat.sigma.clamp_min(SIGMA_FLOOR) * eps)


def init_model(config, seed: int = 0) -> TCNVAE:
    """Build a freshly initialised model from a GenConfig (or Architecture)."""
    arch = config if isinstance(config, Architecture) else config.architecture()
    state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = TCNVAE(arch)
    finally:
        torch.random.set_rng_state(state)
    return model


def _to_tensor(X) -> torch.Tensor:
    if isinstance(X, torch.Tensor):
        return X.float()
    if hasattr(X, "data") and not isinstance(X, np.ndarray):
        X = X.data
    if isinstance(X, (list, tuple)) and X and hasattr(X[0], "data"):
        X = np.stack([w.data for w in X])
    return torch.as_tensor(np.asarray(X), dtype=torch.float32)


def encode(model: TCNVAE, X) -> LatentGaussian:
    """Posterior parameters in evaluation mode (dropout off)."""
    was = model.training
    model.eval()
    try:
        with torch.no_grad():
            return model.encode(_to_tensor(X))
    finally:
        model.train(was)


def decode(model: TCNVAE, z) -> torch.Tensor:
    was = model.training
    model.eval()
    try:
        with torch.no_grad():
            return model.decode(torch.as_tensor(z, dtype=torch.float32))
    finally:
        model.train(was)


def forward(model: TCNVAE, X, rng: Generator = None):
    """Evaluation-mode pass returning (X_hat, X_tilde, posterior)."""
    was = model.training
    model.eval()
    try:
        with torch.no_grad():
            return model(_to_tensor(X), _as_generator(rng))
    finally:
        model.train(was)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------
#
# layout (little-endian):
#   magic "GVAE" | u16 version | u32 n | descriptor JSON (n bytes)
#   u32 count | count x [u16 name_len | name | u8 ndim | ndim x u32 | f32 payload]

def save_checkpoint(model: TCNVAE, path: str | Path) -> None:
    desc = json.dumps(model.arch.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    state = model.state_dict()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(desc)))
        fh.write(desc)
        fh.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            t = state[name].detach().cpu().to(torch.float32).contiguous()
            bname = name.encode()
            fh.write(struct.pack("<H", len(bname)))
            fh.write(bname)
            fh.write(struct.pack("<B", t.dim()))
            fh.write(struct.pack(f"<{t.dim()}I", *t.shape))
            fh.write(t.numpy().astype("<f4").tobytes())


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def load_checkpoint(path: str | Path) -> TCNVAE:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    r = _Reader(raw, path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (n,) = r.unpack("<I")
    try:
        desc = json.loads(r.take(n).decode())
        arch = Architecture(**desc)
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt architecture descriptor") from exc
    model = TCNVAE(arch)
    (count,) = r.unpack("<I")
    state = {}
    for _ in range(count):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        state[name] = torch.from_numpy(arr.astype(np.float32))
    if r.pos != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after parameters")
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameters do not match descriptor: {exc}") from exc
    model.eval()
    return model

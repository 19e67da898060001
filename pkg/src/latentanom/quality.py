"""Generation quality in a fixed one-class embedding: proximity (ARP) and diversity (EDI)."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import torch
import torch.nn as nn

from latentanom.data import stack_windows
from latentanom.errors import MetricError, ParameterError
from latentanom.trainer import deterministic_mode

log = logging.getLogger(__name__)

EMBED_DIM = 128


class EmbeddingNet(nn.Module):
    # no biases, so the hypersphere objective cannot be met by a constant map
    def __init__(self, D: int, rep_dim: int = EMBED_DIM):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv1d(D, 32, 5, padding=2, bias=False), nn.LeakyReLU(),
            nn.MaxPool1d(2, ceil_mode=True),
            nn.Conv1d(32, 64, 5, padding=2, bias=False), nn.LeakyReLU(),
            nn.AdaptiveAvgPool1d(1), nn.Flatten(),
        )
        self.head = nn.Linear(64, rep_dim, bias=False)

    def forward(self, X):
        return self.head(self.conv(X.transpose(1, 2)))


@dataclass
class EmbeddingModel:
    net: EmbeddingNet
    center: np.ndarray
    epochs: int
    seed: int
    collapsed: bool = False
    history: list = field(default_factory=list)

    def embed(self, windows) -> np.ndarray:
        arr = torch.as_tensor(stack_windows(windows), dtype=torch.float32)
        self.net.eval()
        with torch.no_grad():
            return self.net(arr).double().numpy()

    def mean_distance(self, windows) -> float:
        return float(np.mean(np.sum((self.embed(windows) - self.center) ** 2, axis=1)))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, t in sorted(self.net.state_dict().items()):
            h.update(name.encode())
            h.update(t.detach().numpy().astype("<f4").tobytes())
        h.update(self.center.astype("<f8").tobytes())
        return h.hexdigest()[:16]


def train_embedder(windows, seed: int = 0, epochs: int = 100, lr: float = 1e-3,
                   batch_size: int = 64, deterministic: bool = True) -> EmbeddingModel:
    """One-class embedding: fix the center at the initial mean embedding, then
    pull embeddings toward it."""
    arr = stack_windows(windows)
    if len(arr) < 32:
        raise ParameterError("the embedder needs at least 32 windows")
    X = torch.as_tensor(arr, dtype=torch.float32)
    with deterministic_mode(deterministic):
        torch.manual_seed(seed)
        net = EmbeddingNet(X.shape[2])
        net.eval()
        with torch.no_grad():
            c = net(X).mean(dim=0)
        # keep coordinates away from zero, as in the usual one-class setup
        eps = 0.1
        c[(c.abs() < eps) & (c < 0)] = -eps
        c[(c.abs() < eps) & (c >= 0)] = eps
        opt = torch.optim.Adam(net.parameters(), lr=lr, weight_decay=1e-6)
        rng = np.random.default_rng(seed)
        history = []
        net.train()
        for _ in range(epochs):
            order = torch.as_tensor(rng.permutation(len(X)))
            total = 0.0
            for start in range(0, len(X), batch_size):
                idx = order[start:start + batch_size]
                opt.zero_grad()
                loss = ((net(X[idx]) - c) ** 2).sum(dim=1).mean()
                loss.backward()
                opt.step()
                total += float(loss.detach()) * len(idx)
            history.append(total / len(X))
        net.eval()
        with torch.no_grad():
            emb = net(X)
    collapsed = bool(emb.var(dim=0).mean() < 1e-8)
    if collapsed:
        log.warning("embedding variance below 1e-8; the embedder has collapsed")
    return EmbeddingModel(net, c.double().numpy(), epochs, seed, collapsed, history)


def arp(V_real, V_gen) -> float:
    """1 / (1 + mean over real points of the distance to the nearest generated point)."""
    V_real = np.atleast_2d(np.asarray(V_real, dtype=np.float64))
    V_gen = np.atleast_2d(np.asarray(V_gen, dtype=np.float64))
    if V_real.size == 0 or V_gen.size == 0:
        raise MetricError("ARP needs nonempty real and generated sets")
    nearest = np.array([np.sqrt(((V_gen - v) ** 2).sum(axis=1)).min() for v in V_real])
    return float(1.0 / (1.0 + nearest.mean()))


@dataclass
class Partition:
    centroids: np.ndarray

    @property
    def K(self) -> int:
        return len(self.centroids)

    def assign(self, V) -> np.ndarray:
        V = np.atleast_2d(np.asarray(V, dtype=np.float64))
        d = ((V[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d, axis=1)  # ties go to the lowest index


def default_k(n_all: int) -> int:
    return max(2, min(32, n_all // 10))


def build_partition(V_all, K: int, seed: int = 0, max_iter: int = 300) -> Partition:
    """K-means (k-means++ seeding, Lloyd iterations) over the pooled embeddings."""
    V = np.atleast_2d(np.asarray(V_all, dtype=np.float64))
    n = len(V)
    if K < 2 or n < K:
        raise ParameterError(f"need |V_all| >= K >= 2, got |V_all|={n}, K={K}")
    rng = np.random.default_rng(seed)

    chosen = [int(rng.integers(n))]
    d2 = ((V - V[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            choice = int(rng.choice(n, p=d2 / total))
        else:
            # every point sits on a chosen centroid; take an unused index
            choice = int(rng.choice(np.setdiff1d(np.arange(n), chosen)))
        chosen.append(choice)
        d2 = np.minimum(d2, ((V - V[choice]) ** 2).sum(axis=1))
    C = V[chosen].copy()

    part = Partition(C)
    labels = part.assign(V)
    for _ in range(max_iter):
        newC = C.copy()
        for k in range(K):
            members = V[labels == k]
            if len(members):
                newC[k] = members.mean(axis=0)
            else:
                # reseed an empty region at the point farthest from its centroid
                far = int(np.argmax(((V - newC[labels]) ** 2).sum(axis=1)))
                newC[k] = V[far]
        part = Partition(newC)
        new_labels = part.assign(V)
        if np.array_equal(new_labels, labels) and np.allclose(newC, C):
            break
        C, labels = newC, new_labels
    return Partition(C)


def edi(V_gen, partition: Partition, normalize: bool = True) -> float:
    """Shannon entropy (nats) of region occupancy, divided by log K when normalized."""
    V = np.atleast_2d(np.asarray(V_gen, dtype=np.float64))
    if V.size == 0:
        raise MetricError("EDI needs a nonempty generated set")
    counts = np.bincount(partition.assign(V), minlength=partition.K)
    p = counts[counts > 0] / counts.sum()
    h = max(float(-(p * np.log(p)).sum()), 0.0)
    return h / np.log(partition.K) if normalize else h


@dataclass
class EmbeddingSpace:
    V_real: np.ndarray
    V_gen: dict
    partition: Partition

    @property
    def V_all(self) -> np.ndarray:
        return np.concatenate(list(self.V_gen.values()))


def evaluate_generation(embedder: EmbeddingModel, real_anomalies, generated: Mapping[str, object],
                        K: Optional[int] = None, seed: int = 0) -> tuple[dict, EmbeddingSpace]:
    """ARP and EDI for every generator in ``generated`` (name -> windows)."""
    V_real = embedder.embed(real_anomalies)
    V_gen = {name: embedder.embed(w) for name, w in generated.items()}
    V_all = np.concatenate(list(V_gen.values()))
    K = K or default_k(len(V_all))
    part = build_partition(V_all, K, seed)
    per = {name: {"arp": arp(V_real, v), "edi": edi(v, part), "n_gen": len(v)}
           for name, v in V_gen.items()}
    return {"K": K, "n_real": len(V_real), "per_generator": per,
            "embedder_hash": embedder.fingerprint(), "seed": seed}, EmbeddingSpace(V_real, V_gen, part)

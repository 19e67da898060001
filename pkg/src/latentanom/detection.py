"""Window-level detection: reconstruction scoring, a classifier stand-in detector,
and threshold metrics (best F1, AUPR, AUROC)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from latentanom.data import stack_windows
from latentanom.errors import EmptyInputError, MetricError, ShapeError
from latentanom.trainer import deterministic_mode


@dataclass
class ScoredWindows:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.scores) != len(self.labels):
            raise ShapeError("scores and labels differ in length")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise MetricError("labels must be 0 or 1")
        if self.labels.min(initial=1) != 0 or self.labels.max(initial=0) != 1:
            raise MetricError("metrics need at least one normal and one anomalous window")


def _rank_average(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def detection_metrics(scored: ScoredWindows) -> dict:
    """Best F1 over every distinct cut, step-integral AUPR, and rank AUROC.

    Cuts sit midway between consecutive distinct scores plus at +/-inf; a
    window is flagged when its score exceeds the cut.
    """
    if not isinstance(scored, ScoredWindows):
        scored = ScoredWindows(*scored)
    s, y = scored.scores, scored.labels
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos

    uniq = np.unique(s)[::-1]  # descending
    pos_at = np.array([int(y[s == u].sum()) for u in uniq])
    cnt_at = np.array([int((s == u).sum()) for u in uniq])
    tp = np.concatenate([[0], np.cumsum(pos_at)])
    flagged = np.concatenate([[0], np.cumsum(cnt_at)])
    fp = flagged - tp
    cuts = np.concatenate([[np.inf], (uniq[:-1] + uniq[1:]) / 2, [-np.inf]])

    f1 = np.where(tp > 0, 2 * tp / np.maximum(tp + fp + n_pos, 1), 0.0)
    k = int(np.argmax(f1))

    recall = tp / n_pos
    precision = np.where(flagged > 0, tp / np.maximum(flagged, 1), 1.0)
    aupr = float(np.sum(np.diff(recall) * precision[1:]))

    ranks = _rank_average(s)
    auroc = float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))

    return {"best_f1": float(f1[k]), "best_threshold": float(cuts[k]),
            "aupr": aupr, "auroc": auroc,
            "n_windows": int(len(y)), "prevalence": n_pos / len(y)}


def recon_score(model, windows) -> np.ndarray:
    """Per-window MSE between X and the decoded posterior mean (no sampling)."""
    arr = torch.as_tensor(stack_windows(windows), dtype=torch.float32)
    was = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = []
            for chunk in torch.split(arr, 512):
                lat = model.encode(chunk)
                out.append(((model.decode(lat.mu) - chunk) ** 2).mean(dim=(1, 2)))
    finally:
        model.train(was)
    return torch.cat(out).double().numpy()


def with_differences(X: torch.Tensor) -> torch.Tensor:
    """Append first differences (zero at t=0) as extra channels: (B, T, D) -> (B, T, 2D)."""
    return torch.cat([X, torch.diff(X, dim=1, prepend=X[:, :1])], dim=2)


class WindowClassifier(nn.Module):
    """Two dilated conv layers over [X, dX], then max- and mean-pooled features."""

    def __init__(self, D: int, hidden: int = 32):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv1d(2 * D, hidden, 5, padding=2), nn.ReLU(),
            nn.Conv1d(hidden, hidden, 5, padding=4, dilation=2), nn.ReLU(),
        )
        self.head = nn.Linear(2 * hidden, 1)

    def forward(self, X):  # (B, T, D) -> logits (B,)
        f = self.conv(with_differences(X).transpose(1, 2))
        return self.head(torch.cat([f.amax(dim=2), f.mean(dim=2)], dim=1)).squeeze(-1)


class ClassifierDetector:
    """Scores windows with the probability of being anomalous."""

    def __init__(self, net: WindowClassifier):
        self.net = net

    def score(self, windows) -> np.ndarray:
        arr = torch.as_tensor(stack_windows(windows), dtype=torch.float32)
        self.net.eval()
        with torch.no_grad():
            return torch.sigmoid(self.net(arr)).double().numpy()

    __call__ = score


def train_classifier_detector(normal_windows, generated_anomalies, seed: int = 0,
                              epochs: int = 30, lr: float = 1e-3, batch_size: int = 64,
                              hidden: int = 32, deterministic: bool = True) -> ClassifierDetector:
    """Binary classifier of normal windows (0) versus generated anomalies (1)."""
    if len(normal_windows) == 0 or len(generated_anomalies) == 0:
        raise EmptyInputError("both normal windows and anomalies are required")
    normal = stack_windows(normal_windows)
    anom = stack_windows(generated_anomalies)
    if normal.shape[1:] != anom.shape[1:]:
        raise ShapeError("normal and anomalous windows differ in shape")
    X = torch.as_tensor(np.concatenate([normal, anom]), dtype=torch.float32)
    y = torch.cat([torch.zeros(len(normal)), torch.ones(len(anom))])
    # balance classes in the loss
    pos_weight = torch.tensor(len(normal) / len(anom))

    with deterministic_mode(deterministic):
        torch.manual_seed(seed)
        net = WindowClassifier(X.shape[2], hidden)
        opt = torch.optim.Adam(net.parameters(), lr=lr)
        loss_fn = nn.BCEWithLogitsLoss(pos_weight=pos_weight)
        rng = np.random.default_rng(seed)
        net.train()
        for _ in range(epochs):
            order = torch.as_tensor(rng.permutation(len(X)))
            for start in range(0, len(X), batch_size):
                idx = order[start:start + batch_size]
                opt.zero_grad()
                loss = loss_fn(net(X[idx]), y[idx])
                loss.backward()
                opt.step()
        net.eval()
    return ClassifierDetector(net)

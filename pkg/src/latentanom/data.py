"""Series ingestion, windowing, min-max normalization and synthetic corpora."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from latentanom.errors import (
    DataFormatError,
    EmptyInputError,
    ParameterError,
    ShapeError,
    ValidationError,
)

BINARY_MAGIC = b"GTS1"
MASK_MAGIC = b"GTM1"
_HEADER = struct.Struct("<4sII")


@dataclass
class RawSeries:
    values: np.ndarray
    labels: Optional[np.ndarray] = None
    name: str = "series"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.ndim != 2:
            raise ShapeError(f"series values must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise ValidationError(
                f"non-finite value at row {bad[0] + 1}, column dim_{bad[1]}"
            )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != len(self.values):
                raise ValidationError(
                    f"labels length {len(self.labels)} != series length {len(self.values)}"
                )

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class WindowTensor:
    data: np.ndarray
    origin: tuple[str, int] = ("", 0)
    label: Optional[int] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class NormStats:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        if np.any(self.max < self.min):
            raise ValidationError("normalizer max must be >= min in every dimension")

    @property
    def dims(self) -> int:
        return len(self.min)

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))


# --------------------------------------------------------------------------
# file I/O
# --------------------------------------------------------------------------

def labels_path_for(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".labels.csv")


def _infer_format(path: Path) -> str:
    return "binary" if path.suffix.lower() in (".gts", ".bin") else "csv"


def _read_csv_values(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        expected = [f"dim_{i}" for i in range(len(header))]
        if header != expected:
            raise DataFormatError(f"{path}: header must be {','.join(expected)}, got {','.join(header)}")
        rows = []
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
            parsed = []
            for j, cell in enumerate(row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValidationError(
                        f"{path}: non-numeric cell {cell!r} at row {i}, column dim_{j}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise EmptyInputError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def _read_labels(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["label"]:
            raise DataFormatError(f"{path}: labels file must have a single 'label' column")
        out = []
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            try:
                v = int(float(row[0]))
            except ValueError:
                raise ValidationError(f"{path}: non-numeric label at row {i}") from None
            if v not in (0, 1):
                raise ValidationError(f"{path}: label at row {i} must be 0 or 1, got {v}")
            out.append(v)
    return np.asarray(out, dtype=np.int64)


def read_binary(path: str | Path, magic: bytes = BINARY_MAGIC) -> np.ndarray:
    """Read a versioned ``N x D`` array; f64 payload for series, u8 for masks."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    got, n, d = _HEADER.unpack_from(raw)
    if got != magic:
        raise DataFormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    dtype = np.dtype("<f8") if magic == BINARY_MAGIC else np.dtype("u1")
    expected = _HEADER.size + n * d * dtype.itemsize
    if len(raw) != expected:
        raise DataFormatError(f"{path}: payload is {len(raw) - _HEADER.size} bytes, expected {expected - _HEADER.size}")
    return np.frombuffer(raw, dtype=dtype, offset=_HEADER.size).reshape(n, d).copy()


def write_binary(path: str | Path, array: np.ndarray, magic: bytes = BINARY_MAGIC) -> None:
    array = np.asarray(array)
    if array.ndim != 2:
        raise ShapeError(f"binary format stores 2-D arrays, got shape {array.shape}")
    dtype = "<f8" if magic == BINARY_MAGIC else "u1"
    n, d = array.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, n, d))
        fh.write(np.ascontiguousarray(array, dtype=dtype).tobytes())


def load_series(path: str | Path, format: Optional[str] = None) -> RawSeries:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    format = format or _infer_format(path)
    if format == "csv":
        values = _read_csv_values(path)
    elif format == "binary":
        values = read_binary(path)
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise ValidationError(f"{path}: non-finite value at row {bad[0] + 1}, column dim_{bad[1]}")
    else:
        raise DataFormatError(f"unknown format {format!r}")
    lp = labels_path_for(path)
    labels = _read_labels(lp) if lp.exists() else None
    name = path.stem
    return RawSeries(values, labels, name)


def save_series(series: RawSeries, path: str | Path, format: Optional[str] = None) -> None:
    path = Path(path)
    format = format or _infer_format(path)
    if format == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"dim_{i}" for i in range(series.values.shape[1])])
            for row in series.values:
                w.writerow([repr(float(v)) for v in row])
    else:
        write_binary(path, series.values)
    if series.labels is not None:
        with open(labels_path_for(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label"])
            w.writerows([[int(v)] for v in series.labels])


# --------------------------------------------------------------------------
# windows and normalization
# --------------------------------------------------------------------------

def make_windows(series: RawSeries, T: int, stride: int = 1) -> list[WindowTensor]:
    if T <= 0 or stride <= 0:
        raise ParameterError("window length and stride must be positive")
    n = len(series)
    if T > n:
        raise EmptyInputError(f"window length {T} exceeds series length {n}")
    count = (n - T) // stride + 1
    out = []
    for i in range(count):
        start = i * stride
        label = None
        if series.labels is not None:
            label = int(series.labels[start:start + T].any())
        out.append(WindowTensor(series.values[start:start + T].copy(), (series.name, start), label))
    return out


def stack_windows(windows: Sequence[WindowTensor] | np.ndarray) -> np.ndarray:
    """Return an ``(n, T, D)`` float64 array from windows or an existing array."""
    if isinstance(windows, np.ndarray):
        arr = windows
        if arr.ndim == 2:
            arr = arr[None]
        return arr.astype(np.float64, copy=False)
    if len(windows) == 0:
        raise EmptyInputError("no windows")
    return np.stack([np.asarray(w.data, dtype=np.float64) for w in windows])


def window_labels(windows: Sequence[WindowTensor]) -> Optional[np.ndarray]:
    if any(w.label is None for w in windows):
        return None
    return np.asarray([w.label for w in windows], dtype=np.int64)


def windows_from_array(arr: np.ndarray, name: str = "windows",
                       labels: Optional[Iterable[int]] = None) -> list[WindowTensor]:
    arr = np.asarray(arr, dtype=np.float64)
    labels = [None] * len(arr) if labels is None else [int(v) for v in labels]
    return [WindowTensor(arr[i].copy(), (name, i), labels[i]) for i in range(len(arr))]


def fit_normalizer(train_windows: Sequence[WindowTensor] | np.ndarray) -> NormStats:
    arr = stack_windows(train_windows)
    if arr.size == 0:
        raise EmptyInputError("cannot fit normalizer on empty data")
    flat = arr.reshape(-1, arr.shape[-1])
    return NormStats(flat.min(axis=0), flat.max(axis=0))


def _normalize_array(arr: np.ndarray, stats: NormStats) -> np.ndarray:
    if arr.shape[-1] != stats.dims:
        raise ShapeError(f"data has {arr.shape[-1]} dims, normalizer has {stats.dims}")
    span = stats.max - stats.min
    safe = np.where(span > 0, span, 1.0)
    out = (arr - stats.min) / safe
    # constant dimensions map to 0
    return np.where(span > 0, out, 0.0)


def apply_normalizer(windows, stats: NormStats):
    """Min-max scale windows (list of WindowTensor or array) with train stats."""
    if isinstance(windows, np.ndarray):
        return _normalize_array(windows.astype(np.float64), stats)
    return [WindowTensor(_normalize_array(w.data, stats), w.origin, w.label) for w in windows]


def invert_normalizer(windows, stats: NormStats):
    span = stats.max - stats.min
    if isinstance(windows, np.ndarray):
        if windows.shape[-1] != stats.dims:
            raise ShapeError(f"data has {windows.shape[-1]} dims, normalizer has {stats.dims}")
        return windows * span + stats.min
    return [WindowTensor(w.data * span + stats.min, w.origin, w.label) for w in windows]


def zero_dims(X) -> set[int]:
    data = X.data if isinstance(X, WindowTensor) else np.asarray(X)
    return {int(d) for d in np.flatnonzero(np.all(data == 0, axis=0))}


# --------------------------------------------------------------------------
# synthetic corpora
# --------------------------------------------------------------------------

def synth_series(kind: str, N: int, D: int, seed: int, noise: float = 0.05,
                 name: Optional[str] = None) -> RawSeries:
    """A continuous normal series of ``N`` steps; parameters drawn per dimension."""
    if N < 1 or D < 1:
        raise ParameterError("N and D must be positive")
    rng = np.random.default_rng(seed)
    t = np.arange(N, dtype=np.float64)
    values = np.empty((N, D))
    if kind == "sine_mix":
        for d in range(D):
            amp = rng.uniform(0.5, 1.5, size=2)
            period = rng.uniform(15.0, 60.0, size=2)
            phase = rng.uniform(0.0, 2 * np.pi, size=2)
            base = sum(a * np.sin(2 * np.pi * t / p + ph) for a, p, ph in zip(amp, period, phase))
            values[:, d] = base + noise * rng.standard_normal(N)
    elif kind == "ar_process":
        for d in range(D):
            # stable AR(2): complex roots with modulus r < 1
            r = rng.uniform(0.85, 0.97)
            theta = rng.uniform(0.1, 0.5)
            a1, a2 = 2 * r * np.cos(theta), -r * r
            e = rng.standard_normal(N + 100)
            x = np.zeros(N + 100)
            for i in range(2, N + 100):
                x[i] = a1 * x[i - 1] + a2 * x[i - 2] + e[i]
            values[:, d] = x[100:]
    else:
        raise ParameterError(f"unknown synthetic kind {kind!r}")
    return RawSeries(values, np.zeros(N, dtype=np.int64), name or f"{kind}_{seed}")


def synth_normal(kind: str, T: int, D: int, count: int, seed: int,
                 noise: float = 0.05) -> list[WindowTensor]:
    if count < 1:
        raise ParameterError("count must be >= 1")
    if T < 1:
        raise ParameterError("T must be positive")
    series = synth_series(kind, T * count, D, seed, noise=noise)
    return make_windows(series, T, stride=T)


INJECT_KINDS = ("spike", "level_shift", "noise_burst")


def synth_inject(windows: Sequence[WindowTensor], kind: str, magnitude: float, seed: int,
                 fraction: float = 0.5) -> tuple[list[WindowTensor], np.ndarray]:
    """Corrupt a seeded subset of windows with a known anomaly family.

    ``kind`` may also be ``"mixed"``, which draws one of spike/level_shift per
    selected window.
    """
    if not magnitude > 0:
        raise ParameterError("magnitude must be > 0")
    if not 0 < fraction <= 1:
        raise ParameterError("fraction must lie in (0, 1]")
    if kind not in INJECT_KINDS + ("mixed",):
        raise ParameterError(f"unknown anomaly kind {kind!r}")
    rng = np.random.default_rng(seed)
    n = len(windows)
    n_bad = max(1, int(round(fraction * n)))
    chosen = set(rng.choice(n, size=n_bad, replace=False).tolist())
    out, labels = [], np.zeros(n, dtype=np.int64)
    for i, w in enumerate(windows):
        data = np.array(w.data, dtype=np.float64, copy=True)
        if i in chosen:
            T, D = data.shape
            k = kind if kind != "mixed" else ("spike", "level_shift")[rng.integers(2)]
            d = int(rng.integers(D))
            sign = 1.0 if rng.random() < 0.5 else -1.0
            if k == "spike":
                length = int(rng.integers(1, min(3, T) + 1))
                start = int(rng.integers(0, T - length + 1))
                data[start:start + length, d] += sign * magnitude
            elif k == "level_shift":
                length = int(rng.integers(max(1, T // 5), max(2, T // 2) + 1))
                start = int(rng.integers(0, T - length + 1))
                data[start:start + length, d] += sign * magnitude
            else:
                length = int(rng.integers(max(1, T // 10), max(2, T // 3) + 1))
                start = int(rng.integers(0, T - length + 1))
                data[start:start + length, d] += magnitude * rng.standard_normal(length)
            labels[i] = 1
        out.append(WindowTensor(data, w.origin, int(labels[i])))
    return out, labels


def synth_corpus(kind: str, T: int, D: int, n_train: int, n_test: int, seed: int,
                 anomaly: str = "mixed", magnitude: float = 0.5, fraction: float = 0.5,
                 name: Optional[str] = None) -> tuple[RawSeries, RawSeries]:
    """A normal training series followed by a labeled test series from the same process.

    Anomalies are injected into non-overlapping test windows in min-max units of
    the training data, then mapped back to raw units. Timestep labels mark every
    step where some dimension was altered.
    """
    name = name or f"{kind}_{D}d"
    full = synth_series(kind, (n_train + n_test) * T, D, seed, name=name)
    cut = n_train * T
    train = RawSeries(full.values[:cut], None, f"{name}_train")
    stats = fit_normalizer(train.values[None])
    clean = RawSeries(full.values[cut:], None, f"{name}_test")
    windows = apply_normalizer(make_windows(clean, T, stride=T), stats)
    bad, _ = synth_inject(windows, anomaly, magnitude, seed + 1, fraction)
    values = invert_normalizer(stack_windows(bad), stats).reshape(-1, D)
    # untouched cells survive the normalize/invert round trip up to float error
    labels = np.any(~np.isclose(values, clean.values, rtol=0, atol=1e-12), axis=1).astype(np.int64)
    return train, RawSeries(values, labels, f"{name}_test")


# --------------------------------------------------------------------------
# bundled corpora
# --------------------------------------------------------------------------

BUNDLED_PREFIX = "bundled:"
CORPUS_DIR = Path(__file__).resolve().parent / "corpora"

# name -> synth_corpus arguments; every corpus writes <name>_train.csv and
# <name>_test.csv (+ labels)
BUNDLED_CORPORA = {
    "sine_uts": dict(kind="sine_mix", T=64, D=1, n_train=200, n_test=200, seed=0),
    "sine_mts": dict(kind="sine_mix", T=64, D=3, n_train=200, n_test=100, seed=1),
    "ar_uts": dict(kind="ar_process", T=64, D=1, n_train=200, n_test=100, seed=2),
}


def write_bundled_corpora(directory: str | Path = CORPUS_DIR) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, kwargs in BUNDLED_CORPORA.items():
        train, test = synth_corpus(name=name, **kwargs)
        for part, series in (("train", train), ("test", test)):
            path = directory / f"{name}_{part}.csv"
            save_series(series, path)
            written.append(path)
    return written


def resolve_data_path(spec: str | Path) -> Path:
    """Map ``bundled:<corpus>_<train|test>`` to the shipped file; pass other paths through."""
    s = str(spec)
    if not s.startswith(BUNDLED_PREFIX):
        return Path(s)
    name = s[len(BUNDLED_PREFIX):]
    path = CORPUS_DIR / f"{name}.csv"
    if not path.exists():
        known = sorted(f"{c}_{p}" for c in BUNDLED_CORPORA for p in ("train", "test"))
        raise FileNotFoundError(f"unknown bundled corpus {name!r}; available: {', '.join(known)}")
    return path

"""Command-line pipelines: train, inject, evaluate, verify, plot, sweep.

Exit codes
    0  success
    2  configuration error
    3  data error (missing or malformed input series)
    4  training aborted (non-finite loss)
    5  checkpoint unreadable or inconsistent with the data
    6  required artifact or labels missing
    7  theory verification failed
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from latentanom import __version__
from latentanom.config import RunConfig, expand_grid, load_config, save_config, set_dotted
from latentanom.data import (
    NormStats,
    apply_normalizer,
    fit_normalizer,
    load_series,
    make_windows,
    read_binary,
    resolve_data_path,
    stack_windows,
    window_labels,
    write_binary,
)
from latentanom.detection import ScoredWindows, detection_metrics, recon_score, train_classifier_detector
from latentanom.errors import (
    CheckpointError,
    ConfigError,
    DataFormatError,
    EmptyInputError,
    MetricError,
    ParameterError,
    ShapeError,
    TrainingAborted,
    ValidationError,
)
from latentanom.injector import PatchConfig, batch_inject, file_sha256, load_injected, save_injected
from latentanom.model import load_checkpoint
from latentanom.quality import evaluate_generation, train_embedder
from latentanom.theory import run_verification
from latentanom.trainer import train

EXIT_CONFIG, EXIT_DATA, EXIT_ABORT, EXIT_MISMATCH, EXIT_MISSING, EXIT_VERIFY = 2, 3, 4, 5, 6, 7

MODEL_FILE = "model.gvae"
LOG_FILE = "train_log.jsonl"
STATS_FILE = "norm_stats.json"
INJECTED_FILE = "injected.gts"
SNAPSHOT_FILE = "resolved_config.yaml"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _finite_or_none(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_none(v) for v in obj]
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_finite_or_none(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


# --------------------------------------------------------------------------
# loading helpers
# --------------------------------------------------------------------------

def _load_data(path_spec: Optional[str], what: str = "data"):
    if not path_spec:
        raise CliError(EXIT_DATA, f"no {what} path given (use --{'data' if what == 'data' else 'test'} or the config)")
    try:
        path = resolve_data_path(path_spec)
        return load_series(path), path
    except FileNotFoundError as exc:
        raise CliError(EXIT_DATA, f"{what} file not found: {exc}") from exc
    except (DataFormatError, ValidationError, ShapeError) as exc:
        raise CliError(EXIT_DATA, f"cannot read {what} {path_spec}: {exc}") from exc


def _windows(series, T: int, stride: Optional[int]):
    try:
        return make_windows(series, T, stride or T)
    except (EmptyInputError, ParameterError) as exc:
        raise CliError(EXIT_DATA, f"cannot window {series.name}: {exc}") from exc


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CliError(EXIT_MISSING, f"missing {what}: {path}")
    return path


def _model_dir(cfg: RunConfig) -> Path:
    if not cfg.model_dir:
        raise CliError(EXIT_MISSING, "no model directory given (use --model-dir)")
    return Path(cfg.model_dir)


def _load_model(model_dir: Path):
    ckpt = _require(model_dir / MODEL_FILE, "checkpoint")
    stats_path = _require(model_dir / STATS_FILE, "normalization stats")
    try:
        model = load_checkpoint(ckpt)
    except CheckpointError as exc:
        raise CliError(EXIT_MISMATCH, str(exc)) from exc
    stats = NormStats.from_dict(json.loads(stats_path.read_text()))
    return model, stats, ckpt


def _check_compatible(model, stats: NormStats, D: int, T: Optional[int] = None, what: str = "data"):
    arch = model.arch
    if D != arch.D or stats.dims != arch.D:
        raise CliError(EXIT_MISMATCH, f"{what} has {D} dims but the checkpoint expects {arch.D}")
    if T is not None and T != arch.T:
        raise CliError(EXIT_MISMATCH, f"{what} windows have length {T} but the checkpoint expects {arch.T}")


def _normal_windows(cfg: RunConfig, model, stats):
    series, path = _load_data(cfg.data.path)
    _check_compatible(model, stats, series.values.shape[1])
    return apply_normalizer(_windows(series, model.arch.T, cfg.data.stride), stats), path


# --------------------------------------------------------------------------
# pipelines
# --------------------------------------------------------------------------

def run_train(cfg: RunConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    series, path = _load_data(cfg.data.path)
    T, D = cfg.data.window, series.values.shape[1]
    windows = _windows(series, T, cfg.data.stride)
    stats = fit_normalizer(windows)
    gen = cfg.gen_config(T, D)
    cfg.model = {k: v for k, v in gen.to_dict().items() if k not in ("T", "D")}
    save_config(cfg, out / SNAPSHOT_FILE)
    print(f"training on {len(windows)} windows (T={T}, D={D}, L={gen.L}) from {path}")
    t0 = time.time()
    try:
        model, history = train(apply_normalizer(windows, stats), gen, seed=cfg.seed,
                               deterministic=cfg.deterministic, log_path=out / LOG_FILE,
                               checkpoint_path=out / MODEL_FILE)
    except TrainingAborted as exc:
        raise CliError(EXIT_ABORT, f"training aborted: {exc}") from exc
    write_json(out / STATS_FILE, stats.to_dict())
    last = history[-1]
    print(f"done: {len(history)} epochs in {time.time() - t0:.1f}s, "
          f"recon {last.recon:.4f}, total {last.total:.4f}, psi {last.psi:.3f}")
    return {"epochs": len(history), "final": last.__dict__}


def run_inject(cfg: RunConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    model_dir = _model_dir(cfg)
    model, stats, ckpt = _load_model(model_dir)
    windows, path = _normal_windows(cfg, model, stats)
    pcfg = cfg.patch_config()
    save_config(cfg, out / SNAPSHOT_FILE)
    patched = batch_inject(model, windows, pcfg)
    raw = batch_inject(model, windows, PatchConfig(mode="none", seed=pcfg.seed))
    manifest = {
        "checkpoint_sha256": file_sha256(ckpt), "mode": pcfg.mode, "tau": pcfg.tau,
        "portion": pcfg.portion, "per_dimension": pcfg.per_dimension, "seed": pcfg.seed,
        "source": str(path),
    }
    manifest = save_injected(out / INJECTED_FILE, patched, manifest)
    n, T, D = len(patched), model.arch.T, model.arch.D
    write_binary(out / "source.gts", stack_windows(windows).reshape(n * T, D))
    write_binary(out / "generated.gts", np.stack([p.data for p in raw]).reshape(n * T, D))
    frac = float(np.mean([p.mask.mean() for p in patched]))
    print(f"injected {n} windows (mode={pcfg.mode}); mean patched fraction {frac:.3f}")
    return manifest


def _load_injected_dir(injected_dir: Path):
    path = _require(injected_dir / INJECTED_FILE, "injected dataset")
    _require(path.with_suffix(".mask"), "injected mask")
    _require(path.with_suffix(".json"), "injected manifest")
    try:
        return load_injected(path)
    except (DataFormatError, ValueError) as exc:
        raise CliError(EXIT_DATA, f"cannot read injected dataset: {exc}") from exc


def run_evaluate(cfg: RunConfig, out: Path) -> tuple[dict, list[dict]]:
    out.mkdir(parents=True, exist_ok=True)
    model_dir = _model_dir(cfg)
    model, stats, ckpt = _load_model(model_dir)
    if not cfg.injected:
        raise CliError(EXIT_MISSING, "no injected dataset given (use --injected)")
    injected_dir = Path(cfg.injected)
    patched, _, manifest = _load_injected_dir(injected_dir)
    _check_compatible(model, stats, patched.shape[2], patched.shape[1], "injected dataset")

    test, test_path = _load_data(cfg.evaluate.test_path, "test")
    if test.labels is None:
        raise CliError(EXIT_MISSING, f"test series {test_path} has no labels file")
    _check_compatible(model, stats, test.values.shape[1], what="test data")
    normals, _ = _normal_windows(cfg, model, stats)
    test_w = apply_normalizer(_windows(test, model.arch.T, cfg.data.eval_stride), stats)
    labels = window_labels(test_w)
    save_config(cfg, out / SNAPSHOT_FILE)

    model_hash = file_sha256(ckpt)
    scores, reports = {}, []
    for kind in cfg.evaluate.detectors:
        if kind == "classifier":
            det = train_classifier_detector(normals, patched, seed=cfg.seed,
                                            epochs=cfg.evaluate.classifier_epochs,
                                            deterministic=cfg.deterministic)
            scores[kind] = det.score(test_w)
        elif kind == "recon":
            scores[kind] = recon_score(model, test_w)
        else:
            raise CliError(EXIT_CONFIG, f"unknown detector {kind!r} (use classifier or recon)")
        try:
            m = detection_metrics(ScoredWindows(scores[kind], labels))
        except MetricError as exc:
            raise CliError(EXIT_DATA, f"test set unusable: {exc}") from exc
        reports.append({"dataset": test.name, "model_hash": model_hash, "detector": kind, **m})
        print(f"{kind:>10}: best_f1 {m['best_f1']:.3f}  aupr {m['aupr']:.3f}  auroc {m['auroc']:.3f}")
    write_json(out / "detection_report.json", reports)

    with open(out / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "start", "label", *scores])
        for i, tw in enumerate(test_w):
            w.writerow([i, tw.origin[1], int(labels[i]), *(repr(float(s[i])) for s in scores.values())])
    with open(out / "separation_scores.csv", "w", newline="") as fh:
        # normal training windows (0) against generated-and-patched anomalies (1)
        w = csv.writer(fh)
        w.writerow(["window", "label", "recon"])
        for label, vals in ((0, recon_score(model, normals)), (1, recon_score(model, patched))):
            for i, v in enumerate(vals):
                w.writerow([i, label, repr(float(v))])

    gen_report = _generation_report(cfg, normals, test_w, labels, patched, injected_dir, out)
    write_json(out / "generation_report.json", gen_report)
    return gen_report, reports


def _generation_report(cfg, normals, test_w, labels, patched, injected_dir: Path, out: Path) -> dict:
    real = [w for w, y in zip(test_w, labels) if y == 1]
    if not real:
        raise CliError(EXIT_DATA, "test set has no anomalous windows to compare against")
    try:
        embedder = train_embedder(normals, seed=cfg.seed, epochs=cfg.evaluate.embed_epochs,
                                  deterministic=cfg.deterministic)
    except ParameterError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc
    generated = {"patched": patched}
    raw_path = injected_dir / "generated.gts"
    if raw_path.exists():
        generated["unpatched"] = read_binary(raw_path).reshape(patched.shape)
    try:
        report, space = evaluate_generation(embedder, real, generated, K=cfg.evaluate.K, seed=cfg.seed)
    except ParameterError as exc:
        raise CliError(EXIT_CONFIG, f"cannot partition the embedding space: {exc}") from exc
    primary = report["per_generator"]["patched"]
    report.update(arp=primary["arp"], edi=primary["edi"], n_gen=primary["n_gen"])
    print(f"generation: arp {report['arp']:.4f}  edi {report['edi']:.4f}  (K={report['K']})")

    from latentanom.plotting import pca_2d

    basis = np.concatenate([space.V_real, space.V_all])
    with open(out / "embeddings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "c1", "c2"])
        for name, V in (("real", space.V_real), *space.V_gen.items()):
            for row in pca_2d(V, basis):
                w.writerow([name, repr(float(row[0])), repr(float(row[1]))])
    return report


def run_verify(tolerance: float, seed: int, variance_model: str, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    report = run_verification(tolerance=tolerance, seed=seed, variance_model=variance_model)
    write_json(out / "verify_report.json", report)
    counted = [c for c in report["checks"] if c.get("in_domain", True)]
    print(f"verify: {len(counted) - len(report['failures'])}/{len(counted)} in-domain checks hold")
    return report


def _read_scores(path: Path, column: str) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or column not in rows[0] or "label" not in rows[0]:
        raise CliError(EXIT_MISSING, f"{path} lacks a 'label' or {column!r} column")
    y = np.array([int(r["label"]) for r in rows])
    s = np.array([float(r[column]) for r in rows])
    return {"normal": s[y == 0], "anomalous": s[y == 1]}


def run_plot(cfg: RunConfig, out: Path) -> list[Path]:
    from latentanom import plotting

    out.mkdir(parents=True, exist_ok=True)
    pc = cfg.plot
    written = []
    if pc.kind == "hist":
        if not pc.scores:
            raise CliError(EXIT_MISSING, "hist plot needs --scores")
        groups = _read_scores(_require(Path(pc.scores), "scores file"), pc.score_column)
        written += plotting.score_histogram(groups, out / "hist.png", log_scale=pc.log_scale,
                                            bins=pc.bins, xlabel=f"{pc.score_column} score")
    elif pc.kind == "overlay":
        if not cfg.injected:
            raise CliError(EXIT_MISSING, "overlay plot needs --injected")
        d = Path(cfg.injected)
        patched, mask, _ = _load_injected_dir(d)
        source = read_binary(_require(d / "source.gts", "source windows")).reshape(patched.shape)
        raw_path = d / "generated.gts"
        raw = read_binary(raw_path).reshape(patched.shape) if raw_path.exists() else None
        for i in pc.windows:
            if not 0 <= i < len(patched):
                raise CliError(EXIT_CONFIG, f"window {i} out of range (0..{len(patched) - 1})")
            if not 0 <= pc.dim < patched.shape[2]:
                raise CliError(EXIT_CONFIG, f"dim {pc.dim} out of range")
            written += plotting.patch_overlay(source[i], patched[i], mask[i], out / f"overlay_{i}.png",
                                              generated=None if raw is None else raw[i], dim=pc.dim,
                                              title=f"window {i}")
    elif pc.kind == "embedding":
        if not pc.embeddings:
            raise CliError(EXIT_MISSING, "embedding plot needs --embeddings")
        with open(_require(Path(pc.embeddings), "embeddings file"), newline="") as fh:
            rows = list(csv.DictReader(fh))
        groups: dict[str, list] = {}
        for r in rows:
            groups.setdefault(r["group"], []).append((float(r["c1"]), float(r["c2"])))
        written.append(plotting.embedding_scatter({k: np.array(v) for k, v in groups.items()},
                                                  out / "embedding.png"))
    else:
        raise CliError(EXIT_CONFIG, f"unknown plot kind {pc.kind!r} (hist, overlay, embedding)")
    save_config(cfg, out / SNAPSHOT_FILE)
    for p in written:
        print(f"wrote {p}")
    return written


def run_sweep(cfg: RunConfig, out: Path) -> list[dict]:
    grid = cfg.sweep.get("grid") or {}
    if not grid:
        raise CliError(EXIT_CONFIG, "sweep needs a 'sweep.grid' mapping of config keys to value lists")
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / SNAPSHOT_FILE)
    rows = []
    for i, params in enumerate(expand_grid(grid)):
        run = cfg
        for key, value in params.items():
            run = set_dotted(run, key, value)
        run_dir = out / f"run_{i:03d}"
        print(f"[{i}] {params}")
        run_train(run, run_dir / "train")
        run.model_dir = str(run_dir / "train")
        run_inject(run, run_dir / "inject")
        run.injected = str(run_dir / "inject")
        gen, det = run_evaluate(run, run_dir / "evaluate")
        row = {"run": i, **params, "arp": gen["arp"], "edi": gen["edi"]}
        for r in det:
            for k in ("best_f1", "aupr", "auroc"):
                row[f"{r['detector']}_{k}"] = r[k]
        rows.append(row)
    write_json(out / "sweep.json", rows)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return rows


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

# flag dest -> dotted config key; flags win over the config file
FLAG_KEYS = {
    "seed": "seed", "deterministic": "deterministic", "data": "data.path",
    "window": "data.window", "model_dir": "model_dir", "injected": "injected",
    "sigma_prior": "model.sigma_prior", "delta_min": "model.delta_min",
    "delta_max": "model.delta_max", "epochs": "model.max_epochs",
    "tau": "patch.tau", "patch_mode": "patch.mode", "portion": "patch.portion",
    "test": "evaluate.test_path", "detectors": "evaluate.detectors",
    "kind": "plot.kind", "scores": "plot.scores", "score_column": "plot.score_column",
    "embeddings": "plot.embeddings", "windows": "plot.windows", "dim": "plot.dim",
    "log_scale": "plot.log_scale",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentanom",
        description="Train a latent-perturbation anomaly generator, inject anomalies, and evaluate.",
        epilog="Exit codes: 2 config, 3 data, 4 training aborted, 5 checkpoint mismatch, "
               "6 missing artifact/labels, 7 verification failed.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                        help="single-threaded deterministic kernels (default: on)")
    common.add_argument("--out", help="output directory (default: $LATENTANOM_OUTPUT_ROOT/<command>)")

    p = sub.add_parser("train", parents=[common], help="fit the generator on normal data")
    p.add_argument("--data", help="series file (CSV or .gts) or bundled:<name>")
    p.add_argument("--window", type=int, help="window length T")
    p.add_argument("--sigma-prior", type=float)
    p.add_argument("--delta-min", type=float)
    p.add_argument("--delta-max", type=float)
    p.add_argument("--epochs", type=int, help="maximum epochs")

    p = sub.add_parser("inject", parents=[common], help="generate and patch anomalies")
    p.add_argument("--data")
    p.add_argument("--model-dir", help="directory written by train")
    p.add_argument("--tau", type=float)
    p.add_argument("--patch-mode", choices=("deviation", "length", "none"))
    p.add_argument("--portion", type=float, help="span fraction for length patching")

    p = sub.add_parser("evaluate", parents=[common], help="generation quality and detection metrics")
    p.add_argument("--data", help="normal training series")
    p.add_argument("--model-dir")
    p.add_argument("--injected", help="directory written by inject")
    p.add_argument("--test", help="labeled test series")
    p.add_argument("--detectors", nargs="+", choices=("classifier", "recon"))

    p = sub.add_parser("verify", parents=[common], help="numerical checks of the theory results")
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--variance-model", choices=("linear", "quadratic"), default="linear")

    p = sub.add_parser("plot", parents=[common], help="render figures to image files")
    p.add_argument("--kind", choices=("hist", "overlay", "embedding"))
    p.add_argument("--scores", help="scores CSV with a label column (hist)")
    p.add_argument("--score-column")
    p.add_argument("--injected", help="directory written by inject (overlay)")
    p.add_argument("--embeddings", help="embeddings CSV written by evaluate")
    p.add_argument("--windows", type=int, nargs="+")
    p.add_argument("--dim", type=int)
    p.add_argument("--log-scale", action=argparse.BooleanOptionalAction, default=None)

    sub.add_parser("sweep", parents=[common], help="train/inject/evaluate over a config grid")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg = set_dotted(cfg, key, value)
    return cfg


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(args.out) if args.out else cfg.output_dir(args.command)
        if args.command == "train":
            run_train(cfg, out)
        elif args.command == "inject":
            run_inject(cfg, out)
        elif args.command == "evaluate":
            run_evaluate(cfg, out)
        elif args.command == "verify":
            report = run_verify(args.tolerance, cfg.seed, args.variance_model, out)
            save_config(cfg, out / SNAPSHOT_FILE)
            if not report["all_hold"]:
                raise CliError(EXIT_VERIFY, "failed checks: " + ", ".join(sorted(set(report["failures"]))))
        elif args.command == "plot":
            run_plot(cfg, out)
        elif args.command == "sweep":
            run_sweep(cfg, out)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())

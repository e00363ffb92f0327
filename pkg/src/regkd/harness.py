"""Config-driven experiment runner: repeated seeded trials, aggregation, reports.

An experiment is a grid of cells, one per (noise std, variant recipe),
each repeated ``trials`` times. Every random stream is derived from the
master seed and a positional key, so any single trial can be re-run in
isolation and reproduces its stored numbers exactly, whatever the worker
count or completion order.

Output layout under ``output_dir``::

    trials/trials.jsonl      one TrialReport per line
    tables/table.{csv,txt}   noise std x variant, mean +- std (x100)
    tables/threshold.{csv,txt}   threshold sweep (sweep mode only)
    plots/                   series CSVs plus manifest.json
    checkpoints/             frozen teachers
"""

import csv
import hashlib
import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .data import DEFAULT_X_RANGE, LabeledDataset, attach_teacher_predictions, load_tabular, make_sinusoid, train_test_split
from .errors import ConfigError, DegenerateScaleError, DivergenceError, DomainError
from .models import load_network
from .robust import expected_tail_count, mad_sigma
from .training import TrainConfig, evaluate, student_config, teacher_config, train_student, train_teacher
from .variants import STUDENT_TAGS, TAGS, MethodVariant

log = logging.getLogger(__name__)

TABLE_SCALE = 100.0
METRICS = ("mae_clean", "mae_noisy", "mae_train_clean", "mae_train_noisy")
_TRAIN_KEYS = {f for f in TrainConfig.__dataclass_fields__ if f not in ("variant", "seed")}
_VARIANT_KEYS = {f for f in MethodVariant.__dataclass_fields__ if f != "tag"}


def derive_seed(master, *keys):
    """Deterministic 63-bit seed from the master seed and a positional key."""
    text = json.dumps([int(master), *[_keyable(k) for k in keys]])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


def _keyable(k):
    if isinstance(k, float) and k.is_integer():
        return int(k)
    return k


@dataclass
class DatasetSpec:
    source: str = "sinusoid"
    n: int = 100_000
    x_range: tuple = DEFAULT_X_RANGE
    test_fraction: float = 0.1
    noise: str = "fresh"
    path: str | None = None
    schema: dict | None = None


@dataclass
class ExperimentConfig:
    """Everything needed to run and reproduce an experiment.

    ``per_std`` maps a noise std to variant-parameter overrides applied on
    top of ``variant_defaults`` (e.g. ``{3: {"c_tor": 10}}``). When
    ``thresholds`` is set, every ``only-tor`` cell is expanded into one cell
    per threshold value.
    """

    name: str = "experiment"
    master_seed: int = 0
    output_dir: str = "runs/experiment"
    trials: int = 20
    workers: int | None = None
    teacher_scope: str = "per-std"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    noise_stds: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 3.0, 5.0])
    variants: list = field(default_factory=lambda: list(TAGS))
    teacher: dict = field(default_factory=dict)
    student: dict = field(default_factory=dict)
    variant_defaults: dict = field(default_factory=dict)
    per_std: dict = field(default_factory=dict)
    thresholds: list | None = None
    teacher_checkpoint: str | None = None
    table_metric: str = "mae_clean"

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw or {})
        problems = []
        known = set(cls.__dataclass_fields__)
        for key in sorted(set(raw) - known):
            problems.append(f"unknown top-level key {key!r}")
        ds_raw = raw.pop("dataset", None) or {}
        ds_known = set(DatasetSpec.__dataclass_fields__)
        for key in sorted(set(ds_raw) - ds_known):
            problems.append(f"unknown dataset key {key!r}")
        ds = DatasetSpec(**{k: v for k, v in ds_raw.items() if k in ds_known})
        if isinstance(ds.x_range, list):
            ds.x_range = tuple(float(v) for v in ds.x_range)
        cfg = cls(dataset=ds, **{k: v for k, v in raw.items() if k in known and k != "dataset"})
        cfg.per_std = {float(k): dict(v or {}) for k, v in (cfg.per_std or {}).items()}
        cfg.noise_stds = [float(s) for s in (cfg.noise_stds or [])]
        problems.extend(cfg.problems())
        if problems:
            raise ConfigError(problems)
        return cfg

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def problems(self):
        out = []
        if not isinstance(self.trials, int) or self.trials < 1:
            out.append("trials must be an integer >= 1")
        if self.workers is not None and (not isinstance(self.workers, int) or self.workers < 1):
            out.append("workers must be a positive integer or null")
        if self.teacher_scope not in ("per-std", "per-trial"):
            out.append("teacher_scope must be 'per-std' or 'per-trial'")
        if not self.variants:
            out.append("variant list is empty")
        for v in self.variants or []:
            if v not in TAGS:
                out.append(f"unknown variant {v!r}")
        if not self.noise_stds:
            out.append("noise_stds is empty")
        for s in self.noise_stds:
            if s < 0:
                out.append(f"noise std {s} is negative")
        ds = self.dataset
        if ds.source not in ("sinusoid", "file"):
            out.append("dataset.source must be 'sinusoid' or 'file'")
        if ds.source == "file" and not ds.path:
            out.append("dataset.path is required when dataset.source is 'file'")
        if ds.source == "sinusoid" and (not isinstance(ds.n, int) or ds.n < 2):
            out.append("dataset.n must be an integer >= 2")
        if not 0.0 <= ds.test_fraction < 1.0:
            out.append("dataset.test_fraction must lie in [0, 1)")
        if ds.noise not in ("fresh", "shared"):
            out.append("dataset.noise must be 'fresh' or 'shared'")
        for section, overrides in (("teacher", self.teacher), ("student", self.student)):
            for key in sorted(set(overrides or {}) - _TRAIN_KEYS):
                out.append(f"unknown {section} training key {key!r}")
        for key in sorted(set(self.variant_defaults or {}) - _VARIANT_KEYS):
            out.append(f"unknown variant_defaults key {key!r}")
        for std, overrides in (self.per_std or {}).items():
            for key in sorted(set(overrides) - _VARIANT_KEYS):
                out.append(f"unknown per_std[{std}] key {key!r}")
        if self.table_metric not in METRICS:
            out.append(f"table_metric must be one of {METRICS}")
        if self.thresholds is not None:
            if not self.thresholds or any(not (isinstance(e, (int, float)) and e > 0) for e in self.thresholds):
                out.append("thresholds must be a non-empty list of positive numbers")
        if not out:
            try:
                self.cells()
                self.teacher_train_config(0)
                self.student_train_config(MethodVariant("student-l1"), 0)
            except (TypeError, ValueError) as exc:
                out.append(str(exc))
        return out

    def to_dict(self):
        d = asdict(self)
        d["dataset"]["x_range"] = list(self.dataset.x_range)
        d["per_std"] = {str(k): v for k, v in self.per_std.items()}
        return d

    def config_hash(self):
        d = self.to_dict()
        for k in ("output_dir", "workers", "trials"):
            d.pop(k, None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def variant_for(self, tag, std):
        params = dict(self.variant_defaults or {})
        params.update(self.per_std.get(float(std), {}))
        return MethodVariant(tag, **params)

    def cells(self):
        """Every (std, variant) cell, thresholds expanded."""
        out = []
        for std in self.noise_stds:
            for tag in self.variants:
                v = self.variant_for(tag, std)
                if tag == "only-tor" and self.thresholds:
                    out.extend((std, v.with_(epsilon=float(e))) for e in self.thresholds)
                else:
                    out.append((std, v))
        return out

    def teacher_train_config(self, seed):
        return teacher_config(seed=seed, **(self.teacher or {}))

    def student_train_config(self, variant, seed):
        return student_config(variant, seed=seed, **(self.student or {}))


def cell_identity(std, variant):
    return {"noise_std": float(std), **variant.identity()}


def cell_key(identity):
    return json.dumps(identity, sort_keys=True)


@dataclass
class TrialReport:
    cell: dict
    trial: int
    seed: int
    mae_noisy: float | None = None
    mae_clean: float | None = None
    mae_train_noisy: float | None = None
    mae_train_clean: float | None = None
    head_mae: dict = field(default_factory=dict)
    sigma_hat: float | None = None
    alpha: float | None = None
    batch_size: int | None = None
    epsilon_outlier: float | None = None
    outlier_fraction: float | None = None
    wall_time: float = 0.0
    failed: bool = False
    error: str | None = None
    config_hash: str = ""

    @property
    def variant(self):
        return self.cell["variant"]

    @property
    def noise_std(self):
        return self.cell["noise_std"]

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))


# --------------------------------------------------------------------------
# datasets and teachers


def _base_dataset(cfg):
    ds = cfg.dataset
    if ds.source == "file":
        return load_tabular(ds.path, ds.schema)
    return None


def trial_dataset(cfg, std, trial, base=None):
    """Full (pre-split) dataset for a trial; ``trial=None`` is the teacher's."""
    ds = cfg.dataset
    if ds.noise == "shared" or trial is None:
        noise_seed = derive_seed(cfg.master_seed, "noise", std)
    else:
        noise_seed = derive_seed(cfg.master_seed, "noise", std, trial)
    if ds.source == "sinusoid":
        return make_sinusoid(
            ds.n, std, x_range=tuple(ds.x_range), seed=noise_seed, x_seed=derive_seed(cfg.master_seed, "x")
        )
    base = base if base is not None else _base_dataset(cfg)
    if std == 0:
        return base
    t = base.t + np.random.default_rng(noise_seed).normal(0.0, std, size=len(base))
    return LabeledDataset(x=base.x, t=t, clean=base.clean, noise_std=std, seed=noise_seed)


def split(cfg, dataset):
    return train_test_split(dataset, cfg.dataset.test_fraction, seed=derive_seed(cfg.master_seed, "split"))


def teacher_path(cfg, std, trial=None):
    tag = f"std{float(std):g}" + ("" if trial is None else f"_trial{trial}")
    return Path(cfg.output_dir) / "checkpoints" / f"teacher_{tag}.ckpt"


def _teacher_job(cfg, std, trial):
    """Train (or load) the teacher for ``std``; returns its TrialReport."""
    scope_trial = trial if cfg.teacher_scope == "per-trial" else None
    seed = derive_seed(cfg.master_seed, "teacher", std, *([] if scope_trial is None else [scope_trial]))
    identity = cell_identity(std, MethodVariant("teacher"))
    start = time.perf_counter()
    path = teacher_path(cfg, std, scope_trial)
    try:
        train, test = split(cfg, trial_dataset(cfg, std, scope_trial))
        if cfg.teacher_checkpoint:
            network, _ = load_network(cfg.teacher_checkpoint)
            path.parent.mkdir(parents=True, exist_ok=True)
            from .models import save_network

            save_network(path, network, role="teacher", source=str(cfg.teacher_checkpoint))
        else:
            network = train_teacher(train, cfg.teacher_train_config(seed), checkpoint_path=path).network
        scores = evaluate(network, test)
        fit = evaluate(network, train)
        return TrialReport(
            cell=identity,
            trial=0 if scope_trial is None else scope_trial,
            seed=seed,
            mae_noisy=scores["mae_noisy"],
            mae_clean=scores.get("mae_clean"),
            mae_train_noisy=fit["mae_noisy"],
            mae_train_clean=fit.get("mae_clean"),
            wall_time=time.perf_counter() - start,
            config_hash=cfg.config_hash(),
        )
    except (DivergenceError, DegenerateScaleError, DomainError, FloatingPointError) as exc:
        return TrialReport(
            cell=identity, trial=trial or 0, seed=seed, failed=True, error=f"{type(exc).__name__}: {exc}",
            wall_time=time.perf_counter() - start, config_hash=cfg.config_hash(),
        )


def _student_job(cfg, std, variant, trial):
    seed = derive_seed(cfg.master_seed, "student", std, trial)
    identity = cell_identity(std, variant)
    start = time.perf_counter()
    try:
        train, test = split(cfg, trial_dataset(cfg, std, trial))
        if variant.needs_teacher:
            scope_trial = trial if cfg.teacher_scope == "per-trial" else None
            teacher, _ = load_network(teacher_path(cfg, std, scope_trial))
            train = attach_teacher_predictions(train, teacher)
        result = train_student(train, None, cfg.student_train_config(variant, seed))
        scores = evaluate(result.network, test)
        fit = evaluate(result.network, train)
        th = result.threshold
        return TrialReport(
            cell=identity,
            trial=trial,
            seed=seed,
            mae_noisy=scores["mae_noisy"],
            mae_clean=scores.get("mae_clean"),
            mae_train_noisy=fit["mae_noisy"],
            mae_train_clean=fit.get("mae_clean"),
            head_mae={k: v for k, v in scores.items() if k.startswith("mae_head_")},
            sigma_hat=None if th is None else th.sigma,
            alpha=None if th is None else th.alpha,
            batch_size=None if th is None else th.batch_size,
            epsilon_outlier=None if th is None else th.epsilon,
            outlier_fraction=result.outlier_fraction,
            wall_time=time.perf_counter() - start,
            config_hash=cfg.config_hash(),
        )
    except (DivergenceError, DegenerateScaleError, DomainError, FloatingPointError) as exc:
        log.warning("trial failed: %s trial %d: %s", identity, trial, exc)
        return TrialReport(
            cell=identity, trial=trial, seed=seed, failed=True, error=f"{type(exc).__name__}: {exc}",
            wall_time=time.perf_counter() - start, config_hash=cfg.config_hash(),
        )


# --------------------------------------------------------------------------
# running


class ResultSink:
    """Append-only, lock-protected JSONL writer for trial reports."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.reports = []

    def append(self, report):
        with self._lock:
            self.reports.append(report)
            with open(self.path, "a") as fh:
                fh.write(report.to_json() + "\n")


def _run_jobs(jobs, workers, sink):
    if workers == 1:
        for fn, args in jobs:
            sink.append(fn(*args))
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *args) for fn, args in jobs]
        for fut in as_completed(futures):
            sink.append(fut.result())


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reports: list
    aggregates: list
    outputs: dict


def run_experiment(cfg, stds=None, variants=None, trials=None):
    """Run every cell of ``cfg`` (optionally restricted) and write all outputs.

    ``stds``/``variants`` restrict the grid and ``trials`` (an iterable of
    trial indices) the repetitions, which is how a single cell or trial is
    re-run. Seeds are positional, so restricted runs reproduce the rows of
    the full run.
    """
    out_dir = Path(cfg.output_dir)
    for sub in ("trials", "tables", "plots", "checkpoints"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.yaml", "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)

    if cfg.dataset.source == "file" and "clean" in cfg.table_metric:
        if _base_dataset(cfg).clean is None:
            raise ConfigError([f"table_metric {cfg.table_metric!r} needs a 'clean' column in {cfg.dataset.path}"])
    trial_ids = list(range(cfg.trials)) if trials is None else list(trials)
    cells = [
        (std, v)
        for std, v in cfg.cells()
        if (stds is None or float(std) in {float(s) for s in stds})
        and (variants is None or v.tag in variants)
    ]
    workers = cfg.workers or os.cpu_count() or 1
    sink = ResultSink(out_dir / "trials" / "trials.jsonl")

    need_teacher = {std for std, v in cells if v.tag == "teacher" or v.needs_teacher}
    teacher_jobs = []
    for std in sorted(need_teacher):
        if cfg.teacher_scope == "per-trial":
            teacher_jobs.extend((_teacher_job, (cfg, std, k)) for k in trial_ids)
        else:
            teacher_jobs.append((_teacher_job, (cfg, std, None)))
    teacher_sink = ResultSink(out_dir / "trials" / "teachers.jsonl")
    _run_jobs(teacher_jobs, workers, teacher_sink)
    failed_teachers = {r.noise_std for r in teacher_sink.reports if r.failed}
    for r in teacher_sink.reports:
        if any(v.tag == "teacher" and float(std) == r.noise_std for std, v in cells):
            sink.append(r)

    student_jobs = [
        (_student_job, (cfg, std, v, k))
        for std, v in cells
        if v.tag != "teacher"
        for k in trial_ids
        if not (v.needs_teacher and float(std) in failed_teachers)
    ]
    _run_jobs(student_jobs, workers, sink)

    reports = sorted(sink.reports, key=lambda r: (r.noise_std, cell_key(r.cell), r.trial))
    aggregates = aggregate(reports, cfg.table_metric)
    outputs = write_reports(cfg, reports, aggregates)
    return ExperimentResult(cfg, reports, aggregates, outputs)


# --------------------------------------------------------------------------
# aggregation and reporting


def aggregate(reports, metric="mae_clean"):
    """Per-cell count, mean and unbiased std of ``metric``; failed trials excluded."""
    groups = {}
    for r in reports:
        groups.setdefault(cell_key(r.cell), (r.cell, []))[1].append(r)
    out = []
    for key, (identity, rows) in groups.items():
        ok = [r for r in rows if not r.failed and getattr(r, metric) is not None]
        vals = np.array([getattr(r, metric) for r in ok], dtype=np.float64)
        out.append(
            {
                "cell": identity,
                "metric": metric,
                "count": int(vals.size),
                "failed": len(rows) - len(ok),
                "mean": float(vals.mean()) if vals.size else None,
                "std": float(vals.std(ddof=1)) if vals.size > 1 else None,
            }
        )
    out.sort(key=lambda a: (a["cell"]["noise_std"], _column_order(a["cell"]), cell_key(a["cell"])))
    return out


def _column_order(identity):
    return TAGS.index(identity["variant"])


def column_label(identity, all_identities):
    """Variant tag, qualified with whatever separates it from same-tag cells."""
    tag = identity["variant"]
    same = [c for c in all_identities if c["variant"] == tag]
    if len({cell_key(c) for c in same}) <= 1:
        return tag
    diffs = []
    for k in sorted(identity):
        if k in ("variant", "noise_std"):
            continue
        if len({json.dumps(c.get(k)) for c in same}) > 1:
            diffs.append(f"{k}={identity[k]:g}" if isinstance(identity[k], (int, float)) else f"{k}={identity[k]}")
    return f"{tag}[{','.join(diffs)}]" if diffs else tag


def _fmt(mean, std, digits, spec="g"):
    if mean is None:
        return "n/a"
    m = f"{mean * TABLE_SCALE:.{digits}{spec}}"
    return m if std is None else f"{m} ± {std * TABLE_SCALE:.{digits}{spec}}"


def table_rows(aggregates):
    """``(columns, rows)`` with rows ``(std, {column: aggregate})``."""
    identities = [a["cell"] for a in aggregates]
    columns = []
    by_std = {}
    for a in aggregates:
        col = column_label(a["cell"], [c for c in identities if c["noise_std"] == a["cell"]["noise_std"]])
        if col not in columns:
            columns.append(col)
        by_std.setdefault(a["cell"]["noise_std"], {})[col] = a
    columns.sort(key=lambda c: (TAGS.index(c.split("[")[0]), c))
    return columns, sorted(by_std.items())


def emit_table(aggregates, out_dir, stem="table"):
    """Write ``<stem>.csv`` and ``<stem>.txt``: rows noise std, columns variants.

    Cells hold ``mean ± std`` multiplied by 100 (the CSV keeps six
    significant digits so values survive a round trip). A cell with a
    single successful trial shows the mean alone.
    """
    if not aggregates:
        raise ValueError("no aggregates to tabulate")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    columns, rows = table_rows(aggregates)
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["noise_std"] + columns)
        for std, cells in rows:
            w.writerow([f"{std:g}"] + [_fmt(cells[c]["mean"], cells[c]["std"], 6) if c in cells else "" for c in columns])
    text = [
        [_fmt(cells[c]["mean"], cells[c]["std"], 2, "f") if c in cells else "" for c in columns] for _, cells in rows
    ]
    widths = [max([len(c)] + [len(r[j]) for r in text]) for j, c in enumerate(columns)]
    metric = aggregates[0].get("metric", "mae_clean")
    lines = [f"{metric} (x{TABLE_SCALE:g}, mean ± std over trials; failed trials excluded)"]
    header = "std".ljust(6) + " | " + " | ".join(c.ljust(wd) for c, wd in zip(columns, widths))
    lines += [header, "-" * len(header)]
    for (std, _), vals in zip(rows, text):
        lines.append(f"{std:<6g} | " + " | ".join(v.ljust(wd) for v, wd in zip(vals, widths)))
    lines = [line.rstrip() for line in lines]
    txt_path = out_dir / f"{stem}.txt"
    txt_path.write_text("\n".join(lines) + "\n")
    return {"csv": csv_path, "txt": txt_path}


def read_table(path):
    """Parse a CSV written by ``emit_table`` back to unscaled ``(mean, std)``."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for row in reader:
            std = float(row[0])
            for col, cell in zip(header[1:], row[1:]):
                if not cell or cell == "n/a":
                    continue
                parts = [p.strip() for p in cell.split("±")]
                mean = float(parts[0]) / TABLE_SCALE
                sd = float(parts[1]) / TABLE_SCALE if len(parts) > 1 else None
                out[(std, col)] = (mean, sd)
    return out


def emit_threshold_table(aggregates, sigma, batch_size, out_dir, stem="threshold"):
    """Threshold sweep table: epsilon, student error, expected tail count."""
    rows = [
        a for a in aggregates if a["cell"]["variant"] == "only-tor" and a["cell"].get("epsilon") is not None
    ]
    rows.sort(key=lambda a: (a["cell"]["noise_std"], a["cell"]["epsilon"]))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["noise_std", "epsilon_outlier", "mean_mae", "std_mae", "count", "expected_tail_count"])
        for a in rows:
            eps = a["cell"]["epsilon"]
            s = a["cell"].get("sigma") or sigma
            w.writerow([a["cell"]["noise_std"], eps, a["mean"], a["std"], a["count"], expected_tail_count(eps, s, batch_size)])
    lines = ["epsilon | student error      | expectation (alpha)"]
    for a in rows:
        eps = a["cell"]["epsilon"]
        s = a["cell"].get("sigma") or sigma
        err = "failed" if a["mean"] is None else f"{a['mean']:.3f} ± {(a['std'] or 0):.3f}"
        lines.append(f"{eps:<7g} | {err:<16} | {expected_tail_count(eps, s, batch_size):.3g}")
    txt_path = out_dir / f"{stem}.txt"
    txt_path.write_text("\n".join(lines) + "\n")
    return {"csv": csv_path, "txt": txt_path}


def emit_plot_data(series, out_dir):
    """Write each ``name -> (x, y)`` series as CSV plus a ``manifest.json``.

    ``series`` values may also be dicts with ``x``, ``y`` and optional
    ``x_label``, ``y_label``, ``kind`` and ``description`` entries.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"series": []}
    for name, spec in series.items():
        if not isinstance(spec, dict):
            spec = {"x": spec[0], "y": spec[1]}
        x = np.asarray(spec.get("x", []), dtype=np.float64).ravel()
        y = np.asarray(spec.get("y", []), dtype=np.float64).ravel()
        if x.size != y.size:
            raise ValueError(f"series {name!r}: x and y lengths differ")
        fname = f"{name}.csv"
        with open(out_dir / fname, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"])
            for a, b in zip(x, y):
                w.writerow([repr(float(a)), repr(float(b))])
        manifest["series"].append(
            {
                "name": name,
                "file": fname,
                "points": int(x.size),
                "kind": spec.get("kind", "line"),
                "x_label": spec.get("x_label", "x"),
                "y_label": spec.get("y_label", "y"),
                "description": spec.get("description", ""),
            }
        )
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def residual_histogram(residuals, epsilon=None, bins=121):
    """Histogram of teacher residuals with a MAD-fitted Gaussian overlay.

    Returns ``(series, sigma_hat)``; ``series`` is ready for
    ``emit_plot_data``.
    """
    r = np.asarray(residuals, dtype=np.float64)
    sigma = mad_sigma(r)
    lim = max(6.0 * sigma, float(np.max(np.abs(r))))
    counts, edges = np.histogram(r, bins=bins, range=(-lim, lim))
    centers = (edges[:-1] + edges[1:]) / 2.0
    width = edges[1] - edges[0]
    med = float(np.median(r))
    fitted = r.size * width * np.exp(-((centers - med) ** 2) / (2 * sigma**2)) / (sigma * math.sqrt(2 * math.pi))
    series = {
        "residual_histogram": {"x": centers, "y": counts, "kind": "bar", "x_label": "t - R_t", "y_label": "count"},
        "residual_gaussian_fit": {
            "x": centers, "y": fitted, "x_label": "t - R_t", "y_label": "count",
            "description": f"N(median, sigma_hat={sigma:.6g}) scaled to the sample count",
        },
    }
    if epsilon is not None:
        peak = float(counts.max()) if counts.size else 1.0
        series["epsilon_markers"] = {
            "x": [-epsilon, -epsilon, epsilon, epsilon], "y": [0.0, peak, 0.0, peak], "kind": "vlines",
            "x_label": "t - R_t", "description": f"epsilon_outlier = {epsilon:.6g}",
        }
    return series, sigma


def trace_series(history, key="loss"):
    """Per-epoch training trace as a plottable series (possibly empty)."""
    return {"x": [h["epoch"] for h in history if key in h], "y": [h[key] for h in history if key in h],
            "x_label": "epoch", "y_label": key}


def write_reports(cfg, reports, aggregates):
    out_dir = Path(cfg.output_dir)
    outputs = {}
    if aggregates:
        outputs["table"] = emit_table(aggregates, out_dir / "tables")
        if any(a["cell"].get("epsilon") is not None for a in aggregates):
            sigma = next((a["cell"].get("sigma") for a in aggregates if a["cell"].get("sigma")), None)
            batch = cfg.student_train_config(MethodVariant("only-tor"), 0).batch_size
            outputs["threshold"] = emit_threshold_table(aggregates, sigma, batch, out_dir / "tables")
    series = {}
    sweep = [a for a in aggregates if a["cell"].get("epsilon") is not None and a["mean"] is not None]
    for std in sorted({a["cell"]["noise_std"] for a in sweep}):
        pts = sorted((a["cell"]["epsilon"], a["mean"]) for a in sweep if a["cell"]["noise_std"] == std)
        series[f"mae_vs_epsilon_std{std:g}"] = {
            "x": [p[0] for p in pts], "y": [p[1] for p in pts], "x_label": "epsilon_outlier", "y_label": "MAE"
        }
    for std in sorted({a["cell"]["noise_std"] for a in aggregates}):
        ckpt = teacher_path(cfg, std)
        if not ckpt.exists():
            continue
        teacher, _ = load_network(ckpt)
        train, _ = split(cfg, trial_dataset(cfg, std, None))
        train = attach_teacher_predictions(train, teacher)
        eps = next((r.epsilon_outlier for r in reports if r.noise_std == std and r.epsilon_outlier), None)
        try:
            hist, _ = residual_histogram(train.residuals, eps)
        except DegenerateScaleError:
            continue
        series.update({f"{k}_std{std:g}": v for k, v in hist.items()})
    outputs["plots"] = emit_plot_data(series, out_dir / "plots")
    (out_dir / "tables" / "aggregates.json").write_text(json.dumps(aggregates, indent=2))
    return outputs


def load_reports(out_dir):
    path = Path(out_dir) / "trials" / "trials.jsonl"
    with open(path) as fh:
        return [TrialReport.from_json(line) for line in fh if line.strip()]


def rebuild_reports(out_dir):
    """Re-aggregate stored trials (last write wins per cell and trial)."""
    out_dir = Path(out_dir)
    latest = {}
    for r in load_reports(out_dir):
        latest[(cell_key(r.cell), r.trial)] = r
    reports = sorted(latest.values(), key=lambda r: (r.noise_std, cell_key(r.cell), r.trial))
    cfg = ExperimentConfig.load(out_dir / "config.yaml")
    cfg.output_dir = str(out_dir)
    aggregates = aggregate(reports, cfg.table_metric)
    return ExperimentResult(cfg, reports, aggregates, write_reports(cfg, reports, aggregates))


def sweep_config(base=None, thresholds=(6.0, 7.0, 8.0, 9.0), sigma=3.0, noise_std=3.0, n=10_000, batch_size=250):
    """Threshold-sweep setup: TOR with fixed thresholds next to an L1 baseline."""
    raw = {} if base is None else base.to_dict()
    raw.update(
        name=raw.get("name", "threshold-sweep"),
        noise_stds=[noise_std],
        variants=["student-l1", "only-tor"],
        thresholds=list(thresholds),
    )
    raw.setdefault("dataset", {})
    raw["dataset"]["n"] = n
    raw["teacher"] = {**raw.get("teacher", {}), "batch_size": batch_size}
    raw["student"] = {**raw.get("student", {}), "batch_size": batch_size}
    raw["variant_defaults"] = {**raw.get("variant_defaults", {}), "sigma": sigma}
    raw["per_std"] = {}
    return ExperimentConfig.from_dict(raw)


__all__ = [
    "STUDENT_TAGS",
    "DatasetSpec",
    "ExperimentConfig",
    "ExperimentResult",
    "ResultSink",
    "TrialReport",
    "aggregate",
    "cell_identity",
    "derive_seed",
    "emit_plot_data",
    "emit_table",
    "emit_threshold_table",
    "read_table",
    "rebuild_reports",
    "residual_histogram",
    "run_experiment",
    "sweep_config",
    "trace_series",
    "trial_dataset",
]

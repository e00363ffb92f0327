"""Sinusoid generator, splits, batching and CSV import/export."""

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DimensionError, TabularParseError

DEFAULT_X_RANGE = (0.0, 2.0 * math.pi)
COLUMNS = ("x", "t", "clean", "r_t")


@dataclass(frozen=True)
class LabeledDataset:
    """Inputs ``x`` with noisy targets ``t``.

    ``clean`` holds the noiseless targets when known and ``r_t`` the frozen
    teacher's predictions once attached.
    """

    x: np.ndarray
    t: np.ndarray
    clean: np.ndarray | None = None
    r_t: np.ndarray | None = None
    noise_std: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        n = None
        for name in COLUMNS:
            value = getattr(self, name)
            if value is None:
                continue
            arr = np.asarray(value, dtype=np.float64).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise DimensionError(f"column {name!r} has {arr.size} rows, expected {n}")

    def __len__(self):
        return self.x.size

    def subset(self, index):
        index = np.asarray(index)
        return replace(
            self,
            x=self.x[index],
            t=self.t[index],
            clean=None if self.clean is None else self.clean[index],
            r_t=None if self.r_t is None else self.r_t[index],
        )

    def with_teacher(self, r_t):
        return replace(self, r_t=r_t)

    @property
    def residuals(self):
        """``t - r_t``; requires teacher predictions."""
        if self.r_t is None:
            raise ValueError("dataset has no teacher predictions attached")
        return self.t - self.r_t


def make_sinusoid(n, noise_std, x_range=DEFAULT_X_RANGE, seed=0, x_seed=None):
    """Uniform ``x`` over ``x_range`` with ``t = sin(x) + N(0, noise_std**2)``.

    ``x_seed`` (default: ``seed``) drives the inputs and ``seed`` the noise,
    so several noise realisations can share one set of inputs.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    lo, hi = x_range
    x = np.random.default_rng([seed if x_seed is None else x_seed, 0]).uniform(lo, hi, size=n)
    clean = np.sin(x)
    if noise_std == 0:
        t = clean.copy()
    else:
        t = clean + np.random.default_rng([seed, 1]).normal(0.0, noise_std, size=n)
    return LabeledDataset(x=x, t=t, clean=clean, noise_std=float(noise_std), seed=seed)


def train_test_split(dataset, test_fraction=0.1, seed=0):
    """Disjoint, exhaustive random split; the test part keeps clean targets."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must lie in [0, 1)")
    n = len(dataset)
    order = np.random.default_rng([seed, 3]).permutation(n)
    n_test = int(round(n * test_fraction))
    return dataset.subset(np.sort(order[n_test:])), dataset.subset(np.sort(order[:n_test]))


def attach_teacher_predictions(dataset, teacher):
    """Fill ``r_t`` with an inference-mode pass of ``teacher`` over ``x``."""
    if teacher.input_width != 1:
        raise DimensionError(f"teacher expects {teacher.input_width} inputs; datasets are 1-D")
    out = teacher.predict(dataset.x)
    if out.shape[1] != 1:
        raise DimensionError("teacher must have a single head")
    return dataset.with_teacher(out[:, 0].copy())


class BatchIterator:
    """Shuffled mini-batch indices; the order is a pure function of (seed, epoch)."""

    def __init__(self, n, batch_size, seed=0):
        if n <= 0 or batch_size <= 0:
            raise ValueError("n and batch_size must be positive")
        self.n = n
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = 0

    def __len__(self):
        return -(-self.n // self.batch_size)

    def order(self, epoch):
        return np.random.default_rng([self.seed, 4, epoch]).permutation(self.n)

    def batches(self, epoch=None):
        if epoch is None:
            epoch = self.epoch
            self.epoch += 1
        perm = self.order(epoch)
        for start in range(0, self.n, self.batch_size):
            yield perm[start : start + self.batch_size]

    def __iter__(self):
        return self.batches()


def export_tabular(dataset, path):
    """Write ``dataset`` as CSV with a header; optional columns only if set."""
    names = [c for c in COLUMNS if getattr(dataset, c) is not None]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        cols = [getattr(dataset, c) for c in names]
        for row in zip(*cols):
            writer.writerow([repr(float(v)) for v in row])
    return path


def _numeric(row):
    try:
        [float(c) for c in row]
    except ValueError:
        return False
    return True


def load_tabular(path, schema=None, has_header=None):
    """Read a comma-separated file into a ``LabeledDataset``.

    Parameters
    ----------
    path : str or Path
    schema : dict, optional
        Maps dataset fields (``x``, ``t``, and optionally ``clean``,
        ``r_t``) to column names in the header, or to integer column
        positions. Defaults to identical names, or positions 0 and 1 for a
        headerless file.
    has_header : bool, optional
        Whether the first line names the columns. By default a first line
        that parses entirely as numbers is treated as data.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such dataset file: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise TabularParseError(f"{path}: file is empty")
    if has_header is None:
        has_header = not _numeric(rows[0])
    if has_header:
        header = [h.strip() for h in rows[0]]
        body = rows[1:]
        start_row = 2
    else:
        header = None
        body = rows
        start_row = 1
    if not body:
        raise TabularParseError(f"{path}: no data rows")

    if schema is None:
        if header is not None:
            schema = {c: c for c in COLUMNS if c in header}
        else:
            schema = {"x": 0, "t": 1}
    for required in ("x", "t"):
        if required not in schema:
            raise TabularParseError(f"{path}: schema must map column {required!r}")
    positions = {}
    for field, col in schema.items():
        if field not in COLUMNS:
            raise TabularParseError(f"{path}: unknown dataset field {field!r}")
        if isinstance(col, int):
            positions[field] = col
        elif header is not None and col in header:
            positions[field] = header.index(col)
        else:
            raise TabularParseError(f"{path}: column {col!r} not found in header")

    values = {f: np.empty(len(body)) for f in positions}
    for i, row in enumerate(body):
        line = start_row + i
        for field, pos in positions.items():
            try:
                v = float(row[pos])
            except (IndexError, ValueError):
                cell = row[pos] if pos < len(row) else "<missing>"
                raise TabularParseError(
                    f"{path}: row {line}: column {field!r} is not numeric ({cell!r})", row=line
                ) from None
            if not math.isfinite(v):
                raise TabularParseError(f"{path}: row {line}: non-finite value in {field!r}", row=line)
            values[field][i] = v
    return LabeledDataset(**values)

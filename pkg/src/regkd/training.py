"""Teacher and student training pipelines and evaluation."""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import losses
from .data import BatchIterator, attach_teacher_predictions
from .errors import DegenerateScaleError, DivergenceError, StateError
from .models import BLOCKS, DEPTH, STUDENT_HIDDEN, TEACHER_HIDDEN, build_student, build_teacher, load_network, save_network
from .nn import Adam, LrSchedule
from .robust import OutlierThreshold, mad_sigma
from .variants import MethodVariant, as_variant

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1000
    lr: float = 1e-3
    lr_drops: tuple = (70,)
    lr_factor: float = 0.1
    dropout: float = 0.5
    hidden: int = STUDENT_HIDDEN
    depth: int = DEPTH
    block_order: tuple = BLOCKS
    seed: int = 0
    variant: MethodVariant = field(default_factory=lambda: MethodVariant("student-l1"))
    teacher_loss: str = "l1"
    epsilon_cadence: str = "once"
    robust_scale_cadence: str = "batch"

    def __post_init__(self):
        object.__setattr__(self, "variant", as_variant(self.variant))
        object.__setattr__(self, "lr_drops", tuple(int(e) for e in self.lr_drops))
        object.__setattr__(self, "block_order", tuple(self.block_order))
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.teacher_loss not in ("l1", "mse"):
            raise ValueError("teacher_loss must be 'l1' or 'mse'")
        if self.epsilon_cadence not in ("once", "per-epoch"):
            raise ValueError("epsilon_cadence must be 'once' or 'per-epoch'")
        if self.robust_scale_cadence not in ("batch", "epoch"):
            raise ValueError("robust_scale_cadence must be 'batch' or 'epoch'")

    @property
    def schedule(self):
        return LrSchedule(self.lr, self.lr_drops, self.lr_factor)

    def to_dict(self):
        d = asdict(self)
        d["variant"] = self.variant.to_dict()
        return d


def teacher_config(**overrides):
    """Teacher defaults: 150 hidden units, LR drops at epochs 40 and 80."""
    base = TrainConfig(hidden=TEACHER_HIDDEN, lr_drops=(40, 80), variant=MethodVariant("teacher"))
    return replace(base, **overrides)


def student_config(variant="student-l1", **overrides):
    return replace(TrainConfig(variant=as_variant(variant)), **overrides)


@dataclass
class TrainResult:
    network: object
    history: list
    threshold: OutlierThreshold | None = None
    outlier_fraction: float | None = None
    checkpoint: Path | None = None


def _fit(network, x, config, batch_loss, trace=None, on_epoch=None):
    """Shared mini-batch loop. ``batch_loss(out, idx) -> (LossResult, parts)``."""
    opt = Adam(lr=config.lr)
    schedule = config.schedule
    batches = BatchIterator(x.size, config.batch_size, seed=config.seed)
    xcol = x.reshape(-1, 1)
    history = []
    for epoch in range(config.epochs):
        lr = schedule.lr_at(epoch)
        if on_epoch is not None:
            on_epoch(epoch)
        totals = {}
        seen = 0
        for idx in batches.batches(epoch):
            out = network.forward(xcol[idx], mode="train")
            res, parts = batch_loss(out, idx)
            if not math.isfinite(res.value):
                raise DivergenceError(f"non-finite loss {res.value} at epoch {epoch}")
            network.backward(res.grad)
            opt.step(network.theta, network.grad, lr)
            k = idx.size
            seen += k
            totals["loss"] = totals.get("loss", 0.0) + res.value * k
            for name, value in parts.items():
                totals[name] = totals.get(name, 0.0) + value * k
        record = {"epoch": epoch, "lr": lr}
        record.update({name: value / seen for name, value in totals.items()})
        history.append(record)
        if trace is not None:
            trace.write(json.dumps(record) + "\n")
    if not np.all(np.isfinite(network.theta)):
        raise DivergenceError("parameters became non-finite")
    return history


def _open_trace(path):
    if path is None:
        return None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w")


def train_teacher(dataset, config=None, checkpoint_path=None, trace_path=None):
    """Train the single-head teacher on the noisy labels.

    Returns a ``TrainResult``; the checkpoint is written when
    ``checkpoint_path`` is given.
    """
    config = config or teacher_config()
    network = build_teacher(config.seed, config.hidden, config.dropout, config.block_order, config.depth)
    if len(network.head_names) != 1:
        raise StateError("teacher must be single-head")
    loss_fn = losses.l1_loss if config.teacher_loss == "l1" else losses.mse_loss
    t = dataset.t

    def batch_loss(out, idx):
        res = loss_fn(out, t[idx].reshape(-1, 1))
        return res, {}

    trace = _open_trace(trace_path)
    try:
        history = _fit(network, dataset.x, config, batch_loss, trace)
    finally:
        if trace is not None:
            trace.close()
    ckpt = None
    if checkpoint_path is not None:
        ckpt = save_network(checkpoint_path, network, role="teacher", train_config=config.to_dict())
    return TrainResult(network, history, checkpoint=ckpt)


def resolve_threshold(dataset, variant, batch_size):
    """Outlier threshold for a TOR variant on a teacher-annotated dataset."""
    if variant.epsilon is not None:
        sigma = variant.sigma if variant.sigma is not None else mad_sigma(dataset.residuals)
        return OutlierThreshold(float(sigma), variant.alpha, batch_size, float(variant.epsilon))
    sigma = variant.sigma if variant.sigma is not None else mad_sigma(dataset.residuals)
    return OutlierThreshold.from_scale(sigma, variant.alpha, batch_size)


def _ld(variant):
    return losses.l1_loss if variant.ld_loss == "l1" else losses.mse_loss


def train_student(dataset, teacher=None, config=None, trace_path=None):
    """Train a student under ``config.variant``.

    Parameters
    ----------
    dataset : LabeledDataset
        Training split. Teacher predictions are computed here if the variant
        needs them and ``dataset.r_t`` is unset.
    teacher : Network or path, optional
        Frozen teacher, or a checkpoint path to load it from. Only used in
        inference mode.
    config : TrainConfig
    """
    config = config or student_config()
    variant = config.variant
    if variant.tag == "teacher":
        raise ValueError("use train_teacher for the teacher variant")
    if variant.needs_teacher and dataset.r_t is None:
        if teacher is None:
            raise StateError(f"variant {variant.tag!r} needs a teacher or attached teacher predictions")
        if not hasattr(teacher, "forward"):
            teacher, _ = load_network(teacher)
        dataset = attach_teacher_predictions(dataset, teacher)

    network = build_student(variant, config.seed, config.hidden, config.dropout, config.block_order, config.depth)
    t = dataset.t
    rt = dataset.r_t
    state = {}

    threshold = None
    outlier_fraction = None
    if variant.uses_tor:
        threshold = resolve_threshold(dataset, variant, config.batch_size)
        state["tor"] = losses.TorLossConfig(threshold.epsilon, variant.penalty)
        inliers = losses.tor_inliers(rt, t, threshold.epsilon)
        outlier_fraction = float(1.0 - inliers.mean())
        log.debug("TOR threshold %s, outlier fraction %.4f", threshold.as_dict(), outlier_fraction)

    def on_epoch(epoch):
        if variant.uses_tor and config.epsilon_cadence == "per-epoch" and epoch > 0:
            th = resolve_threshold(dataset, variant, config.batch_size)
            state["tor"] = losses.TorLossConfig(th.epsilon, variant.penalty)
        if variant.tag == "robust" and config.robust_scale_cadence == "epoch":
            pred = network.predict(dataset.x)[:, 0]
            state["scale"] = mad_sigma(pred - t)

    tag = variant.tag
    ld = _ld(variant)

    def batch_loss(out, idx):
        tb = t[idx]
        if tag == "student-l1":
            return losses.l1_loss(out[:, 0], tb), {}
        if tag == "student-mse":
            return losses.mse_loss(out[:, 0], tb), {}
        rb = rt[idx] if rt is not None else None
        if tag == "only-ld":
            return ld(out[:, 0], rb), {}
        if tag == "only-tor":
            return losses.tor_loss(out[:, 0], rb, tb, state["tor"]), {}
        if tag == "ours-full":
            tor = losses.tor_loss(out[:, 0], rb, tb, state["tor"])
            ldr = ld(out[:, 1], rb)
            weights = losses.CompositeWeights(variant.c_tor, variant.c_d)
            return losses.composite_loss(tor, ldr, weights), {"tor": tor.value, "ld": ldr.value}
        if tag == "l1-tbr":
            a = losses.l1_loss(out[:, 0], tb)
            b = losses.tbr_loss(out[:, 0], rb, tb, variant.margin)
            w = variant.tbr_weight
            return losses.LossResult(a.value + w * b.value, a.grad + w * b.grad), {"l1": a.value, "tbr": b.value}
        if tag == "robust":
            if config.robust_scale_cadence == "batch":
                try:
                    scale = mad_sigma(out[:, 0] - tb)
                except DegenerateScaleError:
                    scale = state.get("scale", 1.0)
                state["scale"] = scale
            return losses.tukey_robust_loss(out[:, 0], tb, state["scale"]), {"scale": state["scale"]}
        raise ValueError(f"unhandled variant {tag!r}")

    trace = _open_trace(trace_path)
    try:
        history = _fit(network, dataset.x, config, batch_loss, trace, on_epoch)
    finally:
        if trace is not None:
            trace.close()
    return TrainResult(network, history, threshold, outlier_fraction)


def predictions(network, x):
    """Scalar prediction per sample (head average for two-head students)."""
    out = network.predict(x)
    return out[:, 0] if out.shape[1] == 1 else out.mean(axis=1)


def evaluate(network, dataset):
    """Mean absolute error against noisy and, when known, clean targets.

    Two-head students are scored on the averaged output; per-head errors
    are reported alongside.
    """
    out = network.predict(dataset.x)
    pred = out[:, 0] if out.shape[1] == 1 else (out[:, 0] + out[:, 1]) / 2.0
    result = {"mae_noisy": float(np.mean(np.abs(pred - dataset.t)))}
    if dataset.clean is not None:
        result["mae_clean"] = float(np.mean(np.abs(pred - dataset.clean)))
    if out.shape[1] > 1:
        ref = dataset.clean if dataset.clean is not None else dataset.t
        for j, name in enumerate(network.head_names):
            result[f"mae_head_{name}"] = float(np.mean(np.abs(out[:, j] - ref)))
    return result

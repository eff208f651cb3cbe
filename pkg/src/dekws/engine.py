"""Class-incremental training loop with dark-experience replay.

Each optimization step combines three terms: cross-entropy on the current
batch, cross-entropy on a batch replayed from the buffer (weighted alpha),
and mean-squared error between stored logits and the live network's logits
on an independently drawn buffer batch (weighted beta). Buffer terms vanish
while the buffer is empty. After the update, every current example is
offered to the reservoir together with the pre-update logits the step just
produced, so the buffer samples the entire training trajectory rather than
task snapshots.

Baselines reuse the same loop: finetune is alpha = beta = 0 with capacity 0,
naive rehearsal concatenates a replayed batch into a single cross-entropy,
and joint pools all classes into one training phase.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .buffer import BufferEntry, ReservoirBuffer
from .dataset import FeaturizedDataset, TaskSpec
from .errors import (
    InvalidConfigError,
    InvalidInputError,
    InvalidScheduleError,
    TrainingFaultError,
)
from .metrics import AccuracyMatrix, build_report, evaluate_task_accuracy
from .model import TcResNet8, TcResNet8Config, build
from .rng import numpy_stream, python_stream, substream_seed

STRATEGIES = ("de_kws", "finetune", "joint", "naive_rehearsal")
PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    batch_size: int = 128
    epochs_per_task: int = 50
    alpha: float = 0.5
    beta: float = 1.0
    buffer_capacity: int = 500
    seed: int = 0
    strategy: str = "de_kws"
    precision: str = "float64"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise InvalidConfigError(
                f"alpha and beta must be >= 0, got {self.alpha}, {self.beta}"
            )
        if self.batch_size < 1:
            raise InvalidConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs_per_task < 1:
            raise InvalidConfigError(
                f"epochs_per_task must be >= 1, got {self.epochs_per_task}"
            )
        if self.buffer_capacity < 0:
            raise InvalidConfigError(
                f"buffer_capacity must be >= 0, got {self.buffer_capacity}"
            )
        if self.strategy not in STRATEGIES:
            raise InvalidConfigError(
                f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}"
            )
        if self.precision not in PRECISIONS:
            raise InvalidConfigError(
                f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}"
            )


@dataclass
class StepBreakdown:
    l_total: float
    l_current: float
    l_rehearsal: float | None
    l_distill: float | None


@dataclass
class RunResult:
    model: TcResNet8
    matrix: AccuracyMatrix
    report: dict
    buffer: ReservoirBuffer


def combined_loss(l_current, l_rehearsal, l_distill, alpha: float, beta: float):
    """Total objective: current + alpha * rehearsal + beta * distillation.

    Buffer terms may be None (empty buffer) and then contribute nothing.
    Accepts loss tensors or plain floats; returns a scalar Tensor. A
    non-finite component raises TrainingFaultError.
    """
    def as_tensor(value, label):
        t = value if isinstance(value, ad.Tensor) else ad.Tensor(float(value))
        if not np.isfinite(t.data).all():
            raise TrainingFaultError(f"non-finite {label} loss component")
        return t

    total = as_tensor(l_current, "current-task")
    if l_rehearsal is not None:
        total = total + as_tensor(l_rehearsal, "rehearsal") * alpha
    if l_distill is not None:
        total = total + as_tensor(l_distill, "distillation") * beta
    return total


def _stack_batch(entries):
    features = np.stack([e.features for e in entries])
    labels = np.asarray([e.label for e in entries], dtype=np.int64)
    logits = np.stack([e.logits for e in entries])
    return features, labels, logits


def train_step(model: TcResNet8, batch, buf: ReservoirBuffer, cfg: TrainConfig,
               adam_state: ad.AdamState, sampler_rng) -> StepBreakdown:
    """One optimization step; mutates model, buffer, and optimizer state.

    batch is (features (N, frames, coeffs), labels (N,)). Returns the loss
    breakdown. The current batch is offered to the buffer with the logits
    it produced before the parameter update.
    """
    features, labels = batch
    if len(features) == 0:
        raise InvalidInputError("empty training batch")
    params = model.parameters
    ad.zero_grads(params)

    if cfg.strategy == "naive_rehearsal" and len(buf) > 0:
        replay = buf.sample_batch(len(features), sampler_rng)
        r_features, r_labels, _ = _stack_batch(replay)
        merged = np.concatenate([features, r_features])
        merged_labels = np.concatenate([labels, r_labels])
        logits = model.forward(merged, training=True)
        total = combined_loss(
            ad.cross_entropy_loss(logits, merged_labels), None, None,
            cfg.alpha, cfg.beta,
        )
        current_logits = logits.data[: len(features)]
        breakdown = StepBreakdown(total.item(), total.item(), None, None)
    else:
        logits = model.forward(features, training=True)
        l_current = ad.cross_entropy_loss(logits, labels)
        l_rehearsal = None
        l_distill = None
        if cfg.strategy in ("de_kws", "finetune", "joint") and len(buf) > 0:
            rehearsal = buf.sample_batch(cfg.batch_size, sampler_rng)
            r_features, r_labels, _ = _stack_batch(rehearsal)
            l_rehearsal = ad.cross_entropy_loss(
                model.forward(r_features, training=True), r_labels
            )
            distill = buf.sample_batch(cfg.batch_size, sampler_rng)
            d_features, _, d_logits = _stack_batch(distill)
            l_distill = ad.mse_logit_loss(
                ad.Tensor(d_logits),
                model.forward(d_features, training=True),
            )
        total = combined_loss(l_current, l_rehearsal, l_distill, cfg.alpha, cfg.beta)
        current_logits = logits.data
        breakdown = StepBreakdown(
            total.item(),
            l_current.item(),
            None if l_rehearsal is None else l_rehearsal.item(),
            None if l_distill is None else l_distill.item(),
        )

    total.backward()
    ad.adam_step(params, [p.grad for p in params], adam_state)

    for i in range(len(features)):
        buf.insert(BufferEntry(features[i], int(labels[i]), current_logits[i]))
    return breakdown


def _validate_schedule(schedule, data: FeaturizedDataset) -> None:
    seen: set[int] = set()
    for task in schedule:
        if seen & set(task.class_ids):
            raise InvalidScheduleError(
                f"task {task.task_id} repeats classes already scheduled"
            )
        seen |= set(task.class_ids)
        train_x, _ = data.train_subset(task.class_ids)
        if len(train_x) == 0:
            raise InvalidScheduleError(
                f"task {task.task_id} has no training examples"
            )
        val_x, _ = data.val_subset(task.class_ids)
        if len(val_x) == 0:
            raise InvalidScheduleError(
                f"task {task.task_id} has no validation examples"
            )
    if any(c >= data.num_classes or c < 0 for c in seen):
        raise InvalidScheduleError("schedule references classes outside the dataset")


def _deviation_log(cfg: TrainConfig) -> list:
    notes = []
    for f in dataclasses.fields(TrainConfig):
        default = f.default
        value = getattr(cfg, f.name)
        if f.name in ("seed", "strategy", "buffer_capacity"):
            continue
        if value != default:
            notes.append(f"{f.name}={value} (default {default})")
    return notes


def _evaluate_tasks(model, schedule, data, task_indices) -> dict:
    row = {}
    for i in task_indices:
        task = schedule[i]
        val_x, val_y = data.val_subset(task.class_ids)
        row[i] = evaluate_task_accuracy(model, task, val_x, val_y)
    return row


def _train_phase(model, phase_tasks, data, cfg, adam_state, buf, shuffle_rng,
                 sampler_rng, loss_curve, matrix, schedule, eval_after_each):
    """Train sequentially over phase_tasks; append a matrix row per phase."""
    for phase_idx, task in enumerate(phase_tasks):
        train_x, train_y = data.train_subset(task.class_ids)
        n = len(train_x)
        for epoch in range(cfg.epochs_per_task):
            perm = shuffle_rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                breakdown = train_step(
                    model, (train_x[idx], train_y[idx]), buf, cfg,
                    adam_state, sampler_rng,
                )
                loss_curve.append(
                    {
                        "task": task.task_id,
                        "epoch": epoch,
                        "l_total": breakdown.l_total,
                        "l_current": breakdown.l_current,
                        "l_rehearsal": breakdown.l_rehearsal,
                        "l_distill": breakdown.l_distill,
                    }
                )
        if eval_after_each:
            matrix.add_row(_evaluate_tasks(model, schedule, data, range(phase_idx + 1)))


def _assemble_report(cfg, schedule, data, model, matrix, loss_curve, buf) -> dict:
    val_sizes = [len(data.val_subset(t.class_ids)[0]) for t in schedule]
    summary = build_report(matrix, model.count_parameters(), val_sizes)
    return {
        "strategy": cfg.strategy,
        "config": dataclasses.asdict(cfg),
        "deviation_log": _deviation_log(cfg),
        "num_tasks": len(schedule),
        "task_classes": [list(t.class_ids) for t in schedule],
        "parameter_count": summary.parameter_count,
        "accuracy_matrix": matrix.rows,
        "per_task_final": summary.per_task_final,
        "acc": summary.acc,
        "acc_class_weighted": summary.acc_weighted,
        "bwt": summary.bwt,
        "buffer_len": len(buf),
        "buffer_num_seen": buf.num_seen,
        "loss_curve": loss_curve,
    }


def run_schedule(schedule, data: FeaturizedDataset, cfg: TrainConfig) -> RunResult:
    """Incremental training over the schedule, one matrix row per task.

    After finishing task t, every task i <= t is evaluated on its
    validation split. The report carries ACC, BWT (absent for a single
    task), per-task accuracies, loss curves, and buffer accounting.
    """
    _validate_schedule(schedule, data)
    model = build(
        TcResNet8Config(num_classes=data.num_classes),
        cfg.seed,
        dtype=PRECISIONS[cfg.precision],
    )
    adam_state = ad.init_adam(model.parameters, lr=cfg.lr)
    buf = ReservoirBuffer(
        cfg.buffer_capacity, data.num_classes,
        seed=substream_seed(cfg.seed, "reservoir"),
    )
    shuffle_rng = numpy_stream(cfg.seed, "shuffle")
    sampler_rng = python_stream(cfg.seed, "sampler")
    matrix = AccuracyMatrix(len(schedule))
    loss_curve: list = []
    _train_phase(
        model, schedule, data, cfg, adam_state, buf, shuffle_rng, sampler_rng,
        loss_curve, matrix, schedule, eval_after_each=True,
    )
    report = _assemble_report(cfg, schedule, data, model, matrix, loss_curve, buf)
    return RunResult(model, matrix, report, buf)


def run_baseline(strategy: str, schedule, data: FeaturizedDataset,
                 cfg: TrainConfig) -> RunResult:
    """Run a reference strategy with the same outputs as run_schedule.

    finetune: the incremental loop with alpha = beta = 0 and no buffer.
    joint: one pooled training phase over all scheduled classes, evaluated
    per task (single fully-defined matrix row; BWT absent).
    naive_rehearsal: per step, a buffer batch the size of the current batch
    is concatenated for a single cross-entropy; the buffer still fills by
    reservoir sampling.
    """
    if strategy not in STRATEGIES:
        raise InvalidConfigError(
            f"unknown strategy {strategy!r}; expected one of {STRATEGIES}"
        )
    if strategy == "finetune":
        cfg = dataclasses.replace(
            cfg, strategy="finetune", alpha=0.0, beta=0.0, buffer_capacity=0
        )
        return run_schedule(schedule, data, cfg)
    if strategy == "naive_rehearsal":
        return run_schedule(schedule, data, dataclasses.replace(cfg, strategy=strategy))
    if strategy == "de_kws":
        return run_schedule(schedule, data, dataclasses.replace(cfg, strategy=strategy))

    # joint: single pooled phase, then per-task evaluation
    cfg = dataclasses.replace(cfg, strategy="joint", alpha=0.0, beta=0.0,
                              buffer_capacity=0)
    _validate_schedule(schedule, data)
    pooled_classes = tuple(c for task in schedule for c in task.class_ids)
    pooled = [TaskSpec(0, pooled_classes)]
    model = build(
        TcResNet8Config(num_classes=data.num_classes),
        cfg.seed,
        dtype=PRECISIONS[cfg.precision],
    )
    adam_state = ad.init_adam(model.parameters, lr=cfg.lr)
    buf = ReservoirBuffer(0, data.num_classes, seed=substream_seed(cfg.seed, "reservoir"))
    shuffle_rng = numpy_stream(cfg.seed, "shuffle")
    sampler_rng = python_stream(cfg.seed, "sampler")
    matrix = AccuracyMatrix(len(schedule))
    loss_curve: list = []
    _train_phase(
        model, pooled, data, cfg, adam_state, buf, shuffle_rng, sampler_rng,
        loss_curve, matrix, schedule, eval_after_each=False,
    )
    matrix.add_row(_evaluate_tasks(model, schedule, data, range(len(schedule))))
    report = _assemble_report(cfg, schedule, data, model, matrix, loss_curve, buf)
    return RunResult(model, matrix, report, buf)

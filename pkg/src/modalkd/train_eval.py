"""Teacher training, student distillation, accuracy and relation tracing."""

from __future__ import annotations

import logging
import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import tensor_core as tc
from .distill_losses import (
    DistillConfig,
    OptimizerKind,
    _nll,
    distill_terms,
    gram_tensor,
    tri_modality_ce_terms,
)
from .errors import NonFiniteError, ParameterError, TrainingError
from .modal_models import (
    ActivationSource,
    ModalityMode,
    ModalNet,
    check_compatible,
    forward_modes,
    new_modal_net,
    predict,
    stack_by_sample,
)
from .synth_data import Dataset, split
from .tensor_core import Tensor

logger = logging.getLogger(__name__)

PROBE_SIZE = 64

# Published UNITER-scale accuracies in % as (test, val); quoted for context only.
PUBLISHED_TABLE = {
    "VE": {"KD": (71.22, 71.43), "Ours": (72.45, 72.66)},
    "NLVR": {"KD": (73.62, 73.45), "Ours": (75.33, 75.06)},
    "HM": {"KD": (68.22, 67.89), "Ours": (69.54, 69.85)},
}


# ---------------------------------------------------------------- optimizers


class SGD:
    def __init__(self, params: List[Tensor], lr: float):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad

    def zero_grad(self) -> None:
        tc.zero_grads(self.params)


class Adam:
    def __init__(self, params: List[Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        tc.zero_grads(self.params)


def make_optimizer(params: List[Tensor], cfg: DistillConfig):
    if cfg.optimizer is OptimizerKind.SGD:
        return SGD(params, cfg.learning_rate)
    return Adam(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)


# ------------------------------------------------------------------- reports


@dataclass
class EpochRecord:
    epoch: int
    train_loss_total: float
    loss_ce: float
    loss_kd: float
    loss_mr: float
    val_accuracy: float


@dataclass
class TrainReport:
    records: List[EpochRecord]
    config: DistillConfig
    best_epoch: int
    val_accuracy: float  # joint-mode accuracy of the returned snapshot
    test_accuracy: Optional[float] = None
    wall_clock_seconds: float = 0.0

    def to_document(self) -> dict:
        # wall-clock time is left out so documents are byte-reproducible
        return {
            "schema_version": 1,
            "config": self.config.to_dict(),
            "best_epoch": self.best_epoch,
            "val_accuracy": self.val_accuracy,
            "test_accuracy": self.test_accuracy,
            "records": [vars(r).copy() for r in self.records],
        }


@dataclass
class TraceRecord:
    epoch: int
    gram_teacher: np.ndarray
    gram_student: np.ndarray
    abs_distance: np.ndarray
    frobenius_distance: float


@dataclass
class RelationTrace:
    records: List[TraceRecord] = field(default_factory=list)
    probe_size: int = 0

    def frobenius_series(self) -> List[float]:
        return [r.frobenius_distance for r in self.records]

    def at_epoch(self, epoch: int) -> TraceRecord:
        for r in self.records:
            if r.epoch == epoch:
                return r
        raise KeyError(epoch)

    def to_document(self) -> dict:
        return {
            "schema_version": 1,
            "probe_size": self.probe_size,
            "records": [
                {
                    "epoch": r.epoch,
                    "gram_teacher": r.gram_teacher.tolist(),
                    "gram_student": r.gram_student.tolist(),
                    "abs_distance": r.abs_distance.tolist(),
                    "frobenius_distance": r.frobenius_distance,
                }
                for r in self.records
            ],
        }


# ---------------------------------------------------------------- evaluation


def evaluate(net: ModalNet, ds: Dataset, mode: ModalityMode = ModalityMode.JOINT) -> float:
    """Fraction of samples whose argmax logit equals the label (ties -> lowest class)."""
    if ds is None or len(ds) == 0:
        raise ParameterError("cannot evaluate on an empty dataset")
    pred = predict(net, ds.text, ds.image, mode)
    return float(np.mean(pred == ds.labels))


def relation_snapshot(
    teacher: ModalNet, student: ModalNet, probe: Dataset, cfg: DistillConfig, epoch: int
) -> TraceRecord:
    """Mean teacher/student Gram matrices over the probe samples."""
    b = len(probe)
    grams = []
    for net in (teacher, student):
        logits, hidden = forward_modes(net, probe.text, probe.image, frozen=True)
        rows = logits if cfg.relation_source is ActivationSource.LOGITS else hidden
        g = gram_tensor(stack_by_sample(rows, b), cfg.normalize_rows).data
        grams.append(g.mean(axis=0))
    g_t, g_s = grams
    diff = g_t - g_s
    return TraceRecord(epoch, g_t, g_s, np.abs(diff), math.sqrt(float(np.sum(diff * diff))))


def linear_probe_accuracy(
    ds: Dataset, mode: ModalityMode, steps: int = 500, learning_rate: float = 0.05
) -> float:
    """Fit a softmax-regression probe on one feature view and score it on the same data.

    Scoring on the fitting data flatters the probe, so a gap to the generating
    rule is a conservative sign that the task needs both modalities.
    """
    if len(ds) == 0:
        raise ParameterError("cannot probe an empty dataset")
    views = {
        ModalityMode.TEXT_ONLY: ds.text,
        ModalityMode.IMAGE_ONLY: ds.image,
        ModalityMode.JOINT: np.hstack([ds.text, ds.image]),
    }
    x = Tensor(np.hstack([views[ModalityMode(mode)], np.ones((len(ds), 1))]))
    w = Tensor(np.zeros((x.shape[1], ds.num_classes)), requires_grad=True)
    opt = Adam([w], learning_rate)
    for _ in range(steps):
        opt.zero_grad()
        tc.backward(tc.mean(_nll(tc.matmul(x, w), ds.labels)))
        opt.step()
    pred = np.argmax(x.data @ w.data, axis=1)
    return float(np.mean(pred == ds.labels))


# ------------------------------------------------------------------ training

# (net, text, image, labels) -> (total, ce, kd, mr)
LossFn = Callable[[ModalNet, np.ndarray, np.ndarray, np.ndarray], Tuple[Tensor, Tensor, Tensor, Tensor]]


def _full_pass_record(net, loss_fn, train, val) -> EpochRecord:
    with_grad = [p.requires_grad for p in net.parameters()]
    net.requires_grad_(False)
    try:
        total, ce, kd, mr = loss_fn(net, train.text, train.image, train.labels)
    finally:
        for p, flag in zip(net.parameters(), with_grad):
            p.requires_grad = flag
    return EpochRecord(0, total.item(), ce.item(), kd.item(), mr.item(), evaluate(net, val))


def _fit(
    net: ModalNet,
    loss_fn: LossFn,
    train: Dataset,
    val: Dataset,
    cfg: DistillConfig,
    on_epoch: Optional[Callable[[int], None]] = None,
) -> Tuple[ModalNet, TrainReport]:
    """Mini-batch training with best-val snapshotting.

    Record 0 holds the losses of the untrained net over the whole train set;
    records 1..E average the pre-update batch losses of each epoch.
    """
    start = time.perf_counter()
    net.requires_grad_(True)
    opt = make_optimizer(net.parameters(), cfg)
    rng = np.random.default_rng([cfg.seed, 3])
    records = [_full_pass_record(net, loss_fn, train, val)]
    if on_epoch:
        on_epoch(0)
    best_acc, best_epoch, best = records[0].val_accuracy, 0, net.copy()
    n = len(train)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(4)
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            try:
                total, ce, kd, mr = loss_fn(net, train.text[idx], train.image[idx], train.labels[idx])
                opt.zero_grad()
                tc.backward(total)
            except NonFiniteError as exc:
                raise TrainingError(f"non-finite loss: {exc}", epoch, b) from None
            opt.step()
            if not all(np.isfinite(p.data).all() for p in net.parameters()):
                raise TrainingError("non-finite parameters after update", epoch, b)
            sums += len(idx) * np.array([total.item(), ce.item(), kd.item(), mr.item()])
        sums /= n
        acc = evaluate(net, val)
        records.append(EpochRecord(epoch, *sums.tolist(), acc))
        logger.debug("epoch %d loss %.6f val %.4f", epoch, sums[0], acc)
        if on_epoch:
            on_epoch(epoch)
        if acc > best_acc:
            best_acc, best_epoch, best = acc, epoch, net.copy()
    best.requires_grad_(False)
    report = TrainReport(records, cfg, best_epoch, best_acc, wall_clock_seconds=time.perf_counter() - start)
    return best, report


def train_teacher(train: Dataset, val: Dataset, cfg: DistillConfig) -> Tuple[ModalNet, TrainReport]:
    """Supervised tri-modality CE training of a deep teacher (no KD, no relation term)."""
    cfg = cfg.replace(lambda_kd=0.0, lambda_mr=0.0)
    net = new_modal_net(train.text_dim, train.image_dim, cfg.hidden_dim, train.num_classes, cfg.teacher_depth, cfg.seed)
    zero = Tensor._wrap(np.zeros(()), False)

    def loss_fn(net, text, image, labels):
        logits, _ = forward_modes(net, text, image)
        ce = tri_modality_ce_terms(logits, labels, cfg)
        return ce, ce, zero, zero

    return _fit(net, loss_fn, train, val, cfg)


def distill_student(
    teacher: ModalNet,
    train: Dataset,
    val: Dataset,
    cfg: DistillConfig,
    student: Optional[ModalNet] = None,
) -> Tuple[ModalNet, TrainReport, RelationTrace]:
    """Train a shallow student on the full distillation objective.

    The teacher is never modified.  ``student`` overrides the default fresh
    initialisation (depth ``cfg.student_depth``, seed ``cfg.seed + 1``).
    """
    if student is None:
        student = new_modal_net(
            train.text_dim, train.image_dim, cfg.hidden_dim, train.num_classes, cfg.student_depth, cfg.seed + 1
        )
    else:
        student = student.copy()
    check_compatible(teacher, student)
    frozen = teacher.copy().requires_grad_(False)
    probe = val.subset(range(min(PROBE_SIZE, len(val))))
    trace = RelationTrace(probe_size=len(probe))

    def loss_fn(net, text, image, labels):
        return distill_terms(frozen, net, text, image, labels, cfg)

    def on_epoch(epoch):
        trace.records.append(relation_snapshot(frozen, student, probe, cfg, epoch))

    best, report = _fit(student, loss_fn, train, val, cfg, on_epoch=on_epoch)
    return best, report, trace


# ----------------------------------------------------------------- compare


@dataclass
class ComparisonRow:
    arm: str
    seed: int
    teacher_val: float
    teacher_test: float
    val: float
    test: float
    frobenius: float  # relation distance at the last epoch


@dataclass
class ComparisonTable:
    rows: List[ComparisonRow]

    def arm(self, name: str) -> List[ComparisonRow]:
        return [r for r in self.rows if r.arm == name]

    def median(self, name: str, column: str) -> float:
        return statistics.median(getattr(r, column) for r in self.arm(name))

    def to_document(self) -> dict:
        return {
            "schema_version": 1,
            "rows": [vars(r).copy() for r in self.rows],
            "median": {
                arm: {c: self.median(arm, c) for c in ("teacher_val", "teacher_test", "val", "test", "frobenius")}
                for arm in ("KD", "Ours")
            },
        }

    def render(self) -> str:
        head = f"{'method':<6} {'seed':>6} | {'teacher val':>11} {'teacher test':>12} | {'val':>7} {'test':>7} | {'frob dist':>10}"
        rule = "-" * len(head)
        lines = [head, rule]
        pct = lambda x: f"{100 * x:7.2f}"  # noqa: E731
        for arm in ("KD", "Ours"):
            for r in self.arm(arm):
                lines.append(
                    f"{arm:<6} {r.seed:>6} | {pct(r.teacher_val):>11} {pct(r.teacher_test):>12} | "
                    f"{pct(r.val)} {pct(r.test)} | {r.frobenius:10.4f}"
                )
            m = lambda c: self.median(arm, c)  # noqa: E731
            lines.append(
                f"{arm:<6} {'median':>6} | {pct(m('teacher_val')):>11} {pct(m('teacher_test')):>12} | "
                f"{pct(m('val'))} {pct(m('test'))} | {m('frobenius'):10.4f}"
            )
            lines.append(rule)
        lines.append("Accuracy in %. KD: lambda_mr = 0. Ours: lambda_mr > 0.")
        ref = "; ".join(
            f"{task} test/val KD {v['KD'][0]:.2f}/{v['KD'][1]:.2f} vs Ours {v['Ours'][0]:.2f}/{v['Ours'][1]:.2f}"
            for task, v in PUBLISHED_TABLE.items()
        )
        lines.append(f"Published reference (UNITER teacher, real data; not reproduced here): {ref}")
        return "\n".join(lines) + "\n"


def compare_kd_vs_mr(
    ds: Dataset, cfg: DistillConfig, num_seeds: int, fractions=(0.8, 0.1, 0.1)
) -> ComparisonTable:
    """Per seed: train one teacher, then distill with and without the relation term."""
    if isinstance(num_seeds, bool) or not isinstance(num_seeds, int) or num_seeds < 1:
        raise ParameterError(f"num_seeds must be an integer >= 1, got {num_seeds!r}")
    train, val, test = split(ds, fractions, cfg.seed)
    lam_mr = cfg.lambda_mr if cfg.lambda_mr > 0 else DistillConfig().lambda_mr
    rows = []
    for k in range(num_seeds):
        seed = cfg.seed + k
        run_cfg = cfg.replace(seed=seed)
        teacher, _ = train_teacher(train, val, run_cfg)
        t_val, t_test = evaluate(teacher, val), evaluate(teacher, test)
        for arm, lam in (("KD", 0.0), ("Ours", lam_mr)):
            student, _, trace = distill_student(teacher, train, val, run_cfg.replace(lambda_mr=lam))
            rows.append(
                ComparisonRow(
                    arm, seed, t_val, t_test, evaluate(student, val), evaluate(student, test),
                    trace.records[-1].frobenius_distance,
                )
            )
            logger.info("seed %d %s val %.4f test %.4f", seed, arm, rows[-1].val, rows[-1].test)
    return ComparisonTable(rows)

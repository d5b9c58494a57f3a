"""Distillation objectives: tempered KD, tri-modality CE and the modality relation loss.

Every loss is a mean over samples.  The batched helpers (``*_terms``) work
on all three modality passes at once; the single-sample functions are thin
wrappers over them.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from . import tensor_core as tc
from .errors import DataError, DimensionError, ParameterError
from .modal_models import (
    ActivationSource,
    ModalityActivations,
    ModalityMode,
    ModalNet,
    check_compatible,
    forward,
    forward_modes,
    stack_by_sample,
)
from .synth_data import ModalSample
from .tensor_core import Tensor


class RelationMode(enum.Enum):
    GRAM = "gram"
    RAW_ACTIVATIONS = "raw_activations"


class OptimizerKind(enum.Enum):
    ADAM = "adam"
    SGD = "sgd"


@dataclass(frozen=True)
class DistillConfig:
    alpha: float = 1.0 / 3.0
    beta: float = 1.0 / 3.0
    gamma: float = 1.0 / 3.0
    temperature: float = 2.0
    lambda_kd: float = 1.0
    lambda_mr: float = 1.0
    relation_mode: RelationMode = RelationMode.GRAM
    # cosine Gram over hidden rows keeps the relation term on the same scale
    # as CE and KD; raw logit Grams grow with logit magnitude and swamp them
    relation_source: ActivationSource = ActivationSource.HIDDEN
    normalize_rows: bool = True
    learning_rate: float = 1e-3
    epochs: int = 80
    batch_size: int = 32
    seed: int = 0
    optimizer: OptimizerKind = OptimizerKind.ADAM
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden_dim: int = 32
    teacher_depth: int = 6
    student_depth: int = 1

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("relation_mode", RelationMode(self.relation_mode))
        set_("relation_source", ActivationSource(self.relation_source))
        set_("optimizer", OptimizerKind(self.optimizer))
        for name in ("alpha", "beta", "gamma", "lambda_kd", "lambda_mr"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ParameterError(f"{name} must be a finite value >= 0, got {v!r}")
        for name in ("temperature", "learning_rate", "adam_eps"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be > 0, got {v!r}")
        for name in ("adam_beta1", "adam_beta2"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0 <= v < 1):
                raise ParameterError(f"{name} must lie in [0, 1), got {v!r}")
        for name in ("epochs", "batch_size", "hidden_dim", "teacher_depth", "student_depth"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ParameterError(f"{name} must be an integer >= 1, got {v!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ParameterError(f"seed must be an integer, got {self.seed!r}")
        if not isinstance(self.normalize_rows, bool):
            raise ParameterError(f"normalize_rows must be a boolean, got {self.normalize_rows!r}")

    def replace(self, **changes) -> "DistillConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, enum.Enum) else v
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "DistillConfig":
        if not isinstance(doc, dict):
            raise ParameterError("config document must be an object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ParameterError(f"unknown config field(s): {', '.join(unknown)}")
        try:
            return cls(**doc)
        except ValueError as exc:
            raise ParameterError(str(exc)) from None


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    ce: float
    kd: float
    mr: float


# ---------------------------------------------------------------- primitives


def kd_loss(teacher_logits: Tensor, student_logits: Tensor, temperature: float) -> Tensor:
    """T^2 * KL(softmax(t/T) || softmax(s/T)), averaged over rows if 2-D.

    The teacher side is detached.
    """
    if teacher_logits.shape != student_logits.shape:
        raise DimensionError(f"kd_loss: logits shapes differ {teacher_logits.shape} vs {student_logits.shape}")
    t = teacher_logits.detach()
    log_p = tc.log_softmax_t(t, temperature)
    log_q = tc.log_softmax_t(student_logits, temperature)
    p = Tensor._wrap(np.exp(log_p.data), False)
    rows = 1 if t.data.ndim == 1 else t.shape[0]
    kl = tc.sum(tc.mul(p, tc.sub(log_p, log_q)))
    return tc.scale(kl, temperature * temperature / rows)


def _nll(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-row -log softmax(logits)[label]."""
    labels = np.asarray(labels, dtype=np.int64)
    n_cls = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        bad = labels[(labels < 0) | (labels >= n_cls)][0]
        raise DataError(f"label {bad} out of range for {n_cls} classes")
    return tc.scale(tc.pick(tc.log_softmax_t(logits, 1.0), labels), -1.0)


def ce_loss(logits: Tensor, label: int) -> Tensor:
    """Cross-entropy of 1-D logits against one class index."""
    if logits.data.ndim != 1:
        raise DimensionError(f"ce_loss expects 1-D logits, got {logits.shape}")
    if not 0 <= int(label) < logits.shape[0]:
        raise DataError(f"label {label} out of range for {logits.shape[0]} classes")
    nll = _nll(tc.reshape(logits, (1, logits.shape[0])), np.array([label]))
    return tc.reshape(nll, ())


def tri_modality_ce_terms(student_logits: Tensor, labels: np.ndarray, cfg: DistillConfig) -> Tensor:
    """alpha*CE(text) + beta*CE(image) + gamma*CE(joint) from mode-major (3B, C) logits."""
    batch = len(labels)
    nll = _nll(student_logits, np.tile(labels, 3))
    weights = np.repeat([cfg.alpha, cfg.beta, cfg.gamma], batch) / batch
    return tc.sum(tc.mul(nll, Tensor._wrap(weights, False)))


def _as_batch(samples) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(samples, ModalSample):
        samples = [samples]
    samples = list(samples)
    if not samples:
        raise ParameterError("empty batch")
    text = np.stack([s.text_feats for s in samples])
    image = np.stack([s.image_feats for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return text, image, labels


def tri_modality_ce(
    student: ModalNet, samples: Union[ModalSample, Sequence[ModalSample]], cfg: DistillConfig
) -> Tensor:
    text, image, labels = _as_batch(samples)
    logits, _ = forward_modes(student, text, image)
    return tri_modality_ce_terms(logits, labels, cfg)


# ------------------------------------------------------------------ relation


@dataclass
class GramMatrix:
    values: Tensor  # 3 x 3

    def numpy(self) -> np.ndarray:
        return self.values.data.copy()

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        g = self.values.data
        return bool(np.max(np.abs(g - g.T)) <= tol)

    def min_eigenvalue(self) -> float:
        g = self.values.data
        return float(np.linalg.eigvalsh((g + g.T) / 2.0).min())


def gram_tensor(acts: Tensor, normalize_rows: bool = False) -> Tensor:
    """A @ A^T over the last two axes of a (3, D) or (B, 3, D) tensor."""
    if normalize_rows:
        acts = tc.normalize_rows(acts)
    return tc.matmul(acts, tc.transpose(acts))


def gram(a: ModalityActivations, normalize_rows: bool = False) -> GramMatrix:
    return GramMatrix(gram_tensor(a.values, normalize_rows))


def relation_terms(teacher_acts: Tensor, student_acts: Tensor, cfg: DistillConfig) -> Tensor:
    """MSE between teacher and student relation representations.

    Inputs are (3, D) or (B, 3, D); teacher side is detached.  In Gram mode
    the activation widths may differ.
    """
    teacher_acts = teacher_acts.detach()
    if cfg.relation_mode is RelationMode.GRAM:
        if teacher_acts.shape[:-1] != student_acts.shape[:-1]:
            raise DimensionError(f"relation_loss: leading shapes differ {teacher_acts.shape} vs {student_acts.shape}")
        g_t = gram_tensor(teacher_acts, cfg.normalize_rows)
        g_s = gram_tensor(student_acts, cfg.normalize_rows)
        return tc.mean(tc.square(tc.sub(g_t, g_s)))
    if teacher_acts.shape != student_acts.shape:
        raise DimensionError(
            f"raw-activation relation loss needs equal shapes, got teacher {teacher_acts.shape} "
            f"vs student {student_acts.shape}; use relation_mode='gram' for differing widths"
        )
    return tc.mean(tc.square(tc.sub(teacher_acts, student_acts)))


def relation_loss(
    teacher_acts: ModalityActivations, student_acts: ModalityActivations, cfg: DistillConfig
) -> Tensor:
    return relation_terms(teacher_acts.values, student_acts.values, cfg)


# --------------------------------------------------------------------- total


def distill_terms(
    teacher: ModalNet,
    student: ModalNet,
    text: np.ndarray,
    image: np.ndarray,
    labels: np.ndarray,
    cfg: DistillConfig,
) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
    """(total, ce, kd, mr) tensors for a batch; kd and mr are unweighted."""
    check_compatible(teacher, student)
    batch = len(labels)
    s_logits, s_hidden = forward_modes(student, text, image)
    ce = tri_modality_ce_terms(s_logits, labels, cfg)
    # kd and mr are computed even at weight 0 so they are always logged
    t_logits, t_hidden = forward_modes(teacher, text, image, frozen=True)
    kd = kd_loss(t_logits, s_logits, cfg.temperature)
    if cfg.relation_source is ActivationSource.LOGITS:
        t_rows, s_rows = t_logits, s_logits
    else:
        t_rows, s_rows = t_hidden, s_hidden
    mr = relation_terms(stack_by_sample(t_rows, batch), stack_by_sample(s_rows, batch), cfg)
    total = tc.add(ce, tc.scale(kd, cfg.lambda_kd))
    total = tc.add(total, tc.scale(mr, cfg.lambda_mr))
    return total, ce, kd, mr


def total_distill_loss(
    teacher: ModalNet,
    student: ModalNet,
    samples: Union[ModalSample, Iterable[ModalSample]],
    cfg: DistillConfig,
) -> Tuple[Tensor, LossBreakdown]:
    """Full objective for one sample or a mini-batch (mean over samples)."""
    text, image, labels = _as_batch(samples)
    total, ce, kd, mr = distill_terms(teacher, student, text, image, labels, cfg)
    return total, LossBreakdown(total.item(), ce.item(), kd.item(), mr.item())


def per_mode_kd(teacher: ModalNet, student: ModalNet, sample: ModalSample, cfg: DistillConfig) -> Tensor:
    """Reference path: KD averaged over three separate single-mode forwards."""
    terms = []
    for mode in ModalityMode:
        t_logits, _ = forward(teacher, sample, mode)
        s_logits, _ = forward(student, sample, mode)
        terms.append(kd_loss(t_logits, s_logits, cfg.temperature))
    return tc.scale(tc.add(tc.add(terms[0], terms[1]), terms[2]), 1.0 / 3.0)

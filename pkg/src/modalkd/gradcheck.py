"""Finite-difference verification of the full distillation objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from . import tensor_core as tc
from .distill_losses import DistillConfig, RelationMode, distill_terms
from .modal_models import ActivationSource, new_modal_net

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class TrialResult:
    trial: int
    relation_mode: RelationMode
    relation_source: ActivationSource
    normalize_rows: bool
    max_rel_error: float


def random_instance(rng: np.random.Generator, relation_mode: RelationMode):
    """Random nets, batch and config with every loss term active (dims <= 8)."""
    text_dim, image_dim = rng.integers(2, 5, size=2)
    num_classes = int(rng.integers(2, 5))
    hidden = int(rng.integers(3, 7))
    source = ActivationSource.LOGITS if rng.random() < 0.5 else ActivationSource.HIDDEN
    # differing widths are only comparable through the Gram matrix
    t_hidden = hidden if relation_mode is RelationMode.RAW_ACTIVATIONS else int(rng.integers(3, 7))
    seeds = rng.integers(0, 2**31, size=2)
    teacher = new_modal_net(int(text_dim), int(image_dim), t_hidden, num_classes, int(rng.integers(1, 4)), int(seeds[0]))
    student = new_modal_net(int(text_dim), int(image_dim), hidden, num_classes, int(rng.integers(1, 3)), int(seeds[1]))
    teacher.requires_grad_(False)
    for p in teacher.parameters() + student.parameters():
        # nonzero biases so every path carries signal
        if p.data.ndim == 1:
            p.data[:] = rng.normal(0.0, 0.5, size=p.shape)
    batch = int(rng.integers(1, 4))
    text = rng.normal(size=(batch, int(text_dim)))
    image = rng.normal(size=(batch, int(image_dim)))
    labels = rng.integers(0, num_classes, size=batch)
    alpha, beta, gamma = rng.uniform(0.1, 1.0, size=3)
    cfg = DistillConfig(
        alpha=float(alpha),
        beta=float(beta),
        gamma=float(gamma),
        temperature=float(rng.uniform(0.5, 4.0)),
        lambda_kd=float(rng.uniform(0.5, 2.0)),
        lambda_mr=float(rng.uniform(0.5, 2.0)),
        relation_mode=relation_mode,
        relation_source=source,
        normalize_rows=bool(rng.random() < 0.5),
    )
    return teacher, student, text, image, labels, cfg


def check_instance(teacher, student, text, image, labels, cfg) -> float:
    student.zero_grad()
    total, *_ = distill_terms(teacher, student, text, image, labels, cfg)
    tc.backward(total)
    worst = 0.0
    for p in student.parameters():
        analytic = p.grad.copy()

        def f(_):
            return distill_terms(teacher, student, text, image, labels, cfg)[0]

        numeric = tc.finite_diff_grad(f, p, STEP)
        worst = max(worst, tc.max_relative_error(analytic, numeric.data))
    return worst


def run_gradcheck(seed: int, trials: int) -> List[TrialResult]:
    """Alternate Gram and raw-activation relation modes across trials."""
    rng = np.random.default_rng(seed)
    results = []
    modes = (RelationMode.GRAM, RelationMode.RAW_ACTIVATIONS)
    for k in range(trials):
        inst = random_instance(rng, modes[k % 2])
        cfg = inst[-1]
        err = check_instance(*inst)
        results.append(TrialResult(k, cfg.relation_mode, cfg.relation_source, cfg.normalize_rows, err))
    return results

"""Synthetic two-modality classification data and its CSV format.

Labels come from a hidden rule

    label = argmax_c  u_c . z_t + v_c . z_i + w_c * (z_t^T M z_i)

whose bilinear cross term couples the two modalities, so neither feature
block alone determines the class.  Observation noise is added after labeling.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ParameterError, ParseError

# Weight of the cross term relative to the two linear terms.
CROSS_SCALE = 2.0


class Split(enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True, eq=False)
class ModalSample:
    text_feats: np.ndarray
    image_feats: np.ndarray
    label: int

    def __eq__(self, other):
        if not isinstance(other, ModalSample):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.text_feats, other.text_feats)
            and np.array_equal(self.image_feats, other.image_feats)
        )

    def key(self) -> Tuple:
        """Hashable identity, used to compare sample multisets."""
        return (self.label, self.text_feats.tobytes(), self.image_feats.tobytes())


@dataclass(eq=False)
class Dataset:
    samples: List[ModalSample]
    text_dim: int
    image_dim: int
    num_classes: int
    split: Split = Split.TRAIN
    # feature/label matrices cached for batched model evaluation
    _text: np.ndarray = field(init=False, repr=False)
    _image: np.ndarray = field(init=False, repr=False)
    _labels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.samples:
            raise ParameterError("a dataset must contain at least one sample")
        for k, s in enumerate(self.samples):
            if s.text_feats.shape != (self.text_dim,) or s.image_feats.shape != (self.image_dim,):
                raise ParameterError(
                    f"sample {k}: feature lengths {s.text_feats.shape[0]}/{s.image_feats.shape[0]} "
                    f"do not match dataset dims {self.text_dim}/{self.image_dim}"
                )
            if not 0 <= s.label < self.num_classes:
                raise ParameterError(f"sample {k}: label {s.label} outside [0, {self.num_classes})")
        self._text = np.stack([s.text_feats for s in self.samples])
        self._image = np.stack([s.image_feats for s in self.samples])
        self._labels = np.array([s.label for s in self.samples], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, idx):
        return self.samples[idx]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            (self.text_dim, self.image_dim, self.num_classes)
            == (other.text_dim, other.image_dim, other.num_classes)
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.samples, other.samples))
        )

    @property
    def text(self) -> np.ndarray:
        return self._text

    @property
    def image(self) -> np.ndarray:
        return self._image

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    def subset(self, indices: Sequence[int], split: Optional[Split] = None) -> "Dataset":
        return Dataset(
            [self.samples[i] for i in indices],
            self.text_dim,
            self.image_dim,
            self.num_classes,
            self.split if split is None else split,
        )


@dataclass(frozen=True)
class GroundTruthRule:
    """The hidden labeling rule of :func:`generate`."""

    text_weights: np.ndarray  # (num_classes, text_dim)
    image_weights: np.ndarray  # (num_classes, image_dim)
    cross_weights: np.ndarray  # (num_classes,)
    coupling: np.ndarray  # (text_dim, image_dim)

    def scores(self, text: np.ndarray, image: np.ndarray) -> np.ndarray:
        text = np.atleast_2d(text)
        image = np.atleast_2d(image)
        cross = np.einsum("nt,ti,ni->n", text, self.coupling, image)
        return text @ self.text_weights.T + image @ self.image_weights.T + np.outer(cross, self.cross_weights)

    def predict(self, text: np.ndarray, image: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores(text, image), axis=1)


def _check_generate_args(n, text_dim, image_dim, num_classes, noise_std):
    if num_classes < 2:
        raise ParameterError(f"num_classes must be >= 2, got {num_classes}")
    if text_dim < 2 or image_dim < 2:
        raise ParameterError(f"feature dims must be >= 2, got text={text_dim} image={image_dim}")
    if n < num_classes:
        raise ParameterError(f"n={n} must be at least num_classes={num_classes}")
    if not (noise_std >= 0.0 and math.isfinite(noise_std)):
        raise ParameterError(f"noise_std must be a finite value >= 0, got {noise_std}")


def ground_truth_rule(text_dim: int, image_dim: int, num_classes: int, seed: int) -> GroundTruthRule:
    rng = np.random.default_rng([seed, 0])
    return GroundTruthRule(
        text_weights=rng.standard_normal((num_classes, text_dim)) / math.sqrt(text_dim),
        image_weights=rng.standard_normal((num_classes, image_dim)) / math.sqrt(image_dim),
        cross_weights=CROSS_SCALE * rng.standard_normal(num_classes),
        coupling=rng.standard_normal((text_dim, image_dim)) / math.sqrt(text_dim * image_dim),
    )


def generate(
    n: int,
    text_dim: int,
    image_dim: int,
    num_classes: int,
    noise_std: float,
    seed: int,
) -> Dataset:
    """Draw a class-balanced dataset (class counts differ by at most one)."""
    _check_generate_args(n, text_dim, image_dim, num_classes, noise_std)
    rule = ground_truth_rule(text_dim, image_dim, num_classes, seed)
    rng = np.random.default_rng([seed, 1])
    quota = np.full(num_classes, n // num_classes)
    quota[: n % num_classes] += 1

    text_rows, image_rows, labels = [], [], []
    counts = np.zeros(num_classes, dtype=np.int64)
    draws = 0
    chunk = max(64, 2 * n)
    while len(labels) < n:
        if draws > 1000 * n:
            raise ParameterError("class balancing failed: the drawn rule almost never emits some class")
        zt = rng.standard_normal((chunk, text_dim))
        zi = rng.standard_normal((chunk, image_dim))
        ys = rule.predict(zt, zi)
        draws += chunk
        for k in range(chunk):
            y = ys[k]
            if counts[y] < quota[y]:
                counts[y] += 1
                text_rows.append(zt[k])
                image_rows.append(zi[k])
                labels.append(int(y))
                if len(labels) == n:
                    break

    text = np.array(text_rows)
    image = np.array(image_rows)
    if noise_std > 0.0:
        text = text + noise_std * rng.standard_normal(text.shape)
        image = image + noise_std * rng.standard_normal(image.shape)
    samples = [ModalSample(text[k], image[k], labels[k]) for k in range(n)]
    return Dataset(samples, text_dim, image_dim, num_classes)


def split(
    ds: Dataset, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0
) -> Tuple[Dataset, Dataset, Dataset]:
    """Shuffle deterministically and cut into train/val/test."""
    if len(fractions) != 3 or any(not f > 0.0 for f in fractions):
        raise ParameterError(f"need three positive fractions, got {tuple(fractions)}")
    if abs(math.fsum(fractions) - 1.0) > 1e-9:
        raise ParameterError(f"fractions must sum to 1, got {math.fsum(fractions)}")
    n = len(ds)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    if n_train < 1 or n_val < 1 or n - n_train - n_val < 1:
        raise ParameterError(f"fractions {tuple(fractions)} leave an empty split for n={n}")
    order = np.random.default_rng([seed, 2]).permutation(n)
    return (
        ds.subset(order[:n_train], Split.TRAIN),
        ds.subset(order[n_train : n_train + n_val], Split.VAL),
        ds.subset(order[n_train + n_val :], Split.TEST),
    )


# ------------------------------------------------------------------- CSV


def csv_header(text_dim: int, image_dim: int) -> List[str]:
    return ["label"] + [f"t{k}" for k in range(text_dim)] + [f"i{k}" for k in range(image_dim)]


def format_csv(ds: Dataset) -> str:
    lines = [",".join(csv_header(ds.text_dim, ds.image_dim))]
    for s in ds.samples:
        cells = [str(s.label)]
        cells += [repr(float(v)) for v in s.text_feats]
        cells += [repr(float(v)) for v in s.image_feats]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_csv(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_csv(ds))


def _parse_header(header: List[str], text_dim, image_dim) -> Tuple[int, int]:
    if not header or header[0] != "label":
        raise ParseError("header must start with 'label'", where="line 1")
    t_cols = [c for c in header[1:] if c.startswith("t")]
    i_cols = [c for c in header[1:] if c.startswith("i")]
    if header != csv_header(len(t_cols), len(i_cols)):
        raise ParseError("header must be label,t0..t{n-1},i0..i{m-1}", where="line 1")
    if text_dim is not None and len(t_cols) != text_dim:
        raise ParseError(f"header has {len(t_cols)} text columns, expected {text_dim}", where="line 1")
    if image_dim is not None and len(i_cols) != image_dim:
        raise ParseError(f"header has {len(i_cols)} image columns, expected {image_dim}", where="line 1")
    if not t_cols or not i_cols:
        raise ParseError("header needs at least one text and one image column", where="line 1")
    return len(t_cols), len(i_cols)


def parse_csv(
    text: str,
    text_dim: Optional[int] = None,
    image_dim: Optional[int] = None,
    num_classes: Optional[int] = None,
) -> Dataset:
    """Parse CSV text.  ``num_classes`` defaults to ``max(label) + 1``."""
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows or not any(c.strip() for c in rows[0]):
        raise ParseError("no header", where="line 1")
    dt, di = _parse_header(rows[0], text_dim, image_dim)
    width = 1 + dt + di
    samples = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ParseError(f"expected {width} columns, got {len(row)}", where=f"line {lineno}")
        try:
            label = int(row[0])
        except ValueError:
            raise ParseError(f"label {row[0]!r} is not an integer", where=f"line {lineno}") from None
        if label < 0 or (num_classes is not None and label >= num_classes):
            raise ParseError(f"label {label} out of range", where=f"line {lineno}")
        try:
            values = np.array([float(c) for c in row[1:]])
        except ValueError:
            raise ParseError("non-numeric feature cell", where=f"line {lineno}") from None
        if not np.isfinite(values).all():
            raise ParseError("feature values must be finite", where=f"line {lineno}")
        samples.append(ModalSample(values[:dt], values[dt:], label))
    if not samples:
        raise ParseError("no data rows", where="line 2")
    k = num_classes if num_classes is not None else max(s.label for s in samples) + 1
    return Dataset(samples, dt, di, max(k, 1))


def read_csv(path, text_dim=None, image_dim=None, num_classes=None) -> Dataset:
    return parse_csv(Path(path).read_text(encoding="utf-8"), text_dim, image_dim, num_classes)

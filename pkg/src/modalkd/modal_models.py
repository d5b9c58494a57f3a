"""Feed-forward multimodal classifiers with text-only / image-only / joint inputs.

A missing modality is zero-filled and two presence bits ``[has_text,
has_image]`` are appended to the input, so the network can tell "absent"
from "all-zero features".
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from . import tensor_core as tc
from .errors import DataError, ParameterError, ParseError
from .synth_data import ModalSample
from .tensor_core import Tensor

SCHEMA_VERSION = 1


class ModalityMode(enum.IntEnum):
    TEXT_ONLY = 0
    IMAGE_ONLY = 1
    JOINT = 2

    @property
    def mask(self) -> Tuple[float, float]:
        return (float(self != ModalityMode.IMAGE_ONLY), float(self != ModalityMode.TEXT_ONLY))

    @classmethod
    def parse(cls, name: str) -> "ModalityMode":
        aliases = {"text": cls.TEXT_ONLY, "image": cls.IMAGE_ONLY, "joint": cls.JOINT}
        try:
            return aliases[name.lower()]
        except KeyError:
            return cls[name.upper()]


MODES = (ModalityMode.TEXT_ONLY, ModalityMode.IMAGE_ONLY, ModalityMode.JOINT)


class ActivationSource(enum.Enum):
    LOGITS = "logits"
    HIDDEN = "hidden"


@dataclass
class Layer:
    weight: Tensor  # (fan_in, fan_out); y = x @ W + b
    bias: Tensor  # (fan_out,)


@dataclass
class ModalNet:
    text_dim: int
    image_dim: int
    hidden_dim: int
    num_classes: int
    depth: int
    layers: List[Layer]

    @property
    def input_dim(self) -> int:
        return self.text_dim + self.image_dim + 2

    def parameters(self) -> List[Tensor]:
        params = []
        for layer in self.layers:
            params += [layer.weight, layer.bias]
        return params

    def requires_grad_(self, flag: bool = True) -> "ModalNet":
        for p in self.parameters():
            p.requires_grad = flag
            p.grad = None
        return self

    def zero_grad(self) -> None:
        tc.zero_grads(self.parameters())

    def copy(self) -> "ModalNet":
        layers = [
            Layer(Tensor(l.weight.data, l.weight.requires_grad), Tensor(l.bias.data, l.bias.requires_grad))
            for l in self.layers
        ]
        return ModalNet(self.text_dim, self.image_dim, self.hidden_dim, self.num_classes, self.depth, layers)

    def load_state(self, other: "ModalNet") -> None:
        """Copy parameter values from an identically shaped net."""
        for dst, src in zip(self.parameters(), other.parameters()):
            dst.data[...] = src.data

    def same_architecture(self, other: "ModalNet") -> bool:
        return (self.text_dim, self.image_dim, self.hidden_dim, self.num_classes, self.depth) == (
            other.text_dim,
            other.image_dim,
            other.hidden_dim,
            other.num_classes,
            other.depth,
        )


def _layer_widths(text_dim, image_dim, hidden_dim, num_classes, depth) -> List[int]:
    return [text_dim + image_dim + 2] + [hidden_dim] * depth + [num_classes]


def new_modal_net(
    text_dim: int, image_dim: int, hidden_dim: int, num_classes: int, depth: int, seed: int
) -> ModalNet:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    for name, v in (
        ("text_dim", text_dim),
        ("image_dim", image_dim),
        ("hidden_dim", hidden_dim),
        ("num_classes", num_classes),
        ("depth", depth),
    ):
        if int(v) != v or v < 1:
            raise ParameterError(f"{name} must be a positive integer, got {v}")
    rng = np.random.default_rng(seed)
    widths = _layer_widths(text_dim, image_dim, hidden_dim, num_classes, depth)
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append(Layer(Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True)))
    return ModalNet(text_dim, image_dim, hidden_dim, num_classes, depth, layers)


# ----------------------------------------------------------------- forward


def assemble_inputs(text: np.ndarray, image: np.ndarray, mode: ModalityMode) -> np.ndarray:
    """Stack ``[text or 0 | image or 0 | mask]`` rows for a batch."""
    text = np.atleast_2d(text)
    image = np.atleast_2d(image)
    n = text.shape[0]
    mask_t, mask_i = ModalityMode(mode).mask
    out = np.zeros((n, text.shape[1] + image.shape[1] + 2))
    if mask_t:
        out[:, : text.shape[1]] = text
    if mask_i:
        out[:, text.shape[1] : text.shape[1] + image.shape[1]] = image
    out[:, -2] = mask_t
    out[:, -1] = mask_i
    return out


def assemble_input(sample: ModalSample, mode: ModalityMode) -> np.ndarray:
    return assemble_inputs(sample.text_feats, sample.image_feats, mode)[0]


def check_features(net: ModalNet, text: np.ndarray, image: np.ndarray) -> None:
    if text.shape[-1] != net.text_dim:
        raise DataError(f"text_feats has length {text.shape[-1]}, net expects text_dim={net.text_dim}")
    if image.shape[-1] != net.image_dim:
        raise DataError(f"image_feats has length {image.shape[-1]}, net expects image_dim={net.image_dim}")


def forward_batch(net: ModalNet, inputs: np.ndarray, frozen: bool = False) -> Tuple[Tensor, Tensor]:
    """Run assembled input rows (N x input_dim) through the net.

    Returns ``(logits, hidden)`` of shapes (N, num_classes) and (N, hidden_dim).
    With ``frozen`` the parameters are read without recording gradients.
    """
    x = Tensor._wrap(np.asarray(inputs, dtype=np.float64), False)
    ones = Tensor._wrap(np.ones((x.shape[0], 1)), False)
    hidden = x
    last = len(net.layers) - 1
    for k, layer in enumerate(net.layers):
        w, b = layer.weight, layer.bias
        if frozen:
            w, b = w.detach(), b.detach()
        # bias enters through ones @ b so no broadcasting is needed
        z = tc.add(tc.matmul(hidden, w), tc.matmul(ones, tc.reshape(b, (1, b.shape[0]))))
        if k == last:
            return z, hidden
        hidden = tc.relu(z)
    raise AssertionError("unreachable: a net always has an output layer")


def forward(net: ModalNet, sample: ModalSample, mode: ModalityMode) -> Tuple[Tensor, Tensor]:
    """Logits (no softmax) and last hidden activation for one sample."""
    check_features(net, sample.text_feats, sample.image_feats)
    logits, hidden = forward_batch(net, assemble_input(sample, mode)[None, :])
    return tc.reshape(logits, (net.num_classes,)), tc.reshape(hidden, (net.hidden_dim,))


def forward_modes(
    net: ModalNet, text: np.ndarray, image: np.ndarray, frozen: bool = False
) -> Tuple[Tensor, Tensor]:
    """All three modes for a batch of B samples in one pass.

    Rows are ordered mode-major: B text-only rows, then B image-only, then B joint.
    """
    check_features(net, text, image)
    inputs = np.concatenate([assemble_inputs(text, image, m) for m in MODES])
    return forward_batch(net, inputs, frozen=frozen)


def stack_by_sample(rows: Tensor, batch: int) -> Tensor:
    """(3B, D) mode-major rows -> (B, 3, D) per-sample activation matrices."""
    d = rows.shape[1]
    return tc.transpose(tc.reshape(rows, (3, batch, d)), (1, 0, 2))


@dataclass
class ModalityActivations:
    values: Tensor  # 3 x D, rows in ModalityMode order
    source: ActivationSource

    def __post_init__(self):
        if self.values.data.ndim != 2 or self.values.shape[0] != 3:
            raise DataError(f"activation matrix must be 3 x D, got {self.values.shape}")


def activations_matrix(
    net: ModalNet, sample: ModalSample, source: ActivationSource = ActivationSource.LOGITS
) -> ModalityActivations:
    logits, hidden = forward_modes(net, sample.text_feats[None, :], sample.image_feats[None, :])
    values = logits if ActivationSource(source) is ActivationSource.LOGITS else hidden
    return ModalityActivations(values, ActivationSource(source))


def predict(net: ModalNet, text: np.ndarray, image: np.ndarray, mode: ModalityMode) -> np.ndarray:
    check_features(net, text, image)
    logits, _ = forward_batch(net, assemble_inputs(text, image, mode), frozen=True)
    return np.argmax(logits.data, axis=1)


# ----------------------------------------------------------- serialization


def to_document(net: ModalNet) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "text_dim": net.text_dim,
        "image_dim": net.image_dim,
        "hidden_dim": net.hidden_dim,
        "num_classes": net.num_classes,
        "depth": net.depth,
        "layers": [
            {
                "rows": int(l.weight.shape[0]),
                "cols": int(l.weight.shape[1]),
                "weights": [float(v) for v in l.weight.data.reshape(-1)],
                "bias": [float(v) for v in l.bias.data],
            }
            for l in net.layers
        ],
    }


def serialize(net: ModalNet) -> str:
    # json emits floats with repr(), the shortest string that round-trips
    return json.dumps(to_document(net), indent=1) + "\n"


def _field(doc, key, path, kind=int):
    if not isinstance(doc, dict) or key not in doc:
        raise ParseError("missing field", where=f"{path}.{key}" if path else key)
    value = doc[key]
    where = f"{path}.{key}" if path else key
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ParseError(f"expected an integer, got {value!r}", where=where)
    elif kind is list and not isinstance(value, list):
        raise ParseError(f"expected a list, got {type(value).__name__}", where=where)
    return value


def _numbers(values, expected, where) -> np.ndarray:
    if len(values) != expected:
        raise ParseError(f"expected {expected} numbers, got {len(values)}", where=where)
    for k, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ParseError(f"not a finite number: {v!r}", where=f"{where}[{k}]")
    return np.array(values, dtype=np.float64)


def from_document(doc: dict) -> ModalNet:
    if not isinstance(doc, dict):
        raise ParseError("model document must be an object", where="$")
    version = _field(doc, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {version}", where="schema_version")
    dims = {k: _field(doc, k, "") for k in ("text_dim", "image_dim", "hidden_dim", "num_classes", "depth")}
    for k, v in dims.items():
        if v < 1:
            raise ParseError(f"must be >= 1, got {v}", where=k)
    widths = _layer_widths(**dims)
    layers_doc = _field(doc, "layers", "", list)
    if len(layers_doc) != len(widths) - 1:
        raise ParseError(f"expected {len(widths) - 1} layers, got {len(layers_doc)}", where="layers")
    layers = []
    for k, (ld, fan_in, fan_out) in enumerate(zip(layers_doc, widths[:-1], widths[1:])):
        path = f"layers[{k}]"
        rows, cols = _field(ld, "rows", path), _field(ld, "cols", path)
        if (rows, cols) != (fan_in, fan_out):
            raise ParseError(f"layer is {rows}x{cols}, architecture needs {fan_in}x{fan_out}", where=path)
        w = _numbers(_field(ld, "weights", path, list), rows * cols, f"{path}.weights")
        b = _numbers(_field(ld, "bias", path, list), cols, f"{path}.bias")
        layers.append(Layer(Tensor(w.reshape(rows, cols), requires_grad=True), Tensor(b, requires_grad=True)))
    return ModalNet(layers=layers, **dims)


def deserialize(text: str) -> ModalNet:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", where=f"line {exc.lineno}") from None
    return from_document(doc)


def check_compatible(teacher: ModalNet, student: ModalNet) -> None:
    """Teacher and student must agree on input dims and class count."""
    for name in ("text_dim", "image_dim", "num_classes"):
        t, s = getattr(teacher, name), getattr(student, name)
        if t != s:
            raise DataError(f"{name} mismatch: teacher has {t}, student has {s}")

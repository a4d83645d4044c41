"""Classifier networks split into a feature extractor and a softmax head.

The extractor is a stack of ReLU layers (an optional single convolution
stage, then dense layers) ending in a dense ReLU layer of ``feature_dim``
units. The head is one affine layer ``W v + b`` followed by softmax.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError, FormatError
from .tensor import Tensor

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ConvLayer:
    channels: int
    kernel: int
    stride: int = 1

    def to_dict(self) -> dict:
        return {"conv": {"channels": self.channels, "kernel": self.kernel, "stride": self.stride}}


Layer = Union[int, ConvLayer]


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    feature_dim: int
    num_classes: int
    hidden: tuple[Layer, ...] = ()
    seed: int = 0
    input_shape: tuple[int, int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.input_shape is not None:
            object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        self.validate()

    def validate(self) -> None:
        p, q, k = self.input_dim, self.feature_dim, self.num_classes
        if k < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {k}")
        if p < 1:
            raise ConfigurationError(f"input_dim must be >= 1, got {p}")
        if q < k:
            raise ConfigurationError(f"feature_dim q={q} must be >= num_classes k={k}")
        if self.seed < 0:
            raise ConfigurationError("seed must be unsigned")
        for i, layer in enumerate(self.hidden):
            if isinstance(layer, ConvLayer):
                if i != 0:
                    raise ConfigurationError("a conv layer is only allowed as the first hidden layer")
                if min(layer.channels, layer.kernel, layer.stride) < 1:
                    raise ConfigurationError(f"conv layer fields must be >= 1: {layer}")
                if self.input_shape is None:
                    raise ConfigurationError("conv layer requires input_shape (C, H, W)")
            elif isinstance(layer, (int, np.integer)) and not isinstance(layer, bool):
                if layer < 1:
                    raise ConfigurationError(f"hidden width must be >= 1, got {layer}")
            else:
                raise ConfigurationError(f"unrecognized layer descriptor {layer!r}")
        if self.input_shape is not None:
            if len(self.input_shape) != 3 or math.prod(self.input_shape) != p:
                raise ConfigurationError(f"input_shape {self.input_shape} does not multiply to p={p}")

    def to_dict(self) -> dict:
        d = {
            "p": self.input_dim,
            "q": self.feature_dim,
            "k": self.num_classes,
            "hidden": [l.to_dict() if isinstance(l, ConvLayer) else int(l) for l in self.hidden],
            "seed": self.seed,
        }
        if self.input_shape is not None:
            d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> NetworkSpec:
        hidden: list[Layer] = []
        for item in d.get("hidden", []):
            if isinstance(item, dict) and "conv" in item:
                c = item["conv"]
                hidden.append(ConvLayer(int(c["channels"]), int(c["kernel"]), int(c.get("stride", 1))))
            elif isinstance(item, int) and not isinstance(item, bool):
                hidden.append(item)
            else:
                raise FormatError(f"bad hidden layer descriptor {item!r}", "spec.hidden")
        shape = d.get("input_shape")
        return cls(
            input_dim=int(d["p"]),
            feature_dim=int(d["q"]),
            num_classes=int(d["k"]),
            hidden=tuple(hidden),
            seed=int(d.get("seed", 0)),
            input_shape=tuple(shape) if shape is not None else None,
        )


@dataclass(frozen=True)
class _LayerPlan:
    name: str
    kind: str  # "dense" | "conv"
    weight_shape: tuple[int, int]
    fan_in: int
    in_shape: tuple[int, int, int] | None = None
    stride: int = 1


def layer_plan(spec: NetworkSpec) -> list[_LayerPlan]:
    """Extractor layers in declared order, then the classifier."""
    plan: list[_LayerPlan] = []
    width = spec.input_dim
    for i, layer in enumerate(spec.hidden):
        name = f"layer{i}"
        if isinstance(layer, ConvLayer):
            c, h, w = spec.input_shape
            patch = c * layer.kernel * layer.kernel
            idx, (oh, ow) = T.conv_gather_index((c, h, w), layer.kernel, layer.stride)
            plan.append(_LayerPlan(name, "conv", (layer.channels, patch), patch, (c, h, w), layer.stride))
            width = layer.channels * oh * ow
        else:
            plan.append(_LayerPlan(name, "dense", (int(layer), width), width))
            width = int(layer)
    plan.append(_LayerPlan(f"layer{len(spec.hidden)}", "dense", (spec.feature_dim, width), width))
    plan.append(_LayerPlan("classifier", "dense", (spec.num_classes, spec.feature_dim), spec.feature_dim))
    return plan


@dataclass
class Model:
    """Network spec plus parameters.

    ``params`` maps ``<layer>.weight`` / ``<layer>.bias`` to float64 arrays in
    declared layer order; the classifier is stored as ``classifier.*``.
    Treat instances as immutable: training returns a new Model.
    """

    spec: NetworkSpec
    params: dict[str, np.ndarray] = field(repr=False)

    @property
    def classifier_weights(self) -> np.ndarray:
        return self.params["classifier.weight"]

    @property
    def classifier_bias(self) -> np.ndarray:
        return self.params["classifier.bias"]

    def copy(self) -> Model:
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()})

    def parameter_tensors(self) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=True) for k, v in self.params.items()}

    def features(self, x, params: dict[str, Tensor] | None = None) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim not in (1, 2) or x.shape[-1] != self.spec.input_dim:
            raise DimensionError(f"expected input length {self.spec.input_dim}, got shape {x.shape}")
        P = params if params is not None else self.params
        h = x
        for layer in layer_plan(self.spec)[:-1]:
            w, b = P[f"{layer.name}.weight"], P[f"{layer.name}.bias"]
            if layer.kind == "conv":
                h = T.conv2d(h, w, b, layer.in_shape, layer.stride)
            else:
                h = T.affine(h, w, b)
            h = T.relu(h)
        return h

    def logits(self, x, params: dict[str, Tensor] | None = None) -> Tensor:
        P = params if params is not None else self.params
        return T.affine(self.features(x, params), P["classifier.weight"], P["classifier.bias"])

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.logits(x).data, axis=-1)

    def digest(self) -> str:
        return hashlib.sha256(model_to_json(self).encode()).hexdigest()


def build_model(spec: NetworkSpec) -> Model:
    """Initialize parameters from ``spec.seed``: He-normal weights, zero biases."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    params: dict[str, np.ndarray] = {}
    for layer in layer_plan(spec):
        std = math.sqrt(2.0 / layer.fan_in)
        params[f"{layer.name}.weight"] = rng.normal(0.0, std, size=layer.weight_shape)
        params[f"{layer.name}.bias"] = np.zeros(layer.weight_shape[0])
    return Model(spec, params)


def extract_features(model: Model, x) -> Tensor:
    """Feature vector(s) ``g(x)``; every component is >= 0."""
    return model.features(x)


def forward_full(model: Model, x) -> Tensor:
    """Class probabilities ``softmax(W g(x) + b)``."""
    return T.softmax(model.logits(x))


def model_to_dict(model: Model) -> dict:
    return {
        "version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "params": {name: arr.reshape(-1).tolist() for name, arr in model.params.items()},
    }


def model_to_json(model: Model, extra: dict | None = None) -> str:
    doc = model_to_dict(model)
    if extra:
        doc.update(extra)
    # float repr is the shortest string that round-trips bit-exactly
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def save_model(model: Model, path, extra: dict | None = None) -> None:
    Path(path).write_text(model_to_json(model, extra))


def model_from_dict(doc) -> Model:
    if not isinstance(doc, dict):
        raise FormatError("model document must be a JSON object")
    for key in ("version", "spec", "params"):
        if key not in doc:
            raise FormatError("missing key", key)
    if doc["version"] != FORMAT_VERSION:
        raise FormatError(f"unsupported version {doc['version']!r}", "version")
    try:
        spec = NetworkSpec.from_dict(doc["spec"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed spec: {exc}", "spec") from exc
    raw = doc["params"]
    if not isinstance(raw, dict):
        raise FormatError("params must be an object", "params")
    params: dict[str, np.ndarray] = {}
    for layer in layer_plan(spec):
        for suffix, shape in (("weight", layer.weight_shape), ("bias", (layer.weight_shape[0],))):
            name = f"{layer.name}.{suffix}"
            values = raw.get(name)
            if not isinstance(values, list):
                raise FormatError("missing parameter array", f"params.{name}")
            if len(values) != math.prod(shape):
                raise FormatError(
                    f"expected {math.prod(shape)} values, found {len(values)}", f"params.{name}"
                )
            try:
                arr = np.array(values, dtype=np.float64).reshape(shape)
            except (TypeError, ValueError) as exc:
                raise FormatError("non-numeric parameter values", f"params.{name}") from exc
            if not np.all(np.isfinite(arr)):
                raise FormatError("non-finite parameter values", f"params.{name}")
            params[name] = arr
    extra = set(raw) - set(params)
    if extra:
        raise FormatError(f"unexpected parameters {sorted(extra)}", "params")
    return Model(spec, params)


def load_model(path) -> Model:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc.msg} at char {exc.pos})") from exc
    return model_from_dict(doc)

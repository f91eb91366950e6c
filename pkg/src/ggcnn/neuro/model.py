"""Model assembly and checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, ClassVar, Sequence

import numpy as np

from .. import container
from ..errors import InputError, ShapeMismatch
from .autograd import Tensor, as_tensor, parameter
from .layers import GgcnnLayerParams, ggcnn_layer, glorot

CHECKPOINT_FORMAT = "ggcnn-checkpoint/1"


@dataclass
class Dense:
    W: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng, f_in: int, f_out: int) -> "Dense":
        return cls(parameter(glorot(rng, f_in, f_out), "W"), parameter(np.zeros(f_out), "b"))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.W + self.b


class Mlp:
    """Stack of dense layers, ReLU between them, linear output."""

    def __init__(self, layers: Sequence[Dense]):
        self.layers = list(layers)

    @classmethod
    def init(cls, rng, sizes: Sequence[int]) -> "Mlp":
        return cls([Dense.init(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])])

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = x.relu()
        return x

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}{i}.W"] = layer.W
            out[f"{prefix}{i}.b"] = layer.b
        return out


class Module:
    """Minimal model protocol shared by the gated model and the neural baselines.

    Subclasses set ``kind``, build their tensors in ``__init__`` from a
    descriptor dict, and implement ``forward(op, X)``.
    """

    kind: ClassVar[str] = ""
    registry: ClassVar[dict[str, type["Module"]]] = {}

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        if cls.kind:
            Module.registry[cls.kind] = cls

    descriptor: dict

    def parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def forward(self, op, X) -> Tensor:
        raise NotImplementedError

    def __call__(self, op, X) -> Tensor:
        return self.forward(op, X)

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters().values()))

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(params) != set(state):
            raise InputError("checkpoint parameters do not match the model architecture")
        for k, p in params.items():
            if p.data.shape != state[k].shape:
                raise ShapeMismatch(f"{k}: checkpoint shape {state[k].shape} vs model {p.data.shape}")
            p.data = np.array(state[k], dtype=np.float64)

    def _check_input(self, op, X) -> tuple[Tensor, Tensor]:
        op, X = as_tensor(op), as_tensor(X)
        if X.shape[-1] != self.descriptor["n_features"]:
            raise ShapeMismatch(f"model expects {self.descriptor['n_features']} features, got {X.shape[-1]}")
        if op.shape[-1] != X.shape[-2] or op.shape[-2] != X.shape[-2]:
            raise ShapeMismatch(f"operator {op.shape} does not match input {X.shape}")
        return op, X


class GgcnnModel(Module):
    """Two gated graph layers followed by an MLP readout with two outputs per station."""

    kind = "ggcnn"

    DEFAULTS = {
        "n_features": 8,
        "hidden": [32, 32],
        "steps": [4, 3],
        "readout_hidden": [64],
        "n_outputs": 2,
        "operator": "normalized",
    }

    def __init__(self, descriptor: dict | None = None, seed: int = 0, **overrides):
        desc = {**self.DEFAULTS, **(descriptor or {}), **overrides}
        desc["kind"] = self.kind
        desc["seed"] = seed
        hidden, steps = list(desc["hidden"]), list(desc["steps"])
        if len(hidden) != len(steps) or not hidden:
            raise InputError("hidden and steps must list one entry per gated layer")
        widths = [desc["n_features"]] + hidden
        for a, b in zip(widths[:-1], widths[1:]):
            if b < a:
                raise InputError(f"gated layer width {b} is smaller than its input width {a}")
        self.descriptor = desc
        rng = np.random.default_rng(seed)
        self.layers = [GgcnnLayerParams.init(rng, h, s) for h, s in zip(hidden, steps)]
        self.readout = Mlp.init(rng, [hidden[-1], *desc["readout_hidden"], desc["n_outputs"]])

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers, start=1):
            out.update(layer.named(f"layer{i}."))
        out.update(self.readout.named("readout."))
        return out

    def forward(self, op, X) -> Tensor:
        op, h = self._check_input(op, X)
        for layer in self.layers:
            h = ggcnn_layer(op, h, layer)
        return self.readout(h)


def model_forward(op, X, model: Module) -> Tensor:
    return model.forward(op, X)


def build_model(descriptor: dict, seed: int | None = None) -> Module:
    kind = descriptor.get("kind", "ggcnn")
    try:
        cls = Module.registry[kind]
    except KeyError:
        raise InputError(f"unknown model kind {kind!r}") from None
    return cls(descriptor, seed=descriptor.get("seed", 0) if seed is None else seed)


def save_checkpoint(path: str | Path, model: Module, extra: dict[str, Any] | None = None) -> None:
    header = {"format": CHECKPOINT_FORMAT, "model": model.descriptor, **(extra or {})}
    Path(path).write_bytes(container.pack_arrays(model.state(), header))


def load_checkpoint(path: str | Path) -> tuple[Module, dict]:
    state, header = container.unpack_arrays(Path(path).read_bytes())
    if header.get("format") != CHECKPOINT_FORMAT:
        raise container.ContainerError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
    model = build_model(header["model"])
    model.load_state(state)
    return model, header


def describe(model: Module) -> str:
    return json.dumps({"descriptor": model.descriptor, "parameters": model.parameter_count()}, sort_keys=True)

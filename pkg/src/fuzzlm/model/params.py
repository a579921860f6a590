"""Model description, parameter tensors, initialization and counting.

The recurrent cell keeps its four gates fused along the last axis in the
order [input, forget, output | candidate]; the first three blocks go through
the logistic sigmoid, the last through tanh.  Each layer owns one parameter
set per direction (two for bidirectional models).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import InvalidSpecError

GATES = 4


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: everything needed to build parameter tensors."""

    layers: int
    units: int
    bidirectional: bool = False
    dropout_p: float = 0.0
    vocab_size: int = 0
    window: int = 50

    def __post_init__(self):
        if self.layers < 1:
            raise InvalidSpecError("layers must be >= 1")
        if self.units < 1:
            raise InvalidSpecError("units must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise InvalidSpecError("dropout_p must be in [0, 1)")
        if self.vocab_size < 0:
            raise InvalidSpecError("vocab_size must be >= 0")
        if self.window < 1:
            raise InvalidSpecError("window must be >= 1")

    @property
    def directions(self) -> int:
        return 2 if self.bidirectional else 1

    def input_dim(self, layer: int) -> int:
        return self.vocab_size if layer == 0 else self.units

    def with_vocab(self, vocab_size: int) -> "ModelSpec":
        return replace(self, vocab_size=vocab_size)

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "units": self.units,
            "bidirectional": self.bidirectional,
            "dropout_p": self.dropout_p,
            "vocab_size": self.vocab_size,
            "window": self.window,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


# Four stock configurations, smallest to largest.  The jump step is the
# windowing stride conventionally paired with each model.
PRESETS = {
    1: {"layers": 1, "units": 128, "bidirectional": False, "dropout_p": 0.0, "jump": 3},
    2: {"layers": 2, "units": 128, "bidirectional": False, "dropout_p": 0.0, "jump": 3},
    3: {"layers": 2, "units": 256, "bidirectional": False, "dropout_p": 0.3, "jump": 1},
    4: {"layers": 2, "units": 128, "bidirectional": True, "dropout_p": 0.0, "jump": 1},
}

DEFAULT_PRESET = 2


def preset_spec(preset: int, vocab_size: int, window: int = 50) -> ModelSpec:
    if preset not in PRESETS:
        raise InvalidSpecError(f"unknown preset {preset}; choose from {sorted(PRESETS)}")
    cfg = {k: v for k, v in PRESETS[preset].items() if k != "jump"}
    return ModelSpec(vocab_size=vocab_size, window=window, **cfg)


def preset_jump(preset: int) -> int:
    if preset not in PRESETS:
        raise InvalidSpecError(f"unknown preset {preset}; choose from {sorted(PRESETS)}")
    return PRESETS[preset]["jump"]


@dataclass
class CellParams:
    """One direction of one recurrent layer."""

    wx: np.ndarray  # (input_dim, 4*units)
    wh: np.ndarray  # (units, 4*units)
    b: np.ndarray   # (4*units,)


@dataclass
class ModelParams:
    """All trainable tensors of a model, in a fixed traversal order."""

    spec: ModelSpec
    cells: list[list[CellParams]] = field(default_factory=list)  # [layer][direction]
    wv: np.ndarray = None  # (units, vocab_size)
    c: np.ndarray = None   # (vocab_size,)

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for l, layer in enumerate(self.cells):
            for d, cell in enumerate(layer):
                prefix = f"layer{l}.dir{d}"
                out.append((f"{prefix}.wx", cell.wx))
                out.append((f"{prefix}.wh", cell.wh))
                out.append((f"{prefix}.b", cell.b))
        out.append(("head.wv", self.wv))
        out.append(("head.c", self.c))
        return out

    def tensors(self) -> list[np.ndarray]:
        return [t for _, t in self.named_tensors()]

    def scalar_count(self) -> int:
        return sum(t.size for t in self.tensors())

    @property
    def dtype(self):
        return self.wv.dtype

    def copy(self) -> "ModelParams":
        return ModelParams(
            spec=self.spec,
            cells=[
                [CellParams(c.wx.copy(), c.wh.copy(), c.b.copy()) for c in layer]
                for layer in self.cells
            ],
            wv=self.wv.copy(),
            c=self.c.copy(),
        )

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            spec=self.spec,
            cells=[
                [
                    CellParams(
                        c.wx.astype(dtype), c.wh.astype(dtype), c.b.astype(dtype)
                    )
                    for c in layer
                ]
                for layer in self.cells
            ],
            wv=self.wv.astype(dtype),
            c=self.c.astype(dtype),
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors())


def zeros_like_params(params: ModelParams) -> ModelParams:
    out = params.copy()
    for t in out.tensors():
        t.fill(0)
    return out


def parameter_count(spec: ModelSpec) -> int:
    """Closed-form scalar count: 4u(in+u+1) per cell, (u+1)V for the head."""
    total = 0
    for layer in range(spec.layers):
        in_dim = spec.input_dim(layer)
        total += spec.directions * GATES * spec.units * (in_dim + spec.units + 1)
    total += (spec.units + 1) * spec.vocab_size
    return total


def init_params(spec: ModelSpec, seed: int, dtype=np.float32) -> ModelParams:
    """Fresh parameters: weights uniform in +-1/sqrt(fan_in), biases zero
    except the forget gate offset of +1.  Deterministic for a given seed
    (draws happen in float64 in a fixed tensor order, then cast).
    """
    if spec.vocab_size < 1:
        raise InvalidSpecError("vocab_size must be >= 1 to initialize parameters")
    rng = np.random.default_rng(seed)
    u = spec.units

    def uniform(fan_in: int, shape) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    cells = []
    for layer in range(spec.layers):
        in_dim = spec.input_dim(layer)
        directions = []
        for _ in range(spec.directions):
            wx = uniform(in_dim, (in_dim, GATES * u))
            wh = uniform(u, (u, GATES * u))
            b = np.zeros(GATES * u, dtype=dtype)
            b[u : 2 * u] = 1.0  # forget gate bias offset
            directions.append(CellParams(wx, wh, b))
        cells.append(directions)
    wv = uniform(u, (u, spec.vocab_size))
    c = np.zeros(spec.vocab_size, dtype=dtype)
    return ModelParams(spec=spec, cells=cells, wv=wv, c=c)

"""Feed-forward equation network producing analytic basis functions of time.

The network maps a scalar time to M-1 basis-function values. Hidden layers
apply a heterogeneous set of elemental activations (identity, sine, cosine,
sigmoid, sech, and a binary product); the output layer is linear. Because
every unit is an elemental analytic function, the whole network is an
analytic expression in t (see :mod:`ceqln.symbolic` for rendering).

Slot wiring: activations of a layer consume the layer's pre-activation
vector in declaration order; unary kinds take one slot, ``product`` takes
the next two. A layer's pre-activation width is therefore
``n_unary + 2 * n_product`` and must match the row count of its weight
matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError
from .util import format_float

UNARY_KINDS = ("identity", "sine", "cosine", "sigmoid", "sech")
ACTIVATION_KINDS = UNARY_KINDS + ("product",)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """1 / (1 + exp(-z)), branch form stable for |z| > 700."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sech(z: np.ndarray) -> np.ndarray:
    """2 / (exp(z) + exp(-z)), branch form stable for |z| > 700."""
    z = np.asarray(z, dtype=float)
    a = np.exp(-np.abs(z))
    return 2.0 * a / (1.0 + a * a)


def _sigmoid_grad(z: np.ndarray) -> np.ndarray:
    s = sigmoid(z)
    return s * (1.0 - s)


def _sech_grad(z: np.ndarray) -> np.ndarray:
    return -sech(z) * np.tanh(z)


_UNARY_FN: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda z: z,
    "sine": np.sin,
    "cosine": np.cos,
    "sigmoid": sigmoid,
    "sech": sech,
}

_UNARY_GRAD: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda z: np.ones_like(z),
    "sine": np.cos,
    "cosine": lambda z: -np.sin(z),
    "sigmoid": _sigmoid_grad,
    "sech": _sech_grad,
}


@dataclass(frozen=True)
class LayerSpec:
    """Ordered activation assignment for one hidden layer."""

    activations: tuple[str, ...]

    def __post_init__(self):
        bad = [a for a in self.activations if a not in ACTIVATION_KINDS]
        if bad:
            raise ConfigurationError(f"unknown activation kind(s): {bad}")
        if not self.activations:
            raise ConfigurationError("layer must list at least one activation")

    @property
    def output_width(self) -> int:
        return len(self.activations)

    @property
    def pre_width(self) -> int:
        return sum(2 if a == "product" else 1 for a in self.activations)


@dataclass(frozen=True)
class NetworkSpec:
    """Hidden-layer structure plus the number of basis functions (M-1)."""

    hidden: tuple[LayerSpec, ...]
    n_basis: int

    def __post_init__(self):
        if self.n_basis < 1:
            raise ConfigurationError("n_basis must be >= 1")

    @property
    def n_layers(self) -> int:
        """Hidden layers plus the linear output layer."""
        return len(self.hidden) + 1

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(rows, cols) of every weight matrix, output layer last."""
        shapes = []
        width = 1
        for spec in self.hidden:
            shapes.append((spec.pre_width, width))
            width = spec.output_width
        shapes.append((self.n_basis, width))
        return shapes


def repeated_kinds(repeat: int, kinds: Sequence[str] = ACTIVATION_KINDS) -> LayerSpec:
    """Expand a "repeat x {kinds}" layer description: ``repeat`` copies of
    each listed kind, in the listed order."""
    acts: list[str] = []
    for kind in kinds:
        acts.extend([kind] * repeat)
    return LayerSpec(tuple(acts))


@dataclass
class LayerParams:
    W: np.ndarray
    b: np.ndarray


@dataclass
class NetworkParams:
    """Learnable parameters: one (W, b) per hidden layer plus the linear
    output layer."""

    layers: list[LayerParams]
    final: LayerParams

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [LayerParams(l.W.copy(), l.b.copy()) for l in self.layers],
            LayerParams(self.final.W.copy(), self.final.b.copy()),
        )

    def all_arrays(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out.extend([l.W, l.b])
        out.extend([self.final.W, self.final.b])
        return out


@dataclass
class NetworkGrads:
    """Cotangents mirroring :class:`NetworkParams`."""

    layers: list[LayerParams]
    final: LayerParams

    def all_arrays(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out.extend([l.W, l.b])
        out.extend([self.final.W, self.final.b])
        return out


@dataclass
class BasisEvaluations:
    """Basis-function values, one row per function, one column per time."""

    values: np.ndarray  # (M-1, N)
    times: np.ndarray  # (N,)


def validate_params(params: NetworkParams, spec: NetworkSpec) -> None:
    shapes = spec.layer_shapes()
    got = [(l.W.shape, l.b.shape) for l in params.layers]
    got.append((params.final.W.shape, params.final.b.shape))
    if len(params.layers) != len(spec.hidden):
        raise ConfigurationError(
            f"expected {len(spec.hidden)} hidden layers, got {len(params.layers)}"
        )
    for i, (rows, cols) in enumerate(shapes):
        W_shape, b_shape = got[i]
        name = "output layer" if i == len(shapes) - 1 else f"hidden layer {i}"
        if W_shape != (rows, cols):
            raise ConfigurationError(
                f"{name}: weight shape {W_shape} does not match expected {(rows, cols)}"
            )
        if b_shape != (rows,):
            raise ConfigurationError(
                f"{name}: bias shape {b_shape} does not match expected {(rows,)}"
            )
    for arr in params.all_arrays():
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError("network parameters contain non-finite entries")


def _apply_layer(spec: LayerSpec, z: np.ndarray) -> np.ndarray:
    """Apply the per-slot activations to pre-activations z (pre_width, N)."""
    out = np.empty((spec.output_width, z.shape[1]))
    slot = 0
    for i, kind in enumerate(spec.activations):
        if kind == "product":
            out[i] = z[slot] * z[slot + 1]
            slot += 2
        else:
            out[i] = _UNARY_FN[kind](z[slot])
            slot += 1
    return out


def forward(params: NetworkParams, spec: NetworkSpec, times: np.ndarray) -> BasisEvaluations:
    """Evaluate the network columnwise at each time.

    Returns an (M-1, N) matrix whose column n holds the basis values at
    ``times[n]``.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if not np.all(np.isfinite(times)):
        raise ConfigurationError("times contain non-finite entries")
    validate_params(params, spec)
    h = times[np.newaxis, :]
    for layer_spec, layer in zip(spec.hidden, params.layers):
        z = layer.W @ h + layer.b[:, np.newaxis]
        h = _apply_layer(layer_spec, z)
    values = params.final.W @ h + params.final.b[:, np.newaxis]
    return BasisEvaluations(values=values, times=times)


def forward_with_gradients(
    params: NetworkParams, spec: NetworkSpec, times: np.ndarray
) -> tuple[BasisEvaluations, Callable[[np.ndarray], NetworkGrads]]:
    """Forward pass that also returns a pullback closure.

    The pullback maps a cotangent on the output values ((M-1, N)) to
    cotangents on every weight matrix and bias vector. Product units route
    the incoming cotangent to both factor slots: d(z0*z1) = z1*dz0 + z0*dz1.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if not np.all(np.isfinite(times)):
        raise ConfigurationError("times contain non-finite entries")
    validate_params(params, spec)

    h = times[np.newaxis, :]
    inputs: list[np.ndarray] = []  # input h of each hidden layer
    pre: list[np.ndarray] = []  # pre-activations z of each hidden layer
    for layer_spec, layer in zip(spec.hidden, params.layers):
        inputs.append(h)
        z = layer.W @ h + layer.b[:, np.newaxis]
        pre.append(z)
        h = _apply_layer(layer_spec, z)
    last_hidden = h
    values = params.final.W @ h + params.final.b[:, np.newaxis]

    def pullback(dvalues: np.ndarray) -> NetworkGrads:
        dvalues = np.asarray(dvalues, dtype=float)
        if dvalues.shape != values.shape:
            raise ConfigurationError(
                f"cotangent shape {dvalues.shape} does not match output {values.shape}"
            )
        dWf = dvalues @ last_hidden.T
        dbf = dvalues.sum(axis=1)
        dh = params.final.W.T @ dvalues
        layer_grads: list[LayerParams] = []
        for layer_spec, layer, z, h_in in zip(
            reversed(spec.hidden), reversed(params.layers), reversed(pre), reversed(inputs)
        ):
            dz = np.zeros_like(z)
            slot = 0
            for i, kind in enumerate(layer_spec.activations):
                if kind == "product":
                    dz[slot] = dh[i] * z[slot + 1]
                    dz[slot + 1] = dh[i] * z[slot]
                    slot += 2
                else:
                    dz[slot] = dh[i] * _UNARY_GRAD[kind](z[slot])
                    slot += 1
            layer_grads.append(LayerParams(dz @ h_in.T, dz.sum(axis=1)))
            dh = layer.W.T @ dz
        layer_grads.reverse()
        return NetworkGrads(layer_grads, LayerParams(dWf, dbf))

    return BasisEvaluations(values=values, times=times), pullback


def init_uniform(
    spec: NetworkSpec,
    ranges: Sequence[tuple[tuple[float, float], tuple[float, float]]],
    seed: int | np.random.SeedSequence,
) -> NetworkParams:
    """Draw every weight and bias i.i.d. uniform from per-layer ranges.

    ``ranges[i]`` is ((w_lo, w_hi), (b_lo, b_hi)) for layer i, output layer
    last; deterministic given the seed.
    """
    shapes = spec.layer_shapes()
    if len(ranges) != len(shapes):
        raise ConfigurationError(
            f"expected {len(shapes)} per-layer ranges (hidden layers + output), got {len(ranges)}"
        )
    for i, (w_range, b_range) in enumerate(ranges):
        for lo, hi in (w_range, b_range):
            if lo > hi:
                raise ConfigurationError(f"layer {i}: empty range [{lo}, {hi}]")
    rng = np.random.default_rng(seed)
    mats = []
    for (rows, cols), ((w_lo, w_hi), (b_lo, b_hi)) in zip(shapes, ranges):
        W = rng.uniform(w_lo, w_hi, size=(rows, cols))
        b = rng.uniform(b_lo, b_hi, size=rows)
        mats.append(LayerParams(W, b))
    return NetworkParams(mats[:-1], mats[-1])


# -- flat-vector packing, used by gradient checks and the training update --


def pack(params: NetworkParams | NetworkGrads) -> np.ndarray:
    return np.concatenate([a.ravel() for a in params.all_arrays()])


def unpack(vector: np.ndarray, template: NetworkParams) -> NetworkParams:
    out = template.copy()
    offset = 0
    for arr in out.all_arrays():
        n = arr.size
        arr[...] = vector[offset : offset + n].reshape(arr.shape)
        offset += n
    if offset != vector.size:
        raise ConfigurationError(
            f"vector length {vector.size} does not match parameter count {offset}"
        )
    return out


# -- JSON serialization ------------------------------------------------------
#
# Document layout:
#   {"layers": [{"activations": [...], "W": [["..."]], "b": ["..."]}],
#    "final": {"W": [["..."]], "b": ["..."]}}
# Numbers are stored as 17-significant-digit decimal strings so the round
# trip is lossless at full double precision.


def _matrix_to_json(a: np.ndarray) -> list:
    if a.ndim == 1:
        return [format_float(x) for x in a]
    return [[format_float(x) for x in row] for row in a]


def _matrix_from_json(rows, ndim: int) -> np.ndarray:
    if ndim == 1:
        return np.array([float(x) for x in rows], dtype=float)
    return np.array([[float(x) for x in row] for row in rows], dtype=float)


def model_to_json(params: NetworkParams, spec: NetworkSpec) -> dict:
    layers = []
    for layer_spec, layer in zip(spec.hidden, params.layers):
        layers.append(
            {
                "activations": list(layer_spec.activations),
                "W": _matrix_to_json(layer.W),
                "b": _matrix_to_json(layer.b),
            }
        )
    return {
        "layers": layers,
        "final": {"W": _matrix_to_json(params.final.W), "b": _matrix_to_json(params.final.b)},
    }


def model_from_json(doc: dict) -> tuple[NetworkParams, NetworkSpec]:
    hidden = []
    layer_params = []
    for entry in doc["layers"]:
        hidden.append(LayerSpec(tuple(entry["activations"])))
        layer_params.append(
            LayerParams(_matrix_from_json(entry["W"], 2), _matrix_from_json(entry["b"], 1))
        )
    final = LayerParams(
        _matrix_from_json(doc["final"]["W"], 2), _matrix_from_json(doc["final"]["b"], 1)
    )
    spec = NetworkSpec(tuple(hidden), n_basis=final.W.shape[0])
    params = NetworkParams(layer_params, final)
    validate_params(params, spec)
    return params, spec


def save_model(path, params: NetworkParams, spec: NetworkSpec) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(params, spec), fh, indent=1)
        fh.write("\n")


def load_model(path) -> tuple[NetworkParams, NetworkSpec]:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_json(json.load(fh))

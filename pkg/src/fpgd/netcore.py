"""ReLU network data model, realisations, and explicit constructors.

Networks are immutable sequences of (weight, bias) layer tuples.  The exact
realisation runs in float64; the finite-precision realisation evaluates the
same network through the software floating-point model of `fparith`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np

from .fparith import (
    FloatFormat,
    FpValue,
    _add_mq,
    _as_mq,
    _matvec_mq,
    _mq_to_value,
    _round_matrix,
)


@dataclass(frozen=True)
class Architecture:
    """Layer dimensions (d, N_1, ..., N_L)."""

    dims: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.dims) < 2:
            raise ValueError("architecture needs an input dimension and at least one layer")
        if any(n < 1 for n in self.dims):
            raise ValueError("all architecture entries must be >= 1")

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def depth(self) -> int:
        return len(self.dims) - 1

    @property
    def widths(self) -> tuple[int, ...]:
        return self.dims[1:]

    @property
    def output_dim(self) -> int:
        return self.dims[-1]

    @property
    def total_neurons(self) -> int:
        """d + sum of all layer widths (output layer included)."""
        return sum(self.dims)

    @property
    def max_width(self) -> int:
        return max(self.dims[1:])


class Network:
    """An L-layer ReLU network ((A_1, b_1), ..., (A_L, b_L)).

    Weight matrices have shape (N_j, N_{j-1}); biases have shape (N_j,).
    Arrays are copied to float64 and frozen, so instances are safe to share.
    """

    def __init__(self, layers: Iterable[tuple[np.ndarray, np.ndarray]]):
        frozen = []
        prev = None
        for A, b in layers:
            A = np.array(A, dtype=float)
            b = np.array(b, dtype=float)
            if A.ndim == 1:
                A = A.reshape(1, -1)
            if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.shape[0]:
                raise ValueError(f"bad layer shapes A{A.shape} b{b.shape}")
            if prev is not None and A.shape[1] != prev:
                raise ValueError(f"layer dimensions do not chain: {A.shape[1]} after {prev}")
            prev = A.shape[0]
            A.flags.writeable = False
            b.flags.writeable = False
            frozen.append((A, b))
        if not frozen:
            raise ValueError("network needs at least one layer")
        self._layers = tuple(frozen)

    @property
    def layers(self) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
        return self._layers

    @property
    def input_dim(self) -> int:
        return self._layers[0][0].shape[1]

    @property
    def depth(self) -> int:
        return len(self._layers)

    @property
    def architecture(self) -> Architecture:
        return Architecture((self.input_dim,) + tuple(A.shape[0] for A, _ in self._layers))

    @property
    def output_dim(self) -> int:
        return self._layers[-1][0].shape[0]

    @property
    def total_neurons(self) -> int:
        return self.architecture.total_neurons

    def __repr__(self) -> str:
        return f"Network{self.architecture.dims}"

    def to_json_dict(self) -> dict:
        """Flat JSON document; round-trips float64 entries bit-exactly."""
        return {
            "architecture": list(self.architecture.dims),
            "layers": [
                {"A": [float(v) for v in A.ravel(order="C")], "b": [float(v) for v in b]}
                for A, b in self._layers
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Network":
        dims = doc["architecture"]
        layers = []
        for j, rec in enumerate(doc["layers"]):
            A = np.array(rec["A"], dtype=float).reshape(dims[j + 1], dims[j])
            b = np.array(rec["b"], dtype=float)
            layers.append((A, b))
        return cls(layers)

    def save_json(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    @classmethod
    def load_json(cls, path: Union[str, Path]) -> "Network":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def _as_batch(x, d: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        if d != 1:
            raise ValueError(f"scalar input needs input_dim 1, got {d}")
        return x.reshape(1, 1), True
    if x.ndim == 1:
        if x.shape[0] != d:
            raise ValueError(f"input has dimension {x.shape[0]}, expected {d}")
        return x.reshape(1, d), True
    if x.ndim == 2:
        if x.shape[1] != d:
            raise ValueError(f"inputs have dimension {x.shape[1]}, expected {d}")
        return x, False
    raise ValueError("input must be a scalar, vector, or (M, d) batch")


def realize(net: Network, x) -> np.ndarray:
    """Evaluate the network in float64.

    Accepts a single input (scalar for d=1 or shape (d,)) or a batch (M, d).
    ReLU is applied after every layer except the last.
    """
    v, single = _as_batch(x, net.input_dim)
    last = net.depth - 1
    for j, (A, b) in enumerate(net.layers):
        v = v @ A.T + b
        if j < last:
            v = np.maximum(v, 0.0)
    return v[0] if single else v


class Preactivations(NamedTuple):
    """Hidden-layer preactivations and their 0/1 activation indicators."""

    values: list[np.ndarray]
    indicators: list[np.ndarray]


def preactivations(net: Network, x) -> Preactivations:
    """Preactivations A_j x^(j-1) + b_j and indicators (preact >= 0) for j < L."""
    v, single = _as_batch(x, net.input_dim)
    values, indicators = [], []
    for A, b in net.layers[:-1]:
        pre = v @ A.T + b
        values.append(pre[0] if single else pre)
        indicators.append((pre[0] >= 0) if single else (pre >= 0))
        v = np.maximum(pre, 0.0)
    return Preactivations(values, indicators)


def subnetwork(net: Network, upto: int) -> Network:
    """Layers 1..upto as a network of their own; requires 1 <= upto <= L-1."""
    if not 1 <= upto <= net.depth - 1:
        raise IndexError(f"subnetwork index {upto} outside 1..{net.depth - 1}")
    return Network(net.layers[:upto])


def realize_fp(net: Network, x, fmt: FloatFormat):
    """Finite-precision realisation through the software float model.

    Every matrix-vector product folds left to right with rounded operations,
    the bias addition rounds, and ReLU clamps negatives to exact zero.  `x`
    may be one input vector (sequence of reals or FpValue) or an iterable of
    input vectors; weights are rounded into the format once per call.

    Returns a list of FpValue (one per output coordinate) for a single input,
    or a list of such lists for a batch.
    """
    rounded = [
        (_round_matrix(A, fmt), [_as_mq(float(v), fmt) for v in b]) for A, b in net.layers
    ]
    d = net.input_dim

    def prepare(inp) -> list:
        if isinstance(inp, FpValue):
            inp = [inp]
        elif np.isscalar(inp):
            inp = [inp]
        vec = [_as_mq(v if isinstance(v, FpValue) else float(v), fmt) for v in inp]
        if len(vec) != d:
            raise ValueError(f"input has dimension {len(vec)}, expected {d}")
        return vec

    def run(vec) -> list[FpValue]:
        last = len(rounded) - 1
        for j, (rows, bias) in enumerate(rounded):
            vec = _matvec_mq(rows, vec, fmt)
            vec = [_add_mq(v, bj, fmt) for v, bj in zip(vec, bias)]
            if j < last:
                vec = [v if v[0] > 0 else (0, 0) for v in vec]
        return [_mq_to_value(v, fmt) for v in vec]

    batch = (
        isinstance(x, np.ndarray) and x.ndim == 2
    ) or (
        isinstance(x, (list, tuple))
        and len(x) > 0
        and isinstance(x[0], (list, tuple, np.ndarray))
    )
    if batch:
        return [run(prepare(row)) for row in x]
    return run(prepare(x))


def he_init(arch: Architecture, seed: int, bias_std: float = 0.0) -> Network:
    """Gaussian weights with variance 2/fan_in per layer; biases zero.

    `bias_std` > 0 adds independent Gaussian biases, used for building
    non-degenerate piece-counting corpora (zero-bias nets are positively
    homogeneous, hence one-piece on [0, 1]^d).
    """
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(arch.dims[:-1], arch.dims[1:]):
        A = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        b = rng.normal(0.0, bias_std, size=fan_out) if bias_std > 0 else np.zeros(fan_out)
        layers.append((A, b))
    return Network(layers)


def build_yarotsky(depth: int) -> Network:
    """Width-4 network interpolating x**2 at 2**(depth-1) uniform pieces.

    One neuron carries the running interpolant; three neurons implement a
    rescaled hat iteration.  The realisation matches the piecewise-linear
    interpolant of x**2 on [0, 1] with knot spacing 2**(1-depth), so the
    uniform error is exactly 4**(-depth) and the piece count 2**(depth-1).
    All entries are dyadic rationals, exact in float64.
    """
    if depth < 2:
        raise ValueError("depth must be >= 2")
    first = np.array([[1.0], [2.0], [2.0], [2.0]])
    interior = np.array(
        [
            [1.0, -0.25, 0.5, -0.25],
            [0.0, 0.5, -1.0, 0.5],
            [0.0, 0.5, -1.0, 0.5],
            [0.0, 0.5, -1.0, 0.5],
        ]
    )
    last = np.array([[1.0, -0.25, 0.5, -0.25]])
    layers = []
    for layer in range(1, depth + 1):
        if layer == 1:
            A = first
        elif layer == depth:
            A = last
        else:
            A = interior
        if layer < depth:
            b = 4.0 ** (1 - layer) * np.array([0.0, 0.0, -1.0, -2.0])
        else:
            b = np.zeros(1)
        layers.append((A, b))
    return Network(layers)


def build_unstable(weight_scale: float, width: int, depth: int) -> Network:
    """The cancellation-amplifying identity network.

    Column one carries the input untouched; a dense block of width-1 columns
    multiplies by weight_scale*(width-1) per layer, producing a huge value
    that the final row (1, -1) cancels exactly in real arithmetic.  The exact
    realisation is the identity on x >= 0.
    """
    if width < 3:
        raise ValueError("width must be >= 3")
    if depth < 5:
        raise ValueError("depth must be >= 5")
    lam = float(weight_scale)
    if lam < 1:
        raise ValueError("weight_scale must be >= 1")
    n = width
    layers = [(np.array([[1.0]] + [[lam]] * (n - 1)), np.zeros(n))]
    interior = np.zeros((n, n))
    interior[0, 0] = 1.0
    interior[1:, 1:] = lam
    for _ in range(2, depth - 2):
        layers.append((interior, np.zeros(n)))
    collapse = np.zeros((2, n))
    collapse[0, 0] = 1.0
    collapse[1, 1:] = lam
    layers.append((collapse, np.zeros(2)))
    layers.append((np.array([[1.0, lam], [0.0, lam]]), np.zeros(2)))
    layers.append((np.array([[1.0, -1.0]]), np.zeros(1)))
    return Network(layers)


def unstable_admissibility(weight_scale: float, width: int, depth: int,
                           eps: Union[float, Fraction] = Fraction(5, 10**16)) -> float:
    """(depth-3)*log10(width-1) + (depth-1)*log10(weight_scale - 2*eps)."""
    return (depth - 3) * math.log10(width - 1) + (depth - 1) * math.log10(
        float(weight_scale) - 2 * float(eps)
    )


def build_cancellation(weight_scale: float, depth: int,
                       perturbations: Sequence[float]) -> Network:
    """1 -> 2 -> ... -> 2 -> 1 telescoping-product network.

    With all perturbations zero the realisation is the identity on x >= 0;
    a single perturbation p in layer j shifts the output by
    p*(1 + weight_scale**depth)*x.
    """
    if depth < 3:
        raise ValueError("depth must be >= 3")
    if len(perturbations) != depth:
        raise ValueError(f"need {depth} perturbation entries, got {len(perturbations)}")
    lam = float(weight_scale)
    eps = [float(p) for p in perturbations]
    layers = [(np.array([[(1 + eps[0]) * lam], [lam]]), np.zeros(2))]
    for j in range(1, depth - 1):
        layers.append((np.diag([(1 + eps[j]) * lam, lam]), np.zeros(2)))
    layers.append(
        (np.array([[(1 + eps[-1]) * (1 + lam ** (-depth)) * lam, -lam]]), np.zeros(1))
    )
    return Network(layers)

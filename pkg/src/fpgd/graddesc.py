"""Full-batch gradient descent with multiplicative update perturbations.

Two noise models are provided: structured update noise (diagonal uniform
factors on the per-layer bias/weight updates) and per-matvec relative noise
(every matrix-vector product output entry scaled by 1 + amplitude*u with
u ~ Uniform[-0.5, 0.5]).  Training iterates are recorded in a trace together
with risk, update statistics, and optional region/assumption probes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .netcore import Network
from .regions import Line


class TrainingDiverged(RuntimeError):
    """Raised when the empirical risk stops being finite."""


# ---------------------------------------------------------------------------
# Data.
# ---------------------------------------------------------------------------

TARGETS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sine": np.sin,
    "cosine": np.cos,
    "quadratic_bump": lambda x: 1.0 - 0.5 * x**2,
    "square": lambda x: x**2,
}


def make_target(name: str, scale: float = 1.0) -> Callable[[np.ndarray], np.ndarray]:
    """Scalar target function by name; `scale` multiplies the output."""
    try:
        base = TARGETS[name]
    except KeyError:
        raise ValueError(f"unknown target {name!r}; known: {sorted(TARGETS)}") from None
    if scale == 1.0:
        return base
    return lambda x: scale * base(x)


@dataclass(frozen=True)
class Dataset:
    """Training samples: inputs (M, d), scalar labels (M,), input domain."""

    inputs: np.ndarray
    labels: np.ndarray
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
        labels = np.asarray(self.labels, dtype=float).reshape(-1)
        if inputs.shape[0] != labels.shape[0] or inputs.shape[0] < 1:
            raise ValueError("need equally many inputs and labels, at least one")
        lo, hi = self.domain
        if np.any(inputs < lo - 1e-12) or np.any(inputs > hi + 1e-12):
            raise ValueError(f"inputs leave the declared domain [{lo}, {hi}]")
        inputs.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @classmethod
    def from_function(
        cls,
        fn: Callable[[np.ndarray], np.ndarray],
        count: int,
        domain: tuple[float, float],
        seed: int,
        input_dim: int = 1,
    ) -> "Dataset":
        rng = np.random.default_rng(seed)
        lo, hi = domain
        x = rng.uniform(lo, hi, size=(count, input_dim))
        y = fn(x[:, 0]) if input_dim == 1 else fn(x)
        return cls(x, y, domain)


# ---------------------------------------------------------------------------
# Loss and exact updates.
# ---------------------------------------------------------------------------


def empirical_risk(labels: np.ndarray, predictions: np.ndarray) -> float:
    """Mean square loss (1/M) * sum (y_i - yhat_i)**2."""
    labels = np.asarray(labels, dtype=float).reshape(-1)
    predictions = np.asarray(predictions, dtype=float).reshape(-1)
    if labels.shape != predictions.shape:
        raise ValueError("labels and predictions differ in length")
    return float(np.mean((labels - predictions) ** 2))


def loss_derivative(labels: np.ndarray, predictions: np.ndarray) -> np.ndarray:
    """Derivative of the square loss in the prediction argument: 2*(yhat - y)."""
    return 2.0 * (np.asarray(predictions, float) - np.asarray(labels, float))


@dataclass(frozen=True)
class UpdateBundle:
    """Per-layer bias update vectors u_j and weight update matrices U_j."""

    bias_updates: tuple[np.ndarray, ...]
    weight_updates: tuple[np.ndarray, ...]

    @property
    def depth(self) -> int:
        return len(self.bias_updates)

    def hidden_bias_updates(self) -> list[np.ndarray]:
        """Bias updates of layers 1..L-1 (the ones entering the statistics)."""
        return list(self.bias_updates[:-1])

    def min_abs_nonzero_bias_update(self) -> float:
        smallest = math.inf
        for u in self.hidden_bias_updates():
            nz = np.abs(u[u != 0.0])
            if nz.size:
                smallest = min(smallest, float(nz.min()))
        return smallest if math.isfinite(smallest) else 0.0

    def max_abs(self) -> float:
        vals = [np.max(np.abs(u)) if u.size else 0.0 for u in self.bias_updates]
        vals += [np.max(np.abs(U)) if U.size else 0.0 for U in self.weight_updates]
        return float(max(vals))


def _forward_backward(
    net: Network, data: Dataset, noise: Optional[tuple[float, float, np.random.Generator]]
) -> tuple[UpdateBundle, np.ndarray]:
    """Shared backprop core; optional per-matvec multiplicative noise.

    Draw order is fixed: forward layers 1..L (one uniform array per layer's
    matvec), then backward layers L-1..1, so traces are reproducible.
    """
    X, Y = data.inputs, data.labels
    if net.output_dim != 1:
        raise ValueError("updates require output dimension 1")
    activations = [X]
    indicators = []
    v = X
    last = net.depth - 1
    for j, (A, b) in enumerate(net.layers):
        z = v @ A.T
        if noise is not None:
            amp, half, rng = noise
            z = z * (1.0 + amp * rng.uniform(-half, half, size=z.shape))
        z = z + b
        if j < last:
            indicators.append(z >= 0.0)
            v = np.maximum(z, 0.0)
            activations.append(v)
        else:
            v = z
    predictions = v[:, 0]
    delta = loss_derivative(Y, predictions)[:, None]
    M = data.size
    bias_updates: list[np.ndarray] = [None] * net.depth
    weight_updates: list[np.ndarray] = [None] * net.depth
    for j in range(net.depth - 1, -1, -1):
        bias_updates[j] = delta.mean(axis=0)
        weight_updates[j] = delta.T @ activations[j] / M
        if j > 0:
            back = delta @ net.layers[j][0]
            if noise is not None:
                amp, half, rng = noise
                back = back * (1.0 + amp * rng.uniform(-half, half, size=back.shape))
            delta = np.where(indicators[j - 1], back, 0.0)
    return UpdateBundle(tuple(bias_updates), tuple(weight_updates)), predictions


def exact_updates(net: Network, data: Dataset) -> UpdateBundle:
    """Exact full-batch gradient of the empirical risk in weights and biases.

    Bias update u_j is the sample mean of the backpropagated products using
    the indicator convention preactivation >= 0; weight update U_j is the
    mean of u_{j,i} outer the previous layer's activation (the raw input for
    j = 1).
    """
    bundle, _ = _forward_backward(net, data, None)
    return bundle


def predictions_and_updates(net: Network, data: Dataset) -> tuple[np.ndarray, UpdateBundle]:
    bundle, preds = _forward_backward(net, data, None)
    return preds, bundle


# ---------------------------------------------------------------------------
# Perturbation models.
# ---------------------------------------------------------------------------

MODE_NONE = "none"
MODE_UPDATE = "update-noise"
MODE_MATVEC = "matvec-noise"


@dataclass(frozen=True)
class PerturbationSchedule:
    """Noise configuration for one training run.

    `layer_eps` holds the per-layer effective relative perturbations used in
    update-noise mode; `matvec_amplitude` the relative amplitude used in
    matvec-noise mode.  `uniform_halfwidth` is the half-support of the
    uniform noise factor (0.5 reproduces Uniform[-0.5, 0.5]).
    """

    mode: str = MODE_NONE
    layer_eps: tuple[float, ...] = ()
    matvec_amplitude: float = 0.0
    uniform_halfwidth: float = 0.5
    entrywise_weight_noise: bool = False

    def __post_init__(self) -> None:
        if self.mode not in (MODE_NONE, MODE_UPDATE, MODE_MATVEC):
            raise ValueError(f"unknown mode {self.mode!r}")
        if any(e < 0 for e in self.layer_eps) or self.matvec_amplitude < 0:
            raise ValueError("perturbation amplitudes must be >= 0")

    @classmethod
    def exact(cls) -> "PerturbationSchedule":
        return cls(MODE_NONE)

    @classmethod
    def update_noise(cls, layer_eps: Sequence[float], **kw) -> "PerturbationSchedule":
        return cls(MODE_UPDATE, layer_eps=tuple(float(e) for e in layer_eps), **kw)

    @classmethod
    def matvec_noise(cls, amplitude: float, **kw) -> "PerturbationSchedule":
        return cls(MODE_MATVEC, matvec_amplitude=float(amplitude), **kw)

    def eps_for_threshold(self, depth: int) -> tuple[float, ...]:
        """Per-layer perturbations entering the theoretical piece ceiling."""
        if self.mode == MODE_UPDATE:
            if len(self.layer_eps) != depth:
                raise ValueError(f"schedule has {len(self.layer_eps)} entries for depth {depth}")
            return self.layer_eps
        if self.mode == MODE_MATVEC:
            return (self.matvec_amplitude,) * depth
        return (0.0,) * depth


def apply_updates(net: Network, bias, weights, step: float) -> Network:
    return Network(
        [(A - step * U, b - step * u) for (A, b), U, u in zip(net.layers, weights, bias)]
    )


def _perturb_and_apply(
    net: Network,
    bundle: UpdateBundle,
    sched: PerturbationSchedule,
    step: float,
    rng: np.random.Generator,
) -> Network:
    """Scale the bundle by the per-layer diagonal noise factors and descend.

    Draw order per layer: bias factors first, then weight factors.
    """
    eps = sched.eps_for_threshold(net.depth)
    half = sched.uniform_halfwidth
    new_bias, new_weights = [], []
    for j, (u, U) in enumerate(zip(bundle.bias_updates, bundle.weight_updates)):
        theta_b = rng.uniform(-half, half, size=u.shape)
        if sched.entrywise_weight_noise:
            theta_w = rng.uniform(-half, half, size=U.shape)
            new_weights.append((1.0 + eps[j] * theta_w) * U)
        else:
            theta_w = rng.uniform(-half, half, size=u.shape)
            new_weights.append((1.0 + eps[j] * theta_w)[:, None] * U)
        new_bias.append((1.0 + eps[j] * theta_b) * u)
    return apply_updates(net, new_bias, new_weights, step)


def perturbed_step(
    net: Network,
    data: Dataset,
    sched: PerturbationSchedule,
    step: float,
    rng: np.random.Generator,
) -> tuple[Network, UpdateBundle]:
    """One structured-noise descent step.

    Per layer j, diagonal factors (1 + eps_j * theta) with theta i.i.d.
    Uniform[-halfwidth, halfwidth] scale the bias update componentwise and
    the weight update row-wise (entrywise behind the flag).  Returns the
    updated network together with the exact bundle for instrumentation.
    """
    if sched.mode != MODE_UPDATE:
        raise ValueError("perturbed_step requires an update-noise schedule")
    if step <= 0:
        raise ValueError("step must be positive")
    bundle = exact_updates(net, data)
    return _perturb_and_apply(net, bundle, sched, step, rng), bundle


def noisy_matvec_updates(
    net: Network,
    data: Dataset,
    amplitude: float,
    rng: np.random.Generator,
    uniform_halfwidth: float = 0.5,
) -> tuple[UpdateBundle, np.ndarray]:
    """Gradient bundle with every matvec output entry relatively perturbed.

    Forward passes and the backpropagated products are recomputed with each
    matrix-vector product output entry multiplied by (1 + amplitude*u),
    u i.i.d. uniform per entry per product.  Returns the noisy bundle and
    the (noisy) predictions.
    """
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    noise = (amplitude, uniform_halfwidth, rng) if amplitude > 0 else None
    return _forward_backward(net, data, noise)


# ---------------------------------------------------------------------------
# Step-size schedules.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepSchedule:
    """Step size as a function of the iteration index n.

    rule "constant": base; rule "inv_sqrt": base / (1 + sqrt(n)/sqrt_divisor).
    """

    rule: str = "inv_sqrt"
    base: float = 0.1
    sqrt_divisor: float = 1.0

    def __post_init__(self) -> None:
        if self.rule not in ("constant", "inv_sqrt"):
            raise ValueError(f"unknown rule {self.rule!r}")
        if self.base <= 0 or self.sqrt_divisor <= 0:
            raise ValueError("base and sqrt_divisor must be positive")

    def value(self, n: int) -> float:
        if n < 0:
            raise ValueError("iteration index must be >= 0")
        if self.rule == "constant":
            return self.base
        return self.base / (1.0 + math.sqrt(n) / self.sqrt_divisor)


# ---------------------------------------------------------------------------
# Training loop and trace.
# ---------------------------------------------------------------------------


@dataclass
class ProbeConfig:
    """What to measure along the trace, and how often.

    `interval` = 0 disables probes; otherwise iterations 0, interval,
    2*interval, ... and the final iterate are probed.  Probes need a line for
    region counting and slopes.
    """

    interval: int = 0
    line: Optional[Line] = None
    pieces: bool = False
    regions: bool = True
    max_slope: bool = False
    assumption_nu: float = 2.0

    def active_at(self, n: int, total: int) -> bool:
        if self.interval <= 0:
            return False
        return n % self.interval == 0 or n == total


TRACE_COLUMNS = (
    "iteration",
    "lambda",
    "risk",
    "min_abs_nonzero_bias_update",
    "assumption_a_statistic",
    "max_abs_preact_gradient",
    "pieces",
    "activation_regions",
    "seed",
)


@dataclass
class TraceRecord:
    iteration: int
    step: Optional[float]
    risk: float
    min_abs_nonzero_bias_update: Optional[float] = None
    assumption_a_statistic: Optional[float] = None
    max_abs_preact_gradient: Optional[float] = None
    pieces: Optional[int] = None
    activation_regions: Optional[int] = None


@dataclass
class TrainingTrace:
    seed: int
    records: list[TraceRecord] = field(default_factory=list)
    final_network: Optional[Network] = None

    def risks(self) -> np.ndarray:
        return np.array([r.risk for r in self.records])

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                w.writerow(
                    [
                        r.iteration,
                        "" if r.step is None else repr(r.step),
                        repr(r.risk),
                        _cell(r.min_abs_nonzero_bias_update),
                        _cell(r.assumption_a_statistic),
                        _cell(r.max_abs_preact_gradient),
                        _cell(r.pieces),
                        _cell(r.activation_regions),
                        self.seed,
                    ]
                )


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def train(
    init: Network,
    data: Dataset,
    sched: PerturbationSchedule,
    steps: StepSchedule,
    iterations: int,
    seed: int,
    probes: Optional[ProbeConfig] = None,
) -> TrainingTrace:
    """Run the perturbed descent iteration and record a trace.

    Iteration n (1-based) updates the current network with step size
    steps.value(n).  Record 0 describes the initialisation.  Risk is
    measured in the run's own arithmetic: each iterate's risk comes from the
    forward pass that evaluates it for the next gradient (noisy in
    matvec-noise mode, exact otherwise), with one extra evaluation pass for
    the final iterate.  Region and slope probes always describe the exact
    iterate function.  Fully deterministic for a fixed seed.
    """
    from . import assumptions  # local import: assumptions knows UpdateBundle shapes

    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    probes = probes or ProbeConfig()
    rng = np.random.default_rng(seed)
    trace = TrainingTrace(seed=seed)
    net = init
    total_neurons = init.total_neurons

    def probe_fields(record: TraceRecord, network: Network) -> None:
        if probes.line is None:
            return
        from .regions import count_activation_regions, count_pieces

        if probes.pieces:
            record.pieces = count_pieces(network, probes.line).piece_count
        if probes.regions:
            record.activation_regions = count_activation_regions(network, probes.line)
        if probes.max_slope:
            record.max_abs_preact_gradient = assumptions.max_preactivation_slope(
                network, probes.line
            ).max_abs_slope

    def evaluate(network: Network) -> tuple[UpdateBundle, np.ndarray]:
        if sched.mode == MODE_MATVEC:
            return noisy_matvec_updates(
                network, data, sched.matvec_amplitude, rng, sched.uniform_halfwidth
            )
        return _forward_backward(network, data, None)

    def fill_risk(record: TraceRecord, predictions: np.ndarray) -> None:
        record.risk = empirical_risk(data.labels, predictions)
        if not math.isfinite(record.risk):
            raise TrainingDiverged(
                f"risk became {record.risk} evaluating iterate {record.iteration}"
            )

    rec0 = TraceRecord(iteration=0, step=None, risk=math.nan)
    if probes.active_at(0, iterations):
        probe_fields(rec0, net)
    trace.records.append(rec0)

    for n in range(1, iterations + 1):
        lam = steps.value(n)
        bundle, predictions = evaluate(net)
        fill_risk(trace.records[-1], predictions)
        if sched.mode == MODE_UPDATE:
            net = _perturb_and_apply(net, bundle, sched, lam, rng)
        else:
            net = apply_updates(net, bundle.bias_updates, bundle.weight_updates, lam)
        rec = TraceRecord(
            iteration=n,
            step=lam,
            risk=math.nan,
            min_abs_nonzero_bias_update=bundle.min_abs_nonzero_bias_update(),
            assumption_a_statistic=assumptions.assumption_a_statistic(
                bundle, probes.assumption_nu, total_neurons
            ),
        )
        if probes.active_at(n, iterations):
            probe_fields(rec, net)
        trace.records.append(rec)

    _, predictions = evaluate(net)
    fill_risk(trace.records[-1], predictions)
    trace.final_network = net
    return trace

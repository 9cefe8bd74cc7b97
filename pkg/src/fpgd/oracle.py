"""Independent brute-force verifiers used by the test suite.

Nothing here shares numerical kernels with the primary implementations:
rounding is cross-checked against decimal contexts and exhaustive member
enumeration, gradients against central finite differences, piece counts
against dense-grid slope scans, and the probabilistic breakpoint bounds
against direct Monte Carlo with exact per-piece level-crossing counts.
"""

from __future__ import annotations

import decimal
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .fparith import FloatFormat
from .graddesc import Dataset, UpdateBundle, empirical_risk, exact_updates
from .netcore import Network, realize
from .regions import Line, PiecewiseLinear1D, propagate_line

# ---------------------------------------------------------------------------
# Rounding references.
# ---------------------------------------------------------------------------


def decimal_round(text: str, precision: int) -> Fraction:
    """Round a decimal literal to `precision` significant digits, ties to even.

    Uses the stdlib decimal context as an independent radix-10 reference.
    """
    ctx = decimal.Context(prec=precision, rounding=decimal.ROUND_HALF_EVEN, Emax=10**6, Emin=-(10**6))
    rounded = ctx.plus(decimal.Decimal(text))
    return Fraction(rounded)


def enumerate_members(fmt: FloatFormat, limit: int = 500_000) -> list[Fraction]:
    """All members of a tiny format (plus zero), sorted ascending."""
    b, p = fmt.radix, fmt.precision
    count = (b**p - b ** (p - 1)) * (fmt.emax - fmt.emin + 1) * 2 + 1
    if count > limit:
        raise ValueError(f"format too large to enumerate ({count} members)")
    members = [Fraction(0)]
    for e in range(fmt.emin, fmt.emax + 1):
        scale = Fraction(b) ** (e - p + 1)
        for m in range(b ** (p - 1), b**p):
            v = m * scale
            members.append(v)
            members.append(-v)
    return sorted(members)


def nearest_member(x: Fraction, members: Sequence[Fraction]) -> Fraction:
    """Brute-force closest member; ties resolved to the even significand side
    are not applied here, so callers should avoid exact midpoints."""
    return min(members, key=lambda m: abs(m - x))


# ---------------------------------------------------------------------------
# Dense-grid piece counting.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridOracleConfig:
    grid_points: int = 10**6
    tolerance: float = 1e-6
    chunk: int = 200_000

    def __post_init__(self) -> None:
        if self.grid_points < 10**3:
            raise ValueError("grid must have at least 1e3 points")


def grid_piece_count(net: Network, line: Line, cfg: GridOracleConfig = GridOracleConfig()) -> int:
    """Count affine pieces from successive-difference slopes on a dense grid.

    A breakpoint falling strictly inside a grid cell smears its slope change
    over two successive differences, so consecutive flagged differences are
    collapsed into one change event.
    """
    n = cfg.grid_points
    ts = np.linspace(0.0, line.length, n + 1)
    vals = np.empty(n + 1)
    for start in range(0, n + 1, cfg.chunk):
        stop = min(start + cfg.chunk, n + 1)
        pts = line.points(ts[start:stop])
        vals[start:stop] = realize(net, pts)[:, 0]
    slopes = np.diff(vals) / (line.length / n)
    ds = np.abs(np.diff(slopes))
    scale = np.maximum(1.0, np.maximum(np.abs(slopes[:-1]), np.abs(slopes[1:])))
    flags = ds > cfg.tolerance * scale
    if not flags.any():
        return 1
    events = int(flags[0]) + int(np.sum(flags[1:] & ~flags[:-1]))
    return 1 + events


# ---------------------------------------------------------------------------
# Finite-difference gradients.
# ---------------------------------------------------------------------------


def finite_difference_updates(net: Network, data: Dataset, h: float = 1e-6) -> UpdateBundle:
    """Central differences of the empirical risk in every parameter."""

    def risk_of(layers) -> float:
        return empirical_risk(data.labels, realize(Network(layers), data.inputs)[:, 0])

    layers = [(A.copy(), b.copy()) for A, b in net.layers]
    bias_updates, weight_updates = [], []
    for j, (A, b) in enumerate(layers):
        U = np.zeros_like(A)
        for r in range(A.shape[0]):
            for c in range(A.shape[1]):
                orig = A[r, c]
                A[r, c] = orig + h
                up = risk_of(layers)
                A[r, c] = orig - h
                down = risk_of(layers)
                A[r, c] = orig
                U[r, c] = (up - down) / (2 * h)
        u = np.zeros_like(b)
        for r in range(b.shape[0]):
            orig = b[r]
            b[r] = orig + h
            up = risk_of(layers)
            b[r] = orig - h
            down = risk_of(layers)
            b[r] = orig
            u[r] = (up - down) / (2 * h)
        bias_updates.append(u)
        weight_updates.append(U)
    return UpdateBundle(tuple(bias_updates), tuple(weight_updates))


def rational_realize(net: Network, x: Sequence[Fraction]) -> list[Fraction]:
    """Exact rational evaluation of the network (reference for float64)."""
    vec = [Fraction(v) for v in x]
    last = net.depth - 1
    for j, (A, b) in enumerate(net.layers):
        rows = [[Fraction(float(a)) for a in row] for row in A]
        bias = [Fraction(float(v)) for v in b]
        vec = [sum(a * xx for a, xx in zip(row, vec)) + bb for row, bb in zip(rows, bias)]
        if j < last:
            vec = [max(Fraction(0), v) for v in vec]
    return vec


# ---------------------------------------------------------------------------
# Level-crossing counts and Monte-Carlo tail checks.
# ---------------------------------------------------------------------------


def sawtooth_profile(teeth: int, height: float, length: float = 1.0) -> PiecewiseLinear1D:
    """Sawtooth with `teeth` unit-slope-bounded teeth peaking at `height`."""
    ts = np.linspace(0.0, length, 2 * teeth + 1)
    vals = np.tile([0.0, height], teeth + 1)[: 2 * teeth + 1]
    return PiecewiseLinear1D(ts, vals)


def count_level_solutions(values: np.ndarray, level: float) -> int:
    """Exact number of solutions h(t) = level for a PWL value vector.

    Counts strict interior crossings per piece plus grid-point hits; flat
    pieces sitting exactly on the level are degenerate and rejected.
    """
    v = np.asarray(values, dtype=float) - level
    hits = int(np.count_nonzero(v == 0.0))
    flat_on_level = np.any((v[:-1] == 0.0) & (v[1:] == 0.0))
    if flat_on_level:
        raise ValueError("level coincides with a flat piece; crossing count is infinite")
    interior = int(np.count_nonzero(v[:-1] * v[1:] < 0.0))
    return hits + interior


def _count_matrix(values: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Vectorized count_level_solutions for many levels (no flat handling)."""
    v = values[None, :] - levels[:, None]
    hits = np.count_nonzero(v == 0.0, axis=1)
    interior = np.count_nonzero(v[:, :-1] * v[:, 1:] < 0.0, axis=1)
    return hits + interior


@dataclass
class TailCheck:
    threshold: int
    empirical: float
    bound: float
    sigma: float

    @property
    def holds(self) -> bool:
        return self.empirical <= min(1.0, self.bound) + 3.0 * self.sigma


@dataclass
class LemmaTailResult:
    trials: int
    checks: list[TailCheck]

    @property
    def all_hold(self) -> bool:
        return all(c.holds for c in self.checks)


def lemma1_monte_carlo(
    h: PiecewiseLinear1D,
    interval: tuple[float, float],
    thresholds: Sequence[int],
    trials: int,
    seed: int,
) -> LemmaTailResult:
    """Empirical tails of the level-crossing count against c/(delta*t).

    Draws U uniform on [center - width/2, center + width/2], counts the exact
    number of solutions h(x) = U, and compares P(count >= t) with the bound
    min(1, c/(delta*t)) where c is the domain length and delta the interval
    width.  Requires max |h'| <= 1 (verified from the representation).
    """
    if trials < 10**3:
        raise ValueError("need at least 1e3 trials")
    max_slope = h.max_abs_slope()
    if max_slope > 1.0 + 1e-12:
        raise ValueError(f"slope bound violated: max |h'| = {max_slope}")
    center, width = interval
    if width <= 0:
        raise ValueError("interval width must be positive")
    c = float(h.breakpoints[-1] - h.breakpoints[0])
    rng = np.random.default_rng(seed)
    levels = rng.uniform(center - width / 2, center + width / 2, size=trials)
    counts = _count_matrix(h.values, levels)
    checks = []
    for t in thresholds:
        emp = float(np.mean(counts >= t))
        sigma = math.sqrt(max(emp * (1 - emp), 1.0 / trials) / trials)
        checks.append(TailCheck(int(t), emp, c / (width * t), sigma))
    return LemmaTailResult(trials, checks)


@dataclass
class BreakpointTailResult:
    trials: int
    checks: list[TailCheck]
    empirical_mean: float
    mean_bound: float
    mean_sigma: float

    @property
    def all_hold(self) -> bool:
        tails = all(c.holds for c in self.checks)
        mean_ok = self.empirical_mean <= self.mean_bound + 3.0 * self.mean_sigma
        return tails and mean_ok


def prop33_monte_carlo(
    net: Network,
    data: Dataset,
    line: Line,
    layer: int,
    neuron: int,
    eps_j: float,
    step: float,
    trials: int,
    seed: int,
    q_max: int = 10,
) -> BreakpointTailResult:
    """Monte-Carlo check of the new-breakpoint tail and expectation bounds.

    Applies the exact descent update everywhere, then redraws only the bias
    perturbation of the chosen neuron: its perturbed preactivation is the
    exact-updated one shifted by a level uniform on
    [-step*eps_j*|u|/2, step*eps_j*|u|/2].  New breakpoints along the line
    are the strict crossings of that level, counted exactly per piece.
    Tail bound: 2*len/(step*eps_j*q*|u|); mean bound adds ln(N**(layer+1)).
    """
    if eps_j <= 0 or step <= 0:
        raise ValueError("eps_j and step must be positive")
    if not 1 <= layer <= net.depth - 1:
        raise IndexError(f"layer {layer} is not a hidden layer of a depth-{net.depth} network")
    bundle = exact_updates(net, data)
    u = float(bundle.bias_updates[layer - 1][neuron])
    if u == 0.0:
        raise ValueError("zero bias update: the bound is undefined")
    updated = Network(
        [
            (A - step * U, b - step * ub)
            for (A, b), U, ub in zip(net.layers, bundle.weight_updates, bundle.bias_updates)
        ]
    )
    profile = propagate_line(updated, line)
    ts, pre = profile.hidden[layer - 1]
    values = pre[:, neuron]
    half = step * eps_j * abs(u) / 2.0
    rng = np.random.default_rng(seed)
    # theta uniform on [-1/2, 1/2] shifts the bias by -step*eps_j*theta*u
    levels = rng.uniform(-half, half, size=trials)
    counts = _count_matrix(values, levels)
    length = line.length
    checks = []
    for q in range(1, q_max + 1):
        emp = float(np.mean(counts >= q))
        sigma = math.sqrt(max(emp * (1 - emp), 1.0 / trials) / trials)
        bound = 2.0 * length / (step * eps_j * q * abs(u))
        checks.append(TailCheck(q, emp, bound, sigma))
    emp_mean = float(np.mean(counts))
    mean_sigma = float(np.std(counts) / math.sqrt(trials))
    n_total = net.total_neurons
    mean_bound = (2.0 * length / (step * eps_j)) / abs(u) * (layer + 1) * math.log(n_total)
    return BreakpointTailResult(trials, checks, emp_mean, mean_bound, mean_sigma)

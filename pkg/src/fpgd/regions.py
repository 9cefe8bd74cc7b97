"""Exact affine-piece and activation-region counting along line segments.

The realisation of a ReLU network restricted to a line is piecewise linear.
We propagate a shared breakpoint grid layer by layer: every neuron is affine
between consecutive grid points, a new grid point is inserted wherever a
preactivation crosses zero strictly inside an interval, and ReLU clamps the
negative side.  Piece counts then reduce to counting genuine slope changes of
the output; activation regions to counting runs of constant indicator
patterns over the interval midpoints.

A Fraction-based exact mode certifies counts for networks with exactly
representable weights (every float64 weight is a dyadic rational).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from .netcore import Network

#: Absolute dedup tolerance for breakpoint parameters t, per unit of length.
DEFAULT_T_TOL = 1e-12
#: Relative tolerance for deciding that two adjacent slopes genuinely differ.
DEFAULT_SLOPE_TOL = 1e-9


@dataclass(frozen=True)
class Line:
    """Segment {anchor + t*direction : t in [0, length]} with a unit direction."""

    anchor: np.ndarray
    direction: np.ndarray
    length: float

    def __post_init__(self) -> None:
        anchor = np.asarray(self.anchor, dtype=float).reshape(-1)
        direction = np.asarray(self.direction, dtype=float).reshape(-1)
        if anchor.shape != direction.shape:
            raise ValueError("anchor and direction dimensions differ")
        norm = float(np.linalg.norm(direction))
        if not math.isclose(norm, 1.0, rel_tol=1e-9):
            raise ValueError(f"direction must be a unit vector, |v| = {norm}")
        if not self.length > 0:
            raise ValueError("length must be positive")
        anchor.flags.writeable = False
        direction.flags.writeable = False
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "direction", direction)

    @property
    def dim(self) -> int:
        return self.anchor.shape[0]

    def point(self, t: float) -> np.ndarray:
        return self.anchor + t * self.direction

    def points(self, ts: np.ndarray) -> np.ndarray:
        return self.anchor[None, :] + np.asarray(ts, dtype=float)[:, None] * self.direction[None, :]

    @classmethod
    def unit_interval(cls, dim: int = 1) -> "Line":
        direction = np.zeros(dim)
        direction[0] = 1.0
        return cls(np.zeros(dim), direction, 1.0)

    @classmethod
    def from_endpoints(cls, start, end) -> "Line":
        start = np.asarray(start, dtype=float).reshape(-1)
        end = np.asarray(end, dtype=float).reshape(-1)
        delta = end - start
        norm = float(np.linalg.norm(delta))
        if norm == 0:
            raise ValueError("endpoints coincide")
        return cls(start, delta / norm, norm)


@dataclass
class PiecewiseLinear1D:
    """Continuous piecewise-linear function on [breakpoints[0], breakpoints[-1]]."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.breakpoints.ndim != 1 or self.breakpoints.shape != self.values.shape:
            raise ValueError("breakpoints and values must be equal-length vectors")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must be strictly increasing")

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.breakpoints)

    @property
    def intercepts(self) -> np.ndarray:
        return self.values[:-1] - self.slopes * self.breakpoints[:-1]

    def __call__(self, t) -> np.ndarray:
        return np.interp(t, self.breakpoints, self.values)

    def max_abs_slope(self) -> float:
        return float(np.max(np.abs(self.slopes))) if len(self.breakpoints) > 1 else 0.0

    def piece_count(self, slope_tol: float = DEFAULT_SLOPE_TOL) -> int:
        return 1 + len(self.kinks(slope_tol))

    def kinks(self, slope_tol: float = DEFAULT_SLOPE_TOL) -> np.ndarray:
        """Interior breakpoints where the slope genuinely changes."""
        s = self.slopes
        if len(s) < 2:
            return np.empty(0)
        scale = np.maximum(1.0, np.maximum(np.abs(s[:-1]), np.abs(s[1:])))
        mask = np.abs(np.diff(s)) > slope_tol * scale
        return self.breakpoints[1:-1][mask]


@dataclass
class LineProfile:
    """Propagated representation of one network along one line.

    `grid` is the final refined parameter grid; `hidden` holds per hidden
    layer the (grid, preactivation values) pair on the grid that was current
    when the layer was processed; `output` holds the scalar output values on
    the final grid.
    """

    line: Line
    grid: np.ndarray
    hidden: list[tuple[np.ndarray, np.ndarray]]
    output: np.ndarray

    def output_pwl(self) -> PiecewiseLinear1D:
        return PiecewiseLinear1D(self.grid, self.output)

    def preactivation_pwl(self, layer: int, neuron: int) -> PiecewiseLinear1D:
        ts, pre = self.hidden[layer - 1]
        return PiecewiseLinear1D(ts, pre[:, neuron])

    def postactivation_pwl(self, layer: int, neuron: int) -> PiecewiseLinear1D:
        ts, pre = self.hidden[layer - 1]
        return PiecewiseLinear1D(ts, np.maximum(pre[:, neuron], 0.0))


def _interp_rows(ts: np.ndarray, vals: np.ndarray, new_ts: np.ndarray) -> np.ndarray:
    """Evaluate a PWL matrix (len(ts), w) at new_ts (affine between grid points)."""
    idx = np.clip(np.searchsorted(ts, new_ts, side="right") - 1, 0, len(ts) - 2)
    t0, t1 = ts[idx], ts[idx + 1]
    w = ((new_ts - t0) / (t1 - t0))[:, None]
    return (1.0 - w) * vals[idx] + w * vals[idx + 1]


def propagate_line(net: Network, line: Line, t_tol: float = DEFAULT_T_TOL) -> LineProfile:
    """Propagate exact piecewise-linear representations layer by layer."""
    if line.dim != net.input_dim:
        raise ValueError(f"line dimension {line.dim} does not match input dimension {net.input_dim}")
    atol = t_tol * max(1.0, line.length)
    ts = np.array([0.0, line.length])
    acts = line.points(ts)
    hidden: list[tuple[np.ndarray, np.ndarray]] = []
    last = net.depth - 1
    for j, (A, b) in enumerate(net.layers):
        pre = acts @ A.T + b
        if j == last:
            return LineProfile(line, ts, hidden, pre[:, 0])
        f0, f1 = pre[:-1], pre[1:]
        ii, kk = np.nonzero(f0 * f1 < 0.0)
        if len(ii):
            tstar = ts[ii] - f0[ii, kk] * (ts[ii + 1] - ts[ii]) / (f1[ii, kk] - f0[ii, kk])
            pos = np.searchsorted(ts, tstar)
            d_hi = np.abs(ts[np.clip(pos, 0, len(ts) - 1)] - tstar)
            d_lo = np.abs(ts[np.clip(pos - 1, 0, len(ts) - 1)] - tstar)
            keep = np.minimum(d_hi, d_lo) > atol
            tstar, kk = tstar[keep], kk[keep]
            if len(tstar):
                order = np.argsort(tstar, kind="stable")
                tstar, kk = tstar[order], kk[order]
                # cluster crossings closer than atol onto one representative
                rep = [0]
                for i in range(1, len(tstar)):
                    if tstar[i] - tstar[rep[-1]] > atol:
                        rep.append(i)
                new_ts = tstar[rep]
                cluster = np.searchsorted(new_ts, tstar, side="right") - 1
                combined = np.concatenate([ts, new_ts])
                order2 = np.argsort(combined, kind="stable")
                new_vals = _interp_rows(ts, pre, new_ts)
                pre = np.vstack([pre, new_vals])[order2]
                ts = combined[order2]
                # crossing neurons are exactly zero at their inserted points
                rows = np.searchsorted(ts, new_ts[cluster])
                pre[rows, kk] = 0.0
        hidden.append((ts, pre))
        acts = np.maximum(pre, 0.0)
    raise AssertionError("unreachable")


@dataclass
class RegionCensus:
    """Counts for one (network, line) pair plus per-neuron breakpoint sets."""

    piece_count: int
    activation_region_count: int
    neuron_breakpoints: dict[tuple[int, int], np.ndarray] = field(repr=False, default_factory=dict)
    slope_tol: float = DEFAULT_SLOPE_TOL
    output: Optional[PiecewiseLinear1D] = field(repr=False, default=None)


def _activation_regions_from_profile(profile: LineProfile) -> int:
    ts = profile.grid
    if len(ts) < 2:
        return 1
    mids = 0.5 * (ts[:-1] + ts[1:])
    patterns = []
    for tsj, prej in profile.hidden:
        patterns.append(_interp_rows(tsj, prej, mids) >= 0.0)
    if not patterns:
        return 1
    stacked = np.concatenate(patterns, axis=1)
    return 1 + int(np.sum(np.any(stacked[1:] != stacked[:-1], axis=1)))


def count_pieces(
    net: Network,
    line: Line,
    slope_tol: float = DEFAULT_SLOPE_TOL,
    t_tol: float = DEFAULT_T_TOL,
    exact: bool = False,
    collect_breakpoints: bool = False,
) -> RegionCensus:
    """Exact census of affine pieces and activation regions along a line.

    `exact=True` reruns the propagation in rational arithmetic (weights are
    read exactly from their float64 representations) and counts slope changes
    with exact comparisons; use it to certify structured constructions.
    """
    if exact:
        pieces, regions = _exact_census(net, line)
        return RegionCensus(pieces, regions, {}, 0.0, None)
    profile = propagate_line(net, line, t_tol)
    out = profile.output_pwl()
    pieces = out.piece_count(slope_tol)
    regions = _activation_regions_from_profile(profile)
    breakpoints: dict[tuple[int, int], np.ndarray] = {}
    if collect_breakpoints:
        for j in range(1, net.depth):
            _, prej = profile.hidden[j - 1]
            for k in range(prej.shape[1]):
                breakpoints[(j, k)] = profile.postactivation_pwl(j, k).kinks(slope_tol)
    return RegionCensus(pieces, regions, breakpoints, slope_tol, out)


def count_activation_regions(
    net: Network, line: Line, t_tol: float = DEFAULT_T_TOL, exact: bool = False
) -> int:
    """Number of maximal sub-segments with constant activation pattern."""
    if exact:
        return _exact_census(net, line)[1]
    return _activation_regions_from_profile(propagate_line(net, line, t_tol))


# ---------------------------------------------------------------------------
# Exact rational propagation (certification path).
# ---------------------------------------------------------------------------


def _exact_census(net: Network, line: Line) -> tuple[int, int]:
    anchor = [Fraction(float(a)) for a in line.anchor]
    direction = [Fraction(float(v)) for v in line.direction]
    length = Fraction(float(line.length))
    layers = [
        ([[Fraction(float(a)) for a in row] for row in A], [Fraction(float(v)) for v in b])
        for A, b in net.layers
    ]
    ts: list[Fraction] = [Fraction(0), length]
    acts = [[a + t * v for a, v in zip(anchor, direction)] for t in ts]
    hidden: list[tuple[list[Fraction], list[list[Fraction]]]] = []
    last = len(layers) - 1
    for j, (A, b) in enumerate(layers):
        pre = [[sum(aa * xx for aa, xx in zip(row, x)) + bb for row, bb in zip(A, b)] for x in acts]
        if j == last:
            out = [row[0] for row in pre]
            pieces = _exact_piece_count(ts, out)
            regions = _exact_region_count(ts, hidden)
            return pieces, regions
        width = len(b)
        crossings: list[Fraction] = []
        for i in range(len(ts) - 1):
            for k in range(width):
                a0, a1 = pre[i][k], pre[i + 1][k]
                if (a0 < 0 < a1) or (a1 < 0 < a0):
                    crossings.append(ts[i] - a0 * (ts[i + 1] - ts[i]) / (a1 - a0))
        if crossings:
            merged = sorted(set(ts) | set(crossings))
            pre = _exact_reinterp(ts, pre, merged)
            ts = merged
        hidden.append((ts, pre))
        acts = [[max(Fraction(0), v) for v in row] for row in pre]
    raise AssertionError("unreachable")


def _exact_reinterp(
    ts: list[Fraction], vals: list[list[Fraction]], new_ts: list[Fraction]
) -> list[list[Fraction]]:
    out = []
    i = 0
    for t in new_ts:
        while ts[i + 1] < t and i < len(ts) - 2:
            i += 1
        t0, t1 = ts[i], ts[i + 1]
        if t == t0:
            out.append(list(vals[i]))
        elif t == t1:
            out.append(list(vals[i + 1]))
        else:
            w = (t - t0) / (t1 - t0)
            out.append([v0 + w * (v1 - v0) for v0, v1 in zip(vals[i], vals[i + 1])])
    return out


def _exact_piece_count(ts: list[Fraction], out: list[Fraction]) -> int:
    slopes = [(out[i + 1] - out[i]) / (ts[i + 1] - ts[i]) for i in range(len(ts) - 1)]
    return 1 + sum(1 for i in range(len(slopes) - 1) if slopes[i + 1] != slopes[i])


def _exact_region_count(
    ts: list[Fraction], hidden: list[tuple[list[Fraction], list[list[Fraction]]]]
) -> int:
    if not hidden or len(ts) < 2:
        return 1
    mids = [(ts[i] + ts[i + 1]) / 2 for i in range(len(ts) - 1)]
    patterns = []
    for tsj, prej in hidden:
        vals = _exact_reinterp(tsj, prej, mids)
        patterns.append([[v >= 0 for v in row] for row in vals])
    count = 1
    for i in range(1, len(mids)):
        if any(patterns[l][i] != patterns[l][i - 1] for l in range(len(patterns))):
            count += 1
    return count


# ---------------------------------------------------------------------------
# Theoretical ceilings.
# ---------------------------------------------------------------------------


def telgarsky_bound(activation_pieces: int, max_width: int, depth: int) -> int:
    """(p*N)**(L-1) ceiling on affine pieces; p = 2 for ReLU."""
    if activation_pieces < 1 or max_width < 1 or depth < 1:
        raise ValueError("arguments must be >= 1")
    return (activation_pieces * max_width) ** (depth - 1)


def theorem_threshold(
    total_neurons: int,
    depth: int,
    step: float,
    eps: Union[Sequence[float], "object"],
    c0: float,
    nu: float,
    length: float,
) -> float:
    """Median piece-count ceiling after one perturbed update along a line.

    Evaluates 2 * min over j' in 1..L of
    (1 + (2*c0/step) * length * j' * min(eps_j, j<j')**-1 * N**nu * ln N)
    * (2N)**(L-j'), with the j'=1 additive term taken as zero (the empty
    minimum is treated as +infinity).
    """
    eps_list = _eps_sequence(eps, depth)
    if total_neurons < 3:
        warnings.warn("threshold derivation assumes at least 3 neurons", stacklevel=2)
    if step <= 0:
        raise ValueError("step must be positive")
    n = float(total_neurons)
    best = math.inf
    for jp in range(1, depth + 1):
        if jp == 1:
            additive = 0.0
        else:
            eps_hat = min(eps_list[: jp - 1])
            if eps_hat <= 0:
                continue
            additive = (2.0 * c0 / step) * length * jp * (1.0 / eps_hat) * n**nu * math.log(n)
        best = min(best, (1.0 + additive) * (2.0 * n) ** (depth - jp))
    return 2.0 * best


def _eps_sequence(eps, depth: int) -> list[float]:
    if hasattr(eps, "eps_for_threshold"):
        return list(eps.eps_for_threshold(depth))
    if np.isscalar(eps):
        return [float(eps)] * depth
    eps_list = [float(v) for v in eps]
    if len(eps_list) != depth:
        raise ValueError(f"need {depth} per-layer perturbations, got {len(eps_list)}")
    return eps_list

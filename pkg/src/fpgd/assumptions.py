"""Empirical checks of the two training assumptions and update diagnostics.

Assumption A: the reciprocal-sum statistic over nonzero hidden bias updates,
with the dead-neuron clause (zero update implies nonpositive perturbed
preactivation everywhere).  Assumption B: preactivation derivatives bounded
by one, measured exactly along a line.  Plus the small-update histogram with
a log-log tail-slope estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .netcore import Network, preactivations
from .regions import Line, propagate_line


def assumption_a_statistic(updates, nu: float, total_neurons: int) -> float:
    """N**(-nu) * sum over hidden layers of |u|**(-1), with 0**(-1) read as 0."""
    if total_neurons < 1:
        raise ValueError("total_neurons must be >= 1")
    total = 0.0
    for u in updates.hidden_bias_updates():
        nz = u[u != 0.0]
        total += float(np.sum(1.0 / np.abs(nz)))
    return total / float(total_neurons) ** nu


def dagger_zero_count(updates) -> int:
    """Number of hidden bias updates that are exactly zero."""
    return int(sum(np.count_nonzero(u == 0.0) for u in updates.hidden_bias_updates()))


@dataclass
class DeadNeuronViolation:
    layer: int
    neuron: int
    witness: np.ndarray
    preactivation: float


@dataclass
class AssumptionAReport:
    statistic: float
    nu: float
    dagger_zero_count: int
    dead_neuron_violations: list[DeadNeuronViolation] = field(default_factory=list)

    @property
    def dead_clause_holds(self) -> bool:
        return not self.dead_neuron_violations


def check_dead_neurons(
    net_after: Network, updates, probe_inputs: np.ndarray
) -> list[DeadNeuronViolation]:
    """Verify that zero-update neurons stay nonpositive on the probe set.

    For every hidden (layer, neuron) whose bias update is exactly zero, the
    perturbed preactivation must be <= 0 at every probe input; violations
    are returned with a witness input.
    """
    probe = np.asarray(probe_inputs, dtype=float)
    if probe.ndim == 1:
        probe = probe[:, None]
    pre = preactivations(net_after, probe).values
    violations: list[DeadNeuronViolation] = []
    for j, u in enumerate(updates.hidden_bias_updates(), start=1):
        zero = np.nonzero(u == 0.0)[0]
        if zero.size == 0:
            continue
        vals = pre[j - 1][:, zero]
        bad_probe, bad_col = np.nonzero(vals > 0.0)
        seen = set()
        for row, col in zip(bad_probe, bad_col):
            k = int(zero[col])
            if (j, k) in seen:
                continue
            seen.add((j, k))
            violations.append(
                DeadNeuronViolation(j, k, probe[row].copy(), float(vals[row, col]))
            )
    return violations


def assumption_a_report(
    net_after: Network, updates, nu: float, probe_inputs: np.ndarray
) -> AssumptionAReport:
    total = net_after.total_neurons
    return AssumptionAReport(
        statistic=assumption_a_statistic(updates, nu, total),
        nu=nu,
        dagger_zero_count=dagger_zero_count(updates),
        dead_neuron_violations=check_dead_neurons(net_after, updates, probe_inputs),
    )


@dataclass
class GradientBoundReport:
    """Maximum absolute preactivation slopes along a line.

    Slopes are directional derivatives along the line's direction; for
    input dimension 1 these equal the full derivatives.
    """

    per_neuron: dict[tuple[int, int], float]
    max_abs_slope: float
    method: str = "exact-on-line"

    def neurons_exceeding(self, bound: float = 1.0) -> list[tuple[int, int]]:
        return [key for key, v in self.per_neuron.items() if v > bound]


def max_preactivation_slope(net: Network, line: Line) -> GradientBoundReport:
    """Exact per-neuron maxima of |d/dt preactivation| along the line."""
    profile = propagate_line(net, line)
    per_neuron: dict[tuple[int, int], float] = {}
    overall = 0.0
    for j, (ts, pre) in enumerate(profile.hidden, start=1):
        slopes = np.abs(np.diff(pre, axis=0) / np.diff(ts)[:, None])
        maxima = slopes.max(axis=0)
        for k, m in enumerate(maxima):
            per_neuron[(j, k)] = float(m)
        overall = max(overall, float(maxima.max()))
    return GradientBoundReport(per_neuron, overall)


@dataclass
class HistogramReport:
    """Relative-frequency histogram of small update magnitudes with tail fit.

    `fit_slope` is the least-squares slope of log10(density) against
    log10(magnitude) over the lowest `fit_decades` decades that contain at
    least `min_per_decade` samples each.  `ref_constant` is the constant C
    matching a C * x**(-1/2) reference curve to the fit window.
    """

    bin_edges: np.ndarray
    counts: np.ndarray
    frequencies: np.ndarray
    densities: np.ndarray
    retained: int
    total: int
    fit_slope: float
    fit_intercept: float
    ref_constant: float
    fit_window: tuple[float, float]


def bias_update_histogram(
    samples: Iterable[float],
    bins_per_decade: int = 8,
    fit_decades: int = 2,
    min_per_decade: int = 30,
    floor: float = 1e-12,
) -> HistogramReport:
    """Histogram of |update| values below one, on logarithmic bins.

    Only magnitudes in (floor, 1) are retained.  Frequencies are relative to
    the retained count (they sum to one); densities divide by bin width.
    """
    mags = np.abs(np.asarray(list(samples), dtype=float))
    total = mags.size
    mags = mags[(mags > floor) & (mags < 1.0)]
    if mags.size == 0:
        raise ValueError("no samples below one to histogram")
    lo_decade = math.floor(math.log10(mags.min()))
    edges = np.logspace(lo_decade, 0.0, -lo_decade * bins_per_decade + 1)
    counts, edges = np.histogram(mags, bins=edges)
    frequencies = counts / mags.size
    widths = np.diff(edges)
    densities = frequencies / widths
    # choose the two lowest decades that are populated well enough
    decades = []
    for d in range(lo_decade, 0):
        n_in = int(np.sum((mags >= 10.0**d) & (mags < 10.0 ** (d + 1))))
        if n_in >= min_per_decade:
            decades.append(d)
    decades = decades[:fit_decades]
    if not decades:
        raise ValueError("no decade holds enough samples for a tail fit")
    window = (10.0 ** decades[0], 10.0 ** (decades[-1] + 1))
    centers = np.sqrt(edges[:-1] * edges[1:])
    mask = (centers >= window[0]) & (centers < window[1]) & (counts > 0)
    lx = np.log10(centers[mask])
    ly = np.log10(densities[mask])
    slope, intercept = np.polyfit(lx, ly, 1)
    ref_constant = 10.0 ** float(np.mean(ly + 0.5 * lx))
    return HistogramReport(
        bin_edges=edges,
        counts=counts,
        frequencies=frequencies,
        densities=densities,
        retained=int(mags.size),
        total=int(total),
        fit_slope=float(slope),
        fit_intercept=float(intercept),
        ref_constant=ref_constant,
        fit_window=window,
    )

"""Experiment harness: seeded grids, CSV emission, and SVG rendering hooks.

Every run is fully determined by (master seed, grid indices); worker seeds are
derived through SeedSequence so parallel execution reproduces sequential
output bit for bit.  Charts are rendered by `plots` purely from the emitted
CSV files.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import assumptions, plots
from .fparith import FloatFormat
from .graddesc import (
    Dataset,
    PerturbationSchedule,
    ProbeConfig,
    StepSchedule,
    exact_updates,
    make_target,
    train,
)
from .netcore import (
    Architecture,
    Network,
    build_unstable,
    build_yarotsky,
    he_init,
    realize_fp,
    unstable_admissibility,
)
from .regions import Line, count_pieces, telgarsky_bound, theorem_threshold

INSTABILITY_FORMAT = FloatFormat.from_spec("b10p16e-300:300")

FIG34_NOISE = (0.0, 1e-5, 5e-5, 1e-4, 5e-4, 1e-3)
FIG5_NOISE = (5e-5, 1e-4, 5e-4, 1e-3, 5e-3)


def derive_seed(master: int, *key: int) -> np.random.SeedSequence:
    """Deterministic per-grid-point seed material."""
    return np.random.SeedSequence((int(master),) + tuple(int(k) for k in key))


@dataclass
class ExperimentSpec:
    """One experiment invocation: kind, output directory, scale, seeding."""

    kind: str
    out_dir: Path
    seed: int = 0
    paper_scale: bool = False
    workers: int = 1
    overrides: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.out_dir = Path(self.out_dir)

    def opt(self, name: str, default):
        return self.overrides.get(name, default)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])


def _write_manifest(spec: ExperimentSpec, grid: dict) -> Path:
    """Log the fully resolved parameter grid next to the run's outputs."""
    import json

    spec.out_dir.mkdir(parents=True, exist_ok=True)
    path = spec.out_dir / f"{spec.kind}_manifest.json"
    payload = {"kind": spec.kind, "seed": spec.seed, "paper_scale": spec.paper_scale, **grid}
    path.write_text(json.dumps(payload, indent=1, default=str))
    return path


def _map_grid(fn: Callable, args: list, workers: int) -> list:
    if workers <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, args))


# ---------------------------------------------------------------------------
# Assumption-statistic experiment (one update of random nets on the sine task).
# ---------------------------------------------------------------------------


def _fig1_cell(args: tuple) -> list[tuple]:
    master, layers, width, nets, samples, nu = args
    rows = []
    for idx in range(nets):
        ss = derive_seed(master, 1, layers, width, idx)
        init_seed, data_seed = ss.spawn(2)
        arch = Architecture((1,) + (width,) * (layers - 1) + (1,))
        net = he_init(arch, init_seed)
        data = Dataset.from_function(np.sin, samples, (0.0, 2 * math.pi), data_seed)
        stat = assumptions.assumption_a_statistic(exact_updates(net, data), nu, net.total_neurons)
        rows.append((layers, width, idx, stat))
    return rows


def run_fig1(spec: ExperimentSpec) -> dict[str, Path]:
    """Reciprocal-update statistic across depths and widths; CDF chart."""
    layer_values = spec.opt("layers", [3, 4, 5, 6, 7])
    widths = spec.opt("widths", list(range(100, 401, 10)) if spec.paper_scale else [100])
    nets = spec.opt("nets_per_cell", 500 if spec.paper_scale else 50)
    samples = spec.opt("samples", 500)
    nu = spec.opt("nu", 2.0)
    _write_manifest(
        spec,
        {"layers": list(layer_values), "widths": list(widths), "nets_per_cell": nets,
         "samples": samples, "nu": nu},
    )
    cells = [(spec.seed, L, w, nets, samples, nu) for L in layer_values for w in widths]
    rows = [r for cell in _map_grid(_fig1_cell, cells, spec.workers) for r in cell]
    csv_path = spec.out_dir / "fig1.csv"
    _write_csv(csv_path, ("layers", "width", "net_index", "statistic"), rows)
    summary = []
    maxima = []
    for L in layer_values:
        cell_means = []
        for w in widths:
            vals = np.array([r[3] for r in rows if r[0] == L and r[1] == w])
            cell_means.append(float(vals.mean()))
            summary.append((L, w, float(vals.mean()), float(np.median(vals)), float(vals.max())))
        maxima.append((L, max(cell_means)))
    summary_path = spec.out_dir / "fig1_summary.csv"
    _write_csv(
        summary_path,
        ("layers", "width", "mean_statistic", "median_statistic", "max_statistic"),
        summary,
    )
    maxima_path = spec.out_dir / "fig1_maxima.csv"
    _write_csv(maxima_path, ("layers", "max_mean_statistic"), maxima)
    svg = spec.out_dir / "fig1.svg"
    plots.plot_cdf(csv_path, svg, value="statistic", group="layers")
    return {"csv": csv_path, "summary": summary_path, "maxima": maxima_path, "svg": svg}


# ---------------------------------------------------------------------------
# Bias-update distribution experiment.
# ---------------------------------------------------------------------------


def _fig2_chunk(args: tuple) -> np.ndarray:
    master, layers, width, start, count, samples = args
    out = []
    for idx in range(start, start + count):
        ss = derive_seed(master, 2, layers, idx)
        init_seed, data_seed = ss.spawn(2)
        arch = Architecture((1,) + (width,) * (layers - 1) + (1,))
        net = he_init(arch, init_seed)
        data = Dataset.from_function(np.sin, samples, (0.0, 2 * math.pi), data_seed)
        bundle = exact_updates(net, data)
        for u in bundle.hidden_bias_updates():
            out.append(np.abs(u))
    return np.concatenate(out) if out else np.empty(0)


def run_fig2(spec: ExperimentSpec) -> dict[str, Path]:
    """Histogram of small bias updates with a log-log tail-slope fit."""
    layer_values = spec.opt("layers", [4, 5, 6])
    width = spec.opt("width", 200)
    nets = spec.opt("instantiations", 10_000 if spec.paper_scale else 2_000)
    samples = spec.opt("samples", 500)
    _write_manifest(
        spec,
        {"layers": list(layer_values), "width": width, "instantiations": nets, "samples": samples},
    )
    chunk = max(1, nets // max(1, spec.workers * 4))
    hist_rows, summary_rows = [], []
    for L in layer_values:
        chunks = [
            (spec.seed, L, width, start, min(chunk, nets - start), samples)
            for start in range(0, nets, chunk)
        ]
        mags = np.concatenate(_map_grid(_fig2_chunk, chunks, spec.workers))
        report = assumptions.bias_update_histogram(mags)
        for lo, hi, cnt, freq, dens in zip(
            report.bin_edges[:-1],
            report.bin_edges[1:],
            report.counts,
            report.frequencies,
            report.densities,
        ):
            hist_rows.append((L, float(lo), float(hi), int(cnt), float(freq), float(dens)))
        summary_rows.append(
            (
                L,
                report.retained,
                report.total,
                report.fit_slope,
                report.fit_intercept,
                report.ref_constant,
                report.fit_window[0],
                report.fit_window[1],
            )
        )
    csv_path = spec.out_dir / "fig2_hist.csv"
    _write_csv(csv_path, ("layers", "bin_lo", "bin_hi", "count", "frequency", "density"), hist_rows)
    summary_path = spec.out_dir / "fig2_summary.csv"
    _write_csv(
        summary_path,
        ("layers", "retained", "total", "fit_slope", "fit_intercept", "ref_constant", "fit_lo", "fit_hi"),
        summary_rows,
    )
    svg = spec.out_dir / "fig2.svg"
    plots.plot_histogram(csv_path, summary_path, svg)
    return {"csv": csv_path, "summary": summary_path, "svg": svg}


# ---------------------------------------------------------------------------
# Noisy training experiments.
# ---------------------------------------------------------------------------


def _train_run(args: tuple) -> list[tuple]:
    (master, tag, target_name, scale, layers, width, noise, rep, samples, domain,
     iterations, probe_interval, step_base, step_div, init_kind, count_pieces_too) = args
    ss = derive_seed(master, tag, layers, int(noise * 1e9), rep)
    init_seed, data_seed, train_seed = ss.spawn(3)
    if init_kind == "yarotsky":
        net = build_yarotsky(layers)
    else:
        arch = Architecture((1,) + (width,) * (layers - 1) + (1,))
        net = he_init(arch, init_seed)
    data = Dataset.from_function(make_target(target_name, scale), samples, domain, data_seed)
    sched = (
        PerturbationSchedule.matvec_noise(noise) if noise > 0 else PerturbationSchedule.exact()
    )
    steps = StepSchedule("inv_sqrt", step_base, step_div)
    probes = ProbeConfig(
        interval=probe_interval,
        line=Line.unit_interval(1),
        regions=True,
        pieces=count_pieces_too,
    )
    seed_int = int(train_seed.generate_state(1)[0])
    trace = train(net, data, sched, steps, iterations, seed_int, probes)
    depth = net.depth
    total = net.total_neurons
    rows = []
    for rec in trace.records:
        threshold = None
        if rec.iteration >= 1 and rec.activation_regions is not None and noise > 0:
            threshold = theorem_threshold(
                total, depth, rec.step, (noise,) * depth, rec.assumption_a_statistic, 2.0, 1.0
            )
        rows.append(
            (
                target_name,
                layers,
                noise,
                rep,
                rec.iteration,
                rec.step,
                rec.risk,
                rec.assumption_a_statistic,
                rec.activation_regions,
                rec.pieces,
                threshold,
            )
        )
    return rows


_TRAIN_HEADER = (
    "target",
    "layers",
    "noise",
    "rep",
    "iteration",
    "step",
    "risk",
    "assumption_a_statistic",
    "activation_regions",
    "pieces",
    "theorem_threshold",
)


def run_fig34(spec: ExperimentSpec, target_name: str) -> dict[str, Path]:
    """Noisy training of He-initialised nets on a smooth 1-D target."""
    layer_values = spec.opt("layers", [5, 8])
    width = spec.opt("width", 50)
    noises = spec.opt("noise", list(FIG34_NOISE))
    reps = spec.opt("reps", 5)
    samples = spec.opt("samples", 500)
    iterations = spec.opt("iterations", 50)
    probe = spec.opt("probe_interval", 5)
    tag = 3 if target_name == "quadratic_bump" else 4
    _write_manifest(
        spec,
        {"target": target_name, "layers": list(layer_values), "width": width,
         "noise": list(noises), "reps": reps, "samples": samples,
         "iterations": iterations, "probe_interval": probe},
    )
    runs = [
        (spec.seed, tag, target_name, 1.0, L, width, noise, rep, samples, (0.0, 1.0),
         iterations, probe, 0.02, 8.0, "he", False)
        for L in layer_values
        for noise in noises
        for rep in range(reps)
    ]
    rows = [r for run in _map_grid(_train_run, runs, spec.workers) for r in run]
    name = f"fig{tag}"
    csv_path = spec.out_dir / f"{name}.csv"
    _write_csv(csv_path, _TRAIN_HEADER, rows)
    svg_regions = spec.out_dir / f"{name}_regions.svg"
    svg_risk = spec.out_dir / f"{name}_risk.svg"
    plots.plot_training_curves(csv_path, svg_regions, value="activation_regions")
    plots.plot_training_curves(csv_path, svg_risk, value="risk")
    return {"csv": csv_path, "svg_regions": svg_regions, "svg_risk": svg_risk}


def run_fig5(spec: ExperimentSpec) -> dict[str, Path]:
    """Noisy training starting from the many-piece square interpolant."""
    layer_values = spec.opt("layers", [12, 14] if spec.paper_scale else [12])
    noises = spec.opt("noise", list(FIG5_NOISE))
    reps = spec.opt("reps", 5)
    samples = spec.opt("samples", 5000)
    iterations = spec.opt("iterations", 200)
    probe = spec.opt("probe_interval", 1)
    _write_manifest(
        spec,
        {"layers": list(layer_values), "noise": list(noises), "reps": reps,
         "samples": samples, "iterations": iterations, "probe_interval": probe},
    )
    runs = [
        (spec.seed, 5, "square", 0.99999, L, 4, noise, rep, samples, (0.0, 1.0),
         iterations, probe, 0.1, 1.0, "yarotsky", False)
        for L in layer_values
        for noise in noises
        for rep in range(reps)
    ]
    rows = [r for run in _map_grid(_train_run, runs, spec.workers) for r in run]
    csv_path = spec.out_dir / "fig5.csv"
    _write_csv(csv_path, _TRAIN_HEADER, rows)
    svg_regions = spec.out_dir / "fig5_regions.svg"
    svg_risk = spec.out_dir / "fig5_risk.svg"
    plots.plot_training_curves(csv_path, svg_regions, value="activation_regions")
    plots.plot_training_curves(csv_path, svg_risk, value="risk")
    return {"csv": csv_path, "svg_regions": svg_regions, "svg_risk": svg_risk}


# ---------------------------------------------------------------------------
# Forward instability report.
# ---------------------------------------------------------------------------


def relative_error(exact, approx) -> float:
    """|exact - approx| / |exact|, with the 0/0 case defined as 0.

    Exact when called on Fractions (no float round-off in the ratio).
    """
    if exact == 0:
        return 0.0 if approx == 0 else math.inf
    return float(abs(exact - approx) / abs(exact))


def run_instability(spec: ExperimentSpec) -> dict[str, Path]:
    """Exact vs finite-precision evaluation of the cancellation network.

    Inputs are random members of [0, 1] in the format's value set.  The
    exact side is evaluated in rational arithmetic: the network drives
    intermediate values beyond what float64 resolves, by construction.
    """
    from .fparith import round_nearest
    from .oracle import rational_realize

    grid = spec.opt("grid", [(10.0, 65, 8), (10.0, 120, 8), (1.0, 3, 5)])
    n_inputs = spec.opt("inputs", 100)
    fmt = FloatFormat.from_spec(spec.opt("format", INSTABILITY_FORMAT.spec))
    _write_manifest(spec, {"grid": [list(g) for g in grid], "inputs": n_inputs, "format": fmt.spec})
    rows = []
    summary = []
    for gi, (lam, width, depth) in enumerate(grid):
        net = build_unstable(lam, width, depth)
        adm = unstable_admissibility(lam, width, depth)
        rng = np.random.default_rng(derive_seed(spec.seed, 6, gi))
        members = [round_nearest(float(v), fmt) for v in rng.uniform(0.0, 1.0, size=n_inputs)]
        xs = [round_nearest(0.0, fmt)] + members
        outs = realize_fp(net, [[x] for x in xs], fmt)
        errs = []
        for x, out in zip(xs, outs):
            x_frac = x.as_fraction(fmt)
            fp_frac = out[0].as_fraction(fmt)
            exact = rational_realize(net, [x_frac])[0]
            err = relative_error(exact, fp_frac)
            rows.append(
                (lam, width, depth, adm, float(x_frac), float(exact), float(fp_frac), err)
            )
            if x_frac > 0:
                errs.append(err)
        errs = np.array(errs)
        summary.append(
            (
                lam,
                width,
                depth,
                adm,
                int(np.sum(errs == 1.0)),
                len(errs),
                float(errs.min()),
                float(errs.max()),
            )
        )
    csv_path = spec.out_dir / "instability.csv"
    _write_csv(
        csv_path,
        ("weight_scale", "width", "depth", "admissibility", "input", "exact", "finite_precision", "rel_error"),
        rows,
    )
    summary_path = spec.out_dir / "instability_summary.csv"
    _write_csv(
        summary_path,
        ("weight_scale", "width", "depth", "admissibility", "n_rel_error_one", "n_inputs", "min_rel_error", "max_rel_error"),
        summary,
    )
    return {"csv": csv_path, "summary": summary_path}


# ---------------------------------------------------------------------------
# Config-driven single runs (train / pieces / check-assumptions commands).
# ---------------------------------------------------------------------------


def build_from_config(cfg: dict) -> tuple[Network, Dataset, PerturbationSchedule, StepSchedule, dict]:
    arch = Architecture(tuple(cfg["architecture"]))
    init = cfg.get("init", {"scheme": "he", "seed": 0})
    if init.get("scheme", "he") == "yarotsky":
        net = build_yarotsky(arch.depth)
    else:
        net = he_init(arch, init.get("seed", 0), init.get("bias_std", 0.0))
    ds = cfg["dataset"]
    data = Dataset.from_function(
        make_target(ds["target"], ds.get("scale", 1.0)),
        ds.get("count", 500),
        tuple(ds.get("domain", (0.0, 1.0))),
        ds.get("seed", 0),
    )
    noise = cfg.get("noise", {"mode": "none"})
    mode = noise.get("mode", "none")
    if mode == "matvec-noise":
        sched = PerturbationSchedule.matvec_noise(noise["amplitude"])
    elif mode == "update-noise":
        sched = PerturbationSchedule.update_noise(noise["layer_eps"])
    else:
        sched = PerturbationSchedule.exact()
    st = cfg.get("steps", {"rule": "inv_sqrt", "base": 0.02, "sqrt_divisor": 8.0})
    steps = StepSchedule(st.get("rule", "inv_sqrt"), st.get("base", 0.02), st.get("sqrt_divisor", 1.0))
    return net, data, sched, steps, cfg


def run_training_config(cfg: dict, out_dir: Path) -> Path:
    net, data, sched, steps, cfg = build_from_config(cfg)
    probes = ProbeConfig(
        interval=cfg.get("probe_interval", 0),
        line=Line.unit_interval(net.input_dim),
        regions=True,
        pieces=cfg.get("probe_pieces", False),
        max_slope=cfg.get("probe_max_slope", False),
    )
    trace = train(net, data, sched, steps, cfg.get("iterations", 10), cfg.get("seed", 0), probes)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "trace.csv"
    trace.write_csv(path)
    if cfg.get("save_final_network", False):
        trace.final_network.save_json(out_dir / "final_network.json")
    return path


CENSUS_HEADER = (
    "net_id",
    "line_id",
    "pieces",
    "activation_regions",
    "telgarsky_bound",
    "theorem_threshold",
    "tolerance",
)


def census_row(
    net: Network,
    line: Line,
    net_id: str = "net",
    line_id: str = "line",
    threshold_args: Optional[dict] = None,
    exact: bool = False,
) -> tuple:
    census = count_pieces(net, line, exact=exact)
    regions = census.activation_region_count
    tb = telgarsky_bound(2, net.architecture.max_width, net.depth)
    threshold = None
    if threshold_args:
        threshold = theorem_threshold(
            net.total_neurons,
            net.depth,
            threshold_args["step"],
            threshold_args["eps"],
            threshold_args["c0"],
            threshold_args.get("nu", 2.0),
            line.length,
        )
    return (net_id, line_id, census.piece_count, regions, tb, threshold, census.slope_tol)


def run_assumption_check(cfg: dict, out_dir: Path) -> Path:
    net, data, sched, steps, cfg = build_from_config(cfg)
    bundle = exact_updates(net, data)
    updated = Network(
        [
            (A - steps.value(1) * U, b - steps.value(1) * u)
            for (A, b), U, u in zip(net.layers, bundle.weight_updates, bundle.bias_updates)
        ]
    )
    lo, hi = data.domain
    probe = np.linspace(lo, hi, cfg.get("probe_points", 1000))[:, None]
    probe = np.vstack([probe, data.inputs])
    report = assumptions.assumption_a_report(updated, bundle, cfg.get("nu", 2.0), probe)
    slope = assumptions.max_preactivation_slope(
        net, Line.from_endpoints([lo], [hi])
    ).max_abs_slope
    mags = np.concatenate([np.abs(u) for u in bundle.hidden_bias_updates()])
    try:
        pole = assumptions.bias_update_histogram(mags).fit_slope
    except ValueError:
        pole = None
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "assumption_report.csv"
    _write_csv(
        path,
        (
            "net_id",
            "iteration",
            "statistic_nu2",
            "dagger_zero_count",
            "dead_violations",
            "max_abs_slope",
            "pole_slope_estimate",
        ),
        [
            (
                cfg.get("net_id", "net"),
                1,
                report.statistic,
                report.dagger_zero_count,
                len(report.dead_neuron_violations),
                slope,
                pole,
            )
        ],
    )
    return path

"""Acceptance suite: the numbered exit criteria, one pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s` to see every line.  Each
criterion states its tolerance inline; Monte-Carlo criteria use fixed seeds
and a 3-sigma slack.

Criterion 3 is expected to FAIL: it asserts that the depth-8, width-65,
scale-10 cancellation network evaluated at decimal precision 16 collapses to
exactly zero on every random positive input.  Under honest round-to-nearest
the collapse needs the carried input to stay below half an ulp of the huge
branch, which holds only on part of each decade of inputs at these
parameters (total absorption needs roughly 0.3 more decades of growth, e.g.
width 120).  The criterion is kept as stated; see the instability report for
the measured absorption bands.
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from fpgd import labkit
from fpgd.fparith import FloatFormat, FpValue, add_fp, machine_epsilon, mul_fp, round_nearest
from fpgd.graddesc import Dataset, exact_updates
from fpgd.labkit import ExperimentSpec
from fpgd.netcore import (
    Architecture,
    Network,
    build_cancellation,
    build_unstable,
    build_yarotsky,
    he_init,
    preactivations,
    realize,
    realize_fp,
    unstable_admissibility,
)
from fpgd.oracle import (
    GridOracleConfig,
    finite_difference_updates,
    grid_piece_count,
    lemma1_monte_carlo,
    prop33_monte_carlo,
    rational_realize,
    sawtooth_profile,
)
from fpgd.regions import Line, count_pieces, telgarsky_bound

B10P16 = FloatFormat(10, 16, -300, 300)


def report(num: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"[criterion {num:02d}] {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" — {detail}"
    print(line)
    assert ok, line


def test_criterion_01_machine_epsilon():
    ok = (
        machine_epsilon(FloatFormat(2, 53, -1021, 1024)) == Fraction(1, 2**53)
        and machine_epsilon(FloatFormat(2, 24, -125, 128)) == Fraction(1, 2**24)
        and machine_epsilon(B10P16) == Fraction(5, 10**16)
    )
    report(1, "machine epsilon exact values", ok)


def _contract_violations(fmt: FloatFormat, pairs: int, seed: int) -> int:
    rng = np.random.default_rng(seed)
    b, p = fmt.radix, fmt.precision
    ms = rng.integers(b ** (p - 1), b**p, size=(pairs, 2))
    es = rng.integers(-6, 7, size=(pairs, 2))
    ss = rng.choice([-1, 1], size=(pairs, 2))
    two_scale = 2 * b ** (p - 1)
    bad = 0
    for i in range(pairs):
        a = FpValue(int(ss[i, 0]), int(ms[i, 0]), int(es[i, 0]))
        c = FpValue(int(ss[i, 1]), int(ms[i, 1]), int(es[i, 1]))
        qa, qb = a.exponent - p + 1, c.exponent - p + 1
        q = min(qa, qb)
        ia = a.sign * a.significand * b ** (qa - q)
        ib = c.sign * c.significand * b ** (qb - q)
        s = add_fp(a, c, fmt)
        qs = s.exponent - p + 1 if s.significand else q
        qq = min(q, qs)
        rs = s.sign * s.significand * b ** (qs - qq) if s.significand else 0
        ex = (ia + ib) * b ** (q - qq)
        if two_scale * abs(rs - ex) > abs(ex):
            bad += 1
        m = mul_fp(a, c, fmt)
        qe = qa + qb
        qm = m.exponent - p + 1 if m.significand else qe
        qq = min(qe, qm)
        rm = m.sign * m.significand * b ** (qm - qq) if m.significand else 0
        em = a.sign * c.sign * a.significand * c.significand * b ** (qe - qq)
        if two_scale * abs(rm - em) > abs(em):
            bad += 1
    return bad


def test_criterion_02_rounding_contract():
    formats = {
        "b2p24": FloatFormat(2, 24, -125, 128),
        "b2p53": FloatFormat(2, 53, -1021, 1024),
        "b10p4": FloatFormat(10, 4, -40, 40),
        "b10p16": B10P16,
    }
    violations = {
        name: _contract_violations(fmt, 100_000, seed)
        for seed, (name, fmt) in enumerate(formats.items())
    }
    ok = all(v == 0 for v in violations.values())
    report(2, "rounding contract, 1e5 pairs x 4 formats", ok, f"violations {violations}")


def test_criterion_03_instability_reproduction():
    net = build_unstable(10.0, 65, 8)
    adm = unstable_admissibility(10.0, 65, 8)
    rng = np.random.default_rng(20240803)
    inputs = [round_nearest(float(v), B10P16) for v in rng.uniform(0.0, 1.0, size=100)]
    outs = realize_fp(net, [[x] for x in inputs], B10P16)
    collapsed = 0
    unit_error = 0
    for x, out in zip(inputs, outs):
        x_frac = x.as_fraction(B10P16)
        fp_frac = out[0].as_fraction(B10P16)
        exact = rational_realize(net, [x_frac])[0]
        assert exact == x_frac  # exact realisation is the identity on x >= 0
        if fp_frac == 0:
            collapsed += 1
        if exact != 0 and abs(exact - fp_frac) / abs(exact) == 1:
            unit_error += 1
    ok = adm >= 16.0 and collapsed == 100 and unit_error == 100
    report(
        3,
        "total finite-precision collapse at (scale 10, width 65, depth 8)",
        ok,
        f"admissibility {adm:.4f} (>=16 {'ok' if adm >= 16 else 'VIOLATED'}); "
        f"collapsed {collapsed}/100, relative error exactly 1 on {unit_error}/100 "
        "(absorption fails on part of each input decade at these parameters)",
    )


def test_criterion_04_cancellation_identity():
    lam, depth, eps = 2.0, 10, 1e-3
    expected = eps * (1 + lam**depth)
    clean = build_cancellation(lam, depth, [0.0] * depth)
    worst = 0.0
    for j in range(depth):
        perturbed = build_cancellation(lam, depth, [eps if i == j else 0.0 for i in range(depth)])
        for x in (0.25, 1.0, 3.0):
            o1 = realize(perturbed, x)[0]
            o0 = realize(clean, x)[0]
            ratio = (o1 - o0) / o0
            worst = max(worst, abs(ratio - expected) / expected)
    ok = worst <= 1e-12
    report(4, "cancellation error identity eps*(1+scale**depth)", ok, f"worst rel dev {worst:.2e}")


def test_criterion_05_square_interpolant_certification():
    worst_excess = -math.inf
    for depth in range(2, 11):
        net = build_yarotsky(depth)
        census = count_pieces(net, Line.unit_interval(1), exact=True)
        assert census.piece_count == 2 ** (depth - 1), f"depth {depth}: {census.piece_count} pieces"
        xs = np.linspace(0.0, 1.0, 10_001)
        err = float(np.max(np.abs(realize(net, xs[:, None])[:, 0] - xs**2)))
        worst_excess = max(worst_excess, err - 4.0**-depth)
        assert err <= 4.0**-depth, f"depth {depth}: sup error {err}"
    report(
        5,
        "square interpolant: exact 2**(L-1) pieces and 4**-L sup error, L=2..10",
        True,
        f"max (error - bound) = {worst_excess:.2e}",
    )


def test_criterion_06_gradient_correctness():
    rng = np.random.default_rng(606)
    checked = 0
    attempts = 0
    worst = 0.0
    while checked < 20:
        attempts += 1
        depth = int(rng.integers(2, 5))
        width = int(rng.integers(2, 9))
        net = he_init(
            Architecture((1,) + (width,) * (depth - 1) + (1,)),
            seed=int(rng.integers(0, 2**31)),
            bias_std=0.4,
        )
        data = Dataset.from_function(np.sin, 25, (0.0, 1.0), seed=int(rng.integers(0, 2**31)))
        pre = preactivations(net, data.inputs)
        if min(np.min(np.abs(v)) for v in pre.values) < 1e-6:
            continue  # a sample sits on an activation boundary; not comparable
        exact = exact_updates(net, data)
        fd = finite_difference_updates(net, data, h=1e-6)
        for e, f in zip(exact.bias_updates + exact.weight_updates,
                        fd.bias_updates + fd.weight_updates):
            dev = np.abs(f - e) / np.maximum(np.abs(e), 1e-8)
            worst = max(worst, float(dev.max()))
        checked += 1
    ok = worst <= 1e-5
    report(6, "backprop vs finite differences on 20 nets", ok,
           f"worst per-coordinate rel dev {worst:.2e} ({attempts} nets drawn)")


def test_criterion_07_counting_cross_validation():
    rng = np.random.default_rng(707)
    cfg = GridOracleConfig(grid_points=10**6, tolerance=1e-6)
    line = Line.unit_interval(1)
    disagreements = []
    max_count = 0
    for i in range(50):
        depth = int(rng.integers(2, 6))
        width = int(rng.integers(3, 21))
        net = he_init(
            Architecture((1,) + (width,) * (depth - 1) + (1,)),
            seed=int(rng.integers(0, 2**31)),
            bias_std=0.5,
        )
        census = count_pieces(net, line)
        grid = grid_piece_count(net, line, cfg)
        if census.piece_count != grid:
            disagreements.append((i, census.piece_count, grid))
        bound = telgarsky_bound(2, net.architecture.max_width, depth)
        assert census.piece_count <= census.activation_region_count <= bound
        max_count = max(max_count, census.piece_count)
    ok = not disagreements
    report(7, "exact counts vs 1e6-point grid oracle on 50 nets", ok,
           f"disagreements {disagreements or 'none'}, largest census {max_count}")


def test_criterion_08_level_crossing_tails():
    failures = []
    for teeth, seed in ((1, 5), (4, 6), (8, 7)):
        height = 1.0 / (2 * teeth)
        saw = sawtooth_profile(teeth, height)
        for center, width in ((height / 2, height), (0.5, 1.0)):
            res = lemma1_monte_carlo(
                saw, (center, width),
                [1, 2, 2 * teeth, 2 * teeth + 1, 4 * teeth],
                10_000, seed,
            )
            for check in res.checks:
                if not check.holds:
                    failures.append((teeth, width, check.threshold, check.empirical, check.bound))
    report(8, "level-crossing tail bound, sawtooth family, 1e4 trials", not failures,
           f"violations {failures or 'none'}")


def test_criterion_09_new_breakpoint_tails():
    configs = [
        # (net seed, widths, layer, neuron, eps_j, step)
        (2, (10, 10), 2, 3, 20.0, 0.1),
        (2, (10, 10), 2, 3, 100.0, 0.1),
        (5, (10, 10), 1, 0, 50.0, 0.2),
        (8, (6, 6), 2, 1, 30.0, 0.1),
        (11, (12,), 1, 4, 40.0, 0.05),
    ]
    line = Line.unit_interval(1)
    data = Dataset.from_function(np.sin, 50, (0.0, 1.0), seed=3)
    worst = []
    for i, (seed, widths, layer, neuron, eps_j, step) in enumerate(configs):
        net = he_init(Architecture((1,) + widths + (1,)), seed=seed, bias_std=0.4)
        res = prop33_monte_carlo(net, data, line, layer, neuron, eps_j, step,
                                 trials=10_000, seed=900 + i, q_max=10)
        if not res.all_hold:
            worst.append((i, [(c.threshold, c.empirical, c.bound) for c in res.checks if not c.holds]))
    report(9, "new-breakpoint tail and mean bounds on 5 nets, 1e4 draws", not worst,
           f"violations {worst or 'none'}")


def test_criterion_10_reciprocal_statistic_medians(tmp_path):
    labkit.run_fig1(ExperimentSpec("fig1", tmp_path, seed=0))
    import csv

    with open(tmp_path / "fig1.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    medians = {}
    for layers in sorted({r["layers"] for r in rows}, key=int):
        vals = [float(r["statistic"]) for r in rows if r["layers"] == layers]
        assert len(vals) == 50
        medians[int(layers)] = float(np.median(vals))
    ok = all(v <= 0.15 for v in medians.values())
    summary = {k: round(v, 4) for k, v in medians.items()}
    report(10, "median reciprocal-update statistic <= 0.15 per depth", ok, f"medians {summary}")


def test_criterion_11_update_distribution_tail_slope(tmp_path):
    labkit.run_fig2(ExperimentSpec("fig2", tmp_path, seed=0, overrides={"layers": [4]}))
    import csv

    with open(tmp_path / "fig2_summary.csv", newline="") as fh:
        row = list(csv.DictReader(fh))[0]
    slope = float(row["fit_slope"])
    ok = -0.75 <= slope <= 0.0
    report(11, "bias-update tail slope in [-0.75, 0] (2000 nets, width 200, depth 4)",
           ok, f"fitted slope {slope:.3f} on {row['retained']} retained updates")


def test_criterion_12_many_piece_training(tmp_path):
    labkit.run_fig5(ExperimentSpec("fig5", tmp_path, seed=0))
    import csv

    with open(tmp_path / "fig5.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    by_noise: dict[float, dict[int, list]] = {}
    for r in rows:
        by_noise.setdefault(float(r["noise"]), {}).setdefault(int(r["rep"]), []).append(r)
    finals = {}
    ratios = {}
    initial_ok = True
    for noise, reps in by_noise.items():
        fin, rat = [], []
        for rep_rows in reps.values():
            rep_rows.sort(key=lambda r: int(r["iteration"]))
            regions = [int(r["activation_regions"]) for r in rep_rows if r["activation_regions"] != ""]
            risks = [float(r["risk"]) for r in rep_rows]
            initial_ok &= regions[0] == 2**11
            fin.append(regions[-1])
            rat.append(risks[-1] / risks[0])
        finals[noise] = float(np.mean(fin))
        ratios[noise] = float(np.mean(rat))
    ordering_ok = finals[5e-5] > finals[5e-3]
    mse_ok = all(v <= 2.0 for v in ratios.values())
    ok = initial_ok and ordering_ok and mse_ok
    finals_summary = {k: round(v, 1) for k, v in sorted(finals.items())}
    ratio_summary = {k: round(v, 3) for k, v in sorted(ratios.items())}
    report(
        12,
        "many-piece training: initial 2**11 regions, noise ordering, stable MSE",
        ok,
        f"mean final regions {finals_summary}, MSE ratios {ratio_summary}",
    )


def test_criterion_13_region_counts_below_threshold(tmp_path):
    import csv

    worst_ratio = 0.0
    checked = 0
    for target, fig in (("quadratic_bump", "fig3"), ("cosine", "fig4")):
        labkit.run_fig34(
            ExperimentSpec(fig, tmp_path / fig, seed=0,
                           overrides={"layers": [5], "noise": [1e-5, 5e-5, 1e-4, 5e-4, 1e-3]}),
            target,
        )
        with open(tmp_path / fig / f"{fig}.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        for r in rows:
            if r["activation_regions"] == "" or r["theorem_threshold"] == "":
                continue
            count = int(r["activation_regions"])
            threshold = float(r["theorem_threshold"])
            assert count <= threshold, (r["target"], r["noise"], r["iteration"], count, threshold)
            worst_ratio = max(worst_ratio, count / threshold)
            checked += 1
    ok = checked > 0 and worst_ratio <= 1.0
    report(13, "every probed region count below the one-step ceiling", ok,
           f"{checked} probes, max count/threshold = {worst_ratio:.3e} (counts stay far below)")

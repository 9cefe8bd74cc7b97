"""Backpropagation, perturbation models, schedules, and the training loop."""

import numpy as np
import pytest

from fpgd.graddesc import (
    Dataset,
    PerturbationSchedule,
    ProbeConfig,
    StepSchedule,
    TrainingDiverged,
    apply_updates,
    empirical_risk,
    exact_updates,
    loss_derivative,
    make_target,
    noisy_matvec_updates,
    perturbed_step,
    train,
)
from fpgd.netcore import Architecture, Network, he_init
from fpgd.oracle import finite_difference_updates
from fpgd.regions import Line


def linear_net(weight=1.0, bias=0.0):
    return Network([(np.array([[weight]]), np.array([bias]))])


class TestDataset:
    def test_from_function_deterministic(self):
        a = Dataset.from_function(np.sin, 50, (0.0, 2 * np.pi), seed=3)
        b = Dataset.from_function(np.sin, 50, (0.0, 2 * np.pi), seed=3)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.labels, b.labels)

    def test_domain_enforced(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[2.0]]), np.array([0.0]), (0.0, 1.0))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[0.5]]), np.array([0.0, 1.0]), (0.0, 1.0))


class TestEmpiricalRisk:
    def test_zero_on_match(self):
        assert empirical_risk([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand_value(self):
        assert empirical_risk([0.0, 0.0], [1.0, 3.0]) == 5.0

    def test_gradient_in_predictions(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=6)
        yhat = rng.normal(size=6)
        h = 1e-7
        for i in range(6):
            up, down = yhat.copy(), yhat.copy()
            up[i] += h
            down[i] -= h
            fd = (empirical_risk(y, up) - empirical_risk(y, down)) / (2 * h)
            assert fd == pytest.approx(loss_derivative(y, yhat)[i] / 6, rel=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            empirical_risk([1.0], [1.0, 2.0])


class TestExactUpdates:
    def test_linear_neuron_hand_case(self):
        data = Dataset(np.array([[1.0]]), np.array([0.0]), (0.0, 1.0))
        bundle = exact_updates(linear_net(), data)
        assert bundle.bias_updates[0][0] == 2.0
        assert bundle.weight_updates[0][0, 0] == 2.0

    def test_zero_residual_gives_zero_updates(self):
        data = Dataset(np.array([[0.2], [0.8]]), np.array([0.2, 0.8]), (0.0, 1.0))
        bundle = exact_updates(linear_net(), data)
        assert bundle.max_abs() == 0.0

    def test_requires_scalar_output(self):
        net = Network([(np.ones((2, 1)), np.zeros(2))])
        data = Dataset(np.array([[0.5]]), np.array([0.0]), (0.0, 1.0))
        with pytest.raises(ValueError):
            exact_updates(net, data)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_finite_differences(self, seed):
        net = he_init(Architecture((1, 5, 5, 1)), seed=12 + seed, bias_std=0.4)
        data = Dataset.from_function(np.sin, 30, (0.0, 1.0), seed=seed)
        exact = exact_updates(net, data)
        fd = finite_difference_updates(net, data, h=1e-6)
        for e, f in zip(exact.bias_updates + exact.weight_updates,
                        fd.bias_updates + fd.weight_updates):
            np.testing.assert_allclose(f, e, rtol=1e-5, atol=1e-7)

    def test_min_abs_nonzero_bias_update(self):
        bundle = exact_updates(
            he_init(Architecture((1, 8, 1)), seed=5, bias_std=0.3),
            Dataset.from_function(np.cos, 20, (0.0, 1.0), seed=1),
        )
        nonzero = np.concatenate([u[u != 0] for u in bundle.hidden_bias_updates()])
        assert bundle.min_abs_nonzero_bias_update() == np.min(np.abs(nonzero))


class TestPerturbedStep:
    def setup_method(self):
        self.net = he_init(Architecture((1, 6, 1)), seed=7, bias_std=0.2)
        self.data = Dataset.from_function(np.cos, 40, (0.0, 1.0), seed=8)

    def test_zero_eps_is_exact_step(self):
        sched = PerturbationSchedule.update_noise([0.0, 0.0])
        stepped, bundle = perturbed_step(self.net, self.data, sched, 0.1, np.random.default_rng(0))
        ref = apply_updates(self.net, bundle.bias_updates, bundle.weight_updates, 0.1)
        for (A1, b1), (A2, b2) in zip(stepped.layers, ref.layers):
            assert np.array_equal(A1, A2)
            assert np.array_equal(b1, b2)

    def test_update_support_interval(self):
        eps = 0.4
        sched = PerturbationSchedule.update_noise([eps, eps])
        bundle = exact_updates(self.net, self.data)
        for trial in range(20):
            stepped, _ = perturbed_step(self.net, self.data, sched, 1.0, np.random.default_rng(trial))
            for (A1, b1), (A0, b0), u, U in zip(
                stepped.layers, self.net.layers, bundle.bias_updates, bundle.weight_updates
            ):
                applied_u = b0 - b1  # = step * perturbed update, step = 1
                lo = np.minimum((1 - eps / 2) * u, (1 + eps / 2) * u) - 1e-12
                hi = np.maximum((1 - eps / 2) * u, (1 + eps / 2) * u) + 1e-12
                assert np.all(applied_u >= lo) and np.all(applied_u <= hi)

    def test_unbiasedness_monte_carlo(self):
        eps = 0.5
        u = exact_updates(self.net, self.data).bias_updates[0]
        rng = np.random.default_rng(42)
        draws = np.array(
            [(1 + eps * rng.uniform(-0.5, 0.5, size=u.shape)) * u for _ in range(10_000)]
        )
        se = draws.std(axis=0) / np.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - u) <= 3 * se + 1e-15)

    def test_requires_update_mode(self):
        with pytest.raises(ValueError):
            perturbed_step(self.net, self.data, PerturbationSchedule.exact(), 0.1, np.random.default_rng(0))


class TestNoisyMatvec:
    def setup_method(self):
        # all preactivations comfortably positive, so tiny noise cannot flip
        # indicators and the per-product bound applies cleanly
        self.net = Network(
            [
                (np.array([[0.5], [0.25]]), np.array([1.0, 1.5])),
                (np.array([[0.5, 0.25]]), np.array([0.5])),
            ]
        )
        self.data = Dataset(np.array([[0.5], [1.0]]), np.array([2.0, 0.0]), (0.0, 1.0))

    def test_zero_amplitude_identical(self):
        exact = exact_updates(self.net, self.data)
        noisy, _ = noisy_matvec_updates(self.net, self.data, 0.0, np.random.default_rng(1))
        for a, b in zip(exact.bias_updates + exact.weight_updates,
                        noisy.bias_updates + noisy.weight_updates):
            assert np.array_equal(a, b)

    def test_componentwise_relative_bound(self):
        amp = 1e-5
        exact = exact_updates(self.net, self.data)
        bound = (1 + amp / 2) ** (2 * self.net.depth) - 1
        for trial in range(50):
            noisy, _ = noisy_matvec_updates(self.net, self.data, amp, np.random.default_rng(trial))
            for e, n in zip(exact.bias_updates + exact.weight_updates,
                            noisy.bias_updates + noisy.weight_updates):
                mask = e != 0
                assert np.all(np.abs(n[mask] - e[mask]) <= bound * np.abs(e[mask]) * (1 + 1e-9))

    def test_mean_matches_exact_within_3se(self):
        amp = 1e-3
        exact = exact_updates(self.net, self.data).bias_updates[0]
        draws = np.array(
            [
                noisy_matvec_updates(self.net, self.data, amp, np.random.default_rng(t))[0]
                .bias_updates[0]
                for t in range(1000)
            ]
        )
        se = draws.std(axis=0) / np.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - exact) <= 3 * se + 1e-12)


class TestStepSchedule:
    def test_fig34_rule_at_zero(self):
        assert StepSchedule("inv_sqrt", 0.02, 8.0).value(0) == 0.02

    def test_fig5_rule_at_one(self):
        assert StepSchedule("inv_sqrt", 0.1, 1.0).value(1) == pytest.approx(0.05)

    def test_constant(self):
        assert StepSchedule("constant", 0.3).value(17) == 0.3

    def test_validation(self):
        with pytest.raises(ValueError):
            StepSchedule("linear", 0.1)
        with pytest.raises(ValueError):
            StepSchedule("constant", -1.0)
        with pytest.raises(ValueError):
            StepSchedule("constant", 0.1).value(-1)


class TestTrain:
    def test_zero_residual_fixed_point_under_update_noise(self):
        net = linear_net()
        data = Dataset(np.array([[0.2], [0.8]]), np.array([0.2, 0.8]), (0.0, 1.0))
        trace = train(net, data, PerturbationSchedule.update_noise([0.3]),
                      StepSchedule("constant", 0.1), 5, seed=2)
        assert np.all(trace.risks() == 0.0)
        assert np.array_equal(trace.final_network.layers[0][0], net.layers[0][0])

    def test_deterministic_given_seed(self):
        net = he_init(Architecture((1, 10, 10, 1)), seed=5)
        data = Dataset.from_function(make_target("quadratic_bump"), 100, (0.0, 1.0), seed=6)
        sched = PerturbationSchedule.matvec_noise(1e-4)
        steps = StepSchedule("inv_sqrt", 0.02, 8.0)
        a = train(net, data, sched, steps, 20, seed=11)
        b = train(net, data, sched, steps, 20, seed=11)
        assert np.array_equal(a.risks(), b.risks())
        for (A1, _), (A2, _) in zip(a.final_network.layers, b.final_network.layers):
            assert np.array_equal(A1, A2)

    def test_descent_smoke_small_step(self):
        net = he_init(Architecture((1, 20, 20, 1)), seed=5)
        data = Dataset.from_function(make_target("quadratic_bump"), 200, (0.0, 1.0), seed=6)
        trace = train(net, data, PerturbationSchedule.exact(), StepSchedule("constant", 1e-3), 50, seed=1)
        risks = trace.risks()
        assert np.all(np.diff(risks) <= 1e-15)

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_divergence_detected(self):
        net = he_init(Architecture((1, 20, 1)), seed=0, bias_std=0.1)
        data = Dataset.from_function(np.sin, 50, (0.0, 1.0), seed=1)
        with pytest.raises(TrainingDiverged):
            train(net, data, PerturbationSchedule.exact(), StepSchedule("constant", 100.0), 200, seed=1)

    def test_probes_recorded(self):
        net = he_init(Architecture((1, 8, 1)), seed=3, bias_std=0.3)
        data = Dataset.from_function(np.cos, 50, (0.0, 1.0), seed=4)
        probes = ProbeConfig(interval=2, line=Line.unit_interval(1), pieces=True, regions=True)
        trace = train(net, data, PerturbationSchedule.matvec_noise(1e-4),
                      StepSchedule("inv_sqrt", 0.02, 8.0), 4, seed=5, probes=probes)
        probed = [r for r in trace.records if r.activation_regions is not None]
        assert [r.iteration for r in probed] == [0, 2, 4]
        assert all(r.pieces <= r.activation_regions for r in probed)
        assert all(r.assumption_a_statistic is not None for r in trace.records[1:])

    def test_trace_csv_columns(self, tmp_path):
        net = he_init(Architecture((1, 5, 1)), seed=1, bias_std=0.2)
        data = Dataset.from_function(np.cos, 20, (0.0, 1.0), seed=2)
        trace = train(net, data, PerturbationSchedule.exact(), StepSchedule("constant", 0.01), 3, seed=9)
        path = tmp_path / "trace.csv"
        trace.write_csv(path)
        header = path.read_text().splitlines()[0].split(",")
        assert header == [
            "iteration",
            "lambda",
            "risk",
            "min_abs_nonzero_bias_update",
            "assumption_a_statistic",
            "max_abs_preact_gradient",
            "pieces",
            "activation_regions",
            "seed",
        ]
        assert len(path.read_text().splitlines()) == 5  # header + 4 records

import math

import numpy as np
import pytest

from robustpt import numkit as nk
from robustpt.errors import ContractError, DomainError
from robustpt.policy import (
    PolicyParams,
    StateBox,
    dumps_params,
    estimate_lambda,
    init_params,
    input_grad_logprob,
    kl_divergence,
    linear_policy,
    load_params,
    loads_params,
    log_prob,
    mean_action,
    mean_jacobian,
    sample_action,
    save_params,
)

from conftest import central_diff, rel_err


def reference_forward(params, x):
    """Independent forward pass written with explicit loops."""
    h = np.asarray(x, dtype=float)
    n = len(params.weights)
    for i in range(n):
        W, b = params.weights[i], params.biases[i]
        out = np.array([sum(W[r, c] * h[c] for c in range(W.shape[1])) + b[r] for r in range(W.shape[0])])
        h = np.array([math.tanh(v) for v in out]) if i < n - 1 else out
    return h


class TestMeanAction:
    def test_linear_identity(self):
        p = linear_policy([[2.0]], [0.0])
        np.testing.assert_array_equal(mean_action(p, [3.0]), [6.0])

    def test_constant_net(self):
        p = PolicyParams((np.zeros((2, 3)),), (np.array([0.5, -0.5]),), np.zeros(2))
        np.testing.assert_array_equal(mean_action(p, [1.0, -4.0, 9.0]), [0.5, -0.5])

    def test_random_net_matches_reference(self):
        p = init_params([4, 5, 3, 2], nk.rng_stream(0, ["fwd"]), out_scale=1.0)
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = rng.normal(size=4)
            np.testing.assert_allclose(mean_action(p, x), reference_forward(p, x), rtol=1e-12)

    def test_batch_matches_rows(self, tiny_mlp):
        X = np.random.default_rng(1).normal(size=(6, 3))
        batch = mean_action(tiny_mlp, X)
        for i in range(6):
            np.testing.assert_allclose(batch[i], mean_action(tiny_mlp, X[i]), rtol=1e-14)

    def test_shape_mismatch(self, tiny_mlp):
        with pytest.raises(ContractError):
            mean_action(tiny_mlp, np.zeros(4))

    def test_params_immutable(self, tiny_mlp):
        with pytest.raises(ValueError):
            tiny_mlp.weights[0][0, 0] = 1.0

    def test_bad_architecture(self):
        with pytest.raises(ContractError):
            PolicyParams((np.zeros((2, 3)), np.zeros((1, 4))), (np.zeros(2), np.zeros(1)), np.zeros(1))


class TestLogProb:
    def test_standard_normal_at_zero(self):
        p = linear_policy([[0.0]], [0.0], log_std=0.0)
        assert log_prob(p, [0.0], [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
        assert log_prob(p, [0.0], [0.0]) == pytest.approx(-0.9189385, abs=1e-7)

    def test_standard_normal_at_one(self):
        p = linear_policy([[0.0]], [0.0], log_std=0.0)
        assert log_prob(p, [0.0], [1.0]) == pytest.approx(-1.4189385, abs=1e-7)

    def test_matches_scipy_density(self, tiny_mlp):
        from scipy.stats import norm

        rng = np.random.default_rng(2)
        s, a = rng.normal(size=3), rng.normal(size=2)
        mu = mean_action(tiny_mlp, s)
        oracle = np.sum(norm.logpdf(a, loc=mu, scale=tiny_mlp.sigma))
        assert log_prob(tiny_mlp, s, a) == pytest.approx(oracle, rel=1e-12)

    def test_mode_maximizes(self, tiny_mlp):
        s = np.array([0.3, -0.2, 0.1])
        mu = mean_action(tiny_mlp, s)
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert log_prob(tiny_mlp, s, mu + 0.1 * rng.normal(size=2)) < log_prob(tiny_mlp, s, mu)

    def test_density_bounded_by_mode_value(self, tiny_mlp):
        rng = np.random.default_rng(3)
        peak = np.prod(1.0 / (tiny_mlp.sigma * math.sqrt(2 * math.pi)))
        S, A = rng.normal(size=(500, 3)), rng.normal(size=(500, 2))
        assert np.all(np.exp(log_prob(tiny_mlp, S, A)) <= peak * (1 + 1e-12))


class TestSampleAction:
    def test_degenerate_noise(self, tiny_mlp):
        p = tiny_mlp.with_arrays([*tiny_mlp.arrays()[:-1], np.full(2, -20.0)])
        s = np.array([0.1, 0.2, 0.3])
        np.testing.assert_allclose(sample_action(p, s, nk.rng_stream(0, ["s"])), mean_action(p, s), atol=1e-8)

    def test_deterministic(self, tiny_mlp):
        s = np.ones(3)
        a = sample_action(tiny_mlp, s, nk.rng_stream(4, ["x"]))
        b = sample_action(tiny_mlp, s, nk.rng_stream(4, ["x"]))
        assert a.tobytes() == b.tobytes()

    def test_sample_std(self):
        p = linear_policy([[0.0]], [0.0], log_std=math.log(0.5))
        rng = nk.rng_stream(0, ["std"])
        x = np.array([sample_action(p, [0.0], rng)[0] for _ in range(100_000)])
        assert abs(x.std() - 0.5) <= 0.005


class TestKL:
    def test_identity(self, tiny_mlp):
        assert kl_divergence(tiny_mlp, tiny_mlp, np.ones(3)) == 0.0

    def test_mean_shift(self):
        p = linear_policy([[0.0]], [0.0])
        q = linear_policy([[0.0]], [0.1])
        assert kl_divergence(p, q, [0.0]) == pytest.approx(0.005, rel=1e-12)

    def test_scale_change(self):
        p = linear_policy([[0.0]], [0.0], log_std=0.0)
        q = linear_policy([[0.0]], [0.0], log_std=math.log(2.0))
        assert kl_divergence(p, q, [0.0]) == pytest.approx(math.log(2) + 1 / 8 - 1 / 2, rel=1e-12)

    def test_matches_numeric_integration(self):
        from scipy import integrate
        from scipy.stats import norm

        p = linear_policy([[0.7]], [0.1], log_std=-0.2)
        q = linear_policy([[0.2]], [-0.3], log_std=0.3)
        s = [0.5]
        mp, mq = mean_action(p, s)[0], mean_action(q, s)[0]
        sp, sq = p.sigma[0], q.sigma[0]
        oracle, _ = integrate.quad(lambda x: norm.pdf(x, mp, sp) * (norm.logpdf(x, mp, sp) - norm.logpdf(x, mq, sq)), -20, 20)
        assert kl_divergence(p, q, s) == pytest.approx(oracle, rel=1e-8)

    def test_non_negative(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            p = linear_policy(rng.normal(size=(2, 2)), rng.normal(size=2), rng.normal())
            q = linear_policy(rng.normal(size=(2, 2)), rng.normal(size=2), rng.normal())
            assert kl_divergence(p, q, rng.normal(size=2)) >= 0.0


class TestInputGrad:
    def test_linear_closed_form(self):
        p = linear_policy([[2.0]], [0.0], log_std=0.0)
        g = input_grad_logprob(p, [0.0], [1.0])
        np.testing.assert_allclose(g, [2.0])
        assert float(g @ g) == pytest.approx(4.0)

    def test_linear_formula_multi_dim(self):
        rng = np.random.default_rng(1)
        W = rng.normal(size=(2, 3))
        p = linear_policy(W, rng.normal(size=2), log_std=-0.4)
        s, a = rng.normal(size=3), rng.normal(size=2)
        expected = W.T @ ((a - mean_action(p, s)) / p.sigma**2)
        np.testing.assert_allclose(input_grad_logprob(p, s, a), expected, rtol=1e-12)

    def test_zero_at_mean(self, tiny_mlp):
        s = np.array([0.2, 0.1, -0.5])
        np.testing.assert_allclose(input_grad_logprob(tiny_mlp, s, mean_action(tiny_mlp, s)), 0.0, atol=1e-14)

    def test_mlp_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        for trial in range(10):
            p = init_params([4, 6, 2], nk.rng_stream(trial, ["ig"]), log_std=-0.2, out_scale=1.0)
            s, a = rng.normal(size=4), rng.normal(size=2)
            fd = central_diff(lambda x: log_prob(p, x, a), s)
            assert rel_err(input_grad_logprob(p, s, a), fd) <= 1e-4


class TestMeanJacobian:
    def test_matches_finite_differences(self, tiny_mlp):
        s = np.array([0.3, -0.1, 0.8])
        fd = np.stack([central_diff(lambda x, i=i: mean_action(tiny_mlp, x)[i], s) for i in range(2)])
        np.testing.assert_allclose(mean_jacobian(tiny_mlp, s), fd, rtol=1e-6, atol=1e-9)


class TestEstimateLambda:
    def test_linear_scalar(self):
        est = estimate_lambda(linear_policy([[0.9]]), StateBox.cube(1, -1, 1), 10, nk.rng_stream(0))
        assert est.exact and est.value == pytest.approx(0.9, rel=1e-12)

    def test_linear_diag(self):
        est = estimate_lambda(linear_policy(np.diag([2.0, 0.5])), StateBox.cube(2, -1, 1), 10, nk.rng_stream(0))
        assert est.value == pytest.approx(2.0, rel=1e-12)

    def test_mlp_monotone_in_n(self, tiny_mlp):
        box = StateBox.cube(3, -1, 1)
        vals = [estimate_lambda(tiny_mlp, box, n, nk.rng_stream(0, ["lam"])).value for n in (1, 5, 25, 125)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_degenerate_box(self, tiny_mlp):
        box = StateBox(np.full(3, 0.2), np.full(3, 0.2))
        est = estimate_lambda(tiny_mlp, box, 50, nk.rng_stream(0))
        assert est.samples == 1
        assert est.value == pytest.approx(nk.spectral_norm(mean_jacobian(tiny_mlp, np.full(3, 0.2))))

    def test_bad_n(self, tiny_mlp):
        with pytest.raises(DomainError):
            estimate_lambda(tiny_mlp, StateBox.cube(3, -1, 1), 0, nk.rng_stream(0))

    def test_box_order(self):
        with pytest.raises(ContractError):
            StateBox([1.0], [0.0])

    def test_vertices(self):
        V = StateBox([-1.0, 0.0], [1.0, 2.0]).vertices()
        assert {tuple(v) for v in V} == {(-1, 0), (1, 0), (-1, 2), (1, 2)}


class TestCheckpoint:
    def test_round_trip_bytes(self, tiny_mlp, tmp_path):
        save_params(tiny_mlp, tmp_path / "a.ckpt")
        loaded = load_params(tmp_path / "a.ckpt")
        save_params(loaded, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        for x, y in zip(tiny_mlp.arrays(), loaded.arrays()):
            assert x.tobytes() == y.tobytes()

    def test_header(self, tiny_mlp):
        data = dumps_params(tiny_mlp)
        assert data.startswith(b"RPTCKPT v1\n")
        assert b"W0 4 3\n" in data

    def test_bad_header(self):
        with pytest.raises(ContractError):
            loads_params(b"NOPE\n")

    def test_truncated(self, tiny_mlp):
        with pytest.raises(ContractError):
            loads_params(dumps_params(tiny_mlp)[:-5])

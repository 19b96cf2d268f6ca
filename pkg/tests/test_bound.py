import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unreliable_fl import bound, data, fed
from unreliable_fl.bound import AssumptionConstants, BoundInput
from unreliable_fl.nn import ModelSpec
from unreliable_fl.unreliable import CorruptionConfig


def phi_oracle(tau, delta, beta, eta):
    """Exact rational recursion h(t+1) = (1+eta*beta) h(t) + eta*delta."""
    d, b, e = Fraction(delta), Fraction(beta), Fraction(eta)
    h = Fraction(0)
    for _ in range(tau):
        h = (1 + e * b) * h + e * d
    return h - e * d * tau


def _consts(**kw):
    base = dict(rho=1.0, beta=1.0, delta=0.1, theta=1.0, epsilon=1.0, omega=1.0, eta=0.1)
    base.update(kw)
    return AssumptionConstants(**base)


def test_phi_examples():
    assert bound.phi(1, 0.3, 2.0, 0.1) == 0.0
    assert bound.phi(10, 0.1, 1.0, 0.01) == pytest.approx(4.622e-4, rel=1e-3)
    assert bound.phi(10, 0.1, 1.0, 0.01) == pytest.approx(float(phi_oracle(10, 0.1, 1.0, 0.01)), rel=1e-12)
    assert all(bound.phi(t, 0.0, 1.5, 0.2) == 0.0 for t in range(1, 30))


@given(st.integers(2, 60), st.floats(1e-4, 10), st.floats(1e-3, 10), st.floats(1e-4, 1.0))
def test_phi_matches_recursion(tau, delta, beta, eta_frac):
    eta = eta_frac / beta
    exact = float(phi_oracle(tau, delta, beta, eta))
    assert bound.phi(tau, delta, beta, eta) == pytest.approx(exact, rel=1e-12)


@given(st.floats(1e-3, 5), st.floats(1e-2, 5), st.floats(1e-3, 1.0))
def test_phi_strictly_increasing(delta, beta, eta_frac):
    eta = eta_frac / beta
    vals = [bound.phi(t, delta, beta, eta) for t in range(1, 25)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_noise_offset_examples():
    assert bound.noise_offset(0.0, -1.0, 3.0, 10, 2.0) == 0.0
    assert bound.noise_offset(0.4, 1.0, 3.0, 10, 0.0) == 0.0
    assert bound.noise_offset(0.1, 0.5, 1.0, 50, 0.3) == pytest.approx(0.052701, abs=1e-6)
    exact = 0.1 / 50 * (0.5 * 50 + 2 * math.sqrt(50) * 0.3 / math.pi)
    assert bound.noise_offset(0.1, 0.5, 1.0, 50, 0.3) == pytest.approx(exact, rel=1e-15)


def test_bound_reduced_form():
    c = _consts(rho=123.0, eta=0.1, beta=1.0, omega=1.0)
    res = bound.theorem1_bound(BoundInput(c, m=5, total_iterations=100, tau=1))
    assert not res.diverged and res.value == pytest.approx(1 / 9.5, rel=1e-14)


def test_bound_without_unreliability_uses_phi_only():
    c = _consts(delta=0.05, epsilon=2.0)
    inp = BoundInput(c, m=10, total_iterations=60, tau=4, alpha=-1.0, sigma=3.0, p_u=0.0)
    phi = bound.phi(4, c.delta, c.beta, c.eta)
    expect = 1 / (60 * (c.omega * c.eta * (1 - c.beta * c.eta / 2) - c.rho * phi / (4 * c.epsilon**2)))
    assert bound.theorem1_bound(inp).value == expect


def test_huge_sigma_diverges():
    c = _consts()
    res = bound.theorem1_bound(BoundInput(c, 10, 60, 2, alpha=0.8, sigma=1e6, p_u=0.1))
    assert res.diverged and res.denominator <= 0 and str(res) == "diverged"


def _val(inp):
    r = bound.theorem1_bound(inp)
    return math.inf if r.diverged else r.value


def test_bound_monotone_on_grids():
    c = _consts(delta=0.01, epsilon=0.5, rho=0.5)
    base = BoundInput(c, 20, 60, 3, alpha=0.5, sigma=0.3, p_u=0.1)
    seqs = {
        "p_u": [_val(replace(base, p_u=p)) for p in np.linspace(0, 0.5, 6)],
        "sigma": [_val(replace(base, sigma=s)) for s in [0, 0.1, 0.3, 1, 3, 10]],
        "one_minus_alpha": [_val(replace(base, alpha=a)) for a in [1, 0.8, 0.5, 0, -1]],
        "rho": [_val(replace(base, constants=replace(c, rho=r))) for r in [0.1, 0.3, 0.5, 1, 2]],
        "neg_m": [_val(replace(base, m=m)) for m in [80, 40, 20, 10, 5, 1]],
    }
    for name, vals in seqs.items():
        assert all(b >= a for a, b in zip(vals, vals[1:])), name
        assert np.isfinite(vals[0]), name


def test_h_second_derivative_example():
    c = _consts(delta=0.0)
    assert bound.h_second_derivative(2.0, c, 0.05) == pytest.approx(0.0125, rel=1e-14)


def _random_constants(rng):
    beta = 10 ** rng.uniform(-2, 1)
    return _consts(beta=beta, delta=10 ** rng.uniform(-3, 0), eta=rng.uniform(0.01, 1.0) / beta)


def test_h_second_derivative_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(200):
        c = _random_constants(rng)
        offset = 10 ** rng.uniform(-3, 0)
        tau = rng.uniform(1.5, 100)
        h = 1e-3 * tau
        f = lambda x: bound.h_value(x, c, offset)
        fd = (-f(tau + 2 * h) + 16 * f(tau + h) - 30 * f(tau) + 16 * f(tau - h) - f(tau - 2 * h)) / (12 * h * h)
        exact = bound.h_second_derivative(tau, c, offset)
        assert exact >= -1e-9
        assert fd == pytest.approx(exact, rel=1e-6, abs=1e-12 * abs(f(tau)) / h**2)


def test_divisors():
    assert bound.divisors(120) == [1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 24, 30, 40, 60, 120]
    assert bound.divisors(1) == [1] and bound.divisors(13) == [1, 13]


def test_optimal_tau_reliable_is_one():
    c = _consts(delta=0.05, epsilon=0.5)
    tau, res = bound.optimal_tau(BoundInput(c, 10, 120, 1))
    assert tau == 1 and res.value == _val(BoundInput(c, 10, 120, 1))


def test_optimal_tau_interior_under_unreliability():
    c = _consts(delta=1e-4, epsilon=0.5, rho=0.5, eta=0.5)
    inp = BoundInput(c, 50, 120, 1, alpha=0.5, sigma=0.3, p_u=0.1)
    tau, _ = bound.optimal_tau(inp)
    brute = min(bound.divisors(120), key=lambda t: (_val(replace(inp, tau=t)), t))
    assert 1 < tau < 120 and tau == brute


def test_optimal_tau_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(20):
        c = _random_constants(rng)
        c = replace(c, epsilon=10 ** rng.uniform(-1, 1), rho=10 ** rng.uniform(-2, 0))
        t = int(rng.choice([12, 60, 120, 36]))
        inp = BoundInput(c, int(rng.integers(1, 60)), t, 1, rng.uniform(-1, 1), rng.uniform(0, 1), rng.uniform(0, 0.5))
        tau, res = bound.optimal_tau(inp)
        vals = {d: _val(replace(inp, tau=d)) for d in bound.divisors(t)}
        if all(math.isinf(v) for v in vals.values()):
            assert (tau, res) == (None, None)
        else:
            assert tau == min(vals, key=lambda d: (vals[d], d))


def test_constants_validation():
    with pytest.raises(ValueError):
        _consts(beta=0.0)
    with pytest.raises(ValueError):
        _consts(delta=-1.0)
    with pytest.raises(ValueError):
        BoundInput(_consts(), 5, 10, 3)
    assert _consts(beta=2.0, eta=0.5).step_ok and not _consts(beta=2.0, eta=0.6).step_ok


def _quadratic_run(shards, m):
    spec = ModelSpec.quadratic(3)
    cfg = fed.FedConfig(m, 20, 2, 0.2, spec, seed=0)
    w0 = np.array([1.0, -0.5, 0.25])
    trace = fed.run_federated(cfg, CorruptionConfig(), None, shards, w0=w0)
    return spec, trace


def test_estimate_constants_on_quadratic():
    shard = data.Dataset(np.zeros((4, 3)), np.zeros(4))
    spec, trace = _quadratic_run([shard, shard], 2)
    c = bound.estimate_constants(spec, [shard, shard], trace, np.zeros(3))
    assert c.beta == pytest.approx(1.0, abs=1e-6)
    assert c.rho <= c.theta
    assert c.delta <= 1e-9
    assert c.step_ok


def test_identical_shards_have_no_divergence(synth):
    spec = ModelSpec.logistic(synth.dim)
    shards = [synth] * 4
    trace = fed.run_federated(fed.FedConfig(4, 12, 3, 0.5, spec), CorruptionConfig(), None, shards)
    w_star = fed.find_optimum(spec, synth, 0.5)
    assert bound.estimate_constants(spec, shards, trace, w_star).delta <= 1e-9


def test_estimates_are_sampling_stable(synth):
    from unreliable_fl.experiments import logistic_beta

    spec = ModelSpec.logistic(synth.dim)
    eta = 1.0 / logistic_beta(synth)
    shards = data.split_iid(synth, 5, 0).shards(synth)
    trace = fed.run_federated(fed.FedConfig(5, 30, 3, eta, spec), CorruptionConfig(), None, shards)
    w_star = fed.find_optimum(spec, synth, eta, tol=1e-9)
    a = bound.estimate_constants(spec, shards, trace, w_star, n_points=24)
    b = bound.estimate_constants(spec, shards, trace, w_star, n_points=96)
    for name in ("rho", "beta", "delta", "theta", "epsilon", "omega"):
        assert getattr(b, name) == pytest.approx(getattr(a, name), rel=0.05), name


def test_estimate_rejects_non_convex(synth):
    spec = ModelSpec.mlp(synth.dim, 2, hidden=3)
    trace = fed.run_federated(fed.FedConfig(1, 2, 1, 0.1, spec), CorruptionConfig(), None, [synth])
    with pytest.raises(ValueError):
        bound.estimate_constants(spec, [synth], trace, trace.final)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unreliable_fl.rng import stream
from unreliable_fl.unreliable import CASES, CorruptionConfig, corrupt, maybe_corrupt


def test_identity_and_sign_flip():
    w = np.array([0.5, -1.25, 3.0])
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(corrupt(w, 1.0, 0.0, rng), w)
    np.testing.assert_array_equal(corrupt(w, -1.0, 0.0, rng), -w)


def test_corrupt_moments():
    w = np.array([1.0, -2.0, 0.5])
    rng = np.random.default_rng(11)
    draws = np.array([corrupt(w, 0.8, 0.5, rng) for _ in range(10_000)])
    se = 0.5 / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - 0.8 * w) < 3 * se)
    assert np.all(np.abs(draws.var(axis=0, ddof=1) / 0.25 - 1) < 0.05)


def test_noise_is_gaussian_by_moments():
    rng = np.random.default_rng(5)
    n = corrupt(np.zeros(100_000), 1.0, 0.3, rng) / 0.3
    z = (n - n.mean()) / n.std()
    assert abs(np.mean(z**3)) < 0.1
    assert abs(np.mean(z**4) - 3) < 0.2


@given(st.floats(-1, 1), st.floats(-10, 10), st.lists(st.floats(-100, 100), min_size=1, max_size=8))
def test_corrupt_linear_without_noise(alpha, a, w):
    w = np.array(w)
    rng = np.random.default_rng(0)
    np.testing.assert_allclose(corrupt(a * w, alpha, 0.0, rng), a * corrupt(w, alpha, 0.0, rng), rtol=1e-12, atol=1e-300)


def test_degenerate_probabilities():
    w = np.ones(4)
    never = CorruptionConfig(alpha=-1, sigma=0.1, p_u=0.0)
    always = CorruptionConfig(alpha=-1, sigma=0.0, p_u=1.0)
    for k in range(200):
        out, flag = maybe_corrupt(w, never, stream(0, 0, k, "corrupt"))
        assert not flag and out is w
        out, flag = maybe_corrupt(w, always, stream(0, 0, k, "corrupt"))
        assert flag and np.array_equal(out, -w)


def test_corruption_frequency():
    cfg = CorruptionConfig(alpha=0.5, sigma=0.1, p_u=0.3)
    rng = np.random.default_rng(3)
    flags = [maybe_corrupt(np.zeros(2), cfg, rng)[1] for _ in range(10_000)]
    assert abs(np.mean(flags) - 0.3) < 0.02


def test_bernoulli_draw_comes_first():
    # the same stream decides corruption identically for any alpha, sigma
    a = CorruptionConfig(alpha=0.5, sigma=0.0, p_u=0.4)
    b = CorruptionConfig(alpha=-1.0, sigma=2.0, p_u=0.4)
    for k in range(100):
        fa = maybe_corrupt(np.ones(3), a, stream(1, 2, k, "corrupt"))[1]
        fb = maybe_corrupt(np.ones(3), b, stream(1, 2, k, "corrupt"))[1]
        assert fa == fb


def test_flags_are_coupled_across_p_u():
    # common random numbers: raising p_u only adds corrupted uploads
    lo = CorruptionConfig(p_u=0.1, alpha=0.5)
    hi = CorruptionConfig(p_u=0.3, alpha=0.5)
    for k in range(300):
        if maybe_corrupt(np.ones(2), lo, stream(0, 1, k, "corrupt"))[1]:
            assert maybe_corrupt(np.ones(2), hi, stream(0, 1, k, "corrupt"))[1]


def test_cases_and_validation():
    assert CASES == {"case1": (-1.0, 0.1), "case2": (0.8, 0.5), "case3": (0.5, 0.3)}
    c = CorruptionConfig.case("case2", 0.2, seed=4)
    assert (c.alpha, c.sigma, c.p_u, c.seed) == (0.8, 0.5, 0.2, 4)
    for bad in (dict(alpha=1.5), dict(sigma=-1), dict(p_u=1.2), dict(mode="x"), dict(mode="grouped")):
        with pytest.raises(ValueError):
            CorruptionConfig(**bad)


def test_client_probability_modes():
    np.testing.assert_array_equal(CorruptionConfig(p_u=0.2).client_probabilities(5), [0.2] * 5)
    p = CorruptionConfig(p_u=0.2, mode="fixed-subset", seed=3).client_probabilities(50)
    assert sorted(set(p)) == [0.0, 1.0] and p.sum() == 10
    np.testing.assert_array_equal(p, CorruptionConfig(p_u=0.2, mode="fixed-subset", seed=3).client_probabilities(50))
    g = CorruptionConfig(mode="grouped", group_p=(0.0, 0.1, 0.2, 0.3)).client_probabilities(8)
    np.testing.assert_array_equal(g, [0, 0, 0.1, 0.1, 0.2, 0.2, 0.3, 0.3])


def test_streams_are_keyed():
    a = stream(7, 1, 2, "batch").random(4)
    np.testing.assert_array_equal(a, stream(7, 1, 2, "batch").random(4))
    for other in (stream(7, 1, 2, "corrupt"), stream(7, 2, 2, "batch"), stream(7, 1, 3, "batch"), stream(8, 1, 2, "batch")):
        assert not np.array_equal(a, other.random(4))

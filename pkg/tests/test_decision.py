"""decision module: Bernoulli draws, HMM fitting/sampling, EM properties."""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from stpad.decision import (
    ActivityHmm,
    BernoulliDecision,
    baum_welch,
    decide,
    hmm_fit,
    hmm_log_likelihood,
    hmm_sample,
    load_hmm,
    save_hmm,
    stationary_activity_rate,
    stationary_distribution,
)


def test_bernoulli_endpoints():
    always_no = BernoulliDecision(0.0, seed=1)
    always_yes = BernoulliDecision(1.0, seed=1)
    assert not any(decide(always_no, i) for i in range(1000))
    assert all(decide(always_yes, i) for i in range(1000))


def test_bernoulli_frequency_close_to_q():
    fn = BernoulliDecision(0.3, seed=123)
    count = sum(decide(fn, i) for i in range(100_000))
    assert abs(count / 100_000 - 0.3) < 0.01

    # seeded counting oracle: identical stream on a fresh clone
    clone = fn.fresh()
    assert sum(decide(clone, i) for i in range(100_000)) == count


def test_bernoulli_validation():
    with pytest.raises(ValueError):
        BernoulliDecision(1.2)


def test_bernoulli_fresh_does_not_share_state():
    fn = BernoulliDecision(0.5, seed=9)
    first = [decide(fn, i) for i in range(50)]
    clone = fn.fresh()
    assert [decide(clone, i) for i in range(50)] == first


def _oracle_log_likelihood(flags, transition, emission, initial):
    """Plain (unscaled, log-domain) forward pass, independent of the module."""
    with np.errstate(divide="ignore"):  # log(0) = -inf is fine in log domain
        log_trans = np.log(transition)
        log_alpha = np.log(initial) + np.log(np.where(flags[0], emission, 1.0 - emission))
        for obs in flags[1:]:
            b = np.log(np.where(obs, emission, 1.0 - emission))
            log_alpha = np.logaddexp.reduce(log_alpha[:, None] + log_trans, axis=0) + b
    return float(np.logaddexp.reduce(log_alpha))


def test_hmm_fit_alternating_beats_grid_search_oracle():
    flags = np.array([1, 0] * 10, dtype=bool)  # 20 symbols
    model = hmm_fit(flags, state_count=2, iterations=200, seed=0)

    assert model.transition[0, 0] < 0.2
    assert model.transition[1, 1] < 0.2

    # exhaustive oracle: coarse grid over 2-state parameter space
    grid = np.linspace(0.05, 0.95, 10)
    best = -np.inf
    initial = np.array([0.5, 0.5])
    for a01, a10, e0, e1 in itertools.product(grid, repeat=4):
        transition = np.array([[1 - a01, a01], [a10, 1 - a10]])
        ll = _oracle_log_likelihood(flags, transition, np.array([e0, e1]), initial)
        best = max(best, ll)
    fitted_ll = _oracle_log_likelihood(flags, model.transition, model.emission, model.initial)
    assert fitted_ll >= best - 1e-6


def test_hmm_fit_degenerate_flags_warns():
    with pytest.warns(UserWarning, match="single regime"):
        model = hmm_fit(np.zeros(50, dtype=bool), state_count=2)
    assert np.all(model.emission == 0.0)
    assert np.all(np.diag(model.transition) >= 0.98)

    with pytest.warns(UserWarning, match="single regime"):
        model = hmm_fit(np.ones(50, dtype=bool), state_count=2)
    assert np.all(model.emission == 1.0)


def test_hmm_fit_validation():
    with pytest.raises(ValueError):
        hmm_fit(np.zeros(5, dtype=bool), state_count=2)
    with pytest.raises(ValueError):
        hmm_fit(np.zeros(100, dtype=bool), state_count=1)


def test_hmm_fit_iid_flags_stationary_frequency():
    rng = np.random.default_rng(7)
    flags = rng.random(2000) < 0.1
    model = hmm_fit(flags, state_count=2, iterations=60, seed=1)
    rate = stationary_activity_rate(model)
    assert abs(rate - 0.1) < 0.03

    # oracle: power iteration instead of the eigenvector route
    pi = np.full(2, 0.5)
    for _ in range(10_000):
        pi = pi @ model.transition
    assert stationary_distribution(model.transition) == pytest.approx(pi, abs=1e-6)
    assert float(pi @ model.emission) == pytest.approx(rate, abs=1e-9)


def test_em_log_likelihood_monotone():
    rng = np.random.default_rng(3)
    flags = rng.random(300) < 0.3
    _, history = baum_welch(flags, state_count=2, iterations=60, seed=5, tol=0.0)
    diffs = np.diff(history)
    assert np.all(diffs >= -1e-9)


def test_fit_keeps_stochastic_invariants():
    rng = np.random.default_rng(11)
    flags = rng.random(400) < 0.2
    for iterations in (1, 3, 10, 50):
        model, _ = baum_welch(flags, state_count=2, iterations=iterations, seed=2, tol=0.0)
        assert model.transition.sum(axis=1) == pytest.approx([1.0, 1.0], abs=1e-9)
        assert model.initial.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all((model.emission >= 0) & (model.emission <= 1))


def test_hmm_sample_emission_endpoints():
    transition = np.array([[0.5, 0.5], [0.5, 0.5]])
    initial = np.array([0.5, 0.5])
    silent = ActivityHmm(transition, np.zeros(2), initial, seed=4)
    noisy = ActivityHmm(transition, np.ones(2), initial, seed=4)
    assert not hmm_sample(silent, 500).any()
    assert hmm_sample(noisy, 500).all()


def test_hmm_sample_deterministic_and_stationary():
    model = ActivityHmm(
        np.array([[0.9, 0.1], [0.4, 0.6]]),
        np.array([0.05, 0.8]),
        np.array([1.0, 0.0]),
        seed=21,
    )
    a = hmm_sample(model, 100_000)
    b = hmm_sample(model, 100_000)
    assert np.array_equal(a, b)
    assert abs(a.mean() - stationary_activity_rate(model)) < 0.01


def test_hmm_decide_transition_counts_match_model():
    flags = np.array([1, 0] * 200, dtype=bool)
    model = hmm_fit(flags, state_count=2, iterations=200, seed=0)
    sample = hmm_sample(model.fresh(seed=99), 100_000)

    # transition-counting oracle on the emitted sequence: with near-degenerate
    # emissions the emitted symbols track the hidden states
    pairs = sample[:-1].astype(int) * 2 + sample[1:].astype(int)
    trans = np.bincount(pairs, minlength=4).reshape(2, 2).astype(float)
    trans /= trans.sum(axis=1, keepdims=True)
    # map emitted symbol u to the state whose emission is closest to u
    state_for = [int(np.argmin(np.abs(model.emission - v))) for v in (0.0, 1.0)]
    for u in (0, 1):
        for v in (0, 1):
            expected = model.transition[state_for[u], state_for[v]]
            assert abs(trans[u, v] - expected) < 0.05


def test_hmm_json_roundtrip(tmp_path):
    model = ActivityHmm(
        np.array([[0.7, 0.3], [0.2, 0.8]]),
        np.array([0.1, 0.9]),
        np.array([0.6, 0.4]),
        seed=17,
    )
    path = tmp_path / "hmm.json"
    save_hmm(model, path)
    loaded = load_hmm(path)
    assert np.array_equal(loaded.transition, model.transition)
    assert np.array_equal(loaded.emission, model.emission)
    assert np.array_equal(loaded.initial, model.initial)
    assert loaded.seed == model.seed


def test_hmm_validation():
    with pytest.raises(ValueError):
        ActivityHmm(np.array([[0.5, 0.6], [0.5, 0.5]]), np.zeros(2), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        ActivityHmm(np.eye(2), np.array([0.5, 1.5]), np.array([0.5, 0.5]))


def test_hmm_log_likelihood_matches_oracle():
    model = ActivityHmm(
        np.array([[0.8, 0.2], [0.3, 0.7]]),
        np.array([0.2, 0.9]),
        np.array([0.5, 0.5]),
    )
    rng = np.random.default_rng(2)
    flags = rng.random(100) < 0.4
    expected = _oracle_log_likelihood(flags, model.transition, model.emission, model.initial)
    assert hmm_log_likelihood(model, flags) == pytest.approx(expected, abs=1e-8)

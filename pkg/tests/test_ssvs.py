import itertools
import math

import numpy as np
import pytest

from conftest import make_aligned
from etfdss import ssvs
from etfdss.ssvs import (ChainConfigError, DegreesOfFreedomError, ModelIndicator, ModelPrior,
                         SingularDesignError, StochasticSearch, empirical_bayes_g, log_bayes_factor,
                         log_model_prior, run_chain, sample_beta_sigma)


def univariate_log_bf(x, y, g=None):
    """Independent single-target g-prior log Bayes factor, with an explicit intercept column."""
    T, k = x.shape
    design = np.column_stack([np.ones(T), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    r2 = 1.0 - resid @ resid / np.sum((y - y.mean()) ** 2)
    if g is None:
        F = (r2 / k) / ((1 - r2) / (T - 1 - k))
        g = max(F - 1.0, 0.0)
    return 0.5 * (T - k - 1) * math.log(1 + g) - 0.5 * (T + 1) * math.log(1 + g * (1 - r2))


def enumerate_posterior(search, p):
    models = [ModelIndicator(bits) for bits in itertools.product((0, 1), repeat=p)]
    logp = np.array([search.log_posterior(m) for m in models])
    w = np.exp(logp - logp.max())
    return {m.bits: v for m, v in zip(models, w / w.sum())}


# ------------------------------------------------------------ empirical-Bayes g

def test_empirical_bayes_g_values():
    assert empirical_bayes_g(0.0, 100, 3) == 0.0
    assert empirical_bayes_g(0.5, 101, 1) == pytest.approx(98.0, abs=1e-12)
    # F = (0.9/5)/(0.1/55) = 99 by hand
    assert empirical_bayes_g(0.9, 61, 5) == pytest.approx(98.0, rel=1e-12)
    with pytest.raises(DegreesOfFreedomError):
        empirical_bayes_g(0.3, 5, 4)


# ------------------------------------------------------------ Bayes factors

def test_null_model_and_zero_g_give_zero(small_regression):
    parts = log_bayes_factor(ModelIndicator.empty(5), small_regression)
    assert np.all(parts.per_column_log_bf == 0.0) and parts.total == 0.0
    parts = log_bayes_factor(ModelIndicator.from_bits("10110"), small_regression, g_policy=0.0)
    assert parts.total == 0.0


def test_bayes_factor_matches_univariate_oracle(small_regression):
    data = small_regression
    gamma = ModelIndicator.from_bits("10100")
    parts = log_bayes_factor(gamma, data)
    oracle = [univariate_log_bf(data.X[:, gamma.index], data.R[:, i]) for i in range(data.q)]
    np.testing.assert_allclose(parts.per_column_log_bf, oracle, rtol=0, atol=1e-10)
    assert parts.total == pytest.approx(sum(oracle), abs=1e-10)
    assert np.all(parts.g_values >= 0)
    fixed = log_bayes_factor(gamma, data, g_policy=7.5)
    oracle = [univariate_log_bf(data.X[:, gamma.index], data.R[:, i], g=7.5) for i in range(data.q)]
    np.testing.assert_allclose(fixed.per_column_log_bf, oracle, atol=1e-10)


def test_singular_design_names_columns():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 3))
    X[:, 2] = 2 * X[:, 0]
    data = make_aligned(X, rng.normal(size=30))
    with pytest.raises(SingularDesignError) as err:
        log_bayes_factor(ModelIndicator.from_bits("101"), data)
    assert err.value.columns == ["C2"]
    # the sweep skips the offending flip instead of failing
    search = StochasticSearch(data, ModelPrior(ssvs.UNIFORM))
    rng2 = np.random.default_rng(1)
    state = ModelIndicator.from_bits("100")
    for _ in range(20):
        state = search.sweep(state, rng2)
        assert state.bits != "101" and state.bits != "111"


# ------------------------------------------------------------ model priors

def test_model_prior_masses():
    p = 2
    masses = {bits: math.exp(log_model_prior(ModelIndicator(bits), ModelPrior(), p))
              for bits in itertools.product((0, 1), repeat=p)}
    assert masses[(0, 0)] == pytest.approx(1 / 3, abs=1e-15)
    assert masses[(1, 0)] == pytest.approx(1 / 6, abs=1e-15)
    assert sum(masses.values()) == pytest.approx(1.0, abs=1e-15)
    for kind in (ssvs.UNIFORM, ssvs.MULTIPLICITY):
        one = [math.exp(log_model_prior(ModelIndicator((b,)), ModelPrior(kind), 1)) for b in (0, 1)]
        assert one == pytest.approx([0.5, 0.5], abs=1e-15)
    uni = {log_model_prior(ModelIndicator(b), ModelPrior(ssvs.UNIFORM), 3)
           for b in itertools.product((0, 1), repeat=3)}
    assert len(uni) == 1
    with pytest.raises(ValueError):
        ModelPrior("flat")


# ------------------------------------------------------------ Gibbs sampler

def test_equal_bayes_factors_give_half(small_regression):
    search = StochasticSearch(small_regression, ModelPrior(ssvs.UNIFORM), g_policy=0.0)
    state = ModelIndicator.from_bits("01001")
    for j in range(5):
        assert search.inclusion_probability(state, j) == 0.5


def test_sweep_determinism(small_regression):
    def run(seed):
        rng = np.random.default_rng(seed)
        state = ModelIndicator.empty(5)
        out = []
        for _ in range(30):
            state = ssvs.gibbs_sweep(state, small_regression, ModelPrior(), rng)
            out.append(state.bits)
        return out
    assert run(4) == run(4)


def test_chain_matches_exhaustive_posterior_p3():
    rng = np.random.default_rng(5)
    T = 40
    X = rng.normal(size=(T, 3))
    R = 0.35 * X[:, [0]] + 0.2 * X[:, [1]] + rng.normal(size=(T, 2))
    data = make_aligned(X, R)
    chain = run_chain(data, ModelPrior(), n_sweeps=50_000, n_burn=500, thin=1, seed=3)
    exact = enumerate_posterior(StochasticSearch(data, ModelPrior()), 3)
    n = sum(chain.visits.values())
    tv = 0.5 * sum(abs(chain.visits.get(b, 0) / n - v) for b, v in exact.items())
    assert tv < 0.02


def test_exact_inclusion_is_label_invariant(small_regression):
    data = small_regression
    perm = np.array([3, 0, 4, 2, 1])
    permuted = make_aligned(data.X[:, perm], data.R)

    def exact_inclusion(d):
        post = enumerate_posterior(StochasticSearch(d, ModelPrior()), d.p)
        return np.array([sum(v for b, v in post.items() if b[j] == "1") for j in range(d.p)])
    np.testing.assert_allclose(exact_inclusion(permuted), exact_inclusion(data)[perm], atol=1e-12)


def test_chain_inclusion_is_label_invariant_in_distribution(small_regression):
    data = small_regression
    perm = np.array([3, 0, 4, 2, 1])
    permuted = make_aligned(data.X[:, perm], data.R)
    a = run_chain(data, ModelPrior(), 4000, 200, 1, seed=1).inclusion
    b = run_chain(permuted, ModelPrior(), 4000, 200, 1, seed=2).inclusion
    np.testing.assert_allclose(b, a[perm], atol=0.05)


def test_chain_config_errors(small_regression):
    with pytest.raises(ChainConfigError):
        run_chain(small_regression, n_sweeps=10, n_burn=10)
    with pytest.raises(ChainConfigError):
        run_chain(small_regression, n_sweeps=10, n_burn=0, thin=0)


def _noise_data():
    rng = np.random.default_rng(8)
    return make_aligned(rng.normal(size=(300, 10)), rng.normal(size=(300, 2)))


@pytest.mark.xfail(strict=True, reason=(
    "with empirical-Bayes g most noise models get g = 0 and Bayes factor 1, so the posterior stays "
    "at the multiplicity prior whose marginal inclusion is exactly 0.5; exact enumeration gives "
    "0.47-0.58 across seeds"))
def test_pure_noise_inclusion_below_half_empirical_bayes():
    chain = run_chain(_noise_data(), ModelPrior(), n_sweeps=3000, n_burn=500, thin=2, seed=0)
    assert np.all(chain.inclusion < 0.5)


def test_pure_noise_inclusion_below_half_fixed_g():
    data = _noise_data()
    chain = run_chain(data, ModelPrior(), n_sweeps=3000, n_burn=500, thin=2, seed=0, g_policy=float(data.T))
    assert np.all(chain.inclusion < 0.5)


def test_chain_determinism_and_structure(small_regression):
    a = run_chain(small_regression, n_sweeps=300, n_burn=100, thin=4, seed=9)
    b = run_chain(small_regression, n_sweeps=300, n_burn=100, thin=4, seed=9)
    assert len(a.draws) == 50
    for da, db in zip(a.draws, b.draws):
        assert da.gamma == db.gamma
        np.testing.assert_array_equal(da.beta, db.beta)
        excluded = np.array(da.gamma.gamma) == 0
        assert np.all(da.beta[excluded] == 0.0)
        assert np.all(da.sigma > 0)
        np.testing.assert_allclose(da.sigma**2, da.psi_resid, rtol=1e-14)
    inc = np.mean([d.gamma.gamma for d in a.draws], axis=0)
    np.testing.assert_array_equal(a.inclusion, inc)


# ------------------------------------------------------------ conditional draws

def _big_regression(seed=21, T=500):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(T, 3))
    beta = np.array([[0.8, -0.5], [0.0, 0.0], [0.3, 0.6]])
    R = X @ beta + rng.normal(size=(T, 2))
    return make_aligned(X, R)


def _ols(data, idx):
    Xc = data.X[:, idx] - data.X[:, idx].mean(axis=0)
    Rc = data.R - data.R.mean(axis=0)
    return np.linalg.lstsq(Xc, Rc, rcond=None)[0]


def test_posterior_mean_of_beta_matches_shrunk_ols():
    data = _big_regression()
    gamma = ModelIndicator.from_bits("101")
    g = log_bayes_factor(gamma, data).g_values
    rng = np.random.default_rng(0)
    betas = np.array([sample_beta_sigma(gamma, data, g, rng).beta for _ in range(4000)])
    mean = betas.mean(axis=0)[gamma.index]
    se = betas.std(axis=0, ddof=1)[gamma.index] / np.sqrt(len(betas))
    target = (g / (1 + g)) * _ols(data, gamma.index)
    assert np.all(np.abs(mean - target) < 3 * se)


def test_g_limits():
    data = _big_regression()
    gamma = ModelIndicator.from_bits("101")
    rng = np.random.default_rng(1)
    draw = sample_beta_sigma(gamma, data, 0.0, rng)
    assert np.all(draw.beta == 0.0)
    betas = np.array([sample_beta_sigma(gamma, data, 1e12, rng).beta for _ in range(2000)])
    np.testing.assert_allclose(betas.mean(axis=0)[gamma.index], _ols(data, gamma.index), atol=0.01)


def test_chain_round_trip(tmp_path, small_regression):
    chain = run_chain(small_regression, n_sweeps=60, n_burn=10, thin=5, seed=2)
    ssvs.write_chain(tmp_path / "c.jsonl", chain)
    back = ssvs.read_chain(tmp_path / "c.jsonl")
    assert back.candidate_labels == chain.candidate_labels
    assert back.target_labels == chain.target_labels
    for a, b in zip(chain.draws, back.draws):
        assert a.gamma == b.gamma
        np.testing.assert_array_equal(a.beta, b.beta)
        np.testing.assert_array_equal(a.sigma, b.sigma)
    np.testing.assert_array_equal(back.inclusion, chain.inclusion)
    ssvs.write_inclusion_csv(tmp_path / "inc.csv", chain.candidate_labels, chain.inclusion)
    lines = (tmp_path / "inc.csv").read_text().splitlines()
    assert lines[0] == "ticker,probability" and len(lines) == 6

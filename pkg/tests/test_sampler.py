import math

import numpy as np
import pytest

from voisynth import hiv_model as hm
from voisynth import sampler as sp
from voisynth.samples import SampleTable


def test_config_validation():
    with pytest.raises(ValueError):
        sp.ChainConfig(iterations=0)
    with pytest.raises(ValueError):
        sp.ChainConfig(thin=0)
    with pytest.raises(ValueError):
        sp.ChainConfig(target_accept=1.0)
    cfg = sp.ChainConfig.for_total_draws(150_000)
    assert cfg.chains * cfg.iterations == 150_000


def test_rhat_constant_identical_chains_is_one():
    assert sp.split_rhat(np.full((4, 100), 3.0)) == 1.0


def test_rhat_identical_chains_standard_formula():
    x = np.random.default_rng(0).normal(size=1000)
    chains = np.tile(x, (4, 1))
    # with no between-chain spread the (n-1)/n factor leaves it just below 1
    assert sp.split_rhat(chains) == pytest.approx(1.0, abs=0.01)


def test_rhat_separated_chains():
    rng = np.random.default_rng(1)
    chains = np.stack([rng.normal(0, 1, 1000), rng.normal(10, 1, 1000)])
    assert sp.split_rhat(chains) > 2.0


def test_rhat_iid_chains():
    chains = np.random.default_rng(2).normal(size=(4, 10_000))
    assert sp.split_rhat(chains) < 1.01


def test_ess_iid_and_ar1():
    rng = np.random.default_rng(3)
    iid = rng.normal(size=(4, 5000))
    assert sp.effective_sample_size(iid) == pytest.approx(20_000, rel=0.1)
    phi = 0.9
    e = rng.normal(size=(4, 20_000))
    ar = np.empty_like(e)
    ar[:, 0] = e[:, 0] / math.sqrt(1 - phi ** 2)
    for t in range(1, e.shape[1]):
        ar[:, t] = phi * ar[:, t - 1] + e[:, t]
    expected = 80_000 * (1 - phi) / (1 + phi)
    assert sp.effective_sample_size(ar) == pytest.approx(expected, rel=0.15)


def test_single_chain_diagnostics_warn():
    t = SampleTable(("x",), np.random.default_rng(4).normal(size=(100, 1)), {"chains": 1})
    with pytest.warns(UserWarning, match="single chain"):
        d = sp.diagnostics(t)
    assert d.rhat == {} and "x" in d.ess


def _conj(seed, threads=1, iterations=4000):
    cfg = sp.ChainConfig(chains=4, iterations=iterations, burnin=2000, seed=seed, threads=threads)
    return sp.run_target(hm.gum_anon_submodel_logp, np.array([4.0, 85.0]),
                         np.zeros((4, 1)), cfg, ["z"])


def test_same_seed_is_bit_identical_across_thread_counts():
    a, _ = _conj(5)
    b, _ = _conj(5, threads=4)
    c, _ = _conj(6)
    assert np.array_equal(a.draws, b.draws)
    assert not np.array_equal(a.draws, c.draws)


def test_conjugate_submodel_posterior():
    table, diag = _conj(7, iterations=20_000)
    p = 1.0 / (1.0 + np.exp(-table["z"]))
    se = sp.mc_standard_error(p.reshape(4, -1))
    assert abs(p.mean() - 5 / 87) < 3 * se
    # posterior variance of Beta(5, 82)
    assert p.var() == pytest.approx(5 * 82 / (87 ** 2 * 88), rel=0.05)
    assert diag.max_rhat() < 1.01


def test_hiv_table_has_every_column_and_meta(small_posterior):
    table, diag = small_posterior
    assert set(hm.free_founders("base")) | set(hm.OUTPUTS) == set(table.names)
    assert table.K == 6000
    assert table.meta["chains"] == 2 and table.meta["scenario"] == "base"
    assert "y_pop" in table.meta["synthetic_fields"]
    assert set(diag.rhat) == set(table.names)


def test_hiv_draws_respect_support(small_posterior):
    table, _ = small_posterior
    rho = table.columns(["rho_G", "rho_N", "rho_P"])
    assert np.all(rho > 0) and np.all(rho.sum(axis=1) < 1)
    for name, (lo, hi) in hm.UNIFORM_BOUNDS.items():
        if name in table:
            assert np.all((table[name] > lo) & (table[name] < hi)), name
    for g in ("G", "N", "P"):
        assert np.all(table[f"delta_{g}"] < 1 - table[f"pibar_{g}"])
        assert np.all((table[f"pi_{g}"] >= 0) & (table[f"pi_{g}"] <= 1))
        assert np.all(table[f"mu_U{g}"] >= 0)
    assert np.all(table["p_H"] <= 1) and np.all(table["pi_GA"] <= 1)


def test_init_failure_raises(hiv_data, monkeypatch):
    monkeypatch.setattr(hm, "log_posterior", lambda *a, **k: -math.inf)
    with pytest.raises(sp.SamplerError, match="initialisation attempts"):
        sp.run_chains(hiv_data, "base", sp.ChainConfig(chains=1, iterations=10, burnin=10))


@pytest.mark.slow
def test_prior_only_bounded_founder_means(hiv_data):
    cfg = sp.ChainConfig(chains=4, iterations=50_000, burnin=5000, seed=3)
    table, _ = sp.run_chains(hiv_data, "base", cfg, terms=(), outputs=())
    for name, (lo, hi) in hm.UNIFORM_BOUNDS.items():
        if name not in table:
            continue
        x = table[name].reshape(4, -1)
        se = sp.mc_standard_error(x)
        assert abs(x.mean() - (lo + hi) / 2) < 3 * se, name
    # each of the four Dirichlet(1, 1, 1, 1) components has mean 1/4
    for name in ("rho_G", "rho_N", "rho_P"):
        x = table[name].reshape(4, -1)
        assert abs(x.mean() - 0.25) < 3 * sp.mc_standard_error(x), name

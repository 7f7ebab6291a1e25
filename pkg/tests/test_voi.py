import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from voisynth import voi
from voisynth.designs import DesignSpec
from voisynth.samples import SampleTable
from voisynth.voi import LossSpec


@pytest.fixture(scope="module")
def additive():
    rng = np.random.default_rng(11)
    K = 100_000
    a, b = rng.normal(size=K), rng.normal(size=K)
    return SampleTable.from_columns({"a": a, "b": b, "y": a + b, "noise": rng.normal(size=K)})


def test_loss_spec_validation():
    with pytest.raises(voi.VoiError):
        LossSpec("minimax", ("y",))
    with pytest.raises(voi.VoiError):
        LossSpec.weighted(["a", "b"], [1.0])
    with pytest.raises(voi.VoiError):
        LossSpec("scalar_quadratic", ("a", "b"))


def test_expected_loss_constant_columns():
    t = SampleTable.from_columns({"a": [2.0] * 10, "b": [5.0] * 10})
    for loss in (LossSpec.scalar("a"), LossSpec.trace(["a", "b"]),
                 LossSpec.determinant(["a", "b"]), LossSpec.weighted(["a", "b"], [1, 2])):
        assert voi.expected_loss(t, loss) == 0.0


def test_expected_loss_diagonal():
    # columns with sample variances exactly 4 and 9 and zero sample covariance
    a = np.array([2.0, -2.0, 2.0, -2.0]) * math.sqrt(3 / 4)
    b = np.array([3.0, 3.0, -3.0, -3.0]) * math.sqrt(3 / 4)
    t = SampleTable.from_columns({"a": a, "b": b})
    assert voi.expected_loss(t, LossSpec.trace(["a", "b"])) == pytest.approx(13.0)
    assert voi.expected_loss(t, LossSpec.determinant(["a", "b"])) == pytest.approx(36.0)
    assert voi.expected_loss(t, LossSpec.determinant(["a", "b"], standardized=True)) == \
        pytest.approx(6.0)
    assert voi.expected_loss(t, LossSpec.weighted(["a", "b"], [1.0, 2.0])) == pytest.approx(40.0)


def test_expected_loss_finite_action():
    t = SampleTable.from_columns({"d1": [3.0, 3.4], "d2": [2.6, 3.0], "d3": [4.0, 4.0]})
    assert voi.expected_loss(t, LossSpec.finite_action(["d1", "d2", "d3"])) == pytest.approx(2.8)


def test_expected_loss_needs_two_draws():
    with pytest.raises(voi.VoiError):
        voi.expected_loss(SampleTable.from_columns({"a": [1.0]}), LossSpec.scalar("a"))


def test_non_psd_covariance_is_floored():
    with pytest.warns(UserWarning, match="positive semi-definite"):
        d = voi._psd_det(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert d == 0.0


def test_evpi_quadratic(additive):
    e = voi.evpi(additive, LossSpec.scalar("y"))
    assert e.value == pytest.approx(additive["y"].var(ddof=1))
    assert e.proportion == 1.0


def test_evpi_finite_action_identical_columns():
    x = np.random.default_rng(0).normal(size=1000)
    t = SampleTable.from_columns({"d1": x, "d2": x})
    assert voi.evpi(t, LossSpec.finite_action(["d1", "d2"])).value == 0.0


def test_evpi_finite_action_normal_oracle():
    rng = np.random.default_rng(1)
    a1 = rng.normal(size=10**6)
    t = SampleTable.from_columns({"d1": a1, "d2": np.full(10**6, 0.3)})
    # E min(Z, c) = c - E(c - Z)+ = c - (c Phi(c) + phi(c)); min of the means is 0
    c = 0.3
    e_min = c - (c * stats.norm.cdf(c) + stats.norm.pdf(c))
    expected = 0.0 - e_min
    got = voi.evpi(t, LossSpec.finite_action(["d1", "d2"])).value
    assert got == pytest.approx(expected, abs=4e-3)


def test_finite_action_evpi_shift_invariance():
    rng = np.random.default_rng(2)
    cols = {f"d{i}": rng.normal(i * 0.1, 1, 5000) for i in range(3)}
    t = SampleTable.from_columns(cols)
    shifted = SampleTable.from_columns({k: v + 7.0 for k, v in cols.items()})
    L = LossSpec.finite_action(list(cols))
    a, b = voi.evpi(t, L).value, voi.evpi(shifted, L).value
    assert a == pytest.approx(b, abs=1e-12)


def test_evppi_self_independent_and_additive(additive):
    L = LossSpec.scalar("y")
    assert 0.95 <= voi.evppi(additive, "y", L).proportion <= 1.0
    assert voi.evppi(additive, "noise", L).proportion <= 0.02
    assert voi.evppi(additive, "a", L).proportion == pytest.approx(0.5, abs=0.02)


def test_evppi_estimators_agree(additive):
    e = voi.evppi(additive, "a", LossSpec.scalar("y"))
    assert e.meta["value_fitted_var"] == pytest.approx(e.meta["value_resid"], rel=1e-8)
    assert e.meta["estimator_discrepancy"] < voi.DECOMPOSITION_TOL
    assert e.se is not None and 0 < e.se < 0.01 * e.value


def test_evppi_constant_input_warns():
    rng = np.random.default_rng(3)
    t = SampleTable.from_columns({"c": np.ones(1000), "y": rng.normal(size=1000)})
    with pytest.warns(UserWarning, match="constant"):
        e = voi.evppi(t, "c", LossSpec.scalar("y"))
    assert e.value == 0.0


def test_evppi_multi_output_kinds(additive):
    t = additive
    tr = voi.evppi(t, "a", LossSpec.trace(["y", "b"]), se_draws=20)
    # learning a removes var(a) from y and nothing from b
    assert tr.value == pytest.approx(1.0, abs=0.03)
    det = voi.evppi(t, "a", LossSpec.determinant(["y", "b"]), se_draws=20)
    # cov(y, b | a) = [[1, 1], [1, 1]] is singular
    assert det.value == pytest.approx(det.baseline, rel=0.02)
    w = voi.evppi(t, "a", LossSpec.weighted(["y", "b"], [2.0, 0.0]), se_draws=20)
    assert w.value == pytest.approx(4.0, rel=0.03)


def test_evppi_finite_action():
    rng = np.random.default_rng(4)
    phi = rng.normal(size=20_000)
    t = SampleTable.from_columns({"phi": phi, "d1": phi + rng.normal(0, 0.1, 20_000),
                                  "d2": np.zeros(20_000)})
    e = voi.evppi(t, "phi", LossSpec.finite_action(["d1", "d2"]), se_draws=20)
    # both actions have mean 0; knowing phi gains E[-min(phi, 0)] = pdf(0)
    assert e.value == pytest.approx(stats.norm.pdf(0), abs=0.02)
    assert e.value <= voi.evpi(t, LossSpec.finite_action(["d1", "d2"])).value + 3 * e.se


def test_trace_is_sum_of_scalars(additive):
    tr = voi.expected_loss(additive, LossSpec.trace(["a", "b", "y"]))
    parts = sum(voi.expected_loss(additive, LossSpec.scalar(c)) for c in ("a", "b", "y"))
    assert tr == pytest.approx(parts, rel=1e-14)


def test_determinant_of_independent_outputs():
    rng = np.random.default_rng(5)
    t = SampleTable.from_columns({"u": rng.normal(0, 2, 10**5), "v": rng.normal(0, 3, 10**5)})
    d = voi.expected_loss(t, LossSpec.determinant(["u", "v"]))
    assert d == pytest.approx(t["u"].var(ddof=1) * t["v"].var(ddof=1), rel=0.02)


def test_evsi_independent_and_near_perfect():
    rng = np.random.default_rng(6)
    y = rng.normal(size=20_000)
    t = SampleTable.from_columns({"y": y, "T0": rng.normal(size=20_000),
                                  "T1": y + rng.normal(0, 1e-3, 20_000)})
    assert abs(voi.evsi(t, "T0", LossSpec.scalar("y")).proportion) < 0.01
    assert voi.evsi(t, "T1", LossSpec.scalar("y")).proportion > 0.99


def _conjugate_evsi_exact(n):
    y = np.arange(n + 1)
    w = stats.betabinom.pmf(y, n, 1, 1)
    a, b = 1 + y, 1 + n - y
    post_var = a * b / ((a + b) ** 2 * (a + b + 1))
    return 1 / 12 - np.sum(w * post_var)


@pytest.mark.parametrize("n", [10, 20, 100])
def test_conjugate_evsi(n):
    p = np.random.default_rng(7).uniform(size=50_000)
    t = SampleTable.from_columns({"p": p})
    (pt,) = voi.evsi_curve(DesignSpec("binomial", n, 3, "p"), [n], t, LossSpec.scalar("p"))
    assert pt.value == pytest.approx(_conjugate_evsi_exact(n), rel=0.05)


@pytest.fixture(scope="module")
def beta_table():
    rng = np.random.default_rng(8)
    p = rng.beta(2, 30, 30_000)
    return SampleTable.from_columns({"pi_GA": p, "alpha": 1000 * p + rng.normal(0, 5, 30_000)})


def test_evsi_curve_properties(beta_table):
    L = LossSpec.scalar("alpha")
    grid = [0, 10, 100, 1000, 10**4, 10**6]
    pts = voi.evsi_curve(DesignSpec("gumanon", 0, 1), grid, beta_table, L)
    assert pts[0].value == 0.0
    for p0, p1 in zip(pts, pts[1:]):
        assert p1.value >= p0.value - 2 * voi.pooled_se(p0.estimate.se, p1.estimate.se)
        assert p1.remaining_variance == pytest.approx(p1.estimate.baseline - p1.value)
    limit = voi.evppi(beta_table, "pi_GA", L)
    assert pts[-1].value == pytest.approx(limit.value, rel=0.05)
    assert pts[-1].value <= limit.value + 3 * voi.pooled_se(limit.se, pts[-1].estimate.se)


def test_evsi_curve_grid_must_increase(beta_table):
    with pytest.raises(voi.VoiError):
        voi.evsi_curve(DesignSpec("gumanon", 0), [10, 10], beta_table, LossSpec.scalar("alpha"))


def test_evsi_curve_records_failures(beta_table):
    pts = voi.evsi_curve(DesignSpec("gmshs", 0), [0, 10], beta_table, LossSpec.scalar("alpha"))
    assert len(pts) == 2
    assert all(p.estimate is None and "p_GM_G" in p.error for p in pts)


def test_enbs_examples():
    curve = [(n, 10 * n / (n + 100)) for n in (10, 50, 100, 200, 500)]
    r = voi.enbs(curve, 0.0, 0.02)
    assert r.optimal_n == 100 and not r.do_not_sample
    assert voi.enbs(curve).optimal_n == 500
    r = voi.enbs(curve, 0.0, 10.0)
    assert r.optimal_n == 0 and r.do_not_sample


def test_enbs_ties_take_smallest_n():
    r = voi.enbs([(10, 5.0), (20, 5.0), (30, 4.0)])
    assert r.optimal_n == 10


def test_grid_shape_and_range(additive):
    g = voi.evppi_grid(additive, ["a", "b"], ["y", "a", "b"], se_draws=10)
    P = g.proportions()
    assert P.shape == (2, 3)
    assert np.all(P >= -0.02) and np.all(P <= 1.02)
    assert g.row_argmax("a") == "a"


def test_grid_self_diagonal(additive):
    g = voi.evppi_grid(additive, ["a", "b"], ["a", "b"], se_draws=0)
    assert np.all(np.diag(g.proportions()) > 0.99)


def test_grid_marks_failed_cells(additive, tmp_path):
    g = voi.evppi_grid(additive, ["a", "missing"], ["y"], se_draws=0, threads=2)
    assert g.cells[1][0] is None and g.errors[1][0]
    voi.write_grid_csv(g, tmp_path / "g.csv", "hash")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "# hash" and lines[1] == "input_group,y"
    assert lines[3] == "missing,FAILED"


def test_grid_threads_do_not_change_results(additive):
    a = voi.evppi_grid(additive, ["a", "b"], ["y"], se_draws=10, seed=3, threads=1)
    b = voi.evppi_grid(additive, ["a", "b"], ["y"], se_draws=10, seed=3, threads=2)
    assert [c.se for c in a.cells[0]] == [c.se for c in b.cells[0]]
    assert np.array_equal(a.proportions(), b.proportions())


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10**6))
def test_bounds_on_random_models(seed):
    rng = np.random.default_rng(seed)
    K = 4000
    phi = rng.normal(size=(K, 2))
    w = rng.normal(size=3)
    y = w[0] * phi[:, 0] + w[1] * np.sin(phi[:, 1]) + w[2] * phi[:, 0] * phi[:, 1] \
        + rng.normal(0, 0.5, K)
    p = 1 / (1 + np.exp(-phi[:, 0]))
    t = SampleTable.from_columns({"phi1": phi[:, 0], "phi2": phi[:, 1], "p": p, "y": y})
    L = LossSpec.scalar("y")
    total = voi.evpi(t, L)
    e = voi.evppi(t, "phi1", L, se_draws=50)
    assert -3 * e.se <= e.value <= total.value + 3 * e.se
    s = voi.evsi_curve(DesignSpec("binomial", 0, seed, "p"), [50], t, L, se_draws=50)[0]
    assert s.value <= e.value + 3 * voi.pooled_se(e.se, s.estimate.se)

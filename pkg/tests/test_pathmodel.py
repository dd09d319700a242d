import json
import math

import numpy as np
import pytest

from leisurespa import pathmodel as pm
from leisurespa.errors import CyclicGraph, MissingPath, ModelSyntaxError, SingularDesign
from leisurespa.synth import PathTruth, simulate_path_data

MODEL = """
# attributes, mode, outcome
role Z age female
role M car
vars A B H1
exposure A
outcome H1
weight w
Z -> M
Z -> A
M -> A
A -> B
A -> H1
B -> H1
"""


def chain_data(n, seed, direct=0.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    y = 0.6 * x + rng.normal(size=n)
    z = 0.5 * y + direct * x + rng.normal(size=n)
    return {"X": x, "Y": y, "Z": z}


def dag(parents, exposure=None, outcome=None):
    nodes = list(parents)
    return pm.PathDag(nodes, {v: list(ps) for v, ps in parents.items()}, {}, exposure, outcome)


SATURATED = dag({"X": [], "Y": ["X"], "Z": ["X", "Y"], "W": ["X", "Y", "Z"]})
CHAIN = dag({"X": [], "Y": ["X"], "Z": ["Y"]})


def whitened(n, R, rng):
    """Sample with weighted (unit weights, divide-by-n) covariance exactly ``R``."""
    X = rng.normal(size=(n, R.shape[0]))
    X -= X.mean(axis=0)
    L = np.linalg.cholesky(X.T @ X / n)
    X = X @ np.linalg.inv(L).T
    return X @ np.linalg.cholesky(R).T


# -- model text -------------------------------------------------------------------------


def test_parse_model_expands_roles():
    d = pm.parse_model(MODEL)
    assert d.nodes == ["age", "female", "car", "A", "B", "H1"]
    assert d.parents["car"] == ["age", "female"]
    assert d.parents["A"] == ["age", "female", "car"]
    assert (d.exposure, d.outcome, d.weight) == ("A", "H1", "w")
    assert d.exogenous == ["age", "female"]
    assert pm.parse_model(d.to_text()).parents == d.parents


def test_parse_errors():
    with pytest.raises(ModelSyntaxError):
        pm.parse_model("vars X Y\nX => Y\n")
    with pytest.raises(ModelSyntaxError):
        pm.parse_model("vars X\nX -> Q\n")
    with pytest.raises(CyclicGraph):
        pm.parse_model("vars X Y Z\nX -> Y\nY -> Z\nZ -> X\n")
    with pytest.raises(CyclicGraph):
        pm.parse_model("vars X\nX -> X\n")


def test_fig6_structure():
    d = pm.fig6_dag(["z1", "z2"], ["m1"])
    assert d.parents["B"] == ["A", "z1", "z2", "m1"]
    assert set(d.parents["H1"]) == {"A", "B", "m1", "z1", "z2"}
    assert d.topological_order()[-3:] == ["A", "B", "H1"]


# -- d-separation ----------------------------------------------------------------------


def test_textbook_d_separation():
    collider = dag({"X": [], "Y": [], "C": ["X", "Y"], "D": ["C"]})
    fork = dag({"F": [], "X": ["F"], "Y": ["F"]})
    assert pm.d_separated(CHAIN, "X", "Z", {"Y"})
    assert not pm.d_separated(CHAIN, "X", "Z", set())
    assert pm.d_separated(collider, "X", "Y", set())
    assert not pm.d_separated(collider, "X", "Y", {"C"})
    assert not pm.d_separated(collider, "X", "Y", {"D"})
    assert pm.d_separated(fork, "X", "Y", {"F"})
    assert not pm.d_separated(fork, "X", "Y", set())


def test_saturated_dag_has_no_implications():
    data = chain_data(500, 0)
    data["W"] = data["X"] + np.random.default_rng(1).normal(size=500)
    assert pm.check_dag(SATURATED, data) == []


def test_chain_implication_found_and_not_rejected():
    (t,) = pm.check_dag(CHAIN, chain_data(2000, 3))
    assert (t.x, t.y, t.given) == ("X", "Z", ("Y",))
    assert t.df == 2000 - 1 - 2
    assert abs(t.partial_r) < 0.06


def test_violated_implication_has_power():
    rejected = sum(pm.check_dag(CHAIN, chain_data(2000, s, direct=0.1))[0].p_value < 0.05 for s in range(100))
    assert rejected / 100 > 0.9


def test_partial_correlation_oracle():
    data = chain_data(1000, 4, direct=0.3)
    w = np.random.default_rng(5).uniform(0.5, 2, 1000)
    r = pm.partial_correlation(data["X"], data["Z"], data["Y"][:, None], w / w.mean())
    # oracle: invert the weighted correlation matrix
    C = np.cov(np.vstack([data["X"], data["Z"], data["Y"]]), aweights=w)
    P = np.linalg.inv(C)
    assert r == pytest.approx(-P[0, 1] / math.sqrt(P[0, 0] * P[1, 1]), abs=1e-10)


# -- collinearity ------------------------------------------------------------------------


def test_vif_collinear_pair_loses_one():
    rng = np.random.default_rng(0)
    x = rng.normal(size=300)
    rep = pm.vif_prune(["a", "b", "c"], {"a": x, "b": 2 * x, "c": rng.normal(size=300)})
    assert rep.retained == ["a", "c"]
    assert rep.dropped[0][0] == "b" and math.isinf(rep.dropped[0][2])


def test_vif_orthogonal_columns():
    X = whitened(400, np.eye(3), np.random.default_rng(1))
    v = pm.vif_values(X, np.ones(400))
    assert np.allclose(v, 1.0)
    rep = pm.vif_prune(["a", "b", "c"], dict(zip("abc", X.T)))
    assert rep.dropped == []


def test_engineered_vif_of_eight_is_dropped():
    r = math.sqrt(7) / 4
    R = np.array([[1, r, r], [r, 1, 0], [r, 0, 1]])
    assert np.diag(np.linalg.inv(R)) == pytest.approx([8.0, 4.5, 4.5])
    X = whitened(1000, R, np.random.default_rng(2))
    data = {"age": 40 + 12 * X[:, 0], "x1": X[:, 1], "x2": X[:, 2]}
    assert pm.vif_values(np.column_stack(list(data.values())), np.ones(1000)) == pytest.approx([8.0, 4.5, 4.5])
    rep = pm.vif_prune(["x1", "age", "x2"], data, threshold=7.0)
    assert rep.retained == ["x1", "x2"]
    assert rep.dropped == [("age", "vif", pytest.approx(8.0))]
    assert pm.vif_prune(["x1", "age", "x2"], data, threshold=8.5).dropped == []


def test_near_constant_dummy_dropped():
    rng = np.random.default_rng(3)
    rare = np.zeros(1000)
    rare[:2] = 1
    rep = pm.vif_prune(["a", "rare"], {"a": rng.normal(size=1000), "rare": rare})
    assert rep.retained == ["a"]
    assert rep.dropped[0][:2] == ("rare", "near-constant")
    with pytest.raises(ValueError):
        pm.vif_prune(["a"], {"a": rare})


# -- estimation ------------------------------------------------------------------------


def test_one_predictor_coefficient_is_weighted_correlation():
    rng = np.random.default_rng(6)
    x = rng.gamma(2.0, 3.0, 800)
    y = 0.4 * x + rng.normal(size=800)
    w = rng.uniform(0.2, 3.0, 800)
    fit = pm.fit_paths(dag({"x": [], "y": ["x"]}), {"x": x, "y": y}, w)
    C = np.cov(x, y, aweights=w)
    assert fit.coefficient("x", "y").std == pytest.approx(C[0, 1] / math.sqrt(C[0, 0] * C[1, 1]), abs=1e-12)
    assert fit.equations["y"].r2 == pytest.approx(fit.coefficient("x", "y").std ** 2, abs=1e-12)


def test_saturated_model_fits_perfectly():
    data = chain_data(700, 7, direct=0.2)
    data["W"] = data["Z"] - data["X"] + np.random.default_rng(8).normal(size=700)
    fit = pm.fit_paths(SATURATED, data, np.random.default_rng(9).uniform(0.5, 2, 700))
    assert fit.fit["df"] == 0
    assert fit.fit["srmr"] == pytest.approx(0.0, abs=1e-9)
    assert fit.fit["chi2"] == pytest.approx(0.0, abs=1e-8)
    assert np.allclose(fit.implied_cov, fit.sample_cov, atol=1e-12)


def test_chain_fit_indices():
    fit = pm.fit_paths(CHAIN, chain_data(3000, 10))
    f = fit.fit
    assert f["df"] == 1
    assert f["cfi"] > 0.99 and f["srmr"] < 0.02
    lo, hi = f["rmsea_ci90"]
    assert lo <= f["rmsea"] <= hi
    bad = pm.fit_paths(CHAIN, chain_data(3000, 10, direct=0.5)).fit
    assert bad["chi2"] > 100 and bad["rmsea"] > 0.1 and bad["cfi"] < f["cfi"]


def test_rmsea_ci_brackets_noncentrality():
    from scipy import stats

    lo, hi = pm.rmsea_ci(30.0, 5, 1000)
    # chi2 = 30 sits at the 95th / 5th percentile of the bounding noncentral laws
    lam_lo, lam_hi = lo * lo * 5 * 1000, hi * hi * 5 * 1000
    assert stats.ncx2.cdf(30.0, 5, lam_lo) == pytest.approx(0.95, abs=1e-6)
    assert stats.ncx2.cdf(30.0, 5, lam_hi) == pytest.approx(0.05, abs=1e-6)


def test_scale_and_weight_invariance():
    truth = PathTruth()
    data, w = simulate_path_data(1500, 2, truth)
    d = truth.dag()
    base = pm.fit_paths(d, data, w)
    scaled = dict(data)
    scaled["age"] = data["age"] * 12.5
    scaled["B"] = data["B"] * 0.01
    for other in (pm.fit_paths(d, scaled, w), pm.fit_paths(d, data, w * 37.0),
                  pm.fit_paths(d, scaled, w, standardize="none")):
        for k, v in base.std_coefficients.items():
            assert other.std_coefficients[k] == pytest.approx(v, abs=1e-9)
        for t, eq in base.equations.items():
            assert other.equations[t].r2 == pytest.approx(eq.r2, abs=1e-9)
        assert other.fit["srmr"] == pytest.approx(base.fit["srmr"], abs=1e-9)
        a = pm.decompose_effects(base)
        b = pm.decompose_effects(other)
        assert (b.direct, b.indirect, b.total) == pytest.approx((a.direct, a.indirect, a.total), abs=1e-9)
        assert b.se_total == pytest.approx(a.se_total, abs=1e-9)


def test_singular_design_names_equation():
    data = chain_data(200, 1)
    data["X2"] = 3 * data["X"]
    with pytest.raises(SingularDesign) as exc:
        pm.fit_paths(dag({"X": [], "X2": [], "Y": ["X", "X2"]}), data)
    assert exc.value.equation == "Y"


def test_weighted_regression_matches_lstsq():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(300, 2))
    y = 1 + X @ [0.5, -0.2] + rng.normal(size=300)
    w = rng.uniform(0.5, 2, 300)
    rows = pm.weighted_regression(y, X, w, ["a", "b"])
    sw = np.sqrt(w)
    D = np.column_stack([np.ones(300), X])
    ref = np.linalg.lstsq(D * sw[:, None], y * sw, rcond=None)[0]
    assert [r[1] for r in rows] == pytest.approx(list(ref), abs=1e-10)
    assert [r[0] for r in rows] == ["intercept", "a", "b"]


# -- decomposition ----------------------------------------------------------------------


def test_reported_table_arithmetic():
    coefs = {("A", "H1"): 0.13, ("A", "B"): -0.37, ("B", "H1"): 0.23}
    e = pm.decompose_effects(coefs, "A", "H1")
    assert e.direct == 0.13
    assert e.indirect == pytest.approx(-0.0851, abs=1e-12)
    assert e.total == pytest.approx(0.0449, abs=1e-12)


def test_zero_mediator_path():
    e = pm.decompose_effects({("A", "H1"): 0.13, ("A", "B"): 0.0, ("B", "H1"): 0.23}, "A", "H1")
    assert e.indirect == 0.0 and e.total == e.direct


def test_generic_paths_match_matrix_oracle():
    rng = np.random.default_rng(12)
    names = ["A", "M1", "M2", "M3", "H"]
    coefs = {}
    for i in range(5):
        for j in range(i + 1, 5):
            if rng.random() < 0.8 or (i, j) == (0, 4):
                coefs[(names[i], names[j])] = float(rng.normal(0, 0.4))
    e = pm.decompose_effects(coefs, "A", "H")
    B = np.zeros((5, 5))
    for (a, b), v in coefs.items():
        B[names.index(b), names.index(a)] = v
    total = np.linalg.inv(np.eye(5) - B)[4, 0]
    assert e.total == pytest.approx(total, abs=1e-12)
    assert e.direct + sum(p for path, p in e.paths if len(path) > 2) == pytest.approx(e.total, abs=1e-12)
    assert len(e.paths) >= 3


def test_delta_method_matches_sobel():
    keys = [("A", "B"), ("B", "H1"), ("A", "H1")]
    V = np.diag([0.02 ** 2, 0.03 ** 2, 0.025 ** 2])
    coefs = {("A", "H1"): 0.13, ("A", "B"): -0.37, ("B", "H1"): 0.23}
    e = pm.decompose_effects(coefs, "A", "H1", (keys, V))
    sobel = math.sqrt(0.23 ** 2 * 0.02 ** 2 + 0.37 ** 2 * 0.03 ** 2)
    assert e.se_indirect == pytest.approx(sobel, abs=1e-12)
    assert e.se_direct == pytest.approx(0.025, abs=1e-12)
    assert e.se_total == pytest.approx(math.sqrt(sobel ** 2 + 0.025 ** 2), abs=1e-12)


def test_missing_path():
    with pytest.raises(MissingPath):
        pm.decompose_effects({("B", "H1"): 0.2}, "A", "H1")
    with pytest.raises(MissingPath):
        pm.decompose_effects({("A", "H1"): 0.2}, None, "H1")


def test_report_round_trip(tmp_path):
    truth = PathTruth()
    data, w = simulate_path_data(800, 4, truth)
    fit = pm.fit_paths(truth.dag(), data, w)
    eff = pm.decompose_effects(fit)
    pm.dump_report(fit, tmp_path / "r.json", tmp_path / "r.txt", [eff])
    report = json.loads((tmp_path / "r.json").read_text())
    coefs, cov = pm.coefficients_from_report(report)
    again = pm.decompose_effects(coefs, "A", "H1", cov)
    assert (again.direct, again.indirect, again.total, again.se_total) == pytest.approx(
        (eff.direct, eff.indirect, eff.total, eff.se_total), abs=1e-12)
    assert pm.parse_model(report["model"]).parents == truth.dag().parents
    assert "Effects of A on H1" in (tmp_path / "r.txt").read_text()

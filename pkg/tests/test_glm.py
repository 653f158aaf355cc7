import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from txrecords.glm import (ConvergenceError, GlmFit, Term, aic_penalized, allowed_moves,
                           build_design, chi_sq_cdf, chi_sq_quantile, fit_logistic,
                           orthogonal_poly, predict_prob, stepwise_select)
from txrecords.oracles import oracle_best_subset, oracle_newton_logistic

scipy_stats = pytest.importorskip("scipy.stats")


# --------------------------------------------------------------------------- chi-square

@pytest.mark.parametrize("p,expected", [(0.999, 10.8276), (0.95, 3.8415), (0.5, 0.4549)])
def test_chi_sq_examples(p, expected):
    assert chi_sq_quantile(p, 1) == pytest.approx(expected, abs=1e-4)


@pytest.mark.parametrize("df", [1, 2, 5])
@pytest.mark.parametrize("p", [0.01, 0.3, 0.9, 0.9999])
def test_chi_sq_against_scipy(p, df):
    assert chi_sq_quantile(p, df) == pytest.approx(scipy_stats.chi2.ppf(p, df), rel=1e-8)
    x = scipy_stats.chi2.ppf(p, df)
    assert chi_sq_cdf(x, df) == pytest.approx(p, abs=1e-10)


# --------------------------------------------------------------------------- terms

def test_poly_example():
    b = orthogonal_poly([1.0, 2.0, 3.0])
    P = b.transform([1.0, 2.0, 3.0])
    np.testing.assert_allclose(P[:, 0], [-0.7071068, 0, 0.7071068], atol=1e-7)
    np.testing.assert_allclose(P[:, 1], [0.4082483, -0.8164966, 0.4082483], atol=1e-7)
    with pytest.raises(ValueError):
        orthogonal_poly([1.0, 1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e5, 1e5), min_size=3, max_size=50, unique=True))
def test_poly_orthonormal(x):
    x = np.array(x)
    try:
        P = orthogonal_poly(x).transform(x)
    except ValueError:
        return  # numerically two-point data
    G = np.column_stack([np.ones(len(x)) / math.sqrt(len(x)), P])
    np.testing.assert_allclose(G.T @ G, np.eye(3), atol=1e-8)


def test_term_names_round_trip():
    for t in [Term("g700."), Term("g700..lag1"), Term("g300.35N.5E", poly=True),
              Term("g700.", attr="LON"), Term("g700.45N.5E", True, "LAT"), Term("LAT")]:
        assert Term.parse(t.name) == t
    assert Term("g300.35N.5E", poly=True).column_names == ("poly(g300.35N.5E,2)1", "poly(g300.35N.5E,2)2")
    assert Term("g700.", attr="LON").name == "g700.:LON"
    assert Term("g700.", True, "LON").main_effects() == (Term("g700.", True), Term("LON"))


def test_prediction_reuses_training_basis(rng):
    x = rng.normal(size=200)
    y = (rng.random(200) < 1 / (1 + np.exp(-(x ** 2 - 1)))).astype(float)
    t = Term("x", poly=True)
    fit = fit_logistic(build_design({"x": x}, [t], y))
    p_new = predict_prob(fit, {"x": x[:5]})
    p_train = 1 / (1 + np.exp(-(build_design({"x": x}, [t]).X @ fit.coef)))
    np.testing.assert_allclose(p_new, p_train[:5], rtol=1e-12)


# --------------------------------------------------------------------------- IRLS

def test_intercept_only_closed_form():
    y = np.array([1, 0, 0, 0] * 25, dtype=float)
    fit = fit_logistic(build_design({}, [], y))
    assert fit.coef[0] == pytest.approx(math.log(1 / 3), abs=1e-10)
    assert fit.deviance == pytest.approx(fit.null_deviance, abs=1e-9)


def _random_problem(rng, n=200, k=4):
    X = rng.normal(size=(n, k)) * rng.uniform(0.5, 3, k) + rng.normal(0, 2, k)
    beta = rng.normal(0, 0.7, k)
    y = (rng.random(n) < 1 / (1 + np.exp(-(X @ beta - 0.5)))).astype(float)
    return X, y


@pytest.mark.parametrize("seed", range(10))
def test_matches_newton_oracle(seed):
    rng = np.random.default_rng(seed)
    X, y = _random_problem(rng, k=1 + seed % 5)
    frame = {f"x{j}": X[:, j] for j in range(X.shape[1])}
    fit = fit_logistic(build_design(frame, [Term(c) for c in frame], y))
    ref = oracle_newton_logistic(np.column_stack([np.ones(len(y)), X]), y)
    np.testing.assert_allclose(fit.coef, ref, atol=1e-6)


def test_against_scipy_optimizer(rng):
    X, y = _random_problem(rng, k=3)
    frame = {f"x{j}": X[:, j] for j in range(3)}
    fit = fit_logistic(build_design(frame, [Term(c) for c in frame], y))
    Xa = np.column_stack([np.ones(len(y)), X])
    nll = lambda b: np.sum(np.logaddexp(0, Xa @ b)) - y @ (Xa @ b)
    res = __import__("scipy.optimize", fromlist=["minimize"]).minimize(nll, np.zeros(4), method="BFGS",
                                                                        options={"gtol": 1e-10})
    np.testing.assert_allclose(fit.coef, res.x, atol=1e-4)
    assert fit.loglik == pytest.approx(-res.fun, abs=1e-6)


def test_non_convergence_carries_fit(rng):
    X, y = _random_problem(rng)
    frame = {f"x{j}": X[:, j] for j in range(X.shape[1])}
    with pytest.raises(ConvergenceError) as err:
        fit_logistic(build_design(frame, [Term(c) for c in frame], y), max_iter=1)
    assert err.value.fit is not None and not err.value.fit.converged


def test_separation_flag():
    x = np.linspace(-1, 1, 60)
    y = (x > 0).astype(float)
    try:
        fit = fit_logistic(build_design({"x": x}, [Term("x")], y))
    except ConvergenceError as exc:
        fit = exc.fit
    assert fit.separation


def test_aic_penalized_arithmetic():
    fit = GlmFit(terms=(), names=("a",) * 5, coef=np.zeros(5), se=np.ones(5), deviance=200.0,
                 null_deviance=200.0, n_obs=100, n_iter=1)
    assert aic_penalized(fit, 10.83) == pytest.approx(254.15)
    assert aic_penalized(fit, 2.0) == fit.aic


def test_predict_limits():
    fit = GlmFit(terms=(Term("x"),), names=("(Intercept)", "x"), coef=np.array([0.0, 0.0]),
                 se=np.ones(2), deviance=1.0, null_deviance=1.0, n_obs=10, n_iter=1)
    assert predict_prob(fit, {"x": np.array([1.0, -3.0])}).tolist() == [0.5, 0.5]
    fit.coef = np.array([0.0, 1.0])
    p = predict_prob(fit, {"x": np.array([1.0, 10.0, 100.0, 1000.0])})
    assert np.all(np.diff(p) >= 0) and p[-1] == 1.0
    with pytest.raises(KeyError):
        predict_prob(fit, {"z": np.array([1.0])})


def test_fit_serialization_round_trip(rng):
    x = rng.normal(size=300)
    y = (rng.random(300) < 0.3).astype(float)
    fit = fit_logistic(build_design({"x": x}, [Term("x", poly=True)], y))
    back = GlmFit.from_dict(fit.to_dict())
    np.testing.assert_array_equal(back.coef, fit.coef)
    np.testing.assert_array_equal(predict_prob(back, {"x": x}), predict_prob(fit, {"x": x}))


# --------------------------------------------------------------------------- stepwise

def test_empty_scope_is_intercept_only():
    y = np.array([0, 1, 0, 0, 1, 0] * 10, dtype=float)
    res = stepwise_select(build_design({}, [], y), k_penalty=2)
    assert res.terms == ()
    assert res.fit.coef[0] == pytest.approx(math.log(1 / 2), abs=1e-8)


def test_noise_gives_intercept_only():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        frame = {f"n{j}": rng.normal(size=2000) for j in range(10)}
        y = (rng.random(2000) < 0.3).astype(float)
        res = stepwise_select(build_design(frame, [Term(c) for c in frame], y), k_penalty=10.83)
        hits += res.terms == ()
    assert hits >= 19


def _orthogonal_instance(seed, n=400, p=10, signals=(0, 1), effect=1.2):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(n, p)) - 0.0)
    Q = Q - Q.mean(axis=0)
    Q, _ = np.linalg.qr(Q)
    X = Q * math.sqrt(n)
    eta = -0.3 + sum(effect * X[:, j] for j in signals)
    y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    frame = {f"x{j}": X[:, j] for j in range(p)}
    return build_design(frame, [Term(c) for c in frame], y)


@pytest.mark.parametrize("seed", range(3))
def test_orthogonal_matches_exhaustive(seed):
    design = _orthogonal_instance(seed)
    for k in (2.0, 10.83):
        res = stepwise_select(design, k_penalty=k)
        best, crit = oracle_best_subset(design, k)
        assert set(res.terms) == set(best)
        assert res.criterion == pytest.approx(crit, rel=1e-9)
    assert {t.name for t in stepwise_select(design, k_penalty=10.83).terms} == {"x0", "x1"}


def test_oracle_trivial_cases(rng):
    design = _orthogonal_instance(7, p=4)
    assert oracle_best_subset(design, 0.0)[0] == design.terms
    assert oracle_best_subset(design.subset([]), 2.0)[0] == ()
    big = _orthogonal_instance(1, p=13)
    with pytest.raises(ValueError, match="too large"):
        oracle_best_subset(big, 2.0)


def test_conflicting_terms_never_coexist(rng):
    x = rng.normal(size=800)
    z = rng.normal(size=800)
    y = (rng.random(800) < 1 / (1 + np.exp(-(x + 0.8 * x ** 2 - 1)))).astype(float)
    scope = [Term("x"), Term("x", poly=True), Term("z")]
    design = build_design({"x": x, "z": z}, scope, y)
    res = stepwise_select(design, start=[Term("x")], k_penalty=2.0)
    keys = [t.conflict_key for t in res.terms]
    assert len(keys) == len(set(keys))
    with pytest.raises(ValueError, match="overlapping"):
        stepwise_select(design, start=[Term("x"), Term("x", poly=True)])


def test_hierarchy_moves():
    model = [Term("a"), Term("LAT"), Term("a", attr="LAT")]
    scope = model + [Term("b"), Term("b", attr="LAT")]
    moves = allowed_moves(model, scope, "both")
    assert ("drop", Term("a")) not in moves and ("drop", Term("LAT")) not in moves
    assert ("drop", Term("a", attr="LAT")) in moves
    assert ("add", Term("b", attr="LAT")) not in moves
    assert ("add", Term("b")) in moves
    assert all(kind == "drop" for kind, _ in allowed_moves(model, scope, "backward"))

import numpy as np
import pytest
from sklearn.base import clone

from effect_fusion import EffectFusionRegressor
from effect_fusion.exceptions import DataError


def toy_data(n=240, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.choice(["lo", "mid", "hi", "top"], size=n)
    b = rng.choice(["u", "v", "w"], size=n)
    effect = {"lo": 0.0, "mid": 0.0, "hi": 1.5, "top": 1.5}
    y = 0.5 + np.array([effect[v] for v in a]) + rng.normal(0, 0.5, n)
    return np.column_stack([a, b]), y


def small(**kw):
    return EffectFusionRegressor(n_burnin=300, n_iter=600, refit_iter=300, refit_burnin=100,
                                 levels=[["lo", "mid", "hi", "top"], ["u", "v", "w"]], **kw)


def test_fit_selects_and_predicts():
    X, y = toy_data()
    model = small().fit(X, y)
    assert model.partitions_[0].labels == (0, 0, 1, 1)
    assert model.excluded_ == [False, True]
    np.testing.assert_allclose(model.level_effects_[0], [0, 0, 1.5, 1.5], atol=0.2)
    pred = model.predict(X[:5])
    assert pred.shape == (5,)
    # covariate b is excluded, so predictions depend on a alone
    order = ["lo", "mid", "hi", "top"]
    expected = [model.intercept_ + model.level_effects_[0][order.index(v)] for v in X[:5, 0]]
    np.testing.assert_allclose(pred, expected)
    assert model.score(X, y) > 0.5


def test_fit_is_deterministic_and_seeded():
    X, y = toy_data()
    a, b = small(seed=3).fit(X, y), small(seed=3).fit(X, y)
    np.testing.assert_array_equal(a.draws_.beta, b.draws_.beta)
    assert not np.array_equal(a.draws_.beta, small(seed=4).fit(X, y).draws_.beta)


def test_params_round_trip_through_clone():
    model = small(r=500.0, G0=[2.0, 20.0])
    params = clone(model).get_params()
    assert params["r"] == 500.0 and params["G0"] == [2.0, 20.0]
    assert not hasattr(clone(model), "coef_")


def test_posterior_mean_without_refit():
    X, y = toy_data()
    model = small(refit=False).fit(X, y)
    np.testing.assert_allclose(model.coef_, model.draws_.beta.mean(axis=0)[1:])


def test_input_errors():
    X, y = toy_data()
    with pytest.raises(DataError):
        small().fit(X, y[:-1])
    with pytest.raises(DataError, match="unknown level"):
        small().fit(X, y).predict(np.array([["lo", "zzz"]]))
    with pytest.raises(ValueError):
        EffectFusionRegressor(scales=["nominal"]).fit(X, y)


def test_inferred_levels_and_dataframe_names():
    pd = pytest.importorskip("pandas")
    X, y = toy_data()
    frame = pd.DataFrame(X, columns=["grade", "site"])
    model = EffectFusionRegressor(n_burnin=200, n_iter=300, refit=False).fit(frame, y)
    assert [s.name for s in model.specs_] == ["grade", "site"]
    assert model.specs_[0].levels == ("hi", "lo", "mid", "top")

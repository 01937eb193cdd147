import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailproj.harness.pairs import (SpatialLogistic, build_pairs,
                                    convert_pairs, distance_bin, haversine,
                                    pairwise_dependence_pipeline,
                                    pipeline_formula, stack_pairs,
                                    station_pipeline, synthetic_stations)
from tailproj.margins import StationSeries
from tailproj.simulators import make_rng


def test_haversine_paris_lyon():
    d = haversine(48.8566, 2.3522, 45.7640, 4.8357)
    assert d == pytest.approx(392, abs=1.5)
    assert distance_bin(d) == 390.0
    assert haversine(10, 20, 10, 20) == 0.0


@settings(max_examples=50)
@given(st.floats(-80, 80), st.floats(-180, 180), st.floats(-80, 80),
       st.floats(-180, 180))
def test_haversine_symmetric_and_bounded(a, b, c, d):
    x = haversine(a, b, c, d)
    assert x == pytest.approx(haversine(c, d, a, b), abs=1e-9)
    assert 0 <= x <= math.pi * 6371.0088 + 1e-6


def test_distance_bins():
    np.testing.assert_array_equal(distance_bin([0, 9.99, 10, 25.5], 10),
                                  [0, 0, 10, 20])


def _station(sid, lat, lon, years, typ="background", seed=0):
    rng = make_rng(seed)
    year = np.repeat(years, 12)
    month = np.tile(np.arange(1, 13), len(years))
    return StationSeries(sid, lat, lon, typ, year, month,
                         1.0 / rng.exponential(size=year.size))


def test_build_pairs_order_invariant_and_overlap():
    a = _station("A", 50.0, 10.0, np.arange(2000, 2004), seed=1)
    b = _station("B", 50.1, 10.0, np.arange(2002, 2006), "traffic", seed=2)
    c = _station("C", 50.0, 10.2, np.arange(2003, 2004), seed=3)
    p1 = build_pairs({"A": a, "B": b, "C": c})
    p2 = build_pairs([c, b, a])
    assert [(p.id1, p.id2) for p in p1] == [(p.id1, p.id2) for p in p2] == [("A", "B")]
    ab = p1[0]
    assert ab.n == 24 and ab.type_pair == "background-traffic"
    assert set(ab.year) == {2002, 2003}
    # with a lower overlap requirement C joins
    assert len(build_pairs([a, b, c], min_overlap=12)) == 3
    assert len(build_pairs([a, b, c], min_overlap=12, same_type=True)) == 1
    assert len(build_pairs([a, b, c], min_overlap=12, max_distance_km=12)) == 1


def test_stack_pairs_covariates():
    a = _station("A", 50.0, 10.0, np.arange(2000, 2003), seed=1)
    b = _station("B", 50.0, 10.5, np.arange(2000, 2003), seed=2)
    df = stack_pairs(build_pairs([a, b]))
    assert len(df) == 36
    assert df["t"].iloc[0] == pytest.approx(2000 + 0.5 / 12)
    assert df["d"].iloc[0] == distance_bin(haversine(50, 10, 50, 10.5))
    with pytest.raises(ValueError):
        stack_pairs([])


def test_pipeline_formula_variants():
    f = pipeline_formula("distance_only", ["background"], 20)
    assert [t.type for t in f.terms] == ["smooth"]
    f = pipeline_formula("full_t_d_type", ["a", "b"], 20)
    assert [t.type for t in f.terms] == ["factor", "smooth", "smooth", "tensor"]
    assert pipeline_formula("distance_only", ["a"], 3).terms[0].k == 4
    with pytest.raises(ValueError):
        pipeline_formula("kriging", ["a"], 5)


def test_spatial_logistic_pickands_limits():
    knots = np.array([(x, y) for x in np.arange(-200, 201, 30.0)
                      for y in np.arange(-200, 201, 30.0)])
    f = SpatialLogistic(0.6, 60.0, knots)
    A0 = f.pickands(np.array([[0.0, 0.0]]), np.array([[0.0, 0.0]]))[0]
    assert A0 == pytest.approx(2 ** (0.6 - 1), rel=1e-12)
    Afar = f.pickands(np.array([[-150.0, 0.0]]), np.array([[150.0, 0.0]]))[0]
    assert Afar == pytest.approx(1.0, abs=0.01)
    near = f.pickands(np.array([[0.0, 0.0]]), np.array([[20.0, 0.0]]))[0]
    mid = f.pickands(np.array([[0.0, 0.0]]), np.array([[60.0, 0.0]]))[0]
    assert A0 < near < mid < Afar


def test_spatial_logistic_sample_matches_pickands():
    knots = np.array([(x, y) for x in np.arange(-150, 151, 30.0)
                      for y in np.arange(-150, 151, 30.0)])
    f = SpatialLogistic(0.7, 50.0, knots)
    xy = np.array([[0.0, 0.0], [40.0, 0.0]])
    n = 40000
    Z = f.sample(xy, n, make_rng(3))
    p = np.exp(-1.0)
    assert abs(np.mean(Z[:, 0] <= 1) - p) < 4 * math.sqrt(p * (1 - p) / n)
    A = f.pickands(xy[:1], xy[1:])[0]
    pj = math.exp(-2 * A)
    hit = np.mean(np.all(Z <= 1, axis=1))
    assert abs(hit - pj) < 4 * math.sqrt(pj * (1 - pj) / n)


def test_traffic_pickands_by_simulation():
    net = synthetic_stations(n_stations=4, n_years=1500, seed=4, alpha=0.6,
                             inverted=False, traffic_fraction=0.5,
                             extent_km=100)
    ids = sorted(net.frechet)
    n = net.frechet[ids[0]].value.size
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            x = np.column_stack([net.frechet[a].value, net.frechet[b].value])
            pj = math.exp(-2 * net.true_pickands(a, b))
            hit = np.mean(np.all(x <= 1, axis=1))
            assert abs(hit - pj) < 4.5 * math.sqrt(pj * (1 - pj) / n)


def test_synthetic_network_is_reproducible():
    a = synthetic_stations(n_stations=3, n_years=2, seed=9)
    b = synthetic_stations(n_stations=3, n_years=2, seed=9)
    for sid in a.stations:
        np.testing.assert_array_equal(a.stations[sid].value, b.stations[sid].value)
    assert list(a.stations) == ["S01", "S02", "S03"]


def test_convert_pairs():
    net = synthetic_stations(n_stations=3, n_years=3, seed=1)
    p = build_pairs(net.frechet)
    e = convert_pairs(p, "frechet", "inverted_exponential")
    np.testing.assert_allclose(e[0].x1, 1.0 / p[0].x1)


def test_planted_type_effect_recovered():
    # traffic stations are less dependent: larger A, positive log-link offset
    net = synthetic_stations(n_stations=12, n_years=200, seed=6, alpha=0.5,
                             inverted=False, traffic_fraction=0.5,
                             traffic_weight=0.5, extent_km=150)
    pairs = build_pairs(net.frechet)
    planted = np.mean([np.log(net.true_pickands(p.id1, p.id2)
                              / net.field.pickands(net.xy[p.id1], net.xy[p.id2])[0])
                       for p in pairs if p.type_pair == "traffic"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = pairwise_dependence_pipeline(pairs, regime="ad")
    est, se = res.type_effect("traffic")
    assert est > 2 * se
    assert abs(est - planted) < 3 * se
    th = res.curves.groupby("type")["theta"].mean()
    assert th["traffic"] > th["background"]


def test_station_pipeline_raw_margins_and_errors():
    net = synthetic_stations(n_stations=4, n_years=10, seed=6)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = station_pipeline(net.stations, regime="ai")
    assert {"d", "eta", "eta_lower", "eta_upper"} <= set(res.curves.columns)
    assert np.all((res.curves["eta"] > 0) & (res.curves["eta"] <= 1.5))
    one = {k: net.stations[k] for k in list(net.stations)[:1]}
    with pytest.raises(ValueError, match="at least 2"):
        station_pipeline(one)

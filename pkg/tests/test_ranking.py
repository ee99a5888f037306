import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psychorank.ingest import ParcelMatrix
from psychorank.ranking import (
    benchmark_average,
    default_trends,
    emit_comparison,
    knots_for,
    rank_compare,
    round_floats,
    spline_trend,
)
from psychorank.scoring import ScoreTable


def brute_spearman(x, y):
    """Pearson correlation of average ranks, ranks counted pair by pair."""
    n = len(x)

    def ranks(v):
        return np.array([sum(v[j] < v[i] for j in range(n)) + 0.5 * (sum(v[j] == v[i] for j in range(n)) - 1) + 1
                         for i in range(n)])

    rx, ry = ranks(x), ranks(y)
    rx, ry = rx - rx.mean(), ry - ry.mean()
    return float(rx @ ry / np.sqrt((rx @ rx) * (ry @ ry)))


def brute_kendall_b(x, y):
    conc = disc = tx = ty = 0
    n = len(x)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = np.sign(x[i] - x[j]), np.sign(y[i] - y[j])
            if a == 0 and b == 0:
                continue
            if a == 0:
                tx += 1
            elif b == 0:
                ty += 1
            elif a == b:
                conc += 1
            else:
                disc += 1
    return (conc - disc) / np.sqrt((conc + disc + tx) * (conc + disc + ty))


def test_benchmark_average_examples():
    assert benchmark_average(np.array([[0.2, 0.4, 0.6]]))[0] == pytest.approx(0.4)
    col = np.array([0.1, 0.5, 0.9])
    np.testing.assert_array_equal(benchmark_average(np.column_stack([col, col])), col)
    X = np.random.default_rng(0).uniform(size=(5, 4))
    np.testing.assert_allclose(benchmark_average(X), benchmark_average(X[:, ::-1]), rtol=1e-15)


def test_rank_compare_examples():
    avg = np.array([0.1, 0.4, 0.3, 0.9])
    assert rank_compare(avg, np.exp(avg), 0.1).spearman == pytest.approx(1.0)
    assert rank_compare(avg, -avg, 0.1).spearman == pytest.approx(-1.0)
    rc = rank_compare([0.0, 1.0], [0.0, 0.05], 0.2)
    assert rc.indistinguishable(0, 1)
    with pytest.raises(ValueError):
        rank_compare([1.0, 2.0], [1.0], 0.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(5, 200))
def test_rank_correlations_match_brute_force(seed, m):
    rng = np.random.default_rng(seed)
    avg = np.round(rng.uniform(size=m), 2)
    theta = avg + rng.normal(scale=0.3, size=m)
    rc = rank_compare(avg, theta, 0.1)
    assert rc.spearman == pytest.approx(brute_spearman(avg, theta), abs=1e-12)
    assert rc.kendall == pytest.approx(brute_kendall_b(avg, theta), abs=1e-12)


def test_indistinguishable_symmetric_not_transitive():
    rc = rank_compare([1.0, 2.0, 3.0], [0.0, 0.3, 0.6], 0.15)
    mat = rc.indistinguishable_matrix()
    assert np.array_equal(mat, mat.T)
    assert mat[0, 1] and mat[1, 2] and not mat[0, 2]
    np.testing.assert_array_equal(rc.n_indistinguishable(), mat.sum(axis=1) - 1)
    assert list(rc.rank_theta) == [3, 2, 1]


def test_spline_constant_and_linear():
    x = np.linspace(0, 10, 40)
    const = spline_trend(x, np.full_like(x, 2.5))
    np.testing.assert_allclose(const.fit, 2.5, atol=1e-10)
    assert const.sigma2 == pytest.approx(0.0, abs=1e-20)
    lin = spline_trend(x, 2 * x + 1)
    np.testing.assert_allclose(lin.fit, 2 * lin.grid + 1, atol=1e-8)


def test_knots_near_quartiles():
    x = np.random.default_rng(1).uniform(size=1001)
    np.testing.assert_allclose(knots_for(x), [0.25, 0.5, 0.75], atol=0.05)
    params = np.random.default_rng(2).uniform(1, 180, size=200)
    assert 70.0 in knots_for(params, "percentile_plus_70B")
    assert 70.0 not in knots_for(np.linspace(1, 13, 50), "percentile_plus_70B")
    with pytest.raises(ValueError):
        knots_for(params, "deciles")


def test_spline_invariants():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 5, 300)
    y = np.sin(x) + rng.normal(scale=0.2, size=300)
    tf = spline_trend(x, y)
    assert np.all(np.diff(tf.internal_knots) > 0)
    assert tf.internal_knots.min() > x.min() and tf.internal_knots.max() < x.max()
    assert np.all(tf.lower <= tf.fit) and np.all(tf.fit <= tf.upper)
    B = tf.basis(x)
    assert np.max(np.abs(B.T @ (y - B @ tf.coefficients))) < 1e-8


def test_spline_preconditions():
    with pytest.raises(ValueError):
        spline_trend(np.arange(5.0), np.arange(5.0))
    with pytest.raises(ValueError):
        spline_trend(np.ones(20), np.arange(20.0))


def test_spline_rank_deficient_ridge():
    x = np.r_[np.zeros(10), np.ones(10), [0.5]]
    tf = spline_trend(x, x.copy())
    assert tf.ridge == 1e-10


def test_band_narrows_with_m():
    widths = {100: [], 1000: []}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        for m in widths:
            x = rng.uniform(0, 1, m)
            tf = spline_trend(x, x ** 2 + rng.normal(scale=0.1, size=m), n_grid=21)
            widths[m].append(np.mean(tf.upper - tf.lower))
    assert np.mean(widths[1000]) < np.mean(widths[100])


def _toy(m=40, meta=True):
    rng = np.random.default_rng(4)
    scores = rng.uniform(0.2, 0.9, size=(m, 3))
    md = {}
    if meta:
        params = rng.uniform(1, 180, m)
        md = {"param_count_billions": list(params), "co2_kg": list(params * 3 + rng.normal(size=m)),
              "architecture": [["llama", "mistral"][i % 2] for i in range(m)]}
    data = ParcelMatrix(scores, [f"m{i}" for i in range(m)], ["a", "b", "c"], md)
    theta = (scores.mean(axis=1) - 0.5) * 4
    table = ScoreTable(data.model_ids, theta, 0.2, 0.9, benchmark_average(data), md)
    return data, table


def test_emit_round_trip(tmp_path):
    data, table = _toy()
    trends = default_trends(data, table)
    assert {(t.y_name, t.x_name) for t in trends} >= {("co2_kg", "param_count_billions")}
    written = emit_comparison(data, table, trends, tmp_path)
    with open(written["comparison"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    np.testing.assert_allclose([float(r["theta"]) for r in rows], table.theta, rtol=1e-9, atol=1e-12)
    assert (tmp_path / "groups_architecture.csv").exists()
    summary = json.loads((tmp_path / "comparison_summary.json").read_text())
    assert summary["n_models"] == 40


def test_emit_without_metadata(tmp_path):
    data, table = _toy(meta=False)
    written = emit_comparison(data, table, default_trends(data, table), tmp_path)
    assert "comparison" in written
    assert not any(k.startswith("groups:") for k in written)
    assert list(tmp_path.glob("trend_*")) == [tmp_path / "trend_theta_vs_benchmark_average.csv"]


def test_round_floats():
    assert round_floats({"a": [1.23456789012345, np.float64(np.nan)], "b": np.int64(3)}) == \
        {"a": [1.23456789, None], "b": 3}

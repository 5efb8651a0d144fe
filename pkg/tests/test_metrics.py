import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from lattice import metrics as mt
from lattice.synth import PlantConfig, default_scripts, inject_attacks, simulate
from lattice.timeseries import AttackSpan, LabelError, spans_from_mask

import oracles

seeds = st.integers(0, 2**32 - 1)


def random_trace(rng, n=150):
    truth = np.zeros(n, dtype=np.int8)
    for _ in range(rng.integers(1, 6)):
        s = rng.integers(0, n - 1)
        truth[s : s + rng.integers(1, 20)] = 1
    pred = (rng.random(n) < 0.4).astype(np.int8)
    return pred, truth


@given(seeds)
@settings(max_examples=60, deadline=None)
def test_detection_metrics_match_enumeration(seed):
    pred, truth = random_trace(np.random.default_rng(seed))
    c = mt.confusion(pred, truth)
    spans = spans_from_mask(truth == 1)
    assert mt.f1(c) == pytest.approx(oracles.f1(pred.tolist(), truth.tolist()), abs=1e-15)
    assert mt.acr(pred, spans) == oracles.acr(pred.tolist(), truth.tolist())
    assert mt.ddt(pred, spans) == pytest.approx(oracles.ddt(pred.tolist(), truth.tolist()), abs=1e-15)


def test_zero_denominator_rules():
    c = mt.confusion([0, 0], [0, 0])
    assert mt.precision(c) == mt.recall(c) == mt.f1(c) == 0.0


def test_perfect_predictions():
    truth = np.array([0, 1, 1, 0, 1])
    rep = mt.detection_report(truth, truth)
    assert rep["precision"] == rep["recall"] == rep["f1"] == 1.0
    assert rep["acr"] == 1.0 and rep["ddt"] == 0.0


def test_acr_half_threshold():
    spans = [AttackSpan(0, 3)]
    assert mt.acr([1, 1, 0, 0], spans) == 1.0
    assert mt.acr([1, 0, 0, 0], spans) == 0.0
    assert mt.acr([1, 0, 0], [AttackSpan(0, 2)]) == 0.0
    assert mt.acr([1, 1, 0], [AttackSpan(0, 2)]) == 1.0


def test_ddt_examples():
    assert mt.ddt([0, 0, 1, 1], [AttackSpan(0, 3)]) == 0.5
    assert mt.ddt([0, 0, 0, 0], [AttackSpan(0, 3)]) == 1.0


def test_confusion_requires_labels():
    with pytest.raises(LabelError):
        mt.confusion([0, 1], [-1, 1])
    with pytest.raises(ValueError):
        mt.confusion([0, 1, 1], [0, 1])


@given(st.lists(st.integers(0, 6), min_size=1, max_size=50), st.lists(st.integers(0, 6), min_size=1, max_size=50))
def test_u_and_a12_match_pairwise_counts(a, b):
    u, p = mt.mann_whitney(a, b)
    assert u == oracles.mann_whitney_u(a, b)
    assert 0.0 <= p <= 1.0
    assert mt.a12(a, b) == oracles.a12(a, b)
    assert mt.a12(a, b) + mt.a12(b, a) == 1.0


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=40), st.lists(st.floats(-5, 5), min_size=2, max_size=40))
@settings(deadline=None)
def test_p_value_agrees_with_scipy(a, b):
    if len(set(a + b)) == 1:
        return
    ref = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    u, p = mt.mann_whitney(a, b)
    assert u == pytest.approx(ref.statistic)
    assert p == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-12)


def test_anchored_cases():
    assert mt.mann_whitney([1, 2], [3, 4])[0] == 0.0
    assert mt.a12([1, 2, 3], [1, 2, 3]) == 0.5
    assert mt.mann_whitney([1, 1], [1, 1]) == (2.0, 1.0)
    with pytest.raises(ValueError):
        mt.a12([], [1])


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=40))
def test_spearman_agrees_with_scipy(a):
    b = [x * x for x in a]
    r = mt.spearman(a, b)
    if len(set(a)) < 2 or len(set(b)) < 2:
        assert r.degenerate and r.rho == 0.0
        return
    assert r.rho == pytest.approx(stats.spearmanr(a, b).statistic, abs=1e-12)


def test_spearman_monotone():
    assert mt.spearman([1, 2, 3], [10, 20, 30]).rho == pytest.approx(1.0)
    assert mt.spearman([1, 2, 3], [3, 2, 1]).rho == pytest.approx(-1.0)


def test_midranks_ties():
    assert mt.midranks([3, 1, 3, 2]).tolist() == [3.5, 1.0, 3.5, 2.0]


def test_utt_exact():
    assert mt.utt(12.0, 3.0) == 4.0
    assert mt.utt(0.1, 0.3) == 0.1 / 0.3
    with pytest.raises(ValueError):
        mt.utt(1.0, 0.0)


def test_run_timing():
    assert mt.RunTiming(10.0, 12.5).tt == 2.5


@pytest.fixture(scope="module")
def plant_episode():
    cfg = PlantConfig(seed=4)
    return inject_attacks(simulate(cfg, 2000), default_scripts(cfg, 2000, duration=40, seed=4))


def test_kl_drift_deterministic_and_nonnegative(plant_episode):
    a = mt.kl_drift(plant_episode, 300, 100, seed=1)
    assert a == mt.kl_drift(plant_episode, 300, 100, seed=1)
    assert a >= 0
    h = mt.kl_drift(plant_episode, 300, 100, seed=1, mode="histogram")
    assert h >= 0 and math.isfinite(h)
    with pytest.raises(ValueError):
        mt.kl_drift(plant_episode, 1500, 10, seed=0)


def test_kl_drift_zero_for_identical_windows(plant_episode):
    rep = plant_episode.slice(slice(0, 200))
    from lattice.timeseries import Episode

    doubled = Episode(rep.schema, np.arange(400.0), np.vstack([rep.sensors] * 2), np.vstack([rep.actuators] * 2))
    assert mt.kl_drift(doubled, 200, 50, 0, mode="histogram") == 0.0


def test_complexity_deterministic(plant_episode):
    d = mt.DriftConfig(window_len=300, n_pairs=50, seed=2)
    a = mt.complexity(plant_episode, drift_cfg=d)
    assert a == mt.complexity(plant_episode, drift_cfg=d)
    assert a.total == pytest.approx(sum(v for k, v in a.to_dict().items() if k != "S"))
    raw = mt.raw_complexity(plant_episode, drift=d)
    assert raw["n_dims"] == 5 and raw["n_attacks"] == 3
    assert raw["attack_ratio"] == pytest.approx(120 / 2000)


def test_complexity_collection_min_max(plant_episode):
    d = mt.DriftConfig(window_len=200, n_pairs=20, seed=0)
    short = plant_episode.slice(slice(0, 1000))
    out = mt.complexity_collection([plant_episode, short], d)
    assert out[0].s_dat_size == 1.0 and out[1].s_dat_size == 0.0


def test_complexity_schema_check(plant_episode):
    from conftest import small_schema

    with pytest.raises(ValueError):
        mt.complexity(plant_episode, schema=small_schema())

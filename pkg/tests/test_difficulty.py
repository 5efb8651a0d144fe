import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lattice import difficulty as dm
from lattice.difficulty import MeasurerConfig
from lattice.dtm import learn_offline
from lattice.timeseries import AttackSpan, Episode, LabelError

import oracles
from conftest import random_episode, small_schema

seeds = st.integers(0, 2**32 - 1)


@given(seeds, st.integers(1, 120), st.integers(2, 20))
@settings(max_examples=30, deadline=None)
def test_streaming_components_match_oracles(seed, n, ctx):
    ep = random_episode(np.random.default_rng(seed), n)
    cfg = MeasurerConfig(context_len=ctx)
    comp = dm.complexity_scores(ep, cfg)
    div = dm.diversity_scores(ep, cfg)
    noi = dm.noise_scores(ep, cfg)
    for i in range(n):
        assert comp[i] == oracles.complexity(ep, i, ctx)
        assert div[i] == oracles.diversity(ep, i)
        assert noi[i] == oracles.noise(ep, i, ctx)


@given(st.lists(st.integers(0, 1), min_size=2, max_size=80).filter(lambda l: 1 in l), st.integers(1, 10))
def test_vulnerability_matches_oracle(labels, w):
    cfg = MeasurerConfig(s_window=w)
    assert dm.vulnerability_scores(np.array(labels), cfg).tolist() == oracles.vulnerability(labels, w)
    lit = MeasurerConfig(s_window=w, vulnerability_mode="literal")
    assert dm.vulnerability_scores(np.array(labels), lit).tolist() == oracles.vulnerability(labels, w, inverse=False)


@given(st.lists(st.integers(0, 1), min_size=2, max_size=80).filter(lambda l: 1 in l), st.integers(1, 10))
def test_inverse_vulnerability_non_increasing_in_distance(labels, w):
    scores = dm.vulnerability_scores(np.array(labels), MeasurerConfig(s_window=w))
    d = dm.attack_distances(np.array(labels))
    order = np.argsort(d, kind="stable")
    assert np.all(np.diff(scores[order]) <= 0)


def test_single_sample_forms_agree_with_episode_forms(rng):
    ep = random_episode(rng, 80)
    cfg = MeasurerConfig(context_len=10, s_window=5)
    comp = dm.complexity_scores(ep, cfg)
    noi = dm.noise_scores(ep, cfg)
    spans = [AttackSpan(20, 25)]
    vul = dm.vulnerability_scores(dm.labels_from_spans(80, spans), cfg)
    for i in (0, 5, 10, 40, 79):
        assert dm.score_complexity(ep, i, cfg) == comp[i]
        assert dm.score_noise(ep, i, cfg) == noi[i]
        assert dm.score_vulnerability(ep, i, spans, cfg) == vul[i]
        assert dm.score_diversity(ep, i, cfg) == oracles.diversity(ep, i)


def _episode(acts, sens=None, schema=None):
    n = len(acts)
    schema = schema or small_schema(1, (2,) * len(acts[0]))
    sens = np.full((n, schema.n_sensors), 5.0) if sens is None else np.asarray(sens, float).reshape(n, -1)
    return Episode(schema, np.arange(n, dtype=float), sens, np.array(acts))


def test_complexity_examples():
    cfg = MeasurerConfig(context_len=3)
    const = _episode([[0, 1]] * 5)
    assert dm.score_complexity(const, 4, cfg) == 3.0
    # 5 dims: 4 actuators + 1 sensor, one binary actuator uses both codes
    ep = _episode([[0, 0, 0, 0], [1, 0, 0, 0], [0, 0, 0, 0]])
    assert dm.score_complexity(ep, 2, cfg) == 6.0


def test_diversity_examples():
    cfg = MeasurerConfig()
    const = _episode([[1]] * 10)
    assert dm.score_diversity(const, 3, cfg) == 0.0
    split = _episode([[0, 0], [0, 1], [1, 0], [1, 1]])
    assert dm.score_diversity(split, 2, cfg) == pytest.approx(-math.log(0.25))
    rare = _episode([[0]] * 99 + [[1]])
    div = dm.diversity_scores(rare, cfg)
    assert div.argmax() == 99 and div[99] > div[:99].max()
    raw = MeasurerConfig(diversity_mode="raw")
    assert dm.score_diversity(split, 0, raw) == 0.25


def test_noise_examples():
    cfg = MeasurerConfig(context_len=2)
    ep = _episode([[0]] * 3, sens=[0.0, 2.0, 3.0])
    assert dm.score_noise(ep, 2, cfg) == pytest.approx(2.0)
    flat = _episode([[0]] * 5, sens=[1.0] * 5)
    assert dm.score_noise(flat, 4, MeasurerConfig(context_len=4)) == 0.0
    assert dm.score_noise(ep, 1, cfg) == 0.0


def test_vulnerability_examples():
    cfg = MeasurerConfig(s_window=1)
    assert dm.vulnerability_scores(np.array([0, 1, 0]), cfg).tolist() == [0.0, 1.0, 0.0]
    with pytest.raises(LabelError):
        dm.vulnerability_scores(np.zeros(5), cfg)


def test_running_example_ordering():
    # attack starts 10:29:14; samples at 10:00:00 and 10:29:13 precede it.
    n = 29 * 60 + 14 + 30
    labels = np.zeros(n, dtype=np.int8)
    labels[29 * 60 + 14 :] = 1
    s = dm.vulnerability_scores(labels, MeasurerConfig(s_window=1))
    assert s[0] < s[29 * 60 + 13] < s[29 * 60 + 20]


def test_pdm_is_mean_of_normalized_components(rng):
    ep = random_episode(rng, 60)
    cfg = MeasurerConfig(context_len=5, s_window=3)
    cols = dm.pdm_scores(ep, ep.labels, cfg)
    parts = [dm.normalize(cols[c]) for c in ("s_comp", "s_div", "s_noi", "s_vul")]
    np.testing.assert_array_equal(cols["s_pdm"], sum(parts) / 4.0)
    assert cols["s_pdm"].min() >= 0 and cols["s_pdm"].max() <= 1
    assert (0.2 + 0.4 + 0.0 + 1.0) / 4 == pytest.approx(0.4)


def test_normalize_constant_is_zero():
    assert dm.normalize([3.0, 3.0]).tolist() == [0.0, 0.0]
    assert dm.normalize([1.0, 2.0, 3.0]).tolist() == [0.0, 0.5, 1.0]


def test_hdm_examples():
    assert dm.score_hdm([1, 0, 1], [1, 0, 1]) == 0.0
    assert dm.score_hdm([1, 0, 1], [1, 1, 1]) == pytest.approx(1 / 3)
    assert dm.score_hdm([1, 0, 1], [1, 1, 1], "literal_sum") == pytest.approx(5 / 3)
    with pytest.raises(ValueError):
        dm.score_hdm([1, 0], [1, 0, 1])


def _cem_oracle(u, v):
    pu = [math.exp(x) / sum(math.exp(y) for y in u) for x in u]
    zv = sum(math.exp(y) for y in v)
    return -sum(p * math.log(math.exp(x) / zv) for p, x in zip(pu, v))


def test_cem_examples():
    assert dm.score_cem([0, 0], [0, 0]) == pytest.approx(math.log(2))
    assert dm.score_cem([10, 0], [0, 10]) == pytest.approx(_cem_oracle([10, 0], [0, 10]), rel=1e-12)
    assert dm.score_cem([10, 0], [0, 10]) == pytest.approx(9.99959, abs=1e-5)


@given(st.lists(st.floats(-20, 20), min_size=1, max_size=8))
def test_cem_self_is_entropy_and_a_lower_bound(u):
    u = np.array(u)
    p = np.exp(u - u.max())
    p /= p.sum()
    ent = -(p * np.log(p)).sum()
    assert dm.score_cem(u, u) == pytest.approx(ent, abs=1e-9)
    other = np.roll(u, 1)
    assert dm.score_cem(u, other) >= ent - 1e-9


def test_cem_is_stable_for_large_inputs():
    assert math.isfinite(dm.score_cem([1000.0, 0.0], [0.0, 1000.0]))


def test_combined_and_lambda_validation():
    assert dm.score_combined(0.4, 0.6, 0.5) == pytest.approx(0.7)
    for lam in (0.0, 1.0):
        with pytest.raises(ValueError):
            dm.score_combined(0.1, 0.1, lam)
        with pytest.raises(ValueError):
            MeasurerConfig(lam=lam)


@pytest.mark.parametrize("variant", dm.VARIANTS)
def test_every_variant_scores_in_unit_range(rng, variant):
    ep = random_episode(rng, 120)
    a = learn_offline(ep)
    s = dm.score_episode(ep, a, MeasurerConfig(context_len=5, s_window=4), variant)
    assert len(s) == 120
    assert np.all((s.s_final >= 0) & (s.s_final <= 1))
    if variant == "none":
        assert not s.s_final.any()


def test_ablation_names_resolve(rng):
    ep = random_episode(rng, 50)
    a = learn_offline(ep)
    for name, variant in dm.ABLATIONS.items():
        assert dm.score_episode(ep, a, MeasurerConfig(context_len=5), name).variant == variant
    with pytest.raises(ValueError):
        dm.score_episode(ep, a, MeasurerConfig(), "bogus")


def test_unlabeled_episode_uses_dtm_labels(rng):
    ep = random_episode(rng, 100)
    a = learn_offline(ep.slice(slice(0, 50)))
    unl = ep.with_labels(None)
    s = dm.score_episode(unl, a, MeasurerConfig(context_len=5), "pdm_only")
    assert len(s) == 100
    with pytest.raises(LabelError):
        dm.score_episode(unl, None, MeasurerConfig(context_len=5), "pdm_only")


def test_scores_table_reads_as_samples(rng):
    ep = random_episode(rng, 30)
    s = dm.score_episode(ep, learn_offline(ep), MeasurerConfig(context_len=5), "cb2")
    row = s[7]
    assert row.index == 7 and row.s_final == s.s_final[7]
    assert set(s.columns()) == set(dm.COMPONENTS)


def test_spearman_table_keys(rng):
    ep = random_episode(rng, 200, attack_rate=0.5)
    s = dm.score_episode(ep, learn_offline(ep), MeasurerConfig(context_len=5, s_window=2), "full")
    tab = dm.spearman_table(s, ep.labels)
    assert set(tab) == set(dm.COMPONENTS)
    assert tab["s_vul"] > 0

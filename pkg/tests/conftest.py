import numpy as np
import pytest

from lattice.timeseries import Episode, Schema


def small_schema(n_sensors=2, cards=(3, 2), bins=10):
    return Schema(
        sensor_names=tuple(f"S{i}" for i in range(n_sensors)),
        actuator_names=tuple(f"A{i}" for i in range(len(cards))),
        actuator_cardinality=tuple(cards),
        sensor_limits=tuple((0.0, 10.0) for _ in range(n_sensors)),
        sensor_bins=bins,
    )


def random_episode(rng, n, schema=None, labeled=True, attack_rate=0.1, hold=5):
    """Piecewise-constant actuators and random-walk sensors."""
    schema = schema or small_schema()
    acts = np.zeros((n, schema.n_actuators), dtype=np.int64)
    for j, k in enumerate(schema.actuator_cardinality):
        switches = rng.random(n) < 1.0 / hold
        vals = rng.integers(0, k, size=n)
        col = vals.copy()
        for i in range(1, n):
            col[i] = vals[i] if switches[i] else col[i - 1]
        acts[:, j] = col
    sens = np.clip(5.0 + rng.normal(0, 0.8, size=(n, schema.n_sensors)).cumsum(axis=0) * 0.2, 0.0, 10.0)
    labels = None
    if labeled:
        labels = np.zeros(n, dtype=np.int8)
        i = 0
        while i < n:
            if rng.random() < attack_rate / 10:
                L = int(rng.integers(3, 15))
                labels[i : i + L] = 1
                i += L + 5
            else:
                i += 1
        if not labels.any() and n > 1:
            labels[n // 2] = 1
    return Episode(schema, np.arange(n, dtype=np.float64), sens, acts, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)

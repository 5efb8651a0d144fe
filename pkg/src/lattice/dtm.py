"""Timed-automaton digital twin: learning, online update, prediction, labeling.

States are discretized observations (actuator codes plus sensor bins).  A
transition is recorded whenever consecutive observations land on different
keys; its timing model is a histogram of how many ticks the source state was
occupied before leaving.  There are no events and no self-transitions.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .timeseries import (
    Episode,
    Label,
    Schema,
    StateKey,
    SystemState,
    encode_matrix,
    key_matrix,
    quantize_matrix,
)

FORMAT = "lattice-timed-automaton"
VERSION = 1


class AutomatonError(ValueError):
    pass


@dataclass
class TimingModel:
    histogram: Counter = field(default_factory=Counter)

    @property
    def total_count(self) -> int:
        return sum(self.histogram.values())

    def add(self, delay: int) -> None:
        self.histogram[int(delay)] += 1

    @property
    def support(self) -> int:
        """Largest delay bin; the last bin also holds every longer delay."""
        return max(self.histogram, default=0) + 1

    def smoothed(self) -> np.ndarray:
        """Add-one smoothed probabilities over delays 1..support (index 0 = delay 1)."""
        d = self.support
        counts = np.ones(d)
        for delay, c in self.histogram.items():
            counts[min(max(delay, 1), d) - 1] += c
        return counts / counts.sum()

    def tail(self, ticks: int) -> float:
        """P(delay >= ticks) under the smoothed model."""
        p = self.smoothed()
        t = min(max(int(ticks), 1), len(p))
        return float(p[t - 1 :].sum())


@dataclass
class Transition:
    count: int = 0
    timing: TimingModel = field(default_factory=TimingModel)


@dataclass
class StateNode:
    key: StateKey
    visit_count: int
    centroid: np.ndarray


@dataclass
class Prediction:
    values: np.ndarray
    key: StateKey
    fallback: bool = False


@dataclass
class ChangeReport:
    new_state: bool
    new_transition: bool


class TimedAutomaton:
    def __init__(self, schema: Schema):
        self.schema = schema
        self.nodes: dict[StateKey, StateNode] = {}
        self.transitions: dict[tuple[StateKey, StateKey], Transition] = {}
        self._out: dict[StateKey, list[StateKey]] = {}
        # (key, entry tick, last tick) of the state currently occupied
        self.current: tuple[StateKey, int, int] | None = None
        self._key_cache: tuple[int, np.ndarray, list] | None = None

    # -- structure -----------------------------------------------------------

    def __len__(self):
        return len(self.nodes)

    def outgoing(self, key: StateKey) -> list[StateKey]:
        return self._out.get(key, [])

    def structure(self):
        """Hashable summary used for equality checks (ignores centroids)."""
        nodes = sorted((k, n.visit_count) for k, n in self.nodes.items())
        trans = sorted(
            (s, d, t.count, tuple(sorted(t.timing.histogram.items())))
            for (s, d), t in self.transitions.items()
        )
        return nodes, trans

    def _add_transition(self, src, dst, delay) -> bool:
        tr = self.transitions.get((src, dst))
        created = tr is None
        if created:
            tr = self.transitions[(src, dst)] = Transition()
            self._out.setdefault(src, []).append(dst)
        tr.count += 1
        tr.timing.add(delay)
        return created

    def _visit(self, key, vec) -> bool:
        node = self.nodes.get(key)
        if node is None:
            self.nodes[key] = StateNode(key, 1, np.array(vec, dtype=np.float64))
            self._key_cache = None
            return True
        node.visit_count += 1
        node.centroid += (vec - node.centroid) / node.visit_count
        return False

    def detach(self) -> None:
        """Forget the occupied state so the next observation starts a new run."""
        self.current = None

    # -- online learning -----------------------------------------------------

    def update(self, state: SystemState) -> ChangeReport:
        schema = self.schema
        if len(state.sensors) != schema.n_sensors or len(state.actuators) != schema.n_actuators:
            raise AutomatonError("state does not match the automaton's schema")
        sensors = np.asarray(state.sensors, dtype=np.float64)[None, :]
        actuators = np.asarray(state.actuators, dtype=np.int64)[None, :]
        vec = encode_matrix((sensors, actuators), schema)[0]
        key = tuple(int(c) for c in actuators[0]) + tuple(int(b) for b in quantize_matrix(sensors, schema)[0])
        tick = int(np.rint(state.timestamp / schema.tick_seconds))
        if self.current is not None and tick <= self.current[2]:
            raise AutomatonError("timestamps must increase; call detach() between episodes")
        new_state = self._visit(key, vec)
        new_transition = False
        if self.current is None:
            self.current = (key, tick, tick)
        elif key == self.current[0]:
            self.current = (key, self.current[1], tick)
        else:
            new_transition = self._add_transition(self.current[0], key, tick - self.current[1])
            self.current = (key, tick, tick)
        return ChangeReport(new_state, new_transition)

    # -- prediction ----------------------------------------------------------

    def _key_array(self):
        if self._key_cache is None or self._key_cache[0] != len(self.nodes):
            keys = sorted(self.nodes)
            self._key_cache = (len(self.nodes), np.array(keys, dtype=np.int64).reshape(len(keys), -1), keys)
        return self._key_cache[1], self._key_cache[2]

    def nearest_key(self, key: StateKey) -> StateKey:
        """Known key with the fewest differing components.

        Ties go to the smallest summed absolute component difference, then to
        the lexicographically smallest key.
        """
        arr, keys = self._key_array()
        if not keys:
            raise AutomatonError("automaton has no states")
        q = np.asarray(key, dtype=np.int64)
        ham = (arr != q).sum(axis=1)
        l1 = np.abs(arr - q).sum(axis=1)
        # keys are sorted, so lexsort's stability keeps lexicographic order last
        best = np.lexsort((l1, ham))[0]
        return keys[best]

    def predict(self, key: StateKey, ticks_in_state: int) -> Prediction:
        node = self.nodes.get(key)
        if node is None:
            near = self.nearest_key(key)
            return Prediction(self.nodes[near].centroid, near, fallback=True)
        outs = self.outgoing(key)
        if not outs:
            return Prediction(node.centroid, key)
        best, best_score = None, -1.0
        for dst in sorted(outs):
            tr = self.transitions[(key, dst)]
            score = tr.count * tr.timing.tail(ticks_in_state)
            if score > best_score:
                best, best_score = dst, score
        return Prediction(self.nodes[best].centroid, best)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "schema": self.schema.to_dict(),
            "nodes": [
                {"key": list(k), "visit_count": n.visit_count, "centroid": [float(v) for v in n.centroid]}
                for k, n in sorted(self.nodes.items())
            ],
            "transitions": [
                {
                    "src": list(s),
                    "dst": list(d),
                    "count": t.count,
                    "histogram": {str(k): v for k, v in sorted(t.timing.histogram.items())},
                }
                for (s, d), t in sorted(self.transitions.items())
            ],
            "current": None if self.current is None else [list(self.current[0]), self.current[1], self.current[2]],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TimedAutomaton":
        if doc.get("format") != FORMAT:
            raise AutomatonError("not a timed-automaton document")
        if doc.get("version") != VERSION:
            raise AutomatonError(f"unsupported automaton version {doc.get('version')!r}")
        ta = cls(Schema.from_dict(doc["schema"]))
        for nd in doc["nodes"]:
            k = tuple(nd["key"])
            ta.nodes[k] = StateNode(k, int(nd["visit_count"]), np.array(nd["centroid"], dtype=np.float64))
        for td in doc["transitions"]:
            s, d = tuple(td["src"]), tuple(td["dst"])
            tr = Transition(int(td["count"]), TimingModel(Counter({int(k): int(v) for k, v in td["histogram"].items()})))
            ta.transitions[(s, d)] = tr
            ta._out.setdefault(s, []).append(d)
        cur = doc.get("current")
        ta.current = None if cur is None else (tuple(cur[0]), int(cur[1]), int(cur[2]))
        return ta

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "TimedAutomaton":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# module-level operations


def learn_offline(episode: Episode, automaton: TimedAutomaton | None = None) -> TimedAutomaton:
    """Batch pass over an episode: run-length encode keys, then aggregate.

    Starts a fresh automaton unless one is passed in, in which case the
    episode is appended as a new, unconnected run.
    """
    n = len(episode)
    if n == 0:
        raise AutomatonError("cannot learn from an empty episode")
    ta = automaton if automaton is not None else TimedAutomaton(episode.schema)
    if ta.schema != episode.schema:
        raise AutomatonError("episode schema differs from the automaton's")
    keys = key_matrix(episode)
    enc = encode_matrix(episode)
    ticks = episode.ticks()

    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse, minlength=len(uniq))
    sums = np.zeros((len(uniq), enc.shape[1]))
    np.add.at(sums, inverse, enc)
    for u in range(len(uniq)):
        k = tuple(int(v) for v in uniq[u])
        node = ta.nodes.get(k)
        mean = sums[u] / counts[u]
        if node is None:
            ta.nodes[k] = StateNode(k, int(counts[u]), mean)
        else:
            total = node.visit_count + int(counts[u])
            node.centroid = node.centroid + (mean - node.centroid) * (counts[u] / total)
            node.visit_count = total
    ta._key_cache = None

    change = np.flatnonzero((keys[1:] != keys[:-1]).any(axis=1)) + 1
    run_starts = np.concatenate([[0], change])
    for r in range(1, len(run_starts)):
        a, b = run_starts[r - 1], run_starts[r]
        src = tuple(int(v) for v in keys[a])
        dst = tuple(int(v) for v in keys[b])
        ta._add_transition(src, dst, int(ticks[b] - ticks[a]))
    last = run_starts[-1]
    ta.current = (tuple(int(v) for v in keys[last]), int(ticks[last]), int(ticks[-1]))
    return ta


def update_online(automaton: TimedAutomaton, state: SystemState) -> ChangeReport:
    return automaton.update(state)


def predict_next(automaton: TimedAutomaton, key: StateKey, ticks_in_state: int) -> Prediction:
    return automaton.predict(key, ticks_in_state)


def deviation(observed: np.ndarray, predicted: np.ndarray, schema: Schema) -> float:
    """Average of actuator one-hot mismatch rate and range-scaled sensor error."""
    observed = np.asarray(observed, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if observed.shape != predicted.shape:
        raise AutomatonError("observed and predicted vectors differ in length")
    layout = schema.layout
    parts = []
    if layout.actuator_slices:
        mism = [np.argmax(observed[s]) != np.argmax(predicted[s]) for s in layout.actuator_slices]
        parts.append(float(np.mean(mism)))
    if layout.sensor_slices:
        idx = layout.sensor_value_index
        span = schema.upper - schema.lower
        parts.append(float(np.mean(np.abs(observed[idx] - predicted[idx]) / span)))
    return float(np.mean(parts)) if parts else 0.0


def ground_truth(automaton: TimedAutomaton, observed, predicted, tau_gt: float = 0.1) -> Label:
    if not tau_gt > 0:
        raise ValueError("tau_gt must be positive")
    obs = getattr(observed, "values", observed)
    pred = getattr(predicted, "values", predicted)
    return Label.ATTACK if deviation(obs, pred, automaton.schema) > tau_gt else Label.NORMAL


def one_step_predictions(automaton: TimedAutomaton, episode: Episode) -> tuple[np.ndarray, np.ndarray]:
    """Predicted encoding of each observation from the state before it.

    Row 0 has no predecessor and is predicted as itself.  Returns the
    prediction matrix and a boolean mask of fallback predictions.
    """
    n = len(episode)
    enc = encode_matrix(episode)
    out = enc.copy()
    fallback = np.zeros(n, dtype=bool)
    if n == 0:
        return out, fallback
    keys = key_matrix(episode)
    ticks = episode.ticks()
    entry = ticks[0]
    cache: dict[tuple, Prediction] = {}
    for i in range(1, n):
        prev = tuple(int(v) for v in keys[i - 1])
        if i >= 2 and (keys[i - 1] != keys[i - 2]).any():
            entry = ticks[i - 1]
        elapsed = int(ticks[i] - entry)
        ck = (prev, elapsed)
        pred = cache.get(ck)
        if pred is None:
            pred = cache[ck] = automaton.predict(prev, elapsed)
        out[i] = pred.values
        fallback[i] = pred.fallback
    return out, fallback


def label_episode(automaton: TimedAutomaton, episode: Episode, tau_gt: float = 0.1) -> np.ndarray:
    """DTM ground-truth labels (0/1) for every observation."""
    enc = encode_matrix(episode)
    pred, _ = one_step_predictions(automaton, episode)
    return np.array(
        [int(ground_truth(automaton, enc[i], pred[i], tau_gt)) for i in range(len(episode))], dtype=np.int8
    )

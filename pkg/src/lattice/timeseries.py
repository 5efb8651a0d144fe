"""Core data model: schema, states, episodes, encoding and discretization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime
from enum import IntEnum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class IngestionError(ValueError):
    """Raised when a CSV or schema file cannot be turned into an Episode."""


class EncodingError(ValueError):
    pass


class LabelError(ValueError):
    """Raised when an operation needs labels the data does not carry."""


class Label(IntEnum):
    NORMAL = 0
    ATTACK = 1


UNLABELED = -1

_LABEL_TOKENS = {"0": Label.NORMAL, "normal": Label.NORMAL, "1": Label.ATTACK, "attack": Label.ATTACK}


@dataclass(frozen=True)
class Schema:
    sensor_names: tuple[str, ...]
    actuator_names: tuple[str, ...]
    actuator_cardinality: tuple[int, ...]
    sensor_limits: tuple[tuple[float, float], ...]
    tick_seconds: float = 1.0
    sensor_bins: int = 10

    def __post_init__(self):
        object.__setattr__(self, "sensor_names", tuple(self.sensor_names))
        object.__setattr__(self, "actuator_names", tuple(self.actuator_names))
        object.__setattr__(self, "actuator_cardinality", tuple(int(k) for k in self.actuator_cardinality))
        object.__setattr__(
            self, "sensor_limits", tuple((float(lo), float(hi)) for lo, hi in self.sensor_limits)
        )
        if len(self.actuator_cardinality) != len(self.actuator_names):
            raise ValueError("one cardinality per actuator required")
        if len(self.sensor_limits) != len(self.sensor_names):
            raise ValueError("one (lower, upper) limit pair per sensor required")
        for name, k in zip(self.actuator_names, self.actuator_cardinality):
            if k < 2:
                raise ValueError(f"actuator {name}: cardinality must be >= 2, got {k}")
        for name, (lo, hi) in zip(self.sensor_names, self.sensor_limits):
            if not hi > lo:
                raise ValueError(f"sensor {name}: upper limit must exceed lower limit")
        if self.sensor_bins < 2:
            raise ValueError("sensor_bins must be >= 2")
        if not self.tick_seconds > 0:
            raise ValueError("tick_seconds must be positive")
        names = self.sensor_names + self.actuator_names
        if len(set(names)) != len(names):
            raise ValueError("sensor and actuator names must be unique")

    @property
    def n_sensors(self) -> int:
        return len(self.sensor_names)

    @property
    def n_actuators(self) -> int:
        return len(self.actuator_names)

    @property
    def n_nodes(self) -> int:
        return self.n_sensors + self.n_actuators

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.sensor_limits], dtype=np.float64)

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.sensor_limits], dtype=np.float64)

    @property
    def columns(self) -> list[str]:
        return ["timestamp", *self.sensor_names, *self.actuator_names]

    @property
    def layout(self) -> "Layout":
        return Layout.for_schema(self)

    def to_dict(self) -> dict:
        return {
            "tick_seconds": self.tick_seconds,
            "sensor_bins": self.sensor_bins,
            "sensors": {n: [lo, hi] for n, (lo, hi) in zip(self.sensor_names, self.sensor_limits)},
            "actuators": dict(zip(self.actuator_names, self.actuator_cardinality)),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Schema":
        try:
            sensors = doc.get("sensors", {})
            actuators = doc.get("actuators", {})
            return cls(
                sensor_names=tuple(sensors),
                actuator_names=tuple(actuators),
                actuator_cardinality=tuple(int(v) for v in actuators.values()),
                sensor_limits=tuple((float(v[0]), float(v[1])) for v in sensors.values()),
                tick_seconds=float(doc.get("tick_seconds", 1.0)),
                sensor_bins=int(doc.get("sensor_bins", 10)),
            )
        except (TypeError, IndexError, AttributeError) as exc:
            raise IngestionError(f"malformed schema document: {exc}") from exc


def load_schema(path) -> Schema:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise IngestionError(f"schema file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    try:
        return Schema.from_dict(doc)
    except ValueError as exc:
        raise IngestionError(f"{path}: {exc}") from exc


def dump_schema(schema: Schema, path) -> None:
    lines = [
        f"tick_seconds = {schema.tick_seconds!r}",
        f"sensor_bins = {schema.sensor_bins}",
        "",
        "[sensors]",
    ]
    lines += [f"{n} = [{lo!r}, {hi!r}]" for n, (lo, hi) in zip(schema.sensor_names, schema.sensor_limits)]
    lines += ["", "[actuators]"]
    lines += [f"{n} = {k}" for n, k in zip(schema.actuator_names, schema.actuator_cardinality)]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class SystemState:
    timestamp: float
    sensors: np.ndarray
    actuators: np.ndarray
    label: Label | None = None


@dataclass(frozen=True)
class Layout:
    """Where each actuator and sensor lives inside an encoded vector.

    Actuator slices come first (one-hot, width = cardinality), then one
    3-wide slice per sensor holding ``[value, upper, lower]``.
    """

    actuator_slices: tuple[slice, ...]
    sensor_slices: tuple[slice, ...]
    length: int

    @classmethod
    def for_schema(cls, schema: Schema) -> "Layout":
        acts, pos = [], 0
        for k in schema.actuator_cardinality:
            acts.append(slice(pos, pos + k))
            pos += k
        sens = []
        for _ in schema.sensor_names:
            sens.append(slice(pos, pos + 3))
            pos += 3
        return cls(tuple(acts), tuple(sens), pos)

    @property
    def node_slices(self) -> tuple[slice, ...]:
        return self.actuator_slices + self.sensor_slices

    @property
    def max_width(self) -> int:
        return max((s.stop - s.start for s in self.node_slices), default=0)

    @property
    def sensor_value_index(self) -> np.ndarray:
        return np.array([s.start for s in self.sensor_slices], dtype=np.int64)


@dataclass(frozen=True)
class EncodedState:
    values: np.ndarray
    layout: Layout

    def decode(self) -> tuple[np.ndarray, np.ndarray]:
        """Recover (actuator codes, sensor values)."""
        codes = np.array([int(np.argmax(self.values[s])) for s in self.layout.actuator_slices], dtype=np.int64)
        sensors = self.values[self.layout.sensor_value_index] if self.layout.sensor_slices else np.zeros(0)
        return codes, np.asarray(sensors, dtype=np.float64)


@dataclass(frozen=True)
class AttackSpan:
    start_index: int
    end_index: int

    def __len__(self):
        return self.end_index - self.start_index + 1


@dataclass(frozen=True)
class WindowView:
    encoded: list
    end_index: int


class Episode:
    """An ordered run of states over one schema, stored column-wise.

    ``labels`` uses 0 = Normal, 1 = Attack, -1 = unlabeled.
    """

    def __init__(self, schema: Schema, timestamps, sensors, actuators, labels=None):
        self.schema = schema
        n = len(timestamps)
        self.timestamps = np.asarray(timestamps, dtype=np.float64).reshape(n)
        self.sensors = np.asarray(sensors, dtype=np.float64).reshape(n, schema.n_sensors)
        self.actuators = np.asarray(actuators, dtype=np.int64).reshape(n, schema.n_actuators)
        if labels is None:
            labels = np.full(n, UNLABELED, dtype=np.int8)
        self.labels = np.asarray(labels, dtype=np.int8).reshape(n)
        if n > 1 and not np.all(np.diff(self.timestamps) > 0):
            bad = int(np.argmin(np.diff(self.timestamps) > 0)) + 1
            raise IngestionError(f"row {bad}: timestamps must be strictly increasing")
        card = np.array(schema.actuator_cardinality, dtype=np.int64)
        if n and schema.n_actuators:
            out = (self.actuators < 0) | (self.actuators >= card)
            if out.any():
                r, c = map(int, np.argwhere(out)[0])
                raise IngestionError(
                    f"row {r}, column {schema.actuator_names[c]}: actuator code {self.actuators[r, c]} "
                    f"outside [0, {card[c]})"
                )
        if not np.isin(self.labels, (UNLABELED, 0, 1)).all():
            raise IngestionError("labels must be -1, 0 or 1")
        for arr in (self.timestamps, self.sensors, self.actuators, self.labels):
            arr.setflags(write=False)

    @classmethod
    def from_states(cls, schema: Schema, states: Sequence[SystemState]) -> "Episode":
        n = len(states)
        labels = [UNLABELED if s.label is None else int(s.label) for s in states]
        return cls(
            schema,
            [s.timestamp for s in states],
            np.array([s.sensors for s in states], dtype=np.float64).reshape(n, schema.n_sensors),
            np.array([s.actuators for s in states], dtype=np.int64).reshape(n, schema.n_actuators),
            labels,
        )

    def __len__(self):
        return self.timestamps.shape[0]

    def __getitem__(self, i) -> SystemState:
        if isinstance(i, slice):
            return self.slice(i)
        lab = int(self.labels[i])
        return SystemState(
            float(self.timestamps[i]),
            self.sensors[i],
            self.actuators[i],
            None if lab == UNLABELED else Label(lab),
        )

    def __iter__(self) -> Iterator[SystemState]:
        for i in range(len(self)):
            yield self[i]

    def slice(self, sl: slice) -> "Episode":
        return Episode(self.schema, self.timestamps[sl], self.sensors[sl], self.actuators[sl], self.labels[sl])

    @property
    def labeled(self) -> bool:
        return bool(len(self)) and bool((self.labels != UNLABELED).all())

    def with_labels(self, labels) -> "Episode":
        return Episode(self.schema, self.timestamps, self.sensors, self.actuators, labels)

    def require_labels(self, what="this operation") -> np.ndarray:
        if not (self.labels != UNLABELED).all():
            raise LabelError(f"{what} needs fully labeled data; supply a label column or DTM labels")
        return self.labels

    def ticks(self) -> np.ndarray:
        """Timestamps as integer ticks since episode start."""
        return np.rint(self.timestamps / self.schema.tick_seconds).astype(np.int64)


# ---------------------------------------------------------------------------
# CSV ingestion


def _parse_time(cell: str, iso: bool) -> float:
    if iso:
        return datetime.fromisoformat(cell).timestamp()
    return float(cell)


def load_csv(path, schema: Schema) -> Episode:
    path = Path(path)
    try:
        fh = path.open(newline="")
    except FileNotFoundError:
        raise IngestionError(f"CSV file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError(f"{path}: empty file (no header row)")
        header = [h.strip() for h in header]
        col = {name: j for j, name in enumerate(header)}
        for name in schema.columns:
            if name not in col:
                raise IngestionError(f"{path}: missing column {name!r}")
        has_label = "label" in col
        rows = list(reader)

    n = len(rows)
    ts = np.empty(n)
    sens = np.empty((n, schema.n_sensors))
    acts = np.empty((n, schema.n_actuators), dtype=np.int64)
    labels = np.full(n, UNLABELED, dtype=np.int8)
    iso = False
    if n:
        first = rows[0][col["timestamp"]].strip()
        try:
            float(first)
        except ValueError:
            iso = True
    for r, row in enumerate(rows, start=1):
        def cell(name):
            try:
                return row[col[name]].strip()
            except IndexError:
                raise IngestionError(f"{path}: row {r}, column {name!r}: missing cell") from None

        try:
            ts[r - 1] = _parse_time(cell("timestamp"), iso)
        except ValueError:
            raise IngestionError(f"{path}: row {r}, column 'timestamp': unparseable {cell('timestamp')!r}") from None
        for j, name in enumerate(schema.sensor_names):
            try:
                sens[r - 1, j] = float(cell(name))
            except ValueError:
                raise IngestionError(f"{path}: row {r}, column {name!r}: unparseable {cell(name)!r}") from None
        for j, name in enumerate(schema.actuator_names):
            raw = cell(name)
            try:
                code = float(raw)
            except ValueError:
                raise IngestionError(f"{path}: row {r}, column {name!r}: unparseable {raw!r}") from None
            if code != math.floor(code):
                raise IngestionError(f"{path}: row {r}, column {name!r}: actuator code must be integer")
            code = int(code)
            if not 0 <= code < schema.actuator_cardinality[j]:
                raise IngestionError(
                    f"{path}: row {r}, column {name!r}: actuator code {code} out of range "
                    f"[0, {schema.actuator_cardinality[j]})"
                )
            acts[r - 1, j] = code
        if has_label:
            tok = cell("label").lower()
            if tok not in _LABEL_TOKENS:
                raise IngestionError(f"{path}: row {r}, column 'label': unknown label {tok!r}")
            labels[r - 1] = _LABEL_TOKENS[tok]
    if n > 1:
        d = np.diff(ts)
        if not (d > 0).all():
            bad = int(np.argmin(d > 0)) + 2
            raise IngestionError(f"{path}: row {bad}, column 'timestamp': non-monotone timestamp")
    if n:
        ts = ts - ts[0]
    return Episode(schema, ts, sens, acts, labels)


def write_csv(episode: Episode, path, with_labels: bool | None = None) -> None:
    schema = episode.schema
    if with_labels is None:
        with_labels = episode.labeled
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.columns + (["label"] if with_labels else []))
        for i in range(len(episode)):
            row = [repr(float(episode.timestamps[i]))]
            row += [repr(float(v)) for v in episode.sensors[i]]
            row += [str(int(v)) for v in episode.actuators[i]]
            if with_labels:
                row.append(str(int(episode.labels[i])))
            w.writerow(row)


# ---------------------------------------------------------------------------
# encoding and discretization


def encode_matrix(episode_or_arrays, schema: Schema | None = None) -> np.ndarray:
    """Encode every state of an episode, one row per state."""
    if isinstance(episode_or_arrays, Episode):
        schema = episode_or_arrays.schema
        sensors, actuators = episode_or_arrays.sensors, episode_or_arrays.actuators
    else:
        sensors, actuators = episode_or_arrays
        sensors = np.atleast_2d(np.asarray(sensors, dtype=np.float64))
        actuators = np.atleast_2d(np.asarray(actuators, dtype=np.int64))
    layout = schema.layout
    n = actuators.shape[0]
    out = np.zeros((n, layout.length))
    card = schema.actuator_cardinality
    for j, sl in enumerate(layout.actuator_slices):
        codes = actuators[:, j]
        if n and ((codes < 0) | (codes >= card[j])).any():
            raise EncodingError(f"actuator {schema.actuator_names[j]}: code out of range [0, {card[j]})")
        out[np.arange(n), sl.start + codes] = 1.0
    for j, sl in enumerate(layout.sensor_slices):
        lo, hi = schema.sensor_limits[j]
        out[:, sl.start] = sensors[:, j]
        out[:, sl.start + 1] = hi
        out[:, sl.start + 2] = lo
    return out


def encode_state(state: SystemState, schema: Schema) -> EncodedState:
    if len(state.sensors) != schema.n_sensors or len(state.actuators) != schema.n_actuators:
        raise EncodingError("state does not match the schema's sensor/actuator counts")
    values = encode_matrix((np.asarray(state.sensors)[None, :], np.asarray(state.actuators)[None, :]), schema)[0]
    return EncodedState(values, schema.layout)


def scale_encoded(values: np.ndarray, schema: Schema) -> np.ndarray:
    """Map sensor triples [s, hi, lo] to [(s-lo)/(hi-lo), 1, 0]; actuators untouched.

    Works on a single vector or a stack along the last axis.
    """
    out = np.array(values, dtype=np.float64, copy=True)
    for j, sl in enumerate(schema.layout.sensor_slices):
        lo, hi = schema.sensor_limits[j]
        out[..., sl.start] = (out[..., sl.start] - lo) / (hi - lo)
        out[..., sl.start + 1] = 1.0
        out[..., sl.start + 2] = 0.0
    return out


StateKey = tuple


def quantize_matrix(sensors: np.ndarray, schema: Schema) -> np.ndarray:
    sensors = np.atleast_2d(np.asarray(sensors, dtype=np.float64))
    lo, hi = schema.lower, schema.upper
    b = np.floor(schema.sensor_bins * ((sensors - lo) / (hi - lo)))
    return np.clip(b, 0, schema.sensor_bins - 1).astype(np.int64)


def key_matrix(episode: Episode) -> np.ndarray:
    """Actuator codes then sensor bins, one row per state."""
    return np.hstack([episode.actuators, quantize_matrix(episode.sensors, episode.schema)]).astype(np.int64)


def quantize_state(state: SystemState, schema: Schema) -> StateKey:
    bins = quantize_matrix(np.asarray(state.sensors, dtype=np.float64)[None, :], schema)[0]
    return tuple(int(c) for c in state.actuators) + tuple(int(b) for b in bins)


def extract_attack_spans(episode: Episode) -> list[AttackSpan]:
    labels = episode.require_labels("attack-span extraction")
    return spans_from_mask(labels == Label.ATTACK)


def spans_from_mask(mask) -> list[AttackSpan]:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return []
    edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [AttackSpan(int(s), int(e)) for s, e in zip(starts, ends)]


def windows(episode: Episode, window_size: int) -> Iterator[WindowView]:
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    enc = encode_matrix(episode)
    layout = episode.schema.layout
    for i in range(window_size - 1, len(episode)):
        yield WindowView([EncodedState(enc[j], layout) for j in range(i - window_size + 1, i + 1)], i)


def window_indices(n: int, window_size: int, end: np.ndarray) -> np.ndarray:
    """Row indices of the windows ending at ``end``, left-padded with row 0."""
    offs = np.arange(-window_size + 1, 1)
    return np.clip(np.asarray(end)[:, None] + offs[None, :], 0, max(n - 1, 0))

"""Seeded water-tank plant with scripted attack injection.

Each stage is one tank fed by an inlet valve (MV) and drained by a duty
pump (P..1) and a standby pump (P..2).  Actuator codes follow the usual
SCADA convention: valves 1 = closed, 2 = open; pumps 1 = off, 2 = on.
Code 0 (transitional) is part of the alphabet but never emitted.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .timeseries import Episode, Label, Schema

CLOSED, OPEN = 1, 2
OFF, ON = 1, 2
KINDS = ("actuator_stuck", "sensor_spoof", "delayed_effect")


class ScriptError(ValueError):
    pass


@dataclass(frozen=True)
class PlantConfig:
    tanks: int = 1
    level_limits: tuple = (0.0, 1000.0)
    flow_limits: tuple = (-0.05, 19.95)
    capacity: float = 1100.0
    initial_level: float = 602.5
    inflow: float = 10.0
    outflow: float = 5.0
    valve_open_below: float = 500.0
    valve_close_above: float = 800.0
    pump_on_above: float = 250.0
    pump_off_below: float = 200.0
    noise_sd: float = 0.5
    tick_seconds: float = 1.0
    sensor_bins: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "level_limits", tuple(float(v) for v in self.level_limits))
        object.__setattr__(self, "flow_limits", tuple(float(v) for v in self.flow_limits))
        if self.tanks < 1:
            raise ValueError("tanks must be >= 1")
        for lo, hi in (self.level_limits, self.flow_limits):
            if not hi > lo:
                raise ValueError("limits need hi > lo")
        if not (self.inflow > 0 and self.outflow > 0):
            raise ValueError("flow rates must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if not self.valve_open_below < self.valve_close_above:
            raise ValueError("valve hysteresis needs open_below < close_above")
        if not self.pump_off_below < self.pump_on_above:
            raise ValueError("pump hysteresis needs off_below < on_above")

    @classmethod
    def from_mapping(cls, m: dict) -> "PlantConfig":
        names = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in m.items() if k in names})

    def schema(self) -> Schema:
        sensors, limits, acts = [], [], []
        for k in range(1, self.tanks + 1):
            sensors += [f"FIT{k}01", f"LIT{k}01"]
            limits += [self.flow_limits, self.level_limits]
            acts += [f"MV{k}01", f"P{k}01", f"P{k}02"]
        return Schema(
            sensor_names=tuple(sensors),
            actuator_names=tuple(acts),
            actuator_cardinality=(3,) * len(acts),
            sensor_limits=tuple(limits),
            tick_seconds=self.tick_seconds,
            sensor_bins=self.sensor_bins,
        )


@dataclass(frozen=True)
class AttackScript:
    kind: str
    target: str
    start: int
    duration: int
    magnitude: float = 0.0
    value: float | None = None
    lag: int = 5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScriptError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if self.start < 0:
            raise ScriptError(f"{self.target}: start must be >= 0")
        if self.duration < 1:
            raise ScriptError(f"{self.target}: duration must be >= 1")
        if self.lag < 0:
            raise ScriptError(f"{self.target}: lag must be >= 0")

    @property
    def stop(self) -> int:
        return self.start + self.duration

    def code(self) -> int:
        """Pinned actuator code: open/on unless a value is given."""
        return int(self.value) if self.value is not None else (OPEN if self.target.startswith("MV") else ON)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


class PlantEpisode(Episode):
    """An Episode that remembers the plant and scripts that produced it."""

    def __init__(self, schema, timestamps, sensors, actuators, labels, plant: PlantConfig, scripts=()):
        super().__init__(schema, timestamps, sensors, actuators, labels)
        self.plant = plant
        self.scripts = tuple(scripts)


def _validate(scripts, schema: Schema, n: int):
    for s in scripts:
        is_act = s.target in schema.actuator_names
        if s.kind == "sensor_spoof" and s.target not in schema.sensor_names:
            raise ScriptError(f"sensor_spoof target {s.target!r} is not a sensor")
        if s.kind != "sensor_spoof" and not is_act:
            raise ScriptError(f"{s.kind} target {s.target!r} is not an actuator")
        if s.stop > n:
            raise ScriptError(f"{s.target}: window [{s.start}, {s.stop}) exceeds the {n}-tick episode")
        if is_act and not 0 <= s.code() < schema.actuator_cardinality[schema.actuator_names.index(s.target)]:
            raise ScriptError(f"{s.target}: pinned code {s.code()} out of range")
    by_target: dict[str, list] = {}
    for s in scripts:
        by_target.setdefault(s.target, []).append(s)
    for tgt, group in by_target.items():
        group = sorted(group, key=lambda s: s.start)
        for a, b in zip(group, group[1:]):
            if b.start < a.stop:
                raise ScriptError(f"overlapping scripts on {tgt}: [{a.start},{a.stop}) and [{b.start},{b.stop})")


def _run(cfg: PlantConfig, n: int, scripts=()) -> PlantEpisode:
    schema = cfg.schema()
    _validate(scripts, schema, n)
    rng = np.random.default_rng(cfg.seed)
    # draw everything up front so attacked runs share the normal run's noise
    offsets = np.zeros(cfg.tanks)
    if cfg.tanks > 1:
        offsets = 5.0 * rng.integers(-20, 21, size=cfg.tanks)
    noise = rng.normal(0.0, cfg.noise_sd, size=(n, 2 * cfg.tanks)) if cfg.noise_sd > 0 else np.zeros((n, 2 * cfg.tanks))

    n_act = 3 * cfg.tanks
    # recorded and physical overrides per tick; -1 means "controller decides"
    rec_pin = np.full((n, n_act), -1, dtype=np.int64)
    phys_pin = np.full((n, n_act), -1, dtype=np.int64)
    spoof_add = np.zeros((n, 2 * cfg.tanks))
    spoof_set = np.full((n, 2 * cfg.tanks), np.nan)
    labels = np.zeros(n, dtype=np.int8)
    for s in scripts:
        labels[s.start : s.stop] = Label.ATTACK
        if s.kind == "sensor_spoof":
            j = schema.sensor_names.index(s.target)
            if s.value is not None:
                spoof_set[s.start : s.stop, j] = s.value
            else:
                spoof_add[s.start : s.stop, j] += s.magnitude
            continue
        j = schema.actuator_names.index(s.target)
        rec_pin[s.start : s.stop, j] = s.code()
        lag = s.lag if s.kind == "delayed_effect" else 0
        phys_pin[min(s.start + lag, n) : min(s.stop + lag, n), j] = s.code()

    level = cfg.initial_level + offsets
    valve = np.full(cfg.tanks, OPEN)
    duty = np.full(cfg.tanks, ON)
    sensors = np.zeros((n, 2 * cfg.tanks))
    actuators = np.zeros((n, n_act), dtype=np.int64)
    for t in range(n):
        valve = np.where(level < cfg.valve_open_below, OPEN, np.where(level > cfg.valve_close_above, CLOSED, valve))
        duty = np.where(level > cfg.pump_on_above, ON, np.where(level < cfg.pump_off_below, OFF, duty))
        ctrl = np.stack([valve, duty, np.full(cfg.tanks, OFF)], axis=1).ravel()
        actuators[t] = np.where(rec_pin[t] >= 0, rec_pin[t], ctrl)
        phys = np.where(phys_pin[t] >= 0, phys_pin[t], ctrl).reshape(cfg.tanks, 3)
        flow_in = cfg.inflow * (phys[:, 0] == OPEN)
        flow_out = cfg.outflow * ((phys[:, 1] == ON).astype(float) + (phys[:, 2] == ON))
        sensors[t, 0::2] = flow_in
        sensors[t, 1::2] = level
        level = np.clip(level + (flow_in - flow_out) * cfg.tick_seconds, 0.0, cfg.capacity)
    sensors = sensors + noise + spoof_add
    sensors = np.where(np.isnan(spoof_set), sensors, spoof_set)
    ts = np.arange(n) * cfg.tick_seconds
    return PlantEpisode(schema, ts, sensors, actuators, labels, cfg, scripts)


def simulate(cfg: PlantConfig, n_ticks: int) -> PlantEpisode:
    if n_ticks < 1:
        raise ValueError("n_ticks must be >= 1")
    return _run(cfg, n_ticks)


def inject_attacks(episode: Episode, scripts, cfg: PlantConfig | None = None) -> PlantEpisode:
    """Re-run the plant with ``scripts`` applied; pre-attack samples are unchanged."""
    cfg = cfg or getattr(episode, "plant", None)
    if cfg is None:
        raise ScriptError("inject_attacks needs the PlantConfig that produced the episode")
    scripts = tuple(getattr(episode, "scripts", ())) + tuple(scripts)
    if not scripts:
        return episode
    return _run(cfg, len(episode), scripts)


# ---------------------------------------------------------------------------
# script generation and I/O


def valve_close_ticks(episode: Episode, tank: int = 1) -> np.ndarray:
    j = episode.schema.actuator_names.index(f"MV{tank}01")
    a = episode.actuators[:, j]
    return np.flatnonzero((a[1:] == CLOSED) & (a[:-1] == OPEN)) + 1


def default_scripts(cfg: PlantConfig, n_ticks: int, n_attacks: int = 3, duration: int = 50, seed: int = 0) -> list[AttackScript]:
    """A spread of attacks over the episode, one per equal segment.

    The kinds cycle through a stuck-open inlet valve started as the valve
    would close (the overflow scenario), a standby pump forced on, and a
    level-sensor spoof.
    """
    rng = np.random.default_rng(seed)
    base = simulate(cfg, n_ticks)
    closes = valve_close_ticks(base)
    seg = n_ticks // n_attacks
    out = []
    for a in range(n_attacks):
        lo, hi = a * seg + seg // 5, (a + 1) * seg - duration - seg // 5
        if hi <= lo:
            raise ScriptError(f"{n_ticks} ticks cannot hold {n_attacks} attacks of {duration}")
        kind = a % 3
        if kind == 0:
            cand = closes[(closes >= lo) & (closes < hi)]
            start = int(cand[rng.integers(len(cand))]) if len(cand) else int(rng.integers(lo, hi))
            out.append(AttackScript("actuator_stuck", "MV101", start, duration))
        elif kind == 1:
            out.append(AttackScript("actuator_stuck", "P102", int(rng.integers(lo, hi)), duration))
        else:
            out.append(AttackScript("sensor_spoof", "LIT101", int(rng.integers(lo, hi)), duration, magnitude=-300.0))
    return out


def load_scripts(path) -> dict[str, list[AttackScript]]:
    """Read ``[[section]]`` arrays of attack tables from TOML."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    out = {}
    for section, items in doc.items():
        if not isinstance(items, list):
            continue
        try:
            out[section] = [AttackScript(**item) for item in items]
        except TypeError as exc:
            raise ScriptError(f"{path}: malformed attack in [{section}]: {exc}") from exc
    return out


def _toml_value(v) -> str:
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_scripts(sections: dict, path) -> None:
    lines = []
    for section, scripts in sections.items():
        for s in scripts:
            lines.append(f"[[{section}]]")
            lines += [f"{k} = {_toml_value(v)}" for k, v in s.to_dict().items()]
            lines.append("")
    Path(path).write_text("\n".join(lines))

"""Detection metrics, complexity/UTT, drift, and the rank statistics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .timeseries import AttackSpan, Episode, Label, LabelError, encode_matrix, extract_attack_spans, key_matrix, scale_encoded


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred, truth) -> ConfusionCounts:
    pred = np.asarray(pred) == Label.ATTACK
    truth_arr = np.asarray(truth)
    if pred.shape != truth_arr.shape:
        raise ValueError(f"confusion: {pred.shape[0]} predictions vs {truth_arr.shape[0]} labels")
    if (truth_arr < 0).any():
        raise LabelError("confusion: truth must be fully labeled")
    truth = truth_arr == Label.ATTACK
    tp = int((pred & truth).sum())
    fp = int((pred & ~truth).sum())
    fn = int((~pred & truth).sum())
    return ConfusionCounts(tp, fp, fn, len(pred) - tp - fp - fn)


def precision(c: ConfusionCounts) -> float:
    d = c.tp + c.fp
    return c.tp / d if d else 0.0


def recall(c: ConfusionCounts) -> float:
    d = c.tp + c.fn
    return c.tp / d if d else 0.0


def f1(c: ConfusionCounts) -> float:
    p, r = precision(c), recall(c)
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _span_arrays(spans: Sequence[AttackSpan]):
    if not spans:
        raise ValueError("no attack spans to evaluate")
    starts = np.array([s.start_index for s in spans], dtype=np.int64)
    ends = np.array([s.end_index for s in spans], dtype=np.int64)
    return starts, ends


def acr(pred, spans: Sequence[AttackSpan]) -> float:
    """Fraction of attacks with at least half of their samples flagged."""
    starts, ends = _span_arrays(spans)
    hits, _ = kernels.span_stats(np.asarray(pred) == Label.ATTACK, starts, ends)
    need = -(-(ends - starts + 1) // 2)
    return float((hits >= need).sum() / len(spans))


def ddt(pred, spans: Sequence[AttackSpan]) -> float:
    """Mean over attacks of the missed-prefix fraction."""
    starts, ends = _span_arrays(spans)
    _, lead = kernels.span_stats(np.asarray(pred) == Label.ATTACK, starts, ends)
    return float(np.mean(lead / (ends - starts + 1)))


# ---------------------------------------------------------------------------
# rank statistics


def midranks(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


@dataclass(frozen=True)
class TestResult:
    u_statistic: float
    p_value: float
    a12: float

    __test__ = False


def mann_whitney(a, b) -> tuple[float, float]:
    """U for ``a`` and the two-sided normal-approximation p-value."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("mann_whitney: both samples must be non-empty")
    na, nb = len(a), len(b)
    n = na + nb
    ranks = midranks(np.concatenate([a, b]))
    u = float(ranks[:na].sum() - na * (na + 1) / 2)
    _, counts = np.unique(np.concatenate([a, b]), return_counts=True)
    tie = float((counts**3 - counts).sum())
    var = na * nb / 12.0 * ((n + 1) - (tie / (n * (n - 1)) if n > 1 else 0.0))
    if var <= 0:
        return u, 1.0
    mu = na * nb / 2.0
    z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(var)
    return u, min(1.0, math.erfc(z / math.sqrt(2)))


def a12(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("a12: both samples must be non-empty")
    greater, ties = kernels.dominance(a, b)
    return (greater + 0.5 * ties) / (len(a) * len(b))


def compare_samples(a, b) -> TestResult:
    u, p = mann_whitney(a, b)
    return TestResult(u, p, a12(a, b))


@dataclass(frozen=True)
class SpearmanResult:
    rho: float
    degenerate: bool


def spearman(a, b) -> SpearmanResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("spearman: need two equal-length series of at least 2 values")
    ra, rb = midranks(a), midranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    den = math.sqrt(float((ra * ra).sum() * (rb * rb).sum()))
    if den == 0:
        return SpearmanResult(0.0, True)
    return SpearmanResult(float(np.clip((ra * rb).sum() / den, -1.0, 1.0)), False)


# ---------------------------------------------------------------------------
# drift, complexity, timing


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def kl_drift(episode: Episode, window_len: int, n_pairs: int, seed: int, mode: str = "sample", bins: int = 10) -> float:
    """Mean KL between samples of the first and last ``window_len`` rows."""
    n = len(episode)
    if window_len < 1 or n < 2 * window_len:
        raise ValueError(f"kl_drift: episode of {n} samples is shorter than two windows of {window_len}")
    X = scale_encoded(encode_matrix(episode), episode.schema)
    first, last = X[:window_len], X[n - window_len :]
    if mode == "histogram":
        edges = np.linspace(0.0, 1.0, bins + 1)
        p = np.stack([np.histogram(np.clip(first[:, j], 0, 1), edges)[0] for j in range(X.shape[1])]) / window_len
        q = np.stack([np.histogram(np.clip(last[:, j], 0, 1), edges)[0] for j in range(X.shape[1])]) / window_len
        return float(kernels.kl_rows(p, q).mean())
    if mode != "sample":
        raise ValueError("kl_drift mode must be 'sample' or 'histogram'")
    rng = np.random.default_rng(seed)
    pairs = rng.integers(0, window_len, size=(n_pairs, 2))
    p = _softmax_rows(first[pairs[:, 0]])
    q = _softmax_rows(last[pairs[:, 1]])
    return float(kernels.kl_rows(p, q).mean())


@dataclass(frozen=True)
class DriftConfig:
    window_len: int = 500
    n_pairs: int = 200
    seed: int = 0
    mode: str = "sample"


@dataclass(frozen=True)
class ComplexityBreakdown:
    s_cps_static: float
    s_cps_automatic: float
    s_att: float
    s_dat_size: float
    s_dat_drift: float

    @property
    def total(self) -> float:
        return self.s_cps_static + self.s_cps_automatic + self.s_att + self.s_dat_size + self.s_dat_drift

    def to_dict(self) -> dict:
        d = asdict(self)
        d["S"] = self.total
        return d


RAW_FEATURES = ("n_dims", "sa_ratio", "n_active", "active_ratio", "n_attacks", "attack_ratio", "attack_types", "n_samples")

# documented fixed bounds for single-dataset use
DEFAULT_BOUNDS = {
    "n_dims": (0.0, 100.0),
    "sa_ratio": (0.0, 5.0),
    "n_active": (0.0, 100.0),
    "active_ratio": (0.0, 5.0),
    "n_attacks": (0.0, 50.0),
    "attack_ratio": (0.0, 0.5),
    "attack_types": (0.0, 10.0),
    "n_samples": (0.0, 1_000_000.0),
}


def raw_complexity(episode: Episode, spans=None, drift: DriftConfig | None = None) -> dict:
    labels = episode.require_labels("complexity")
    schema = episode.schema
    spans = extract_attack_spans(episode) if spans is None else list(spans)
    n_s, n_a = schema.n_sensors, schema.n_actuators
    keys = key_matrix(episode)
    active = np.array([len(np.unique(keys[:, j])) >= 2 for j in range(keys.shape[1])], dtype=bool)
    active_a = int(active[:n_a].sum())
    active_s = int(active[n_a:].sum())
    lengths = np.array([len(s) for s in spans], dtype=np.int64)
    if len(lengths):
        deciles = np.minimum(10 * lengths // lengths.max(), 9)
        types = len(np.unique(deciles))
    else:
        types = 0
    drift = drift or DriftConfig()
    win = min(drift.window_len, len(episode) // 2)
    return {
        "n_dims": float(n_s + n_a),
        "sa_ratio": n_s / n_a if n_a else float(n_s),
        "n_active": float(active_s + active_a),
        "active_ratio": active_s / max(active_a, 1),
        "n_attacks": float(len(spans)),
        "attack_ratio": float((labels == Label.ATTACK).mean()),
        "attack_types": float(types),
        "n_samples": float(len(episode)),
        "drift": kl_drift(episode, win, drift.n_pairs, drift.seed, drift.mode),
    }


def _breakdown(raw: dict, z) -> ComplexityBreakdown:
    return ComplexityBreakdown(
        s_cps_static=z("n_dims") + z("sa_ratio"),
        s_cps_automatic=z("n_active") + z("active_ratio"),
        s_att=z("n_attacks") + z("attack_ratio") + z("attack_types"),
        s_dat_size=z("n_samples"),
        s_dat_drift=raw["drift"],
    )


def complexity(episode: Episode, spans=None, schema=None, drift_cfg: DriftConfig | None = None, bounds=None) -> ComplexityBreakdown:
    """Single-dataset complexity against fixed reference bounds."""
    if schema is not None and schema != episode.schema:
        raise ValueError("complexity: schema does not match the episode")
    raw = raw_complexity(episode, spans, drift_cfg)
    bounds = {**DEFAULT_BOUNDS, **(bounds or {})}

    def z(name):
        lo, hi = bounds[name]
        return float(np.clip((raw[name] - lo) / (hi - lo), 0.0, 1.0)) if hi > lo else 0.0

    return _breakdown(raw, z)


def complexity_collection(episodes: Sequence[Episode], drift_cfg: DriftConfig | None = None) -> list[ComplexityBreakdown]:
    """Complexity of each episode, min-max normalized across the collection."""
    raws = [raw_complexity(e, None, drift_cfg) for e in episodes]
    out = []
    for raw in raws:

        def z(name, raw=raw):
            col = [r[name] for r in raws]
            lo, hi = min(col), max(col)
            return (raw[name] - lo) / (hi - lo) if hi > lo else 0.0

        out.append(_breakdown(raw, z))
    return out


@dataclass(frozen=True)
class RunTiming:
    start: float
    convergence: float

    @property
    def tt(self) -> float:
        return max(0.0, self.convergence - self.start)


def utt(tt: float, S: float) -> float:
    if not S > 0:
        raise ValueError(f"utt: complexity S must be positive, got {S}")
    return tt / S


def detection_report(pred, truth, spans=None) -> dict:
    truth = np.asarray(truth)
    c = confusion(pred, truth)
    if spans is None:
        from .timeseries import spans_from_mask

        spans = spans_from_mask(truth == Label.ATTACK)
    rep = {
        "tp": c.tp,
        "fp": c.fp,
        "fn": c.fn,
        "tn": c.tn,
        "precision": precision(c),
        "recall": recall(c),
        "f1": f1(c),
    }
    if spans:
        rep["acr"] = acr(pred, spans)
        rep["ddt"] = ddt(pred, spans)
        rep["n_attacks"] = len(spans)
    return rep

"""Per-sample difficulty: predefined measurers, DTM-driven measurers, combination."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from . import kernels
from .dtm import TimedAutomaton, label_episode, one_step_predictions
from .timeseries import (
    AttackSpan,
    Episode,
    EncodedState,
    Label,
    LabelError,
    encode_matrix,
    key_matrix,
    scale_encoded,
)

VARIANTS = ("full", "auto_only", "pdm_only", "hdm_only", "cem_only", "cb1", "cb2", "none")

# ablation name -> scoring variant
ABLATIONS = {
    "full": "full",
    "-PDM": "auto_only",
    "-CEM": "cb1",
    "-HDM": "cb2",
    "-CEM-HDM": "pdm_only",
    "-CL": "none",
}

MISMATCH_EPS = 1e-6


@dataclass(frozen=True)
class MeasurerConfig:
    s_window: int = 60
    lam: float = 0.5
    context_len: int = 50
    diversity_mode: str = "neg_log"
    hdm_mode: str = "mismatch"
    vulnerability_mode: str = "inverse"
    tau_gt: float = 0.1

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise ValueError("lambda must lie strictly between 0 and 1")
        if self.s_window < 1:
            raise ValueError("s_window must be >= 1")
        if self.context_len < 2:
            raise ValueError("context_len must be >= 2")
        if self.diversity_mode not in ("neg_log", "raw"):
            raise ValueError("diversity_mode must be 'neg_log' or 'raw'")
        if self.hdm_mode not in ("mismatch", "literal_sum"):
            raise ValueError("hdm_mode must be 'mismatch' or 'literal_sum'")
        if self.vulnerability_mode not in ("inverse", "literal"):
            raise ValueError("vulnerability_mode must be 'inverse' or 'literal'")

    @classmethod
    def from_mapping(cls, m: dict) -> "MeasurerConfig":
        names = {f.name for f in fields(cls)}
        kw = {k: v for k, v in m.items() if k in names}
        if "lambda" in m:
            kw["lam"] = m["lambda"]
        return cls(**kw)


@dataclass
class ScoredSample:
    index: int
    s_comp: float = 0.0
    s_div: float = 0.0
    s_noi: float = 0.0
    s_vul: float = 0.0
    s_pdm: float = 0.0
    s_auto: float = 0.0
    s_final: float = 0.0
    batch_number: int = 0


COMPONENTS = ("s_comp", "s_div", "s_noi", "s_vul", "s_pdm", "s_auto", "s_final")


class Scores(Sequence):
    """Column-wise score table that reads as a sequence of ScoredSample."""

    def __init__(self, columns: dict[str, np.ndarray], variant: str = "none"):
        n = len(next(iter(columns.values())))
        self.index = np.arange(n)
        for name in COMPONENTS:
            setattr(self, name, np.asarray(columns.get(name, np.zeros(n)), dtype=np.float64))
        self.batch_number = np.asarray(columns.get("batch_number", np.zeros(n)), dtype=np.int64)
        self.variant = variant

    def __len__(self):
        return len(self.index)

    def __getitem__(self, i):
        return ScoredSample(
            int(self.index[i]), *(float(getattr(self, c)[i]) for c in COMPONENTS), int(self.batch_number[i])
        )

    def columns(self) -> dict[str, np.ndarray]:
        return {c: getattr(self, c) for c in COMPONENTS}


def normalize(x) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant set maps to all zeros."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


# ---------------------------------------------------------------------------
# predefined components, whole-episode forms


def complexity_scores(episode: Episode, cfg: MeasurerConfig) -> np.ndarray:
    return kernels.trailing_distinct(key_matrix(episode), cfg.context_len).astype(np.float64)


def actuator_frequencies(episode: Episode) -> list[np.ndarray]:
    n = len(episode)
    out = []
    for j, k in enumerate(episode.schema.actuator_cardinality):
        counts = np.bincount(episode.actuators[:, j], minlength=k)
        freq = counts / n if n else np.zeros(k)
        out.append(np.maximum(freq, 1.0 / (n + k)))
    return out


def diversity_scores(episode: Episode, cfg: MeasurerConfig, freqs=None) -> np.ndarray:
    if freqs is None:
        freqs = actuator_frequencies(episode)
    p = np.ones(len(episode))
    for j, f in enumerate(freqs):
        p = p * f[episode.actuators[:, j]]
    if cfg.diversity_mode == "raw":
        return p
    return -np.log(p)


def noise_scores(episode: Episode, cfg: MeasurerConfig) -> np.ndarray:
    return kernels.trailing_noise(episode.sensors, cfg.context_len)


def attack_distances(labels) -> np.ndarray:
    mask = np.asarray(labels) == Label.ATTACK
    if not mask.any():
        raise LabelError("vulnerability needs at least one Attack label")
    return kernels.attack_distance(mask)


def vulnerability_scores(labels, cfg: MeasurerConfig) -> np.ndarray:
    d = attack_distances(labels)
    norm = normalize(d // cfg.s_window)
    if cfg.vulnerability_mode == "inverse":
        # 1 - 0 stays 0 for constant sets so the all-zero convention holds
        return np.where(norm.max() > 0, 1.0 - norm, 0.0) if norm.size else norm
    return norm


def labels_from_spans(n: int, spans: Sequence[AttackSpan]) -> np.ndarray:
    labels = np.zeros(n, dtype=np.int8)
    for sp in spans:
        labels[sp.start_index : sp.end_index + 1] = Label.ATTACK
    return labels


# ---------------------------------------------------------------------------
# single-sample forms


def score_complexity(episode: Episode, i: int, cfg: MeasurerConfig) -> float:
    lo = max(0, i - cfg.context_len + 1)
    return float(complexity_scores(episode.slice(slice(lo, i + 1)), cfg)[-1])


def score_diversity(episode: Episode, i: int, cfg: MeasurerConfig, freqs=None) -> float:
    if freqs is None:
        freqs = actuator_frequencies(episode)
    return float(diversity_scores(episode.slice(slice(i, i + 1)), cfg, freqs)[0])


def score_noise(episode: Episode, i: int, cfg: MeasurerConfig) -> float:
    lo = i - cfg.context_len
    if lo < 0:
        return 0.0
    return float(noise_scores(episode.slice(slice(lo, i + 1)), cfg)[-1])


def score_vulnerability(episode: Episode, i: int, spans, cfg: MeasurerConfig) -> float:
    if spans:
        labels = labels_from_spans(len(episode), spans)
    else:
        labels = episode.require_labels("vulnerability scoring")
    return float(vulnerability_scores(labels, cfg)[i])


def score_pdm(episode: Episode, i: int, spans, cfg: MeasurerConfig) -> float:
    labels = labels_from_spans(len(episode), spans) if spans else episode.require_labels("vulnerability scoring")
    return float(pdm_scores(episode, labels, cfg)["s_pdm"][i])


def pdm_scores(episode: Episode, labels, cfg: MeasurerConfig) -> dict[str, np.ndarray]:
    comp = complexity_scores(episode, cfg)
    div = diversity_scores(episode, cfg)
    noi = noise_scores(episode, cfg)
    vul = vulnerability_scores(labels, cfg)
    pdm = (normalize(comp) + normalize(div) + normalize(noi) + normalize(vul)) / 4.0
    return {"s_comp": comp, "s_div": div, "s_noi": noi, "s_vul": vul, "s_pdm": pdm}


# ---------------------------------------------------------------------------
# automatic measurers


def _values(u):
    return np.asarray(u.values if isinstance(u, EncodedState) else u, dtype=np.float64)


def score_hdm(u, u_hat, mode: str = "mismatch") -> float:
    u, u_hat = _values(u), _values(u_hat)
    if u.shape != u_hat.shape:
        raise ValueError(f"score_hdm: length mismatch {u.shape} vs {u_hat.shape}")
    return float(hdm_rows(u[None, :], u_hat[None, :], mode)[0])


def hdm_rows(u: np.ndarray, u_hat: np.ndarray, mode: str = "mismatch") -> np.ndarray:
    if mode == "literal_sum":
        return (u_hat + u).sum(axis=-1) / u.shape[-1]
    return (np.abs(u_hat - u) > MISMATCH_EPS).mean(axis=-1)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def score_cem(u, u_hat) -> float:
    u, u_hat = _values(u), _values(u_hat)
    if u.shape != u_hat.shape or u.size == 0:
        raise ValueError(f"score_cem: length mismatch {u.shape} vs {u_hat.shape}")
    return float(cem_rows(u[None, :], u_hat[None, :])[0])


def cem_rows(u: np.ndarray, u_hat: np.ndarray) -> np.ndarray:
    p = np.exp(_log_softmax(u))
    return -(p * _log_softmax(u_hat)).sum(axis=-1)


def score_combined(s_auto: float, s_pdm: float, lam: float) -> float:
    if not 0 < lam < 1:
        raise ValueError("lambda must lie strictly between 0 and 1")
    return s_auto + lam * s_pdm


def automatic_scores(episode: Episode, automaton: TimedAutomaton, cfg: MeasurerConfig) -> dict[str, np.ndarray]:
    """HDM and CEM of each observation against the DTM's one-step prediction.

    Both vectors are range-scaled first so raw sensor magnitudes and their
    limit columns do not swamp the comparison.
    """
    schema = episode.schema
    obs = scale_encoded(encode_matrix(episode), schema)
    pred_raw, _ = one_step_predictions(automaton, episode)
    pred = scale_encoded(pred_raw, schema)
    return {"hdm": hdm_rows(obs, pred, cfg.hdm_mode), "cem": cem_rows(obs, pred)}


# ---------------------------------------------------------------------------
# episode scoring


def _episode_labels(episode: Episode, automaton, cfg) -> np.ndarray:
    if (episode.labels >= 0).all() and len(episode):
        return episode.labels
    if automaton is None:
        raise LabelError("vulnerability scoring needs labels or an automaton to derive them")
    return label_episode(automaton, episode, cfg.tau_gt)


def score_episode(
    episode: Episode,
    automaton: TimedAutomaton | None,
    cfg: MeasurerConfig | None = None,
    variant: str = "cb2",
) -> Scores:
    cfg = cfg or MeasurerConfig()
    variant = ABLATIONS.get(variant, variant)
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    n = len(episode)
    cols: dict[str, np.ndarray] = {}
    if variant == "none" or n == 0:
        return Scores({c: np.zeros(n) for c in COMPONENTS}, variant)

    uses_pdm = variant in ("full", "pdm_only", "cb1", "cb2")
    uses_hdm = variant in ("full", "auto_only", "hdm_only", "cb1")
    uses_cem = variant in ("full", "auto_only", "cem_only", "cb2")
    if uses_pdm:
        cols.update(pdm_scores(episode, _episode_labels(episode, automaton, cfg), cfg))
    if uses_hdm or uses_cem:
        if automaton is None:
            raise ValueError(f"variant {variant!r} needs a learned automaton")
        auto = automatic_scores(episode, automaton, cfg)
        parts = []
        if uses_hdm:
            parts.append(normalize(auto["hdm"]))
        if uses_cem:
            parts.append(normalize(auto["cem"]))
        cols["s_auto"] = sum(parts) / len(parts)

    if variant == "pdm_only":
        final = cols["s_pdm"]
    elif variant in ("hdm_only", "cem_only", "auto_only"):
        final = cols["s_auto"]
    else:
        final = normalize(cols["s_auto"] + cfg.lam * cols["s_pdm"])
    cols["s_final"] = final
    return Scores(cols, variant)


def spearman_table(scores: Scores, labels) -> dict[str, float]:
    """Spearman correlation of each difficulty column with the attack labels."""
    from .metrics import spearman

    out = {}
    for c in COMPONENTS:
        res = spearman(getattr(scores, c), np.asarray(labels, dtype=np.float64))
        out[c] = res.rho
    return out

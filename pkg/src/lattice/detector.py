"""GAN detector: gated-GCN + LSTM generator and a 4-class discriminator."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .curriculum import Curriculum, SchedulerState, epoch_batches, is_done, report_loss
from .timeseries import Episode, Label, Layout, Schema, encode_matrix, scale_encoded, window_indices

log = logging.getLogger(__name__)

FORMAT = "lattice-detector"
VERSION = 1

REAL_NORMAL, REAL_ATTACK, ADV_NORMAL, ADV_ATTACK = range(4)
CLASS_WEIGHTS = ("balanced", "sqrt", "none")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    hidden_dim: int = 100
    window_size: int = 4
    learning_rate: float = 0.05
    max_epochs: int = 500
    seed: int = 0
    detect_threshold: float = 0.5
    class_weight: str = "sqrt"
    optimizer: str = "sgd"

    def __post_init__(self):
        for name in ("batch_size", "hidden_dim", "window_size", "max_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.detect_threshold < 1:
            raise ValueError("detect_threshold must lie in (0, 1)")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.class_weight not in CLASS_WEIGHTS:
            raise ValueError(f"class_weight must be one of {CLASS_WEIGHTS}")

    @classmethod
    def from_mapping(cls, m: dict) -> "TrainConfig":
        names = set(cls.__dataclass_fields__)
        kw = {k: v for k, v in m.items() if k in names}
        if "tau" in m:
            kw["detect_threshold"] = m["tau"]
        return cls(**kw)


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def _param(value, name) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# parameters


def init_generator(layout: Layout, hidden: int, rng) -> dict[str, Tensor]:
    v, f, n = len(layout.node_slices), layout.max_width, layout.length
    p = {
        "P": _uniform(rng, (v, v), 0.1),
        "W_c": _uniform(rng, (v, v), 1 / math.sqrt(v)),
        "b_c": np.zeros(v),
        "W_w": _uniform(rng, (v, v), 1 / math.sqrt(v)),
        "b_w": np.zeros(v),
        "gcn_0": _uniform(rng, (f, hidden), 1 / math.sqrt(f)),
        "gcn_1": _uniform(rng, (hidden, hidden), 1 / math.sqrt(hidden)),
        "lstm_W": _uniform(rng, (2 * hidden, 4 * hidden), 1 / math.sqrt(2 * hidden)),
        "lstm_b": np.zeros(4 * hidden),
        "out_W": _uniform(rng, (hidden, n), 1 / math.sqrt(hidden)),
        "out_b": np.zeros(n),
    }
    return {k: _param(val, k) for k, val in p.items()}


def init_discriminator(length: int, hidden: int, rng) -> dict[str, Tensor]:
    p = {
        "W1": _uniform(rng, (length, hidden), 1 / math.sqrt(length)),
        "b1": np.zeros(hidden),
        "W2": _uniform(rng, (hidden, hidden), 1 / math.sqrt(hidden)),
        "b2": np.zeros(hidden),
        # zero head: the first predictions are uniform over the 4 classes
        "W3": np.zeros((hidden, 4)),
        "b3": np.zeros(4),
    }
    return {k: _param(val, k) for k, val in p.items()}


# ---------------------------------------------------------------------------
# forward passes


def gated_edges(P, params) -> Tensor:
    P = ad.as_tensor(P)
    if P.value.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ad.ShapeError(f"gated_edges: P must be square, got {P.shape}")
    cand = ad.tanh(ad.add(ad.matmul(P, params["W_c"]), params["b_c"]))
    gate = ad.sigmoid(ad.add(ad.matmul(P, params["W_w"]), params["b_w"]))
    return ad.mul(gate, cand)


def normalized_adjacency(E) -> Tensor:
    E = ad.as_tensor(E)
    a = ad.add(ad.absolute(E), np.eye(E.shape[0]))
    return ad.div(a, ad.sum_(a, axis=-1, keepdims=True))


def gcn_forward(E, H0, weights) -> Tensor:
    a_hat = normalized_adjacency(E)
    h = ad.as_tensor(H0)
    for w in weights:
        h = ad.relu(ad.matmul(a_hat, ad.matmul(h, w)))
    return h


def node_features(X: np.ndarray, layout: Layout) -> np.ndarray:
    """(n, L) encoded rows to (n, V, F): each node's slice, zero-padded."""
    out = np.zeros((X.shape[0], len(layout.node_slices), layout.max_width))
    for v, sl in enumerate(layout.node_slices):
        out[:, v, : sl.stop - sl.start] = X[:, sl]
    return out


def lstm(xs: list[Tensor], W, b, hidden: int) -> Tensor:
    batch = xs[0].shape[0]
    h = Tensor(np.zeros((batch, hidden)))
    c = Tensor(np.zeros((batch, hidden)))
    H = hidden
    for x in xs:
        z = ad.add(ad.matmul(ad.concat([x, h], axis=-1), W), b)
        i = ad.sigmoid(z[:, :H])
        f = ad.sigmoid(z[:, H : 2 * H])
        o = ad.sigmoid(z[:, 2 * H : 3 * H])
        g = ad.tanh(z[:, 3 * H :])
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
    return h


def generator_forward(H0_windows, params, window_size: int | None = None) -> Tensor:
    """(B, w, V, F) node-feature windows to (B, L) adversarial samples."""
    H0 = np.asarray(H0_windows, dtype=np.float64)
    if H0.ndim == 3:
        H0 = H0[None]
    if window_size is not None and H0.shape[1] < window_size:
        raise ad.ShapeError(f"generator_forward: window of {H0.shape[1]} rows, need {window_size}")
    hidden = params["gcn_1"].shape[1]
    E = gated_edges(params["P"], params)
    gcn = gcn_forward(E, H0, [params["gcn_0"], params["gcn_1"]])
    spatial = ad.max_pool_rows(gcn, axis=-2)  # (B, w, hidden)
    steps = [spatial[:, t, :] for t in range(H0.shape[1])]
    h = lstm(steps, params["lstm_W"], params["lstm_b"], hidden)
    return ad.add(ad.matmul(h, params["out_W"]), params["out_b"])


def discriminator_logits(x, params) -> Tensor:
    x = ad.as_tensor(x)
    if x.value.ndim == 1:
        x = ad.reshape(x, (1, -1))
    if x.shape[-1] != params["W1"].shape[0]:
        raise ad.ShapeError(f"discriminator: input width {x.shape[-1]}, expected {params['W1'].shape[0]}")
    h = ad.relu(ad.add(ad.matmul(x, params["W1"]), params["b1"]))
    h = ad.relu(ad.add(ad.matmul(h, params["W2"]), params["b2"]))
    return ad.add(ad.matmul(h, params["W3"]), params["b3"])


def discriminator_forward(x, params) -> Tensor:
    return ad.softmax(discriminator_logits(x, params), axis=-1)


def gan_losses(G, D, windows, reals, labels, fake=None):
    """Discriminator and generator cross-entropies for one batch.

    With ``fake`` given the generator output is reused (detached for D).
    """
    if fake is None:
        fake = generator_forward(windows, G)
    return discriminator_loss(D, reals, fake, labels), generator_loss(D, fake, labels), fake


def discriminator_loss(D, reals, fake, labels, weight=None) -> Tensor:
    """Real rows target classes 0/1, detached fakes target 2/3."""
    labels = np.asarray(labels, dtype=np.int64)
    x = ad.concat([ad.as_tensor(reals), Tensor(fake.value)], axis=0)
    w = None if weight is None else np.concatenate([weight, weight])
    return ad.cross_entropy(discriminator_logits(x, D), np.concatenate([labels, labels + 2]), w)


def generator_loss(D, fake, labels, weight=None) -> Tensor:
    """Fakes should pass as their real counterparts' class."""
    return ad.cross_entropy(discriminator_logits(fake, D), np.asarray(labels, dtype=np.int64), weight)


def class_weights(labels: np.ndarray, mode: str = "balanced") -> np.ndarray:
    """Per-sample weights; ``balanced`` gives each present class equal total mass,
    ``sqrt`` goes halfway there (square root of the balanced weights)."""
    if mode == "none":
        return np.ones(len(labels))
    counts = np.bincount(labels, minlength=2).astype(np.float64)
    per_class = np.where(counts > 0, len(labels) / (2.0 * np.maximum(counts, 1.0)), 0.0)
    if mode == "sqrt":
        per_class = np.sqrt(per_class)
    return per_class[labels]


# ---------------------------------------------------------------------------
# model


@dataclass
class DetectorModel:
    schema: Schema
    config: TrainConfig
    G: dict = field(repr=False)
    D: dict = field(repr=False)
    mean: np.ndarray | None = field(default=None, repr=False)
    std: np.ndarray | None = field(default=None, repr=False)

    @property
    def layout(self) -> Layout:
        return self.schema.layout

    def to_dict(self) -> dict:
        def dump(params):
            return {k: {"shape": list(t.shape), "values": t.value.ravel().tolist()} for k, t in params.items()}

        return {
            "format": FORMAT,
            "version": VERSION,
            "schema": self.schema.to_dict(),
            "config": asdict(self.config),
            "generator": dump(self.G),
            "discriminator": dump(self.D),
            "standardize": {"mean": self.mean.tolist(), "std": self.std.tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorModel":
        if d.get("format") != FORMAT or d.get("version") != VERSION:
            raise ValueError(f"not a {FORMAT} v{VERSION} file")

        def load(m):
            return {k: _param(np.array(v["values"], dtype=np.float64).reshape(v["shape"]), k) for k, v in m.items()}

        st = d["standardize"]
        return cls(
            Schema.from_dict(d["schema"]),
            TrainConfig(**d["config"]),
            load(d["generator"]),
            load(d["discriminator"]),
            np.array(st["mean"], dtype=np.float64),
            np.array(st["std"], dtype=np.float64),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "DetectorModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def feature_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column mean and std; constant columns keep unit scale."""
    sd = X.std(axis=0)
    return X.mean(axis=0), np.where(sd < 1e-9, 1.0, sd)


def _features(episode: Episode, mean=None, std=None):
    """Standardized rows and their per-node view."""
    X = scale_encoded(encode_matrix(episode), episode.schema)
    if mean is None:
        mean, std = feature_stats(X)
    X = (X - mean) / std
    return X, node_features(X, episode.schema.layout), mean, std


class SGD:
    def __init__(self, params: dict, lr: float):
        self.params, self.lr = params, lr

    def step(self):
        for t in self.params.values():
            if t.grad is not None:
                t.value -= self.lr * t.grad
                t.grad = None


class Adam:
    def __init__(self, params: dict, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.params, self.lr, self.b1, self.b2, self.eps = params, lr, b1, b2, eps
        self.m = {k: np.zeros_like(t.value) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.value) for k, t in params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        c1, c2 = 1 - self.b1**self.t, 1 - self.b2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad * p.grad
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None


OPTIMIZERS = {"sgd": SGD, "adam": Adam}


def _zero(params: dict):
    for t in params.values():
        t.grad = None


def train(
    episode: Episode,
    labels,
    curriculum: Curriculum,
    scheduler: SchedulerState,
    cfg: TrainConfig | None = None,
    on_epoch=None,
):
    """Baby-Step GAN training. Returns (model, trace)."""
    cfg = cfg or TrainConfig()
    labels = np.asarray(labels)
    if labels.shape != (len(episode),) or (labels < 0).any():
        raise TrainingError("train needs one Normal/Attack label per sample")
    labels = (labels == Label.ATTACK).astype(np.int64)
    rng = np.random.default_rng(cfg.seed)
    layout = episode.schema.layout
    G = init_generator(layout, cfg.hidden_dim, rng)
    D = init_discriminator(layout.length, cfg.hidden_dim, rng)
    X, H, mean, std = _features(episode)
    opt_d = OPTIMIZERS[cfg.optimizer](D, cfg.learning_rate)
    opt_g = OPTIMIZERS[cfg.optimizer](G, cfg.learning_rate)
    sw = class_weights(labels, cfg.class_weight)
    trace = []
    epoch = 0
    while not is_done(scheduler) and epoch < cfg.max_epochs:
        stage, merged = scheduler.stage, len(scheduler.merged)
        d_sum = g_sum = 0.0
        batches = epoch_batches(scheduler, curriculum, cfg.batch_size)
        for idx in batches:
            win = H[window_indices(len(episode), cfg.window_size, idx)]
            tape = Tape()
            with tape:
                fake = generator_forward(win, G)
            with Tape() as d_tape:
                d_loss = discriminator_loss(D, X[idx], fake, labels[idx], sw[idx])
            d_tape.backward(d_loss)
            opt_d.step()
            with tape:
                g_loss = generator_loss(D, fake, labels[idx], sw[idx])
            tape.backward(g_loss)
            _zero(D)
            opt_g.step()
            dv, gv = float(d_loss.value), float(g_loss.value)
            if not (math.isfinite(dv) and math.isfinite(gv)):
                raise TrainingError(f"non-finite loss at epoch {epoch} stage {stage}: d={dv} g={gv}")
            d_sum += dv
            g_sum += gv
        d_mean, g_mean = d_sum / len(batches), g_sum / len(batches)
        n_events = len(scheduler.events)
        report_loss(scheduler, d_mean, curriculum)
        rec = {
            "epoch": epoch,
            "stage": stage,
            "merged": merged,
            "d_loss": d_mean,
            "g_loss": g_mean,
            "events": scheduler.events[n_events:],
        }
        trace.append(rec)
        log.debug("epoch %d stage %d merged %d d=%.5f g=%.5f", epoch, stage, merged, d_mean, g_mean)
        if on_epoch is not None:
            on_epoch(rec)
        epoch += 1
    if not is_done(scheduler):
        log.warning("max_epochs=%d reached before the curriculum finished", cfg.max_epochs)
    return DetectorModel(episode.schema, cfg, G, D, mean, std), trace


def attack_probability(episode: Episode, model: DetectorModel) -> np.ndarray:
    if episode.schema != model.schema:
        raise ValueError("episode schema does not match the model's schema")
    X, _, _, _ = _features(episode, model.mean, model.std)
    probs = discriminator_forward(X, model.D).value
    return probs[:, REAL_ATTACK] + probs[:, ADV_ATTACK]


def detect(episode: Episode, model: DetectorModel, tau: float | None = None) -> np.ndarray:
    tau = model.config.detect_threshold if tau is None else tau
    pred = (attack_probability(episode, model) > tau).astype(np.int8)
    w = model.config.window_size
    if len(pred) >= w:
        pred[: w - 1] = pred[w - 1]
    elif len(pred):
        pred[:] = pred[-1]
    return pred

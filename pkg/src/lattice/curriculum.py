"""Easy-to-hard bucketing and the Baby Step scheduler."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class SchedulerError(RuntimeError):
    pass


@dataclass(frozen=True)
class Curriculum:
    buckets: tuple[np.ndarray, ...]
    order: np.ndarray
    scores: np.ndarray

    @property
    def k(self) -> int:
        return len(self.buckets)

    def __len__(self):
        return len(self.order)


def _final_scores(scores) -> np.ndarray:
    if hasattr(scores, "s_final"):
        col = scores.s_final
        if isinstance(col, np.ndarray):
            return col.astype(np.float64)
        return np.array([col], dtype=np.float64)
    return np.array([getattr(s, "s_final", s) for s in scores], dtype=np.float64)


def bucket_sizes(n: int, k: int) -> list[int]:
    base, extra = divmod(n, k)
    return [base + 1] * extra + [base] * (k - extra)


def build_curriculum(scores, k: int) -> Curriculum:
    """Sort ascending by s_final (stable, ties by index) and cut into k buckets."""
    s = _final_scores(scores)
    n = len(s)
    if n == 0:
        raise ValueError("cannot build a curriculum from no samples")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} buckets exceed the {n} samples")
    order = np.argsort(s, kind="stable")
    cuts = np.cumsum([0] + bucket_sizes(n, k))
    buckets = tuple(order[cuts[b] : cuts[b + 1]] for b in range(k))
    return Curriculum(buckets, order, s)


def assign_batch_numbers(curriculum: Curriculum, batch_size: int) -> np.ndarray:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    out = np.zeros(len(curriculum), dtype=np.int64)
    out[curriculum.order] = np.arange(len(curriculum)) // batch_size + 1
    return out


@dataclass
class SchedulerState:
    merged: np.ndarray
    next_bucket: int
    p: int = 3
    delta: float = 1e-4
    rng_seed: int = 0
    max_epochs_per_stage: int = 50
    epoch_in_stage: int = 0
    loss_history: list = field(default_factory=list)
    stage_start: int = 0
    finished: bool = False
    # final stage hit its epoch cap without converging: stop, but not finished
    exhausted: bool = False
    events: list = field(default_factory=list)
    curriculum: Curriculum | None = field(default=None, repr=False)
    _queue: list = field(default_factory=list, repr=False)
    _rng: np.random.Generator | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("patience p must be >= 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self._rng is None:
            self._rng = np.random.default_rng(self.rng_seed)

    @property
    def stage(self) -> int:
        return self.next_bucket - 1


def new_scheduler(
    curriculum: Curriculum, p: int = 3, delta: float = 1e-4, seed: int = 0, max_epochs_per_stage: int = 50
) -> SchedulerState:
    return SchedulerState(
        merged=curriculum.buckets[0].copy(),
        next_bucket=1,
        p=p,
        delta=delta,
        rng_seed=seed,
        max_epochs_per_stage=max_epochs_per_stage,
        curriculum=curriculum,
    )


def next_batch(state: SchedulerState, curriculum: Curriculum, batch_size: int, rng=None) -> np.ndarray:
    """Draw without replacement from the merged prefix; an epoch's draws partition it."""
    if state.finished or state.exhausted:
        raise SchedulerError("scheduler already finished")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(state.merged) == 0:
        raise SchedulerError("merged set is empty")
    if not state._queue:
        gen = rng if rng is not None else state._rng
        state._queue = list(gen.permutation(state.merged))
    take = state._queue[:batch_size]
    del state._queue[:batch_size]
    return np.array(take, dtype=np.int64)


def epoch_batches(state: SchedulerState, curriculum: Curriculum, batch_size: int, rng=None) -> list[np.ndarray]:
    """All batches of one pass over the current merged set."""
    state._queue = []
    out = [next_batch(state, curriculum, batch_size, rng)]
    while state._queue:
        out.append(next_batch(state, curriculum, batch_size, rng))
    return out


def _merge(state: SchedulerState, curriculum: Curriculum, reason: str):
    b = state.next_bucket
    state.merged = np.concatenate([state.merged, curriculum.buckets[b]])
    state.next_bucket = b + 1
    state.epoch_in_stage = 0
    state.stage_start = len(state.loss_history)
    state._queue = []
    state.events.append({"event": "merge", "bucket": b, "reason": reason, "merged": int(len(state.merged))})
    if reason == "max_epochs":
        log.info("stage %d hit max_epochs_per_stage=%d; forcing merge", b - 1, state.max_epochs_per_stage)


def converged(state: SchedulerState) -> bool:
    h = state.loss_history[state.stage_start :]
    if len(h) < state.p + 1:
        return False
    return all(abs(h[-j] - h[-j - 1]) < state.delta for j in range(1, state.p + 1))


def report_loss(state: SchedulerState, epoch_loss: float, curriculum: Curriculum | None = None) -> bool:
    """Record an epoch loss; merge the next bucket on convergence. Returns whether a merge happened."""
    if curriculum is None:
        curriculum = state.curriculum
    if curriculum is None:
        raise SchedulerError("scheduler has no curriculum attached")
    if state.finished or state.exhausted:
        raise SchedulerError("scheduler already finished")
    if math.isnan(epoch_loss):
        raise SchedulerError(f"NaN loss at stage {state.stage}, epoch {state.epoch_in_stage}: training diverged")
    state.loss_history.append(float(epoch_loss))
    state.epoch_in_stage += 1
    conv = converged(state)
    capped = state.epoch_in_stage >= state.max_epochs_per_stage
    if not (conv or capped):
        return False
    reason = "converged" if conv else "max_epochs"
    if state.next_bucket >= curriculum.k:
        if conv:
            state.finished = True
            state.events.append({"event": "finished", "reason": reason})
        else:
            state.exhausted = True
            state.events.append({"event": "stopped", "reason": reason})
            log.info("final stage hit max_epochs_per_stage=%d without converging", state.max_epochs_per_stage)
        return False
    _merge(state, curriculum, reason)
    return True


def is_finished(state: SchedulerState) -> bool:
    """All buckets merged and the final stage converged."""
    return state.finished


def is_done(state: SchedulerState) -> bool:
    """Training should stop: finished, or the final stage ran out of epochs."""
    return state.finished or state.exhausted

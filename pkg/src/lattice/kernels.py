"""Hot scalar-loop kernels with a numba path and a pure-numpy path.

The backend is picked once at import from ``LATTICE_KERNELS`` (``numba`` or
``numpy``; default ``numba`` when importable).  Both implementations live in
this module as ``nb_*`` / ``np_*`` so tests and the benchmark can call either
explicitly.  Float kernels that feed exactness checks accumulate in the same
order on both paths, so the two backends agree bit for bit.
"""

from __future__ import annotations

import math
import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


SIGMA_FLOOR = 1e-9


# ---------------------------------------------------------------------------
# numba implementations


@njit(cache=True)
def nb_trailing_distinct(codes, window):
    n, d = codes.shape
    out = np.zeros(n, np.int64)
    for j in range(d):
        top = 0
        for i in range(n):
            if codes[i, j] > top:
                top = codes[i, j]
        counts = np.zeros(top + 1, np.int64)
        distinct = 0
        for i in range(n):
            v = codes[i, j]
            if counts[v] == 0:
                distinct += 1
            counts[v] += 1
            if i >= window:
                w = codes[i - window, j]
                counts[w] -= 1
                if counts[w] == 0:
                    distinct -= 1
            out[i] += distinct
    return out


@njit(cache=True)
def nb_trailing_noise(x, window):
    n, m = x.shape
    out = np.zeros(n, np.float64)
    if m == 0:
        return out
    for i in range(window, n):
        acc = 0.0
        for j in range(m):
            s = 0.0
            for k in range(i - window, i):
                s += x[k, j]
            mu = s / window
            v = 0.0
            for k in range(i - window, i):
                dev = x[k, j] - mu
                v += dev * dev
            sd = math.sqrt(v / window)
            if sd < SIGMA_FLOOR:
                sd = SIGMA_FLOOR
            acc += abs(x[i, j] - mu) / sd
        out[i] = acc / m
    return out


@njit(cache=True)
def nb_attack_distance(is_attack):
    n = is_attack.shape[0]
    big = n + 1
    out = np.full(n, big, np.int64)
    last = -1
    for i in range(n):
        if is_attack[i]:
            last = i
        if last >= 0:
            out[i] = i - last
    nxt = -1
    for i in range(n - 1, -1, -1):
        if is_attack[i]:
            nxt = i
        if nxt >= 0 and nxt - i < out[i]:
            out[i] = nxt - i
    return out


@njit(cache=True)
def nb_span_stats(pred, starts, ends):
    k = starts.shape[0]
    hits = np.zeros(k, np.int64)
    lead = np.zeros(k, np.int64)
    for s in range(k):
        seen = False
        for i in range(starts[s], ends[s] + 1):
            if pred[i]:
                hits[s] += 1
                seen = True
            elif not seen:
                lead[s] += 1
    return hits, lead


@njit(cache=True)
def nb_dominance(a, b):
    greater = 0
    ties = 0
    for x in a:
        for y in b:
            if x > y:
                greater += 1
            elif x == y:
                ties += 1
    return greater, ties


@njit(cache=True)
def nb_kl_rows(p, q, floor):
    k, d = p.shape
    out = np.zeros(k, np.float64)
    for r in range(k):
        acc = 0.0
        for c in range(d):
            pv = p[r, c]
            if pv <= 0.0:
                continue
            pf = pv if pv > floor else floor
            qf = q[r, c] if q[r, c] > floor else floor
            acc += pv * (math.log(pf) - math.log(qf))
        out[r] = acc if acc > 0.0 else 0.0
    return out


# ---------------------------------------------------------------------------
# numpy implementations


def np_trailing_distinct(codes, window):
    codes = np.asarray(codes, dtype=np.int64)
    n, d = codes.shape
    out = np.zeros(n, np.int64)
    if n == 0:
        return out
    for j in range(d):
        col = codes[:, j]
        padded = np.concatenate([np.full(window - 1, col[0], np.int64), col])
        win = np.sort(sliding_window_view(padded, window), axis=1)
        out += 1 + (win[:, 1:] != win[:, :-1]).sum(axis=1)
    return out


def np_trailing_noise(x, window):
    x = np.asarray(x, dtype=np.float64)
    n, m = x.shape
    out = np.zeros(n, np.float64)
    if m == 0 or n <= window:
        return out
    # win[r, j, k] == x[r + k, j]; row r is the context of index r + window
    win = sliding_window_view(x[:-1], window, axis=0)
    s = np.zeros((n - window, m))
    for k in range(window):
        s += win[:, :, k]
    mu = s / window
    v = np.zeros_like(mu)
    for k in range(window):
        dev = win[:, :, k] - mu
        v += dev * dev
    sd = np.maximum(np.sqrt(v / window), SIGMA_FLOOR)
    acc = np.zeros(n - window)
    for j in range(m):
        acc += np.abs(x[window:, j] - mu[:, j]) / sd[:, j]
    out[window:] = acc / m
    return out


def np_attack_distance(is_attack):
    is_attack = np.asarray(is_attack, dtype=bool)
    n = is_attack.shape[0]
    idx = np.arange(n, dtype=np.int64)
    big = n + 1
    last = np.maximum.accumulate(np.where(is_attack, idx, -1)) if n else idx
    nxt = np.minimum.accumulate(np.where(is_attack, idx, 2 * n + 2)[::-1])[::-1] if n else idx
    back = np.where(last >= 0, idx - last, big)
    fwd = np.where(nxt <= n, nxt - idx, big)
    return np.minimum(back, fwd).astype(np.int64)


def np_span_stats(pred, starts, ends):
    pred = np.asarray(pred, dtype=bool)
    starts = np.asarray(starts, dtype=np.int64)
    ends = np.asarray(ends, dtype=np.int64)
    n = pred.shape[0]
    csum = np.concatenate([[0], np.cumsum(pred, dtype=np.int64)])
    hits = csum[ends + 1] - csum[starts]
    idx = np.arange(n, dtype=np.int64)
    nxt = np.minimum.accumulate(np.where(pred, idx, n)[::-1])[::-1]
    first = np.minimum(nxt[starts], ends + 1)
    return hits, first - starts


def np_dominance(a, b):
    a = np.asarray(a, dtype=np.float64)
    sb = np.sort(np.asarray(b, dtype=np.float64))
    lt = np.searchsorted(sb, a, side="left")
    le = np.searchsorted(sb, a, side="right")
    return int(lt.sum()), int((le - lt).sum())


def np_kl_rows(p, q, floor):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    pf = np.maximum(p, floor)
    qf = np.maximum(q, floor)
    terms = np.where(p > 0.0, p * (np.log(pf) - np.log(qf)), 0.0)
    return np.maximum(terms.sum(axis=1), 0.0)


# ---------------------------------------------------------------------------
# dispatch

_NUMBA = {
    "trailing_distinct": nb_trailing_distinct,
    "trailing_noise": nb_trailing_noise,
    "attack_distance": nb_attack_distance,
    "span_stats": nb_span_stats,
    "dominance": nb_dominance,
    "kl_rows": nb_kl_rows,
}
_NUMPY = {
    "trailing_distinct": np_trailing_distinct,
    "trailing_noise": np_trailing_noise,
    "attack_distance": np_attack_distance,
    "span_stats": np_span_stats,
    "dominance": np_dominance,
    "kl_rows": np_kl_rows,
}
BACKENDS = {"numba": _NUMBA, "numpy": _NUMPY}


def _select_backend():
    name = os.environ.get("LATTICE_KERNELS", "numba").strip().lower()
    if name not in BACKENDS:
        raise ValueError(f"LATTICE_KERNELS must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        name = "numpy"
    return name


BACKEND = _select_backend()


def trailing_distinct(codes, window):
    """Per row, the summed count of distinct values per column over the
    trailing ``window`` rows (truncated at the start)."""
    return BACKENDS[BACKEND]["trailing_distinct"](np.ascontiguousarray(codes, dtype=np.int64), int(window))


def trailing_noise(x, window):
    """Mean absolute z-score of each row against the ``window`` rows before it.

    Rows without a full context score 0.
    """
    return BACKENDS[BACKEND]["trailing_noise"](np.ascontiguousarray(x, dtype=np.float64), int(window))


def attack_distance(is_attack):
    return BACKENDS[BACKEND]["attack_distance"](np.ascontiguousarray(is_attack, dtype=np.bool_))


def span_stats(pred, starts, ends):
    """Return (hits, leading_misses) for each inclusive span."""
    hits, lead = BACKENDS[BACKEND]["span_stats"](
        np.ascontiguousarray(pred, dtype=np.bool_),
        np.ascontiguousarray(starts, dtype=np.int64),
        np.ascontiguousarray(ends, dtype=np.int64),
    )
    return np.asarray(hits), np.asarray(lead)


def dominance(a, b):
    """Return (#(a_i > b_j), #(a_i == b_j)) over all pairs."""
    g, t = BACKENDS[BACKEND]["dominance"](
        np.ascontiguousarray(a, dtype=np.float64), np.ascontiguousarray(b, dtype=np.float64)
    )
    return int(g), int(t)


def kl_rows(p, q, floor=1e-12):
    return BACKENDS[BACKEND]["kl_rows"](
        np.ascontiguousarray(p, dtype=np.float64), np.ascontiguousarray(q, dtype=np.float64), float(floor)
    )

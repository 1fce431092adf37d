"""Significance of pair counts under an independent-Poisson null.

Each tag is modelled as a homogeneous Poisson process with intensity
``N_i / span_T`` conditional on its observed count, independently of the other
tags. Expected cell counts follow from the probability that two independent
uniform times fall within the window of each other.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as sps

from .matrices import COOCCURRENCE, FOLLOWING, PairCountMatrix, Run, StreamMeta, segment_runs
from .events import TagStream

UNDIRECTED = "undirected"
ORDERED = "i-then-j"
EXACT_POISSON_LIMIT = 50.0
DEFAULT_ALPHA = 0.01


@dataclass(frozen=True)
class EdgeStat:
    i: int
    j: int
    direction: str
    observed: int
    expected: float
    z: float
    p: float
    q: float
    flagged: bool

    def to_json(self, names=None) -> dict:
        doc = {"i": self.i, "j": self.j, "direction": self.direction,
               "observed": self.observed, "expected": self.expected,
               "z": _json_float(self.z), "p": self.p, "q": self.q, "flagged": self.flagged}
        if names is not None:
            doc["i_name"], doc["j_name"] = names[self.i], names[self.j]
        return doc


@dataclass(frozen=True)
class AsymmetryStat:
    """Order imbalance of one unordered tag pair ``i < j``."""

    i: int
    j: int
    n_ij: int
    n_ji: int
    ratio: float
    p: float

    @property
    def direction(self) -> str:
        if self.n_ij > self.n_ji:
            return "i-then-j"
        if self.n_ji > self.n_ij:
            return "j-then-i"
        return "none"

    def to_json(self, names=None) -> dict:
        doc = {"i": self.i, "j": self.j, "n_ij": self.n_ij, "n_ji": self.n_ji,
               "ratio": _json_float(self.ratio), "p": self.p, "direction": self.direction}
        if names is not None:
            doc["i_name"], doc["j_name"] = names[self.i], names[self.j]
        return doc


@dataclass(frozen=True)
class BoundaryStat:
    n_run_ends: int
    observed_ends_after_trigger: int
    observed_ends_before_trigger: int
    expected: float
    lift: float
    p: float

    def to_json(self) -> dict:
        return {"n_run_ends": self.n_run_ends,
                "observed_ends_after_trigger": self.observed_ends_after_trigger,
                "observed_ends_before_trigger": self.observed_ends_before_trigger,
                "expected": self.expected, "lift": _json_float(self.lift), "p": self.p}


def _json_float(v: float):
    # JSON has no infinity; keep the sign readable
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


# -- expectations -------------------------------------------------------------

def _window_fraction(span_T: float, window: float) -> float:
    if not span_T > 0:
        raise ValueError(f"span_T must be positive, got {span_T!r}")
    # ratio first: rescaling time leaves it, and everything after it, bit-identical
    return window / span_T


def expected_cooccurrence(n_i, n_j, span_T: float, dt: float, diagonal: bool = False):
    """Expected co-occurring pairs; ``diagonal`` selects the same-tag branch."""
    r = _window_fraction(span_T, dt)
    n_i = np.asarray(n_i, dtype=np.float64)
    n_j = np.asarray(n_j, dtype=np.float64)
    pairs = n_i * (n_i - 1.0) / 2.0 if diagonal else n_i * n_j
    out = pairs * (2.0 * r)
    return float(out) if out.ndim == 0 else out


def expected_following(n_i, n_j, span_T: float, delta: float, diagonal: bool = False):
    """Expected ordered pairs ``i`` then ``j`` with lag in (0, delta].

    Every unordered same-tag pair within the window contributes one ordered
    pair, so the diagonal is ``N (N - 1) delta / span_T``.
    """
    r = _window_fraction(span_T, delta)
    n_i = np.asarray(n_i, dtype=np.float64)
    n_j = np.asarray(n_j, dtype=np.float64)
    pairs = n_i * (n_i - 1.0) if diagonal else n_i * n_j
    out = pairs * r
    return float(out) if out.ndim == 0 else out


def expected_matrix(meta: StreamMeta, kind: str, window: float) -> np.ndarray:
    """Expected counts in matrix layout, summed over sources."""
    k = meta.counts.shape[1]
    exp = np.zeros((k, k))
    fn = expected_cooccurrence if kind == COOCCURRENCE else expected_following
    idx = np.arange(k)
    for span, n in zip(meta.spans, meta.counts):
        if not n.any():
            continue
        cell = fn(n[:, None], n[None, :], span, window)
        cell[idx, idx] = fn(n, n, span, window, diagonal=True)
        exp += cell
    return exp


# -- p-values -----------------------------------------------------------------

def _wh_lower(x, mu):
    """Wilson-Hilferty approximation of P(X <= x), X ~ Poisson(mu)."""
    n = x + 1.0
    z = (np.cbrt(mu / n) - (1.0 - 1.0 / (9.0 * n))) * np.sqrt(9.0 * n)
    return sps.norm.sf(z)


def _wh_upper(x, mu):
    """Wilson-Hilferty approximation of P(X >= x)."""
    n = np.maximum(x, 1.0)
    z = (np.cbrt(mu / n) - (1.0 - 1.0 / (9.0 * n))) * np.sqrt(9.0 * n)
    return np.where(x <= 0, 1.0, sps.norm.cdf(z))


def poisson_two_sided(observed, expected, exact_limit: float = EXACT_POISSON_LIMIT):
    """Two-sided p-value, twice the smaller tail, capped at 1.

    Exact Poisson tails below ``exact_limit``; above it a normal approximation
    of the tails (Wilson-Hilferty), which stays within 2e-4 of the exact value
    at the seam.
    """
    obs = np.asarray(observed, dtype=np.float64)
    mu = np.asarray(expected, dtype=np.float64)
    obs, mu = np.broadcast_arrays(obs, mu)
    p = np.ones(obs.shape)
    zero = mu <= 0
    p[zero] = np.where(obs[zero] > 0, 0.0, 1.0)
    ex = ~zero & (mu < exact_limit)
    if ex.any():
        o, m = obs[ex], mu[ex]
        p[ex] = 2.0 * np.minimum(sps.poisson.cdf(o, m), sps.poisson.sf(o - 1, m))
    ap = ~zero & (mu >= exact_limit)
    if ap.any():
        o, m = obs[ap], mu[ap]
        p[ap] = 2.0 * np.minimum(_wh_lower(o, m), _wh_upper(o, m))
    p = np.minimum(p, 1.0)
    return float(p) if p.ndim == 0 else p


def z_scores(observed, expected):
    obs = np.asarray(observed, dtype=np.float64)
    mu = np.asarray(expected, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (obs - mu) / np.sqrt(mu)
    z = np.where(mu > 0, z, np.where(obs > 0, np.inf, 0.0))
    return float(z) if z.ndim == 0 else z


def benjamini_hochberg(p) -> np.ndarray:
    """Benjamini-Hochberg adjusted p-values (step-up, capped at 1)."""
    p = np.asarray(p, dtype=np.float64)
    m = p.size
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum(np.minimum.accumulate(scaled[::-1])[::-1], 1.0)
    q = np.empty(m)
    q[order] = q_sorted
    return np.maximum(q, p)


def binomial_half_two_sided(a, b):
    """Exact two-sided binomial test of ``a`` successes in ``a + b``, p = 1/2.

    The null is symmetric, so twice the smaller tail is the exact two-sided
    value.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    n = a + b
    p = np.minimum(1.0, 2.0 * sps.binom.cdf(np.minimum(a, b), n, 0.5))
    p = np.where(n == 0, 1.0, p)
    return float(p) if p.ndim == 0 else p


# -- scored matrices -----------------------------------------------------------

@dataclass(frozen=True)
class ScoredMatrix:
    """Per-cell statistics in the layout of the source matrix.

    For following matrices, cell ``[j, i]`` is "i then j"; :meth:`edge` takes
    ``(first, follower)`` and hides the layout.
    """

    kind: str
    window: float
    alpha: float
    observed: np.ndarray
    expected: np.ndarray
    z: np.ndarray
    p: np.ndarray
    q: np.ndarray

    @property
    def k(self) -> int:
        return self.observed.shape[0]

    @property
    def flagged(self) -> np.ndarray:
        return self.q <= self.alpha

    def tested_mask(self) -> np.ndarray:
        if self.kind == COOCCURRENCE:
            return np.triu(np.ones((self.k, self.k), dtype=bool))
        return np.ones((self.k, self.k), dtype=bool)

    def edge(self, i: int, j: int) -> EdgeStat:
        r, c = (j, i) if self.kind == FOLLOWING else (i, j)
        return EdgeStat(i, j, ORDERED if self.kind == FOLLOWING else UNDIRECTED,
                        int(self.observed[r, c]), float(self.expected[r, c]),
                        float(self.z[r, c]), float(self.p[r, c]), float(self.q[r, c]),
                        bool(self.q[r, c] <= self.alpha))

    def edges(self) -> list[list[EdgeStat]]:
        return [[self.edge(i, j) for j in range(self.k)] for i in range(self.k)]

    def flagged_edges(self) -> list[EdgeStat]:
        mask = self.flagged & self.tested_mask()
        rows, cols = np.nonzero(mask)
        if self.kind == FOLLOWING:
            pairs = zip(cols.tolist(), rows.tolist())
        else:
            pairs = zip(rows.tolist(), cols.tolist())
        out = [self.edge(i, j) for i, j in pairs]
        out.sort(key=lambda e: (e.q, e.p, e.i, e.j))
        return out

    def flagged_fraction(self) -> float:
        mask = self.tested_mask()
        return float(np.count_nonzero(self.flagged & mask)) / float(np.count_nonzero(mask))


def score_matrix(matrix: PairCountMatrix, alpha: float = DEFAULT_ALPHA) -> ScoredMatrix:
    """Expected counts, z, two-sided p and BH q for every cell.

    Co-occurrence matrices are corrected over the k(k+1)/2 distinct cells,
    following matrices over all k^2 ordered cells.
    """
    if matrix.stream_meta is None:
        raise ValueError("matrix carries no stream metadata; cannot compute expectations")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha!r}")
    obs = matrix.counts
    exp = expected_matrix(matrix.stream_meta, matrix.kind, matrix.window)
    z = z_scores(obs, exp)
    p = poisson_two_sided(obs, exp)
    if matrix.kind == COOCCURRENCE:
        iu = np.triu_indices(matrix.k)
        q = np.empty_like(p)
        q[iu] = benjamini_hochberg(p[iu])
        q.T[iu] = q[iu]
    else:
        q = benjamini_hochberg(p.ravel()).reshape(p.shape)
    for a in (exp, z, p, q):
        a.setflags(write=False)
    return ScoredMatrix(matrix.kind, matrix.window, float(alpha), obs, exp, z, p, q)


def asymmetry(following: PairCountMatrix) -> list[AsymmetryStat]:
    """Exact binomial order test for every unordered pair ``i < j``."""
    if following.kind != FOLLOWING:
        raise ValueError("asymmetry needs a following matrix")
    c = following.counts
    iu, ju = np.triu_indices(following.k, k=1)
    n_ij = c[ju, iu]
    n_ji = c[iu, ju]
    p = np.atleast_1d(binomial_half_two_sided(n_ij, n_ji))
    hi = np.maximum(n_ij, n_ji)
    lo = np.minimum(n_ij, n_ji)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(lo > 0, hi / np.maximum(lo, 1), np.where(hi > 0, np.inf, 1.0))
    return [AsymmetryStat(int(a), int(b), int(x), int(y), float(r), float(pp))
            for a, b, x, y, r, pp in zip(iu, ju, n_ij, n_ji, ratio, p)]


def asymmetry_pair(n_ij: int, n_ji: int, i: int = 0, j: int = 1) -> AsymmetryStat:
    m = PairCountMatrix(FOLLOWING, 1.0, np.array([[0, n_ji], [n_ij, 0]]))
    s = asymmetry(m)[0]
    return AsymmetryStat(i, j, s.n_ij, s.n_ji, s.ratio, s.p)


# -- run boundaries ------------------------------------------------------------

def boundary_association(runs: Sequence[Run], triggers, delta: float, span_T: float) -> BoundaryStat:
    """Do runs end just after a trigger more often than just before one?

    A run end counts as "after" when a trigger lies in ``(end - delta, end]``
    and as "before" when one lies in ``[end, end + delta)``. ``triggers`` is a
    sorted array of trigger times, or a mapping from source name to such an
    array (runs are then matched against their own source only).
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not runs:
        return BoundaryStat(0, 0, 0, 0.0, 1.0, 1.0)
    if not isinstance(triggers, Mapping):
        triggers = {None: triggers}
    after = before = 0
    expected = 0.0
    for key, trig in triggers.items():
        trig = np.sort(np.asarray(trig, dtype=np.float64))
        ends = np.array([r.end for r in runs if key is None or r.source == key])
        if ends.size == 0:
            continue
        pre = np.searchsorted(trig, ends, "right") - np.searchsorted(trig, ends - delta, "right")
        post = np.searchsorted(trig, ends + delta, "left") - np.searchsorted(trig, ends, "left")
        after += int(np.count_nonzero(pre))
        before += int(np.count_nonzero(post))
        if span_T > 0:
            # chance that a Poisson trigger stream hits one (end - delta, end] window
            expected += ends.size * -math.expm1(-trig.size / span_T * delta)
    if before > 0:
        lift = after / before
    else:
        lift = math.inf if after > 0 else 1.0
    return BoundaryStat(len(runs), after, before, expected, lift,
                        binomial_half_two_sided(after, before))


def stream_boundary_association(stream: TagStream, run_tag: int, trigger_tag: int,
                                delta: float, gap: float | None = None) -> BoundaryStat:
    """Segment ``run_tag`` into runs and test them against ``trigger_tag`` events."""
    runs = segment_runs(stream, run_tag, delta if gap is None else gap)
    triggers = {}
    for name, sub in stream.by_source():
        triggers[name] = sub.times[sub.tags == trigger_tag]
    return boundary_association(runs, triggers, delta, stream.span_T)


def scored_to_csv(values: np.ndarray, names) -> str:
    from .matrices import matrix_to_csv
    return matrix_to_csv(values, names, fmt=lambda v: repr(float(v)))


def flagged_report(scored: Sequence[ScoredMatrix], names) -> str:
    doc = []
    for s in scored:
        doc.extend(dict(e.to_json(names), kind=s.kind, window=s.window) for e in s.flagged_edges())
    doc.sort(key=lambda d: (d["q"], d["p"], d["kind"], d["i"], d["j"]))
    return json.dumps({"alpha": scored[0].alpha if scored else None, "edges": doc}, indent=2)

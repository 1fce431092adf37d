"""Windowed pair-count matrices and run segmentation.

Two k x k matrices are built from a stream:

* co-occurrence: unordered pairs of distinct events at most ``dt`` apart,
  stored symmetrically; the diagonal counts same-tag repetitions.
* following: ordered pairs with ``0 < t_follower - t_first <= delta``, stored
  as ``counts[follower, first]`` (columns are the first tag).

Sources are counted independently and their matrices summed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .events import TagRegistry, TagStream

COOCCURRENCE = "cooccurrence"
FOLLOWING = "following"
DEFAULT_WINDOW = 60.0


@dataclass(frozen=True)
class StreamMeta:
    """Marginals of the stream a matrix was counted on, one row per source."""

    sources: tuple[str, ...]
    spans: tuple[float, ...]
    counts: np.ndarray  # (n_sources, k)

    @classmethod
    def of(cls, stream: TagStream) -> "StreamMeta":
        counts = np.zeros((len(stream.sources), stream.k), dtype=np.int64)
        np.add.at(counts, (stream.source_ids, stream.tags), 1)
        counts.setflags(write=False)
        return cls(stream.sources, stream.spans, counts)

    @property
    def span_T(self) -> float:
        return max(self.spans)

    @property
    def per_tag_counts(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total_events(self) -> int:
        return int(self.counts.sum())

    def to_json(self) -> dict:
        return {
            "span_T": self.span_T,
            "per_tag_counts": self.per_tag_counts.tolist(),
            "total_events": self.total_events,
            "sources": [
                {"name": n, "span_T": s, "per_tag_counts": c.tolist()}
                for n, s, c in zip(self.sources, self.spans, self.counts)
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "StreamMeta":
        src = doc["sources"]
        counts = np.array([s["per_tag_counts"] for s in src], dtype=np.int64)
        return cls(tuple(s["name"] for s in src), tuple(float(s["span_T"]) for s in src), counts)

    def __eq__(self, other):
        if not isinstance(other, StreamMeta):
            return NotImplemented
        return (self.sources == other.sources and self.spans == other.spans
                and np.array_equal(self.counts, other.counts))

    __hash__ = None


@dataclass(frozen=True)
class PairCountMatrix:
    kind: str
    window: float
    counts: np.ndarray
    stream_meta: StreamMeta | None = None

    def __post_init__(self):
        if self.kind not in (COOCCURRENCE, FOLLOWING):
            raise ValueError(f"unknown matrix kind {self.kind!r}")
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("counts must be square")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        if self.kind == COOCCURRENCE and not np.array_equal(c, c.T):
            raise ValueError("co-occurrence counts must be symmetric")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    def following_count(self, first: int, follower: int) -> int:
        """Ordered count ``first`` then ``follower`` (following matrices only)."""
        if self.kind != FOLLOWING:
            raise ValueError("not a following matrix")
        return int(self.counts[follower, first])

    def __add__(self, other: "PairCountMatrix") -> "PairCountMatrix":
        if (other.kind, other.window, other.k) != (self.kind, self.window, self.k):
            raise ValueError("matrices differ in kind, window or size")
        return PairCountMatrix(self.kind, self.window, self.counts + other.counts, None)


@dataclass(frozen=True)
class Run:
    tag: int
    start: float
    end: float
    length: int
    source: str = ""


def _check_window(window: float, name: str):
    if not window > 0:
        raise ValueError(f"{name} must be positive, got {window!r}")


def _tag_positions(tags: np.ndarray, k: int) -> list[np.ndarray]:
    order = np.argsort(tags, kind="stable")
    bounds = np.searchsorted(tags[order], np.arange(k + 1))
    return [order[bounds[j]:bounds[j + 1]] for j in range(k)]


def _partner_counts(times, tags, k, window, *, strict, start=0, stop=None):
    """raw[a_tag, b_tag] over pairs where ``a`` lies in positions [start, stop).

    Partner ``b`` must satisfy ``t_b <= t_a + window`` and either come later in
    sorted order (``strict=False``) or strictly later in time (``strict=True``).
    Partners are looked up in the full arrays, so a slice sees its halo.
    """
    n = times.size
    stop = n if stop is None else stop
    raw = np.zeros((k, k), dtype=np.int64)
    if stop <= start:
        return raw
    t_a = times[start:stop]
    g_a = tags[start:stop]
    reach = t_a + window
    pos_a = np.arange(start, stop)
    for j, pos_j in enumerate(_tag_positions(tags, k)):
        if pos_j.size == 0:
            continue
        t_j = times[pos_j]
        hi = np.searchsorted(t_j, reach, side="right")
        if strict:
            lo = np.searchsorted(t_j, t_a, side="right")
        else:
            lo = np.searchsorted(pos_j, pos_a, side="right")
        # float weights are exact well below 2**53 pairs per cell
        raw[:, j] = np.rint(np.bincount(g_a, weights=hi - lo, minlength=k)).astype(np.int64)
    return raw


def _slice_bounds(n: int, n_slices: int):
    edges = np.linspace(0, n, max(1, n_slices) + 1).astype(int)
    return list(zip(edges[:-1], edges[1:]))


def _count(stream: TagStream, window: float, strict: bool, n_slices: int) -> np.ndarray:
    total = np.zeros((stream.k, stream.k), dtype=np.int64)
    for _, sub in stream.by_source():
        for lo, hi in _slice_bounds(len(sub), n_slices):
            total += _partner_counts(sub.times, sub.tags, sub.k, window,
                                     strict=strict, start=lo, stop=hi)
    return total


def count_cooccurrence(stream: TagStream, dt: float = DEFAULT_WINDOW, n_slices: int = 1) -> PairCountMatrix:
    """Symmetric counts of unordered event pairs at most ``dt`` apart.

    ``n_slices`` partitions the events into contiguous time slices counted
    separately; each pair is owned by the slice holding its earlier event, so
    the sum equals the single-pass result exactly.
    """
    _check_window(dt, "dt")
    raw = _count(stream, dt, strict=False, n_slices=n_slices)
    counts = raw + raw.T
    np.fill_diagonal(counts, np.diag(raw))
    return PairCountMatrix(COOCCURRENCE, float(dt), counts, StreamMeta.of(stream))


def count_following(stream: TagStream, delta: float = DEFAULT_WINDOW, n_slices: int = 1) -> PairCountMatrix:
    """Ordered pair counts, ``counts[j, i]`` = events of j 0 < lag <= delta after an i."""
    _check_window(delta, "delta")
    raw = _count(stream, delta, strict=True, n_slices=n_slices)
    return PairCountMatrix(FOLLOWING, float(delta), raw.T.copy(), StreamMeta.of(stream))


def segment_runs(stream: TagStream, tag: int, gap: float = DEFAULT_WINDOW) -> list[Run]:
    """Merge consecutive events of ``tag`` into runs.

    The gap is measured from the end of the run so far (start + duration of
    its latest-ending event) to the start of the next event.
    """
    _check_window(gap, "gap")
    if not 0 <= tag < stream.k:
        raise ValueError(f"unknown tag index {tag}")
    runs: list[Run] = []
    for name, sub in stream.by_source():
        mask = sub.tags == tag
        t = sub.times[mask]
        if t.size == 0:
            continue
        reach = np.maximum.accumulate(sub.end_times()[mask])
        breaks = np.flatnonzero(t[1:] - reach[:-1] > gap) + 1
        starts = np.concatenate(([0], breaks))
        stops = np.concatenate((breaks, [t.size]))
        runs.extend(Run(tag, float(t[a]), float(reach[b - 1]), int(b - a), name)
                    for a, b in zip(starts, stops))
    runs.sort(key=lambda r: (r.start, r.source))
    return runs


# -- export -------------------------------------------------------------------

def matrix_to_csv(values: np.ndarray, names, fmt=None) -> str:
    """CSV with a header row and a leading column of tag names."""
    names = list(names)
    fmt = fmt or (lambda v: str(int(v)) if np.issubdtype(values.dtype, np.integer) else repr(float(v)))
    lines = ["," + ",".join(names)]
    for name, row in zip(names, values):
        lines.append(name + "," + ",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def matrix_from_csv(text: str) -> tuple[list[str], np.ndarray]:
    rows = [line.split(",") for line in text.strip().splitlines()]
    names = rows[0][1:]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return names, values


def sidecar(matrix: PairCountMatrix, registry: TagRegistry | None = None) -> str:
    doc = {"kind": matrix.kind, "window": matrix.window}
    if registry is not None:
        doc["tags"] = list(registry.names)
    if matrix.stream_meta is not None:
        doc.update(matrix.stream_meta.to_json())
    return json.dumps(doc, indent=2)


def load_matrix(csv_text: str, sidecar_text: str) -> PairCountMatrix:
    doc = json.loads(sidecar_text)
    _, values = matrix_from_csv(csv_text)
    meta = StreamMeta.from_json(doc) if "sources" in doc else None
    return PairCountMatrix(doc["kind"], float(doc["window"]), values.astype(np.int64), meta)

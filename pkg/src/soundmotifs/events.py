"""Event data model, event-log parsing and the tag registry.

A stream is stored column-wise (times, tags, durations, source ids) in
read-only numpy arrays; :class:`TagEvent` objects are materialised on demand.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np


class StreamFormatError(ValueError):
    """Raised for malformed event-log or taxonomy input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class TagEvent:
    tag: int
    timestamp: float
    duration: float | None = None
    source: str = ""

    def __post_init__(self):
        if not self.timestamp >= 0:
            raise ValueError(f"negative or invalid timestamp {self.timestamp!r}")
        if self.duration is not None and not self.duration >= 0:
            raise ValueError(f"negative or invalid duration {self.duration!r}")
        if self.tag < 0:
            raise ValueError(f"negative tag index {self.tag}")


@dataclass(frozen=True)
class TagRegistry:
    """Flat list of tag names plus the category path above each tag.

    The hierarchy is only used to label reports; counting never looks at it.
    """

    names: tuple[str, ...]
    parents: Mapping[int, tuple[str, ...]] = field(default_factory=dict)
    categories: frozenset[str] = frozenset()

    def __post_init__(self):
        if len(self.names) == 0:
            raise ValueError("registry must contain at least one tag")
        if len(set(self.names)) != len(self.names):
            seen, dup = set(), None
            for n in self.names:
                if n in seen:
                    dup = n
                    break
                seen.add(n)
            raise ValueError(f"duplicate tag name {dup!r}")
        for tag, chain in self.parents.items():
            if not 0 <= tag < len(self.names):
                raise ValueError(f"parent entry for unknown tag index {tag}")
            missing = [c for c in chain if c not in self.categories]
            if missing:
                raise ValueError(f"undeclared categories {missing} for tag {self.names[tag]!r}")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})

    def __len__(self) -> int:
        return len(self.names)

    @property
    def k(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown tag {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def label(self, tag: int) -> str:
        """Full ``category/.../tag`` path for report labelling."""
        return "/".join(self.parents.get(tag, ()) + (self.names[tag],))

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "TagRegistry":
        return cls(tuple(names))


def sort_order(times, tags) -> np.ndarray:
    """Stream order: by timestamp, then tag index, then input position."""
    return np.lexsort((np.arange(len(times)), tags, times))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class TagStream:
    """Time-sorted tag events from one or more sources.

    Parameters
    ----------
    times, tags, durations, source_ids : array_like
        One entry per event. ``durations`` uses NaN for point events and
        ``source_ids`` index into ``sources``.
    k : int
        Registry size; every tag must be ``< k``.
    sources : sequence of str
        Source (home) names; ``""`` is the unnamed source.
    spans : sequence of float
        Observation length of each source, aligned with ``sources``.
    epoch : str, optional
        ISO-8601 instant of time zero, carried for reporting only.

    Events are re-sorted by (timestamp, tag, input order) on construction.
    """

    __slots__ = ("times", "tags", "durations", "source_ids", "sources", "spans",
                 "k", "epoch", "per_tag_counts")

    def __init__(self, times, tags, k: int, durations=None, source_ids=None,
                 sources: Sequence[str] = ("",), spans: Sequence[float] | None = None,
                 epoch: str | None = None):
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        tags = np.asarray(tags, dtype=np.int64).reshape(-1)
        n = times.size
        if tags.size != n:
            raise ValueError("times and tags differ in length")
        durations = (np.full(n, np.nan) if durations is None
                     else np.asarray(durations, dtype=np.float64).reshape(-1))
        source_ids = (np.zeros(n, dtype=np.int64) if source_ids is None
                      else np.asarray(source_ids, dtype=np.int64).reshape(-1))
        if durations.size != n or source_ids.size != n:
            raise ValueError("column lengths differ")
        if k < 1:
            raise ValueError("k must be >= 1")
        if n:
            if not np.all(np.isfinite(times)) or times.min() < 0:
                raise ValueError("timestamps must be finite and non-negative")
            if tags.min() < 0 or tags.max() >= k:
                raise ValueError(f"tag index out of range for k={k}")
            if np.any(durations < 0):
                raise ValueError("durations must be non-negative")
            if source_ids.min() < 0 or source_ids.max() >= len(sources):
                raise ValueError("source id out of range")
        sources = tuple(sources)
        if len(set(sources)) != len(sources):
            raise ValueError("duplicate source names")
        if spans is None:
            spans = [float(times[source_ids == s].max()) if np.any(source_ids == s) else 0.0
                     for s in range(len(sources))]
        spans = tuple(float(s) for s in spans)
        if len(spans) != len(sources):
            raise ValueError("one span per source required")
        for s, span in enumerate(spans):
            mask = source_ids == s
            if np.any(mask) and span < times[mask].max():
                raise ValueError(f"span {span} of source {sources[s]!r} ends before its last event")

        order = sort_order(times, tags)
        self.times = _readonly(times[order])
        self.tags = _readonly(tags[order])
        self.durations = _readonly(durations[order])
        self.source_ids = _readonly(source_ids[order])
        self.sources = sources
        self.spans = spans
        self.k = int(k)
        self.epoch = epoch
        self.per_tag_counts = _readonly(np.bincount(self.tags, minlength=self.k).astype(np.int64))

    def __setattr__(self, name, value):
        if hasattr(self, "per_tag_counts"):
            raise AttributeError("TagStream is immutable")
        super().__setattr__(name, value)

    @classmethod
    def from_events(cls, events: Iterable[TagEvent], k: int, span_T: float | None = None,
                    epoch: str | None = None, spans: Mapping[str, float] | None = None) -> "TagStream":
        """Build a stream from events; ``spans`` maps source name to span and wins over ``span_T``."""
        events = list(events)
        names = sorted({e.source for e in events} | set(spans or ())) or [""]
        sid = {s: i for i, s in enumerate(names)}
        if spans is not None:
            spans = [spans.get(n, span_T or 0.0) for n in names]
        elif span_T is not None:
            spans = [span_T] * len(names)
        return cls([e.timestamp for e in events], [e.tag for e in events], k,
                   durations=[np.nan if e.duration is None else e.duration for e in events],
                   source_ids=[sid[e.source] for e in events],
                   sources=names, spans=spans, epoch=epoch)

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def span_T(self) -> float:
        return max(self.spans) if self.spans else 0.0

    @property
    def n_events(self) -> int:
        return len(self)

    @property
    def events(self) -> tuple[TagEvent, ...]:
        return tuple(self._event(i) for i in range(len(self)))

    def _event(self, i: int) -> TagEvent:
        d = self.durations[i]
        return TagEvent(int(self.tags[i]), float(self.times[i]),
                        None if math.isnan(d) else float(d), self.sources[self.source_ids[i]])

    def __iter__(self) -> Iterator[TagEvent]:
        return (self._event(i) for i in range(len(self)))

    def end_times(self) -> np.ndarray:
        """Start plus duration, with point events ending at their start."""
        return np.where(np.isnan(self.durations), self.times, self.times + np.nan_to_num(self.durations))

    def by_source(self) -> Iterator[tuple[str, "TagStream"]]:
        """Yield ``(source, single-source substream)`` for every source."""
        for s, name in enumerate(self.sources):
            yield name, self.select(self.source_ids == s, source=s)

    def select(self, mask: np.ndarray, source: int) -> "TagStream":
        return TagStream(self.times[mask], self.tags[mask], self.k,
                         durations=self.durations[mask],
                         source_ids=np.zeros(int(np.count_nonzero(mask)), dtype=np.int64),
                         sources=(self.sources[source],), spans=(self.spans[source],),
                         epoch=self.epoch)

    def with_tags(self, tags: np.ndarray) -> "TagStream":
        """Same timestamps, durations and sources with a new label column."""
        return TagStream(self.times, tags, self.k, durations=self.durations,
                         source_ids=self.source_ids, sources=self.sources,
                         spans=self.spans, epoch=self.epoch)

    def __eq__(self, other):
        if not isinstance(other, TagStream):
            return NotImplemented
        return (self.k == other.k and self.sources == other.sources
                and self.spans == other.spans and self.epoch == other.epoch
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.tags, other.tags)
                and np.array_equal(self.durations, other.durations, equal_nan=True)
                and np.array_equal(self.source_ids, other.source_ids))

    __hash__ = None

    def __repr__(self):
        return (f"TagStream(n={len(self)}, k={self.k}, sources={len(self.sources)}, "
                f"span_T={self.span_T})")


def merge_streams(streams: Sequence[TagStream]) -> TagStream:
    """Concatenate streams with disjoint source names into one stream."""
    if not streams:
        raise ValueError("nothing to merge")
    k = streams[0].k
    names: list[str] = []
    spans: list[float] = []
    cols = {"t": [], "g": [], "d": [], "s": []}
    for st in streams:
        if st.k != k:
            raise ValueError("streams use registries of different size")
        offset = len(names)
        for name in st.sources:
            if name in names:
                raise ValueError(f"source {name!r} appears in more than one stream")
        names.extend(st.sources)
        spans.extend(st.spans)
        cols["t"].append(st.times)
        cols["g"].append(st.tags)
        cols["d"].append(st.durations)
        cols["s"].append(st.source_ids + offset)
    return TagStream(np.concatenate(cols["t"]), np.concatenate(cols["g"]), k,
                     durations=np.concatenate(cols["d"]), source_ids=np.concatenate(cols["s"]),
                     sources=names, spans=spans, epoch=streams[0].epoch)


# -- event-log text format --------------------------------------------------

def _parse_float(text: str, what: str, lineno: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise StreamFormatError(f"{what} {text!r} is not a number", lineno) from None
    if not math.isfinite(v):
        raise StreamFormatError(f"{what} {text!r} is not finite", lineno)
    if v < 0:
        raise StreamFormatError(f"negative {what} {v}", lineno)
    return v


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def parse_record(line: str, lineno: int = 0) -> tuple[float, str, float | None, str]:
    """Split one ``timestamp,tag[,duration][,source]`` record."""
    parts = [p.strip() for p in line.split(",")]
    if len(parts) < 2 or len(parts) > 4 or not parts[1]:
        raise StreamFormatError(f"expected 'timestamp,tag[,duration][,source]', got {line!r}", lineno)
    t = _parse_float(parts[0], "timestamp", lineno)
    duration, source = None, ""
    if len(parts) == 3:
        # a numeric third field is a duration, anything else names the source
        if parts[2] and _is_number(parts[2]):
            duration = _parse_float(parts[2], "duration", lineno)
        else:
            source = parts[2]
    elif len(parts) == 4:
        if parts[2]:
            duration = _parse_float(parts[2], "duration", lineno)
        source = parts[3]
    return t, parts[1], duration, source


def parse_header(line: str, lineno: int, headers: dict) -> bool:
    """Consume a ``#span=``, ``#span@source=`` or ``#epoch=`` line.

    Returns False for ordinary comments.
    """
    body = line[1:].strip()
    key, sep, value = body.partition("=")
    key = key.strip()
    if not sep or not (key == "span" or key.startswith("span@") or key == "epoch"):
        return False
    if key in headers:
        raise StreamFormatError(f"duplicate header {key!r}", lineno)
    if key == "epoch":
        headers[key] = value.strip()
    else:
        headers[key] = _parse_float(value.strip(), "span", lineno)
    return True


def parse_stream(text: str, registry: TagRegistry, default_source: str = "") -> TagStream:
    """Parse event-log text into a sorted, validated :class:`TagStream`.

    Records without a source column belong to ``default_source``. Spans come
    from ``#span=`` (all sources) or ``#span@name=`` (one source) headers and
    otherwise default to each source's last timestamp.
    """
    headers: dict = {}
    times, tags, durs, srcs = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parse_header(line, lineno, headers)
            continue
        t, name, d, s = parse_record(line, lineno)
        if name not in registry:
            raise StreamFormatError(f"unknown tag {name!r}", lineno)
        times.append(t)
        tags.append(registry.index(name))
        durs.append(np.nan if d is None else d)
        srcs.append(s or default_source)
    return _assemble(times, tags, durs, srcs, registry.k, headers, default_source)


def _assemble(times, tags, durs, srcs, k, headers, default_source) -> TagStream:
    names = sorted(set(srcs) | {key[5:] for key in headers if key.startswith("span@")})
    if not names:
        names = [default_source]
    sid = {s: i for i, s in enumerate(names)}
    source_ids = np.array([sid[s] for s in srcs], dtype=np.int64)
    times_a = np.asarray(times, dtype=np.float64)
    spans = []
    for i, name in enumerate(names):
        if f"span@{name}" in headers:
            spans.append(headers[f"span@{name}"])
        elif "span" in headers:
            spans.append(headers["span"])
        else:
            mask = source_ids == i
            spans.append(float(times_a[mask].max()) if mask.any() else 0.0)
    try:
        return TagStream(times_a, tags, k, durations=durs, source_ids=source_ids,
                         sources=names, spans=spans, epoch=headers.get("epoch"))
    except ValueError as exc:
        raise StreamFormatError(str(exc)) from None


def format_stream(stream: TagStream, registry: TagRegistry) -> str:
    """Serialise a stream so that ``parse_stream`` reproduces it exactly."""
    out = []
    if stream.epoch is not None:
        out.append(f"#epoch={stream.epoch}")
    if len(set(stream.spans)) == 1:
        out.append(f"#span={stream.spans[0]!r}")
    else:
        out.extend(f"#span@{name}={span!r}" for name, span in zip(stream.sources, stream.spans))
    names = registry.names
    for t, g, d, s in zip(stream.times.tolist(), stream.tags.tolist(),
                          stream.durations.tolist(), stream.source_ids.tolist()):
        rec = f"{t!r},{names[g]}"
        source = stream.sources[s]
        if not math.isnan(d):
            rec += f",{d!r}"
            if source:
                rec += f",{source}"
        elif source:
            rec += f",,{source}"
        out.append(rec)
    return "\n".join(out) + "\n"


# -- taxonomy ---------------------------------------------------------------

def load_registry(text: str) -> TagRegistry:
    """Build a registry from a taxonomy file.

    Two layouts are accepted. With ``/``-separated paths, every line is a tag
    whose leaf segment is its name. Otherwise the hierarchy is given by
    indentation (optionally with ``-`` bullets) and only leaf lines are tags.
    """
    lines = [(i, raw) for i, raw in enumerate(text.splitlines(), start=1)
             if raw.strip() and not raw.strip().startswith("#")]
    if not lines:
        raise StreamFormatError("empty taxonomy")
    if any("/" in raw for _, raw in lines):
        return _registry_from_paths(lines)
    return _registry_from_outline(lines)


def _registry_from_paths(lines) -> TagRegistry:
    names, parents, cats = [], {}, set()
    seen = {}
    for lineno, raw in lines:
        segs = [s.strip() for s in raw.strip().strip("/").split("/")]
        if any(not s for s in segs):
            raise StreamFormatError(f"empty path segment in {raw.strip()!r}", lineno)
        name = segs[-1]
        if name in seen:
            raise StreamFormatError(f"duplicate tag name {name!r} (first on line {seen[name]})", lineno)
        seen[name] = lineno
        if len(segs) > 1:
            parents[len(names)] = tuple(segs[:-1])
            cats.update(segs[:-1])
        names.append(name)
    return TagRegistry(tuple(names), parents, frozenset(cats))


def _registry_from_outline(lines) -> TagRegistry:
    parsed = []
    for lineno, raw in lines:
        stripped = raw.lstrip(" \t")
        depth = len(raw) - len(stripped)
        name = stripped.lstrip("-*").strip()
        if not name:
            raise StreamFormatError("empty entry", lineno)
        parsed.append((lineno, depth, name))
    names, parents, cats = [], {}, set()
    seen = {}
    stack: list[tuple[int, str]] = []
    for idx, (lineno, depth, name) in enumerate(parsed):
        while stack and stack[-1][0] >= depth:
            stack.pop()
        is_leaf = idx + 1 == len(parsed) or parsed[idx + 1][1] <= depth
        if is_leaf:
            if name in seen:
                raise StreamFormatError(f"duplicate tag name {name!r} (first on line {seen[name]})", lineno)
            seen[name] = lineno
            if stack:
                parents[len(names)] = tuple(n for _, n in stack)
            names.append(name)
        else:
            cats.add(name)
            stack.append((depth, name))
    return TagRegistry(tuple(names), parents, frozenset(cats))


def format_registry(registry: TagRegistry) -> str:
    return "".join(registry.label(i) + "\n" for i in range(registry.k))

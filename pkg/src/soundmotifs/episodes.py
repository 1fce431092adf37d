"""Serial episodes: mining, significance, template matching, motif graphs.

An occurrence of an episode ``(e_1, ..., e_m)`` is a sequence of events with
those tags, strictly increasing in time, each step lagging the previous one by
at most its step delay. Its window is ``[t_first, t_last]``; a minimal
occurrence is a window that contains no other occurrence window.

Counting uses one fact: among occurrences ending at a given event, the latest
possible start is non-decreasing in that event's time. So every chain level
only needs, per candidate end event, the latest start of the latest valid
prefix end before it.
"""
from __future__ import annotations

import heapq
import itertools
import json
import math
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .events import TagStream
from .stats import AsymmetryStat, EdgeStat, ScoredMatrix
from .matrices import COOCCURRENCE, FOLLOWING

DEFAULT_MAX_LEN = 4
DEFAULT_MIN_SUPPORT = 10
DEFAULT_DELAY = 60.0
MIN_PERMUTATIONS = 19
_EMPTY = np.empty(0)


@dataclass(frozen=True)
class Episode:
    chain: tuple[int, ...]
    step_max_delay: tuple[float, ...]
    label: str | None = None

    def __post_init__(self):
        chain = tuple(int(c) for c in self.chain)
        delays = self.step_max_delay
        if np.isscalar(delays):
            delays = (float(delays),) * (len(chain) - 1)
        delays = tuple(float(d) for d in delays)
        if len(chain) < 2:
            raise ValueError("an episode needs at least two steps")
        if len(delays) != len(chain) - 1:
            raise ValueError("need one delay per step")
        if any(not d > 0 for d in delays):
            raise ValueError("step delays must be positive")
        object.__setattr__(self, "chain", chain)
        object.__setattr__(self, "step_max_delay", delays)

    @classmethod
    def of(cls, chain: Sequence[int], delay=DEFAULT_DELAY, label: str | None = None) -> "Episode":
        return cls(tuple(chain), delay, label)

    @property
    def horizon(self) -> float:
        return float(sum(self.step_max_delay))

    def name(self, names: Sequence[str] | None = None) -> str:
        if self.label:
            return self.label
        if names is None:
            return "->".join(map(str, self.chain))
        return "->".join(names[c] for c in self.chain)


@dataclass(frozen=True)
class EpisodeStats:
    episode: Episode
    minimal_occurrences: int
    empirical_p: float | None = None
    per_source_counts: dict = field(default_factory=dict)

    def to_json(self, names=None) -> dict:
        ep = self.episode
        doc = {"chain": list(ep.chain), "step_max_delay": list(ep.step_max_delay),
               "minimal_occurrences": self.minimal_occurrences,
               "empirical_p": self.empirical_p,
               "per_source_counts": dict(self.per_source_counts)}
        if names is not None:
            doc["chain_names"] = [names[c] for c in ep.chain]
        if ep.label:
            doc["label"] = ep.label
        return doc


@dataclass(frozen=True)
class Detection:
    label: str
    start: float
    end: float
    event_indices: tuple[int, ...]
    source: str = ""

    def to_json(self) -> str:
        return json.dumps({"label": self.label, "start": self.start, "end": self.end,
                           "source": self.source, "events": list(self.event_indices)})


# -- minimal occurrences -------------------------------------------------------

def _positions_by_tag(tags: np.ndarray, k: int) -> list[np.ndarray]:
    order = np.argsort(tags, kind="stable")
    bounds = np.searchsorted(tags[order], np.arange(k + 1))
    return [order[bounds[j]:bounds[j + 1]] for j in range(k)]


def _extend(ends, starts, cand_times, delay):
    """Advance (end time, latest start) pairs of a prefix by one step."""
    idx = np.searchsorted(ends, cand_times, side="left") - 1
    ok = idx >= 0
    ok[ok] = cand_times[ok] - ends[idx[ok]] <= delay
    return cand_times[ok], starts[idx[ok]]


def _minimal_windows(ends, starts):
    """Minimal windows from occurrence ends sorted by time."""
    if ends.size == 0:
        return ends, starts
    # ties share one window; the latest entry of a tie group is the shortest
    last = np.ones(ends.size, dtype=bool)
    last[:-1] = ends[1:] != ends[:-1]
    e, s = ends[last], starts[last]
    keep = np.ones(e.size, dtype=bool)
    keep[1:] = s[1:] > s[:-1]
    return s[keep], e[keep]


def _chain_ends(times, tag_pos, chain, delays):
    pos = tag_pos[chain[0]]
    ends = times[pos]
    starts = ends
    for tag, delay in zip(chain[1:], delays):
        if ends.size == 0:
            break
        ends, starts = _extend(ends, starts, times[tag_pos[tag]], delay)
    return ends, starts


def _source_arrays(stream: TagStream):
    for name, sub in stream.by_source():
        yield name, sub.times, sub.tags


def minimal_occurrences(stream: TagStream, episode: Episode) -> dict[str, list[tuple[float, float]]]:
    """Minimal occurrence windows ``(start, end)`` per source."""
    out = {}
    for name, times, tags in _source_arrays(stream):
        ends, starts = _chain_ends(times, _positions_by_tag(tags, stream.k),
                                   episode.chain, episode.step_max_delay)
        s, e = _minimal_windows(ends, starts)
        out[name] = list(zip(s.tolist(), e.tolist()))
    return out


def count_minimal_occurrences(stream: TagStream, episode: Episode) -> int:
    return sum(len(w) for w in minimal_occurrences(stream, episode).values())


def mine_episodes(stream: TagStream, max_len: int = DEFAULT_MAX_LEN, delta: float = DEFAULT_DELAY,
                  min_support: int = DEFAULT_MIN_SUPPORT) -> list[EpisodeStats]:
    """Level-wise mining of serial episodes by minimal-occurrence support.

    Only frequent chains are extended; support cannot grow when a step is
    appended, so nothing frequent is lost. Results are ordered by length,
    then chain.
    """
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    if min_support < 1:
        raise ValueError("min_support must be >= 1")
    if not delta > 0:
        raise ValueError("delta must be positive")
    k = stream.k
    sources = [(name, t, g) for name, t, g in _source_arrays(stream)]
    # level 1: every tag is its own prefix, ends == starts == its event times
    level = {}
    for j in range(k):
        level[(j,)] = []
        for _, t, g in sources:
            tj = t[g == j]
            level[(j,)].append((tj, tj))
    results: list[EpisodeStats] = []
    for length in range(2, max_len + 1):
        nxt: dict[tuple[int, ...], list] = {}
        for chain in sorted(level):
            per_src = [dict() for _ in sources]
            for si, (_, t, g) in enumerate(sources):
                ends, starts = level[chain][si]
                for tag, state in _extend_all(ends, starts, t, g, delta).items():
                    per_src[si][tag] = state
            tags_seen = sorted(set().union(*[d.keys() for d in per_src]))
            for tag in tags_seen:
                states = []
                counts = {}
                for si, (name, _, _) in enumerate(sources):
                    st = per_src[si].get(tag, (_EMPTY, _EMPTY))
                    states.append(st)
                    counts[name] = int(_minimal_windows(*st)[0].size)
                support = sum(counts.values())
                if support >= min_support:
                    new = chain + (tag,)
                    nxt[new] = states
                    results.append(EpisodeStats(Episode.of(new, delta), support, None, counts))
        level = nxt
        if not level:
            break
    results.sort(key=lambda s: (len(s.episode.chain), s.episode.chain))
    return results


def _extend_all(ends, starts, times, tags, delay):
    """Extend one prefix by every tag at once.

    Only events within ``delay`` after some prefix end can extend it, so the
    candidate set is the union of those short index ranges.
    """
    if ends.size == 0:
        return {}
    lo = np.searchsorted(times, ends, side="right")
    hi = np.searchsorted(times, ends + delay, side="right")
    width = hi - lo
    total = int(width.sum())
    if total == 0:
        return {}
    offsets = np.repeat(np.cumsum(width) - width, width)
    cand = np.unique(np.repeat(lo, width) + (np.arange(total) - offsets))
    cand_tags = tags[cand]
    order = np.argsort(cand_tags, kind="stable")
    cand, cand_tags = cand[order], cand_tags[order]
    bounds = np.flatnonzero(np.diff(cand_tags)) + 1
    out = {}
    for a, b in zip(np.concatenate(([0], bounds)), np.concatenate((bounds, [cand.size]))):
        new = _extend(ends, starts, times[cand[a:b]], delay)
        if new[0].size:
            out[int(cand_tags[a])] = new
    return out


# -- permutation significance ---------------------------------------------------

def _permutations(stream: TagStream, R: int, seed: int):
    """Yield R label columns, each shuffled within every source."""
    rng = np.random.default_rng(seed)
    src_idx = [np.flatnonzero(stream.source_ids == s) for s in range(len(stream.sources))]
    for _ in range(R):
        perm = stream.tags.copy()
        for idx in src_idx:
            perm[idx] = rng.permutation(perm[idx])
        yield perm


def _count_arrays(times, tags, source_ids, n_sources, k, episodes):
    counts = np.zeros(len(episodes), dtype=np.int64)
    for s in range(n_sources):
        idx = np.flatnonzero(source_ids == s)
        t = times[idx]
        tag_pos = _positions_by_tag(tags[idx], k)
        memo = {}  # shared prefixes are extended once

        def state(chain, delays):
            key = (chain, delays)
            if key not in memo:
                if len(chain) == 1:
                    tt = t[tag_pos[chain[0]]]
                    memo[key] = (tt, tt)
                else:
                    ends, starts = state(chain[:-1], delays[:-1])
                    memo[key] = _extend(ends, starts, t[tag_pos[chain[-1]]], delays[-1])
            return memo[key]

        for e, ep in enumerate(episodes):
            counts[e] += _minimal_windows(*state(ep.chain, ep.step_max_delay))[0].size
    return counts


def chance_occurrences(stream: TagStream, episode: Episode) -> float:
    """Rough occurrence count expected if tags were independent Poisson streams."""
    total = 0.0
    for (name, sub), span in zip(stream.by_source(), stream.spans):
        if span <= 0:
            continue
        n = sub.per_tag_counts
        val = float(n[episode.chain[0]])
        for tag, d in zip(episode.chain[1:], episode.step_max_delay):
            val *= -math.expm1(-n[tag] * d / span)
        total += val
    return total


def episodes_significance(stream: TagStream, episodes: Sequence[Episode], R: int = 99,
                          seed: int = 0) -> list[float]:
    """Empirical p-values ``(1 + #{perm >= obs}) / (R + 1)`` for several episodes.

    Every episode is scored against the same R label permutations, so one
    episode's p-value does not depend on which others are passed alongside.
    """
    if R < MIN_PERMUTATIONS:
        raise ValueError(f"R must be >= {MIN_PERMUTATIONS} permutations")
    episodes = list(episodes)
    fixed = (stream.source_ids, len(stream.sources), stream.k, episodes)
    observed = _count_arrays(stream.times, stream.tags, *fixed)
    exceed = np.zeros(len(episodes), dtype=np.int64)
    for perm in _permutations(stream, R, seed):
        exceed += _count_arrays(stream.times, perm, *fixed) >= observed
    return [float((1 + x) / (R + 1)) for x in exceed]


def episode_significance(stream: TagStream, episode: Episode, R: int = 99, seed: int = 0) -> float:
    """Label-permutation p-value of one episode's minimal-occurrence count."""
    return episodes_significance(stream, [episode], R, seed)[0]


# -- template matching -------------------------------------------------------------

def _earliest_path(path, chain, delays, cand_of, consumed_of):
    """Depth-first search taking earliest candidates first.

    ``cand_of(level, t_prev, delay)`` lists candidate (id, time) pairs of the
    next tag in time order; the first complete path found is returned.
    """
    level = len(path)
    if level == len(chain):
        return path
    t_prev = path[-1][1]
    for cid, ct in cand_of(level, t_prev, delays[level - 1]):
        if consumed_of(cid):
            continue
        found = _earliest_path(path + [(cid, ct)], chain, delays, cand_of, consumed_of)
        if found is not None:
            return found
    return None


def _match_source(times, tags, gidx, episode, k):
    chain, delays = episode.chain, episode.step_max_delay
    tag_pos = _positions_by_tag(tags, k)
    tag_times = [times[p] for p in tag_pos]
    consumed = np.zeros(times.size, dtype=bool)

    def cand_of(level, t_prev, delay):
        tag = chain[level]
        lo = np.searchsorted(tag_times[tag], t_prev, side="right")
        hi = np.searchsorted(tag_times[tag], t_prev + delay, side="right")
        return zip(tag_pos[tag][lo:hi].tolist(), tag_times[tag][lo:hi].tolist())

    found = []
    for h in tag_pos[chain[0]].tolist():
        if consumed[h]:
            continue
        path = _earliest_path([(h, float(times[h]))], chain, delays, cand_of, consumed.__getitem__)
        if path is None:
            continue
        ids = [p[0] for p in path]
        consumed[ids] = True
        found.append((int(gidx[h]), tuple(int(gidx[i]) for i in ids), path[0][1], path[-1][1]))
    return found


def match_template(stream: TagStream, episode: Episode, label: str | None = None) -> list[Detection]:
    """Greedy earliest matching of one template, consuming matched events.

    Heads are tried in stream order; each takes the earliest feasible
    completion among events not yet consumed. Matches never cross sources.
    """
    label = label or episode.label or episode.name()
    out = []
    for s, name in enumerate(stream.sources):
        gidx = np.flatnonzero(stream.source_ids == s)
        for head, ids, start, end in _match_source(stream.times[gidx], stream.tags[gidx],
                                                   gidx, episode, stream.k):
            out.append((head, Detection(label, start, end, ids, name)))
    out.sort(key=lambda x: x[0])
    return [d for _, d in out]


def detect_all(stream: TagStream, templates: Sequence[Episode]) -> list[Detection]:
    """Detections of several templates, ordered by (head event, template)."""
    keyed = []
    for ti, ep in enumerate(templates):
        for d in match_template(stream, ep):
            keyed.append(((d.event_indices[0], ti), d))
    keyed.sort(key=lambda x: x[0])
    return [d for _, d in keyed]


class _LiveMatcher:
    """Incremental matcher for one (template, source) pair.

    Events are retained only while some unresolved head could still use them,
    i.e. within one template horizon of the current time.
    """

    def __init__(self, episode: Episode, label: str, source: str):
        self.episode = episode
        self.label = label
        self.source = source
        self.chain = episode.chain
        self.tagset = set(episode.chain)
        self.buf: dict[int, deque] = {t: deque() for t in self.tagset}  # tag -> (gidx, time)
        self.consumed: set[int] = set()
        self.pending: deque = deque()  # head (gidx, time)

    def add(self, gidx: int, t: float, tag: int):
        if tag in self.tagset:
            self.buf[tag].append((gidx, t))
            if tag == self.chain[0]:
                self.pending.append((gidx, t))

    def _cand_of(self, level, t_prev, delay):
        limit = t_prev + delay
        for gidx, t in self.buf[self.chain[level]]:
            if t > limit:
                break
            if t > t_prev:
                yield gidx, t

    def resolve(self, now: float | None):
        """Settle pending heads in order; ``now=None`` means input ended."""
        done = []
        horizon = self.episode.horizon
        while self.pending:
            head = self.pending[0]
            if head[0] in self.consumed:
                self.pending.popleft()
                continue
            path = _earliest_path([head], self.chain, self.episode.step_max_delay,
                                  self._cand_of, self.consumed.__contains__)
            if path is not None:
                ids = tuple(p[0] for p in path)
                self.consumed.update(ids)
                self.pending.popleft()
                done.append((ids[0], Detection(self.label, path[0][1], path[-1][1], ids, self.source)))
            elif now is None or now >= head[1] + horizon:
                self.pending.popleft()
            else:
                break
        self._evict(now)
        return done

    def _evict(self, now):
        if self.pending:
            floor = self.pending[0][1]
        elif now is None:
            floor = math.inf
        else:
            # later heads arrive strictly after `now` and only look forward
            floor = math.nextafter(now, math.inf)
        for q in self.buf.values():
            while q and q[0][1] < floor:
                self.consumed.discard(q.popleft()[0])

    def frontier(self, next_gidx: int, ti: int):
        return (self.pending[0][0], ti) if self.pending else (next_gidx, -1)


class StreamDetector:
    """Watch-mode detector emitting exactly the batch detections, in order.

    Feed events in non-decreasing time order with :meth:`push`; events sharing
    a timestamp are held until a later one arrives so they can be ordered by
    tag like the batch parser does. Call :meth:`close` at end of input.
    """

    def __init__(self, templates: Sequence[Episode], k: int):
        self.templates = list(templates)
        self.k = k
        self.matchers: dict[tuple[int, str], _LiveMatcher] = {}
        self.group: list[tuple[int, str, int]] = []  # (tag, source, arrival)
        self.group_time: float | None = None
        self.next_gidx = 0
        self.arrival = 0
        self.heap: list = []

    def _matcher(self, ti: int, source: str) -> _LiveMatcher:
        key = (ti, source)
        if key not in self.matchers:
            ep = self.templates[ti]
            self.matchers[key] = _LiveMatcher(ep, ep.label or ep.name(), source)
        return self.matchers[key]

    def push(self, t: float, tag: int, source: str = "") -> list[Detection]:
        if not 0 <= tag < self.k:
            raise ValueError(f"tag index {tag} out of range")
        if self.group_time is not None and t < self.group_time:
            raise ValueError(f"watch input must be time-ordered: {t} after {self.group_time}")
        out = []
        if self.group_time is not None and t > self.group_time:
            out = self._flush_group()
        self.group_time = t
        self.group.append((tag, source, self.arrival))
        self.arrival += 1
        return out

    def close(self) -> list[Detection]:
        out = self._flush_group() if self.group else []
        for (ti, _), m in sorted(self.matchers.items()):
            for key, d in m.resolve(None):
                heapq.heappush(self.heap, ((key, ti), d.source, d))
        return out + self._drain(final=True)

    def _flush_group(self) -> list[Detection]:
        t = self.group_time
        # same order as the batch parser: tag, then input order (never source)
        for tag, source, _ in sorted(self.group, key=lambda g: (g[0], g[2])):
            gidx = self.next_gidx
            self.next_gidx += 1
            for ti in range(len(self.templates)):
                if tag in self.templates[ti].chain:
                    self._matcher(ti, source).add(gidx, t, tag)
        self.group = []
        for (ti, _), m in sorted(self.matchers.items()):
            for key, d in m.resolve(t):
                heapq.heappush(self.heap, ((key, ti), d.source, d))
        return self._drain(final=False)

    def _drain(self, final: bool) -> list[Detection]:
        if final:
            limit = (math.inf, 0)
        else:
            limit = min((m.frontier(self.next_gidx, ti) for (ti, _), m in self.matchers.items()),
                        default=(self.next_gidx, -1))
        out = []
        while self.heap and self.heap[0][0] < limit:
            out.append(heapq.heappop(self.heap)[2])
        return out


# -- motif graph -------------------------------------------------------------------

@dataclass(frozen=True)
class MotifEdge:
    src: int
    dst: int
    stat: EdgeStat
    asym: AsymmetryStat | None
    origin: str  # "following" or "cooccurrence"


@dataclass(frozen=True)
class MotifGraph:
    k: int
    names: tuple[str, ...]
    edges: tuple[MotifEdge, ...]
    alpha: float

    @property
    def edge_set(self) -> set[tuple[int, int]]:
        return {(e.src, e.dst) for e in self.edges}

    def successors(self) -> list[set[int]]:
        succ = [set() for _ in range(self.k)]
        for e in self.edges:
            succ[e.src].add(e.dst)
        return succ


def build_graph(cooc_stats: ScoredMatrix, following_stats: ScoredMatrix,
                asym: Sequence[AsymmetryStat], alpha: float | None = None,
                names: Sequence[str] | None = None) -> MotifGraph:
    """Directed graph of over-expressed following relations.

    ``i -> j`` when "i then j" is flagged and above expectation. A flagged,
    over-expressed co-occurrence pair with neither direction flagged becomes a
    pair of opposite edges.
    """
    if cooc_stats.kind != COOCCURRENCE or following_stats.kind != FOLLOWING:
        raise ValueError("expected a scored co-occurrence and a scored following matrix")
    k = following_stats.k
    if cooc_stats.k != k or any(a.j >= k for a in asym):
        raise ValueError("inputs disagree on the number of tags")
    alpha = following_stats.alpha if alpha is None else alpha
    names = tuple(names) if names is not None else tuple(str(i) for i in range(k))
    pair = {(a.i, a.j): a for a in asym}
    pick = lambda i, j: pair.get((min(i, j), max(i, j)))

    over_f = (following_stats.q <= alpha) & (following_stats.observed > following_stats.expected)
    edges = []
    directed = set()
    rows, cols = np.nonzero(over_f)  # row = follower, col = first
    for j, i in sorted(zip(rows.tolist(), cols.tolist()), key=lambda rc: (rc[1], rc[0])):
        directed.add((i, j))
        edges.append(MotifEdge(i, j, following_stats.edge(i, j), pick(i, j) if i != j else None, FOLLOWING))
    over_c = (cooc_stats.q <= alpha) & (cooc_stats.observed > cooc_stats.expected)
    for i, j in zip(*np.nonzero(np.triu(over_c, k=1))):
        i, j = int(i), int(j)
        if (i, j) in directed or (j, i) in directed:
            continue
        st = cooc_stats.edge(i, j)
        edges.append(MotifEdge(i, j, st, pick(i, j), COOCCURRENCE))
        edges.append(MotifEdge(j, i, st, pick(i, j), COOCCURRENCE))
    edges.sort(key=lambda e: (e.src, e.dst))
    return MotifGraph(k, names, tuple(edges), float(alpha))


MOTIF_KINDS = ("edge", "two-path", "loop-2", "loop-3", "fan-out-m")


def find_motifs(graph: MotifGraph, pattern: str) -> list[tuple[int, ...]]:
    """All node tuples matching a directed template, in lexicographic order.

    ``edge``: (a, b), a != b. ``two-path``: (a, b, c) distinct with a->b->c.
    ``loop-2``: (a, b), a < b, both directions. ``loop-3``: directed 3-cycles
    listed once, smallest node first. ``fan-out-m`` (e.g. ``fan-out-3``):
    hub followed by m ascending distinct leaves, each hub->leaf.
    """
    succ = graph.successors()
    nodes = range(graph.k)
    out: list[tuple[int, ...]] = []
    if pattern == "edge":
        out = [(a, b) for a in nodes for b in sorted(succ[a]) if a != b]
    elif pattern == "two-path":
        out = [(a, b, c) for a in nodes for b in sorted(succ[a]) if b != a
               for c in sorted(succ[b]) if c not in (a, b)]
    elif pattern == "loop-2":
        out = [(a, b) for a in nodes for b in sorted(succ[a]) if a < b and a in succ[b]]
    elif pattern == "loop-3":
        out = [(a, b, c) for a in nodes for b in sorted(succ[a]) if b > a
               for c in sorted(succ[b]) if c > a and c != b and a in succ[c]]
    elif pattern.startswith("fan-out-"):
        try:
            m = int(pattern[len("fan-out-"):])
        except ValueError:
            raise ValueError(f"unknown motif pattern {pattern!r}") from None
        if m < 1:
            raise ValueError("fan-out needs at least one leaf")
        for a in nodes:
            leaves = sorted(succ[a] - {a})
            out.extend((a,) + combo for combo in itertools.combinations(leaves, m))
    else:
        raise ValueError(f"unknown motif pattern {pattern!r}")
    out.sort()
    return out


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


def export_dot(graph: MotifGraph) -> str:
    """DOT digraph; edges carry the order ratio and q-value."""
    used = sorted({e.src for e in graph.edges} | {e.dst for e in graph.edges})
    lines = ["digraph {"]
    for n in used:
        lines.append(f'  "{graph.names[n]}";')
    for e in graph.edges:
        ratio = e.asym.ratio if e.asym is not None else 1.0
        lines.append(f'  "{graph.names[e.src]}" -> "{graph.names[e.dst]}" '
                     f'[label="ratio={_fmt(ratio)} q={_fmt(e.stat.q)}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


_DOT_EDGE = re.compile(r'^\s*"([^"]+)"\s*->\s*"([^"]+)"')


def read_dot_edges(text: str) -> set[tuple[str, str]]:
    """Edge set of a digraph written by :func:`export_dot`."""
    return {m.groups() for m in map(_DOT_EDGE.match, text.splitlines()) if m}

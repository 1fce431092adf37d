"""Synthetic tag streams with planted ground truth.

Randomness comes from SplitMix64 used as a counter-based generator, so a
stream is a pure function of (config, seed) on every platform:

    gamma  = 0x9E3779B97F4A7C15
    mix(z) : z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
             z = (z ^ (z >> 27)) * 0x94D049BB133111EB
             return z ^ (z >> 31)                      (all mod 2**64)
    key(seed, a, b, ...) = fold h <- mix(h + (x + 1) * gamma) over (a, b, ...), h0 = seed
    draw n of stream key   = mix(key + (n + 1) * gamma)
    uniform in (0, 1)      = ((draw >> 11) + 0.5) * 2**-53

Each consumer (background tag, planted episode, boundary plant) reads its own
keyed stream, so adding a plant never perturbs the background.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .episodes import Episode
from .events import TagRegistry, TagStream, sort_order

GAMMA = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1

# stream purposes
_BACKGROUND, _EP_START, _EP_GAP, _RUN, _TRIGGER = 1, 2, 3, 4, 5


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _mix_int(z: int) -> int:
    return int(_mix(np.array([z & _MASK], dtype=np.uint64))[0])


def stream_key(seed: int, *path: int) -> int:
    h = seed & _MASK
    for x in path:
        h = _mix_int(h + (x + 1) * GAMMA)
    return h


class SplitMix64:
    """Counter-based uniform stream; ``draw n`` depends only on (key, n)."""

    def __init__(self, key: int):
        self.key = key & _MASK
        self.counter = 0

    def raw(self, n: int) -> np.ndarray:
        ctr = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.key) + ctr * np.uint64(GAMMA))

    def uniform(self, n: int) -> np.ndarray:
        return ((self.raw(n) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53

    def integers(self, lo: int, hi: int, n: int) -> np.ndarray:
        """Integers in [lo, hi] inclusive."""
        return lo + np.floor(self.uniform(n) * (hi - lo + 1)).astype(np.int64)


def poisson_times(rng: SplitMix64, rate: float, span: float) -> np.ndarray:
    """Homogeneous Poisson process on [0, span) via exponential gaps."""
    if rate <= 0 or span <= 0:
        return np.empty(0)
    mean = rate * span
    chunks = []
    last = 0.0
    while True:
        n = int(mean + 6 * math.sqrt(mean) + 16)
        t = last + np.cumsum(-np.log(rng.uniform(n)) / rate)
        inside = t[t < span]
        chunks.append(inside)
        if inside.size < n:
            break
        last = float(t[-1])
    return np.concatenate(chunks)


@dataclass(frozen=True)
class PlantedEpisode:
    """Instances of ``episode`` with step gaps uniform in ``gap_bounds``.

    Give either ``rate`` (instances per second, Poisson start times) or
    ``count`` (that many instances, starts uniform: a Poisson process
    conditioned on its count).
    """

    episode: Episode
    gap_bounds: tuple[float, float]
    rate: float | None = None
    count: int | None = None

    def __post_init__(self):
        lo, hi = self.gap_bounds
        if not 0 < lo <= hi:
            raise ValueError("gap bounds must satisfy 0 < lo <= hi")
        if hi > min(self.episode.step_max_delay):
            raise ValueError("gap upper bound exceeds an episode step delay")
        if (self.rate is None) == (self.count is None):
            raise ValueError("give exactly one of rate or count")
        if self.rate is not None and self.rate < 0:
            raise ValueError("rate must be >= 0")
        if self.count is not None and self.count < 0:
            raise ValueError("count must be >= 0")


@dataclass(frozen=True)
class PlantedBoundary:
    """Runs of ``run_tag`` whose ends attract ``trigger_tag`` events.

    Each run end gets a trigger in ``(end - window, end)`` with probability
    ``lift * base_prob`` and, independently, one in ``(end, end + window)``
    with probability ``base_prob``. Runs are spread one per equal slot of the
    span so neighbouring windows never overlap.
    """

    run_tag: int
    trigger_tag: int
    lift: float
    n_runs: int
    base_prob: float = 0.5
    window: float = 60.0
    run_events: tuple[int, int] = (3, 8)
    run_gap: tuple[float, float] = (5.0, 50.0)

    def __post_init__(self):
        if self.run_tag == self.trigger_tag:
            raise ValueError("run and trigger tags must differ")
        if not (0 < self.base_prob <= 1 and 0 < self.lift * self.base_prob <= 1):
            raise ValueError("need 0 < base_prob <= 1 and 0 < lift * base_prob <= 1")
        if self.n_runs < 0 or self.run_events[0] < 1 or self.run_events[0] > self.run_events[1]:
            raise ValueError("invalid run shape")
        if not 0 < self.run_gap[0] <= self.run_gap[1]:
            raise ValueError("invalid run gap bounds")


@dataclass(frozen=True)
class SynthConfig:
    k: int
    span_T: float
    background_rates: tuple[float, ...]
    planted_episodes: tuple[PlantedEpisode, ...] = ()
    planted_boundary: PlantedBoundary | None = None
    seed: int = 0
    names: tuple[str, ...] | None = None
    source: str = ""

    def __post_init__(self):
        rates = self.background_rates
        if np.isscalar(rates):
            rates = (float(rates),) * self.k
        object.__setattr__(self, "background_rates", tuple(float(r) for r in rates))
        object.__setattr__(self, "planted_episodes", tuple(self.planted_episodes))
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.span_T > 0:
            raise ValueError("span_T must be positive")
        if len(self.background_rates) != self.k or any(r < 0 for r in self.background_rates):
            raise ValueError("need k non-negative background rates")
        for pe in self.planted_episodes:
            if max(pe.episode.chain) >= self.k:
                raise ValueError("planted episode uses an unknown tag")
        b = self.planted_boundary
        if b is not None and max(b.run_tag, b.trigger_tag) >= self.k:
            raise ValueError("planted boundary uses an unknown tag")
        if self.names is not None and len(self.names) != self.k:
            raise ValueError("need one name per tag")

    @property
    def registry(self) -> TagRegistry:
        names = self.names or tuple(f"tag{i:02d}" for i in range(self.k))
        return TagRegistry(tuple(names))

    # -- JSON -----------------------------------------------------------------

    def to_json(self) -> str:
        names = self.registry.names
        doc = {"k": self.k, "span_T": self.span_T, "seed": self.seed,
               "names": list(names), "source": self.source,
               "background_rates": list(self.background_rates),
               "planted_episodes": [
                   {"chain": [names[c] for c in pe.episode.chain],
                    "step_max_delay": list(pe.episode.step_max_delay),
                    "label": pe.episode.label, "gap_bounds": list(pe.gap_bounds),
                    "rate": pe.rate, "count": pe.count}
                   for pe in self.planted_episodes],
               "planted_boundary": None}
        if self.planted_boundary is not None:
            b = asdict(self.planted_boundary)
            b["run_tag"], b["trigger_tag"] = names[b["run_tag"]], names[b["trigger_tag"]]
            doc["planted_boundary"] = b
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SynthConfig":
        doc = json.loads(text)
        k = int(doc["k"])
        names = tuple(doc.get("names") or (f"tag{i:02d}" for i in range(k)))
        index = {n: i for i, n in enumerate(names)}
        tag = lambda x: index[x] if isinstance(x, str) else int(x)
        plants = []
        for pe in doc.get("planted_episodes", []):
            ep = Episode(tuple(tag(c) for c in pe["chain"]),
                         pe.get("step_max_delay", pe["gap_bounds"][1]), pe.get("label"))
            plants.append(PlantedEpisode(ep, tuple(pe["gap_bounds"]), pe.get("rate"), pe.get("count")))
        boundary = doc.get("planted_boundary")
        if boundary:
            boundary = dict(boundary)
            boundary["run_tag"], boundary["trigger_tag"] = tag(boundary["run_tag"]), tag(boundary["trigger_tag"])
            for key in ("run_events", "run_gap"):
                if key in boundary:
                    boundary[key] = tuple(boundary[key])
            boundary = PlantedBoundary(**boundary)
        rates = doc["background_rates"]
        return cls(k, float(doc["span_T"]), rates if np.isscalar(rates) else tuple(rates),
                   tuple(plants), boundary, int(doc.get("seed", 0)), names, doc.get("source", ""))


@dataclass
class GroundTruth:
    """Planted instances, with event indices into the generated stream."""

    episodes: list[dict] = field(default_factory=list)
    runs: list[dict] = field(default_factory=list)

    def instances(self, label: str) -> list[dict]:
        for ep in self.episodes:
            if ep["label"] == label:
                return ep["instances"]
        raise KeyError(label)

    def to_json(self) -> str:
        return json.dumps({"episodes": self.episodes, "runs": self.runs}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        doc = json.loads(text)
        return cls(doc["episodes"], doc["runs"])


def field_scale_rates(k: int = 50, total: int = 319_204, span_T: float = 150 * 86_400.0,
                      exponent: float = 0.0) -> tuple[float, ...]:
    """Background rates summing to ``total`` expected events over ``span_T``.

    ``exponent`` > 0 gives Zipf-like heterogeneity, rank r weighted r**-exponent.
    """
    w = np.arange(1, k + 1, dtype=np.float64) ** -exponent
    return tuple((total * w / w.sum() / span_T).tolist())


def generate(config: SynthConfig) -> tuple[TagStream, GroundTruth]:
    """Draw one stream and its ground truth; deterministic in ``config``."""
    seed = config.seed
    T = config.span_T
    times, tags = [], []

    for j, rate in enumerate(config.background_rates):
        t = poisson_times(SplitMix64(stream_key(seed, _BACKGROUND, j)), rate, T)
        times.append(t)
        tags.append(np.full(t.size, j, dtype=np.int64))

    plant_events = []
    for p, pe in enumerate(config.planted_episodes):
        chain = pe.episode.chain
        lo, hi = pe.gap_bounds
        reach = hi * (len(chain) - 1)
        room = T - reach
        rng_start = SplitMix64(stream_key(seed, _EP_START, p))
        if pe.count is not None:
            starts = np.sort(rng_start.uniform(pe.count) * room)
        else:
            starts = poisson_times(rng_start, pe.rate, room)
        gaps = lo + (hi - lo) * SplitMix64(stream_key(seed, _EP_GAP, p)).uniform(starts.size * (len(chain) - 1))
        gaps = gaps.reshape(starts.size, len(chain) - 1)
        inst_times = np.concatenate([starts[:, None], starts[:, None] + np.cumsum(gaps, axis=1)], axis=1)
        plant_events.append((p, inst_times))
        times.append(inst_times.ravel())
        tags.append(np.tile(np.asarray(chain, dtype=np.int64), starts.size))

    boundary_runs = []
    b = config.planted_boundary
    if b is not None and b.n_runs > 0:
        bt, bg, brun = _plant_boundary(b, T, seed)
        times.append(bt)
        tags.append(bg)
        boundary_runs = brun

    all_t = np.concatenate(times) if times else np.empty(0)
    all_g = np.concatenate(tags) if tags else np.empty(0, dtype=np.int64)
    order = sort_order(all_t, all_g)
    rank = np.empty(order.size, dtype=np.int64)
    rank[order] = np.arange(order.size)

    truth = GroundTruth()
    offset = sum(t.size for t in times[:config.k])
    for p, inst_times in plant_events:
        pe = config.planted_episodes[p]
        m = len(pe.episode.chain)
        idx = rank[offset:offset + inst_times.size].reshape(-1, m)
        offset += inst_times.size
        label = pe.episode.label or f"planted{p}"
        truth.episodes.append({
            "label": label, "chain": list(pe.episode.chain),
            "instances": [{"start": float(r[0]), "end": float(r[-1]), "times": r.tolist(),
                           "events": i.tolist()} for r, i in zip(inst_times, idx)]})
    truth.runs = boundary_runs

    stream = TagStream(all_t, all_g, config.k, sources=(config.source,), spans=(T,))
    return stream, truth


def _plant_boundary(b: PlantedBoundary, T: float, seed: int):
    slot = T / b.n_runs
    max_len = (b.run_events[1] - 1) * b.run_gap[1]
    guard = 2 * b.window + b.run_gap[1]
    free = slot - max_len - 2 * guard
    if free <= 0:
        raise ValueError("span too short for the requested number of runs")
    rng = SplitMix64(stream_key(seed, _RUN, 0))
    trig = SplitMix64(stream_key(seed, _TRIGGER, 0))
    sizes = rng.integers(b.run_events[0], b.run_events[1], b.n_runs)
    offsets = guard + free * rng.uniform(b.n_runs)
    gaps = b.run_gap[0] + (b.run_gap[1] - b.run_gap[0]) * rng.uniform(int(sizes.sum()))
    u_pre, u_post, pos_pre, pos_post = (trig.uniform(b.n_runs) for _ in range(4))
    times, tags, runs = [], [], []
    g = 0
    for r in range(b.n_runs):
        n = int(sizes[r])
        start = r * slot + offsets[r]
        ts = start + np.concatenate(([0.0], np.cumsum(gaps[g:g + n - 1])))
        g += n
        end = float(ts[-1])
        times.append(ts)
        tags.append(np.full(n, b.run_tag, dtype=np.int64))
        rec = {"start": float(ts[0]), "end": end, "trigger_before_end": None, "trigger_after_end": None}
        if u_pre[r] < b.lift * b.base_prob:
            t = end - b.window * pos_pre[r]
            rec["trigger_before_end"] = float(t)
            times.append([t])
            tags.append([b.trigger_tag])
        if u_post[r] < b.base_prob:
            t = end + b.window * pos_post[r]
            rec["trigger_after_end"] = float(t)
            times.append([t])
            tags.append([b.trigger_tag])
        runs.append(rec)
    return (np.concatenate([np.asarray(t, dtype=np.float64) for t in times]),
            np.concatenate([np.asarray(t, dtype=np.int64) for t in tags]), runs)

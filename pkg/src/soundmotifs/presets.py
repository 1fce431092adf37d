"""Synthetic scenarios at field-study scale, shared by the tests and scripts/.

Every preset is a 50-tag stream of about 319k events over 150 days with
one-minute windows. Plants sit on top of the background, and their tags get
reduced background rates where that keeps chance coincidences from blurring
the planted signal.
"""
from __future__ import annotations

from .episodes import Episode
from .synth import PlantedBoundary, PlantedEpisode, SynthConfig, field_scale_rates

K = 50
TOTAL_EVENTS = 319_204
SPAN = 150 * 86_400.0
WINDOW = 60.0


def tag_names(k: int = K) -> tuple[str, ...]:
    return tuple(f"tag{i:02d}" for i in range(k))


def null_config(seed: int) -> SynthConfig:
    """Independent homogeneous Poisson tags, no plants."""
    return SynthConfig(K, SPAN, field_scale_rates(K, TOTAL_EVENTS, SPAN), seed=seed, names=tag_names())


def _with_rates(rates, overrides):
    rates = list(rates)
    for tag, r in overrides.items():
        rates[tag] = r
    return tuple(rates)


# directional pair: "first then second" 884 times, "second then first" 589 times
PAIR_FIRST, PAIR_SECOND = 7, 31
PAIR_FORWARD, PAIR_BACKWARD = 884, 589


def directional_pair_config(seed: int, forward: int = PAIR_FORWARD, backward: int = PAIR_BACKWARD) -> SynthConfig:
    """A tag pair planted in both orders at a fixed count ratio.

    The two tags keep only a sparse background (about 150 events each), so
    chance ordered pairs between them stay near ten per direction.
    """
    base = field_scale_rates(K, TOTAL_EVENTS, SPAN)
    rates = _with_rates(base, {PAIR_FIRST: 150 / SPAN, PAIR_SECOND: 150 / SPAN})
    a, b = PAIR_FIRST, PAIR_SECOND
    plants = (PlantedEpisode(Episode((a, b), WINDOW, "forward"), (1.0, WINDOW), count=forward),
              PlantedEpisode(Episode((b, a), WINDOW, "backward"), (1.0, WINDOW), count=backward))
    return SynthConfig(K, SPAN, rates, plants, seed=seed, names=tag_names())


# run-boundary plant: runs of RUN_TAG end right after a TRIGGER_TAG event 1.3x as often
RUN_TAG, TRIGGER_TAG = 12, 40


def boundary_config(seed: int, lift: float = 1.3, n_runs: int = 5000) -> SynthConfig:
    """Runs whose ends are preceded by a trigger ``lift`` times as often as followed.

    The run tag has no background of its own, so every run end is a planted
    one; the trigger keeps a thin background (about 300 events).
    """
    base = field_scale_rates(K, TOTAL_EVENTS, SPAN)
    rates = _with_rates(base, {RUN_TAG: 0.0, TRIGGER_TAG: 300 / SPAN})
    boundary = PlantedBoundary(RUN_TAG, TRIGGER_TAG, lift, n_runs, base_prob=0.5, window=WINDOW)
    return SynthConfig(K, SPAN, rates, (), boundary, seed=seed, names=tag_names())


# entrance chain knock -> clap -> keys, on a Zipf-like background
KNOCK, CLAP, KEYS = 15, 25, 35
ENTRANCE_COUNT = 200
ENTRANCE_EXPONENT = 1.0


def entrance_config(seed: int, count: int = ENTRANCE_COUNT) -> SynthConfig:
    """A 3-step chain planted ``count`` times, step gaps uniform in [1, 60] s.

    Tag frequencies fall off as 1/rank, as sound-class frequencies in homes
    do; the chain's tags sit at middle ranks.
    """
    rates = field_scale_rates(K, TOTAL_EVENTS - 3 * count, SPAN, exponent=ENTRANCE_EXPONENT)
    names = list(tag_names())
    names[KNOCK], names[CLAP], names[KEYS] = "doorknock", "doorclap", "keys"
    chain = Episode((KNOCK, CLAP, KEYS), WINDOW, "entrance")
    plant = PlantedEpisode(chain, (1.0, WINDOW), count=count)
    return SynthConfig(K, SPAN, rates, (plant,), seed=seed, names=tuple(names))


def recovery(detections, instances) -> tuple[float, float, int]:
    """Recall, precision and matched count of detections against planted instances.

    A detection may claim an instance when the two share at least one event;
    claims are resolved one-to-one by maximum bipartite matching, so a stolen
    event cannot credit one detection twice.
    """
    import numpy as np
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import maximum_bipartite_matching

    owner = {}
    for n, inst in enumerate(instances):
        for e in inst["events"]:
            owner[e] = n
    rows, cols = [], []
    for d, det in enumerate(detections):
        for n in sorted({owner[e] for e in det.event_indices if e in owner}):
            rows.append(d)
            cols.append(n)
    if not detections or not instances:
        matched = 0
    else:
        graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(detections), len(instances)))
        matched = int(np.count_nonzero(maximum_bipartite_matching(graph, perm_type="column") >= 0))
    recall = matched / len(instances) if instances else 1.0
    precision = matched / len(detections) if detections else 1.0
    return recall, precision, matched

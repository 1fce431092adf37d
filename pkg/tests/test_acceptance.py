"""Acceptance suite: one test and one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the criterion lines are also
collected in the terminal summary at the end of the session.
"""
import contextlib
import io
import json
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import all_pairs_counts, brute_minimal_windows, brute_simultaneous
from soundmotifs import presets as P
from soundmotifs.cli import main
from soundmotifs.episodes import (Episode, _permutations, count_minimal_occurrences, episode_significance,
                                  match_template, mine_episodes)
from soundmotifs.events import TagRegistry, TagStream, format_registry, format_stream, merge_streams
from soundmotifs.matrices import count_cooccurrence, count_following
from soundmotifs.stats import asymmetry, asymmetry_pair, benjamini_hochberg, score_matrix, stream_boundary_association
from soundmotifs.synth import PlantedEpisode, SynthConfig, generate, field_scale_rates

SEEDS = range(20)
ALPHA = 0.01


# 1 ------------------------------------------------------------------------------------------

def test_criterion_1_field_count_asymmetry(criterion):
    s = asymmetry_pair(9980, 8581)
    ok = abs(s.ratio - 1.163) <= 0.001 and s.p < 1e-6
    assert criterion(1, ok, f"asymmetry(9980, 8581) ratio={s.ratio:.4f} p={s.p:.2e} "
                            "(want 1.163 +- 0.001, p < 1e-6)")


# 2 ------------------------------------------------------------------------------------------

def test_criterion_2_directional_pair_power(criterion):
    a, b = P.PAIR_FIRST, P.PAIR_SECOND
    t0 = time.perf_counter()
    good, ratios = 0, []
    for seed in SEEDS:
        s, _ = generate(P.directional_pair_config(seed))
        f = count_following(s, P.WINDOW)
        forward, backward = f.following_count(a, b), f.following_count(b, a)
        ratio = forward / backward
        asym = asymmetry(f)
        q_asym = benjamini_hochberg([x.p for x in asym])
        (idx,) = [n for n, x in enumerate(asym) if (x.i, x.j) == (min(a, b), max(a, b))]
        q_cell = score_matrix(f, ALPHA).q[b, a]
        ratios.append(ratio)
        good += 1.35 <= ratio <= 1.65 and q_asym[idx] <= ALPHA and q_cell <= ALPHA
    elapsed = time.perf_counter() - t0
    ok = good >= 18 and elapsed < 60
    assert criterion(2, ok, f"{good}/20 seeds with ratio in [1.35, 1.65] and q <= 0.01 "
                            f"(ratios {min(ratios):.3f}..{max(ratios):.3f}), {elapsed:.1f} s")


# 3 ------------------------------------------------------------------------------------------

def test_criterion_3_boundary_lift(criterion):
    good, lifts, ends = 0, [], []
    for seed in SEEDS:
        s, _ = generate(P.boundary_config(seed))
        b = stream_boundary_association(s, P.RUN_TAG, P.TRIGGER_TAG, P.WINDOW)
        lifts.append(b.lift)
        ends.append(b.n_run_ends)
        good += b.n_run_ends >= 1000 and 1.2 <= b.lift <= 1.4 and b.p < 0.01
    ok = good >= 18
    assert criterion(3, ok, f"{good}/20 seeds with lift in [1.2, 1.4] and p < 0.01 "
                            f"(lifts {min(lifts):.3f}..{max(lifts):.3f}, >= {min(ends)} run ends)")


# 4 ------------------------------------------------------------------------------------------

def test_criterion_4_null_calibration(criterion):
    frac_c, frac_f, totals = [], [], []
    for seed in SEEDS:
        s, _ = generate(P.null_config(seed))
        totals.append(len(s))
        frac_c.append(score_matrix(count_cooccurrence(s, P.WINDOW), ALPHA).flagged_fraction())
        frac_f.append(score_matrix(count_following(s, P.WINDOW), ALPHA).flagged_fraction())
    mc, mf = float(np.mean(frac_c)), float(np.mean(frac_f))
    ok = mc <= 0.02 and mf <= 0.02
    assert criterion(4, ok, f"mean flagged fraction cooccurrence={mc:.4f} following={mf:.4f} "
                            f"over 20 null streams of ~{int(np.mean(totals))} events (want <= 0.02)")


# 5 ------------------------------------------------------------------------------------------

def _random_matrix_stream(rng, n):
    k = int(rng.integers(1, 9))
    n_src = int(rng.integers(1, 4))
    span = float(rng.choice([2_000.0, 20_000.0, 200_000.0]))
    t = rng.uniform(0, span, n)
    if rng.random() < 0.5:
        t = np.floor(t / 10) * 10  # coarse clock, many ties
    src = rng.integers(0, n_src, n)
    return TagStream(t, rng.integers(0, k, n), k, source_ids=src, sources=[f"h{i}" for i in range(n_src)],
                     spans=[span] * n_src)


def _random_episode_stream(rng):
    n = int(rng.integers(0, 501))
    k = int(rng.integers(2, 5))
    span = float(rng.choice([5_000.0, 20_000.0]))
    t = rng.uniform(0, span, n)
    if rng.random() < 0.5:
        t = np.floor(t / 5) * 5
    return TagStream(t, rng.integers(0, k, n), k, spans=(span,))


def test_criterion_5_oracle_equivalence(criterion):
    rng = np.random.default_rng(20240605)
    sizes = [2000, 0, 1, 2] + rng.integers(3, 2001, 96).tolist()
    bad_matrix = 0
    for n in sizes:
        s = _random_matrix_stream(rng, n)
        w = float(rng.choice([0.5, 10.0, 60.0, 300.0]))
        cooc, foll = all_pairs_counts(s.times, s.tags, s.source_ids, s.k, w)
        bad_matrix += not np.array_equal(count_cooccurrence(s, w).counts, cooc)
        bad_matrix += not np.array_equal(count_following(s, w).counts, foll)
    bad_episode, checked = 0, 0
    for _ in range(100):
        s = _random_episode_stream(rng)
        t, g = s.times.tolist(), s.tags.tolist()
        for _ in range(3):
            m = int(rng.integers(2, 5))
            chain = tuple(int(c) for c in rng.integers(0, s.k, m))
            delays = tuple(float(d) for d in rng.choice([5.0, 30.0, 60.0, 120.0], m - 1))
            want = len(brute_minimal_windows(t, g, chain, delays))
            bad_episode += count_minimal_occurrences(s, Episode(chain, delays)) != want
            checked += 1
    ok = bad_matrix == 0 and bad_episode == 0
    assert criterion(5, ok, f"{bad_matrix} matrix discrepancies over {len(sizes)} streams (<= 2000 events), "
                            f"{bad_episode} minimal-occurrence discrepancies over {checked} episodes "
                            "(<= 500 events)")


# 6 ------------------------------------------------------------------------------------------

def _stream_from(seed, n, k, n_src, span, coarse):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, span, n)
    if coarse:
        t = np.floor(t)
    return TagStream(t, rng.integers(0, k, n), k, source_ids=rng.integers(0, n_src, n),
                     sources=[f"h{i}" for i in range(n_src)], spans=[span] * n_src)


streams = st.builds(_stream_from, st.integers(0, 2**32 - 1), st.integers(0, 300), st.integers(1, 6),
                    st.integers(1, 3), st.sampled_from([500.0, 5_000.0, 50_000.0]), st.booleans())
windows = st.floats(0.5, 300.0)
PROPERTY = settings(max_examples=100, deadline=None)


@given(streams, windows)
@PROPERTY
def prop_symmetry(s, w):
    c = count_cooccurrence(s, w).counts
    assert np.array_equal(c, c.T)


@given(streams, windows)
@PROPERTY
def prop_decomposition(s, w):
    c = count_cooccurrence(s, w).counts
    f = count_following(s, w).counts
    simul = sum(brute_simultaneous(sub.times.tolist(), sub.tags.tolist(), s.k) for _, sub in s.by_source())
    off = 1 - np.eye(s.k, dtype=np.int64)
    assert np.array_equal(c, f + f.T * off + simul)


@given(streams, windows, st.floats(1.0, 4.0))
@PROPERTY
def prop_monotone(s, w, factor):
    for fn in (count_cooccurrence, count_following):
        assert np.all(fn(s, w * factor).counts >= fn(s, w).counts)


@given(st.integers(0, 2**32 - 1), st.integers(1, 300), st.integers(1, 5), windows, st.floats(0.0, 1.0))
@PROPERTY
def prop_shift(seed, n, k, w, frac):
    # events confined to the first half of the recording, then moved later
    # inside it: counts, marginals and recording length are unchanged
    base = _stream_from(seed, n, k, 1, 10_000.0, False)
    t = base.times / 2
    shift = frac * (10_000.0 - t.max())
    a = TagStream(t, base.tags, k, spans=(10_000.0,))
    b = TagStream(t + shift, base.tags, k, spans=(10_000.0,))
    for fn in (count_cooccurrence, count_following):
        sa, sb = score_matrix(fn(a, w)), score_matrix(fn(b, w))
        assert np.array_equal(sa.z, sb.z) and np.array_equal(sa.p, sb.p) and np.array_equal(sa.q, sb.q)


@given(streams, windows, st.sampled_from([0.125, 0.5, 2.0, 8.0, 1024.0]))
@PROPERTY
def prop_scale(s, w, c):
    scaled = TagStream(s.times * c, s.tags, s.k, source_ids=s.source_ids, sources=s.sources,
                       spans=[x * c for x in s.spans])
    for fn in (count_cooccurrence, count_following):
        sa, sb = score_matrix(fn(s, w)), score_matrix(fn(scaled, w * c))
        for f in ("observed", "expected", "z", "p", "q"):
            assert np.array_equal(getattr(sa, f), getattr(sb, f))


@given(streams, st.integers(1, 20), st.integers(0, 2**32 - 1))
@PROPERTY
def prop_permutation_marginals(s, R, seed):
    n_src = len(s.sources)
    want = [np.bincount(s.tags[s.source_ids == i], minlength=s.k) for i in range(n_src)]
    perms = list(_permutations(s, R, seed))
    assert len(perms) == R
    for perm in perms:
        for i in range(n_src):
            assert np.array_equal(np.bincount(perm[s.source_ids == i], minlength=s.k), want[i])


PROPERTIES = {
    "cooccurrence symmetry": prop_symmetry,
    "decomposition identity": prop_decomposition,
    "window monotonicity": prop_monotone,
    "time-shift invariance of z/p": prop_shift,
    "time-scale invariance of z/p": prop_scale,
    "permutation marginals": prop_permutation_marginals,
}


def test_criterion_6_structural_invariants(criterion):
    failed = []
    for name, prop in PROPERTIES.items():
        try:
            prop()
        except Exception as exc:  # hypothesis re-raises the shrunk counterexample
            failed.append(f"{name} ({type(exc).__name__})")
    ok = not failed
    detail = (f"{len(PROPERTIES)} properties x 100 random examples hold" if ok
              else "violated: " + ", ".join(failed))
    assert criterion(6, ok, detail)


# 7 ------------------------------------------------------------------------------------------

ENTRANCE_SEEDS = range(5)


def test_criterion_7_entrance_recovery(criterion):
    chain = (P.KNOCK, P.CLAP, P.KEYS)
    episode = Episode(chain, P.WINDOW, "entrance")
    rows, good = [], 0
    for seed in ENTRANCE_SEEDS:
        s, gt = generate(P.entrance_config(seed))
        mined = {r.episode.chain: r.minimal_occurrences
                 for r in mine_episodes(s, 3, P.WINDOW, P.ENTRANCE_COUNT // 2)}
        count = mined.get(chain, 0)
        p = episode_significance(s, episode, 99, seed)
        recall, precision, _ = P.recovery(match_template(s, episode), gt.instances("entrance"))
        ok = (abs(count - P.ENTRANCE_COUNT) <= 0.05 * P.ENTRANCE_COUNT and p == 0.01
              and recall >= 0.99 and precision >= 0.95)
        good += ok
        rows.append(f"count={count} p={p:.2f} recall={recall:.3f} precision={precision:.3f}")
    ok = good == len(ENTRANCE_SEEDS)
    assert criterion(7, ok, f"{good}/{len(ENTRANCE_SEEDS)} seeds meet count 200 +- 5%, p = 0.01 (R = 99), "
                            f"recall >= 0.99, precision >= 0.95; worst seed: "
                            f"{min(rows, key=lambda r: float(r.split('precision=')[1]))}")


# 8 ------------------------------------------------------------------------------------------

def test_criterion_8_performance(criterion, tmp_path):
    rates = field_scale_rates(P.K, int(P.TOTAL_EVENTS * 1.02), P.SPAN)
    full, _ = generate(SynthConfig(P.K, P.SPAN, rates, seed=8, names=P.tag_names()))
    n = P.TOTAL_EVENTS
    s = TagStream(full.times[:n], full.tags[:n], P.K, spans=(P.SPAN,))
    registry = TagRegistry(P.tag_names())
    (tmp_path / "events.csv").write_text(format_stream(s, registry))
    (tmp_path / "registry.txt").write_text(format_registry(registry))
    t0 = time.perf_counter()
    rc = main(["matrices", "--input", str(tmp_path / "events.csv"), "--registry", str(tmp_path / "registry.txt"),
               "--dt", "60", "--delta", "60", "--output-dir", str(tmp_path / "out")])
    elapsed = time.perf_counter() - t0
    ok = rc == 0 and len(s) == P.TOTAL_EVENTS and elapsed <= 10.0
    assert criterion(8, ok, f"cmd_matrices on {len(s)} events, 50 tags, dt = delta = 60 s: "
                            f"{elapsed:.2f} s (budget 10 s)")


# 9 ------------------------------------------------------------------------------------------

def _detect_case(seed, d):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(3, 8))
    names = tuple(f"s{seed}_{i}" for i in range(k))
    planted = tuple(int(c) for c in rng.choice(k, 3, replace=False))
    delay = float(rng.choice([20.0, 60.0]))
    parts = []
    for h in range(int(rng.integers(1, 4))):
        cfg = SynthConfig(k, 50_000.0, tuple(rng.uniform(0.0005, 0.004, k)),
                          (PlantedEpisode(Episode(planted, delay, "planted"), (1.0, delay), count=40),),
                          seed=seed * 10 + h, names=names, source=f"home{h}")
        parts.append(generate(cfg)[0])
    s = merge_streams(parts)
    if seed % 2:
        s = TagStream(np.floor(s.times), s.tags, k, source_ids=s.source_ids, sources=s.sources, spans=s.spans)
    templates = [{"label": "planted", "chain": [names[c] for c in planted], "step_max_delay": delay}]
    for m in range(3):
        chain = rng.integers(0, k, int(rng.integers(2, 4))).tolist()
        templates.append({"label": f"t{m}", "chain": [names[c] for c in chain],
                          "step_max_delay": float(rng.choice([10.0, 45.0, 90.0]))})
    registry = TagRegistry(names)
    (d / "events.csv").write_text(format_stream(s, registry))
    (d / "registry.txt").write_text(format_registry(registry))
    (d / "templates.json").write_text(json.dumps(templates))
    return ["--input", str(d / "events.csv"), "--registry", str(d / "registry.txt"),
            "--templates", str(d / "templates.json")]


def _capture(argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        rc = main(argv)
    return rc, buf.getvalue().encode()


def test_criterion_9_watch_equals_batch(criterion, tmp_path):
    same, lines = 0, 0
    for seed in SEEDS:
        d = tmp_path / f"case{seed}"
        d.mkdir()
        args = _detect_case(seed, d)
        rc_b, batch = _capture(["detect", *args])
        rc_w, watch = _capture(["detect", "--watch", *args])
        same += rc_b == 0 and rc_w == 0 and batch == watch and len(batch) > 0
        lines += batch.count(b"\n")
    ok = same == len(SEEDS)
    assert criterion(9, ok, f"{same}/20 random streams give byte-identical batch and watch output "
                            f"({lines} detections in total)")

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from soundmotifs.events import (StreamFormatError, TagEvent, TagRegistry, TagStream, format_registry,
                                format_stream, load_registry, merge_streams, parse_stream)

REG = TagRegistry(("doorknock", "doorclap", "keys"))


def random_log(rng, n, names, span=1000.0):
    t = np.round(rng.uniform(0, span, n), 3)
    g = rng.integers(0, len(names), n)
    return [f"{float(ti)!r},{names[gi]}" for ti, gi in zip(t, g)]


def test_empty_stream_with_span_header():
    s = parse_stream("#span=100\n", REG)
    assert len(s) == 0
    assert s.span_T == 100.0
    assert s.per_tag_counts.tolist() == [0, 0, 0]


def test_two_lines():
    s = parse_stream("5.0,doorclap\n0.0,doorknock\n", REG)
    assert s.times.tolist() == [0.0, 5.0]
    assert s.tags.tolist() == [0, 1]
    assert s.per_tag_counts[REG.index("doorknock")] == 1
    assert s.span_T == 5.0


def test_parse_is_order_insensitive():
    rng = np.random.default_rng(7)
    for _ in range(100):
        lines = random_log(rng, int(rng.integers(0, 60)), REG.names)
        shuffled = list(lines)
        rng.shuffle(shuffled)
        hdr = "#span=1000\n"
        assert parse_stream(hdr + "\n".join(shuffled), REG) == parse_stream(hdr + "\n".join(sorted(lines)), REG)


def test_equal_timestamps_order_by_tag_then_input():
    s = parse_stream("3,keys\n3,doorknock\n3,keys,2.5\n1,doorclap\n", REG)
    assert s.tags.tolist() == [1, 0, 2, 2]
    # two keys at t=3: the first one read has no duration
    assert np.isnan(s.durations[2]) and s.durations[3] == 2.5


@pytest.mark.parametrize("text, lineno", [
    ("0,doorknock\nbanana\n", 2),
    ("0,doorknock\nx,keys\n", 2),
    ("-1,keys\n", 1),
    ("1,keys,-3\n", 1),
    ("#span=10\n#span=20\n", 2),
])
def test_malformed_lines_report_line_number(text, lineno):
    with pytest.raises(StreamFormatError) as exc:
        parse_stream(text, REG)
    assert exc.value.line == lineno
    assert f"line {lineno}" in str(exc.value)


def test_unknown_tag():
    with pytest.raises(StreamFormatError, match="unknown tag"):
        parse_stream("0,glassbreak\n", REG)


def test_span_shorter_than_last_event_is_rejected():
    with pytest.raises(StreamFormatError):
        parse_stream("#span=5\n10,keys\n", REG)


def test_sources_and_durations():
    text = "#span@h1=100\n#span@h2=50\n0,keys,3,h1\n1,doorclap,h2\n2,doorknock,,h1\n"
    s = parse_stream(text, REG)
    assert s.sources == ("h1", "h2")
    assert s.spans == (100.0, 50.0)
    assert s.span_T == 100.0
    subs = dict(s.by_source())
    assert subs["h1"].tags.tolist() == [2, 0]
    assert subs["h2"].tags.tolist() == [1]
    assert s.durations[0] == 3.0 and np.isnan(s.durations[1])


def test_epoch_header_round_trips():
    s = parse_stream("#epoch=2012-10-01T00:00:00Z\n#span=10\n1,keys\n", REG)
    assert s.epoch == "2012-10-01T00:00:00Z"
    assert parse_stream(format_stream(s, REG), REG) == s


def test_event_invariants():
    with pytest.raises(ValueError):
        TagEvent(0, -1.0)
    with pytest.raises(ValueError):
        TagEvent(0, 1.0, duration=-2.0)
    with pytest.raises(ValueError):
        TagStream([0.0], [5], k=3)


def test_stream_is_immutable():
    s = parse_stream("0,keys\n", REG)
    with pytest.raises(ValueError):
        s.times[0] = 4.0
    with pytest.raises(AttributeError):
        s.k = 9


def test_merge_keeps_sources_apart():
    a = parse_stream("0,keys\n", REG, default_source="a")
    b = parse_stream("0,keys\n", REG, default_source="b")
    m = merge_streams([a, b])
    assert m.sources == ("a", "b")
    assert m.per_tag_counts.tolist() == [0, 0, 2]


# -- registry -----------------------------------------------------------------------

def test_registry_single_path_line():
    r = load_registry("sounds/animals/dogbarking\n")
    assert r.k == 1
    assert r.names == ("dogbarking",)
    assert r.parents[0] == ("sounds", "animals")
    assert r.label(0) == "sounds/animals/dogbarking"


def test_registry_duplicate_name():
    with pytest.raises(ValueError, match="duplicate"):
        load_registry("a/x\nb/x\n")


def test_registry_empty():
    with pytest.raises(ValueError):
        load_registry("\n# nothing\n")


def test_fifty_tag_registry():
    text = "\n".join(f"sounds/group{i % 5}/tag{i:02d}" for i in range(50))
    r = load_registry(text)
    assert r.k == 50
    assert load_registry(format_registry(r)) == r


def test_registry_outline_form():
    text = "sounds\n  animals\n    dogbarking\n    - catmeow\n  house\n    doorknock\n"
    r = load_registry(text)
    assert r.names == ("dogbarking", "catmeow", "doorknock")
    assert r.parents[2] == ("sounds", "house")


def test_registry_parent_must_be_declared():
    with pytest.raises(ValueError):
        TagRegistry(("a",), parents={0: ("nowhere",)}, categories=frozenset())


# -- properties -------------------------------------------------------------------

events = st.lists(
    st.tuples(st.floats(0, 1e6, allow_nan=False), st.integers(0, 2),
              st.one_of(st.none(), st.floats(0, 100, allow_nan=False)), st.sampled_from(["", "h1", "h2"])),
    max_size=40)


@given(events, st.floats(0, 10.0))
@settings(max_examples=200, deadline=None)
def test_format_parse_round_trip(evs, pad):
    evs = [TagEvent(g, t, d, s) for t, g, d, s in evs]
    srcs = sorted({e.source for e in evs})
    spans = {s: max([e.timestamp for e in evs if e.source == s], default=0.0) + pad for s in srcs}
    stream = TagStream.from_events(evs, 3, spans=spans)
    back = parse_stream(format_stream(stream, REG), REG)
    assert back == stream
    assert back.spans == stream.spans


@given(events)
@settings(max_examples=200, deadline=None)
def test_counts_and_order(evs):
    stream = TagStream.from_events([TagEvent(g, t, d, s) for t, g, d, s in evs], 3)
    assert np.all(np.diff(stream.times) >= 0)
    same = np.diff(stream.times) == 0
    assert np.all(np.diff(stream.tags)[same] >= 0)
    brute = [sum(1 for e in evs if e[1] == j) for j in range(3)]
    assert stream.per_tag_counts.tolist() == brute
    assert stream.per_tag_counts.sum() == len(stream)
    assert stream.span_T >= (stream.times.max() if len(stream) else 0.0)

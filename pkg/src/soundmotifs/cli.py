"""Command-line entry point: ``soundmotifs {synth,matrices,mine,detect,report}``.

Data goes to files or stdout, diagnostics to stderr; the exit status is zero
only when the command ran to completion.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import episodes as ep
from .events import StreamFormatError, TagRegistry, TagStream, format_registry, format_stream, \
    load_registry, merge_streams, parse_header, parse_record, parse_stream
from .matrices import DEFAULT_WINDOW, count_cooccurrence, count_following, matrix_to_csv, sidecar
from .stats import DEFAULT_ALPHA, asymmetry, flagged_report, score_matrix, scored_to_csv, \
    stream_boundary_association
from .synth import SynthConfig, generate

log = logging.getLogger("soundmotifs")

WINDOW_NOTE = "one minute, the window of the original field study"


@dataclass
class RunConfig:
    input: list[str] = field(default_factory=list)
    registry: str | None = None
    dt: float = DEFAULT_WINDOW
    delta: float = DEFAULT_WINDOW
    gap: float | None = None
    alpha: float = DEFAULT_ALPHA
    max_len: int = ep.DEFAULT_MAX_LEN
    min_support: int = ep.DEFAULT_MIN_SUPPORT
    permutations: int = 99
    seed: int = 0
    top: int = 100
    output_dir: str = "."
    mode: str = "matrices"

    def __post_init__(self):
        for name in ("dt", "delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"--{name} must be positive")
        if self.gap is not None and not self.gap > 0:
            raise ValueError("--gap must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("--alpha must be in (0, 1)")

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in vars(args).items() if k in known and v is not None})

    @property
    def run_gap(self) -> float:
        return self.dt if self.gap is None else self.gap


# -- input ---------------------------------------------------------------------

def _read(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text()


def load_inputs(cfg: RunConfig) -> tuple[TagStream, TagRegistry]:
    if not cfg.input:
        raise ValueError("no --input given")
    texts = [_read(p) for p in cfg.input]
    if cfg.registry:
        registry = load_registry(Path(cfg.registry).read_text())
    else:
        registry = TagRegistry.from_names(sorted(_names_in(texts)))
    if len(texts) == 1:
        return parse_stream(texts[0], registry), registry
    streams = [parse_stream(t, registry, default_source=Path(p).stem) for p, t in zip(cfg.input, texts)]
    return merge_streams(streams), registry


def _names_in(texts) -> set[str]:
    names = set()
    for text in texts:
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if line and not line.startswith("#"):
                names.add(parse_record(line, lineno)[1])
    if not names:
        raise ValueError("input contains no events and no --registry was given")
    return names


def load_templates(path: str, registry: TagRegistry) -> list[ep.Episode]:
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        doc = doc.get("templates", [])
    out = []
    for i, t in enumerate(doc):
        try:
            chain = tuple(registry.index(n) for n in t["chain"])
            out.append(ep.Episode(chain, t.get("step_max_delay", DEFAULT_WINDOW),
                                  t.get("label") or "->".join(t["chain"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"template {i}: {exc}") from None
    return out


# -- commands --------------------------------------------------------------------

def cmd_synth(args) -> None:
    cfg = SynthConfig.from_json(Path(args.config).read_text())
    if args.seed is not None:
        cfg = SynthConfig(cfg.k, cfg.span_T, cfg.background_rates, cfg.planted_episodes,
                          cfg.planted_boundary, args.seed, cfg.names, cfg.source)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stream, truth = generate(cfg)
    registry = cfg.registry
    (out / "events.csv").write_text(format_stream(stream, registry))
    (out / "ground_truth.json").write_text(truth.to_json())
    (out / "registry.txt").write_text(format_registry(registry))
    (out / "synth_config.json").write_text(cfg.to_json())
    log.info("wrote %d events to %s", len(stream), out / "events.csv")


def _matrices(cfg: RunConfig, stream: TagStream, registry: TagRegistry, out: Path):
    names = registry.names
    cooc = count_cooccurrence(stream, cfg.dt)
    foll = count_following(stream, cfg.delta)
    sc, sf = score_matrix(cooc, cfg.alpha), score_matrix(foll, cfg.alpha)
    asym = asymmetry(foll)
    if out is not None:
        (out / "cooccurrence.csv").write_text(matrix_to_csv(cooc.counts, names))
        (out / "cooccurrence.json").write_text(sidecar(cooc, registry))
        (out / "following.csv").write_text(matrix_to_csv(foll.counts, names))
        (out / "following.json").write_text(sidecar(foll, registry))
        for tag, s in (("cooccurrence", sc), ("following", sf)):
            (out / f"{tag}_z.csv").write_text(scored_to_csv(s.z, names))
            (out / f"{tag}_q.csv").write_text(scored_to_csv(s.q, names))
        (out / "flagged_edges.json").write_text(flagged_report([sc, sf], names))
        flagged_asym = sorted((a for a in asym if a.n_ij + a.n_ji > 0), key=lambda a: (a.p, a.i, a.j))
        (out / "asymmetry.json").write_text(json.dumps([a.to_json(names) for a in flagged_asym], indent=1))
    return sc, sf, asym


def cmd_matrices(args) -> None:
    cfg = RunConfig.from_args(args)
    stream, registry = load_inputs(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc, sf, _ = _matrices(cfg, stream, registry, out)
    boundary = []
    for pair in args.boundary or []:
        run_name, _, trig_name = pair.partition(":")
        stat = stream_boundary_association(stream, registry.index(run_name), registry.index(trig_name),
                                           cfg.delta, cfg.run_gap)
        boundary.append(dict(stat.to_json(), run_tag=run_name, trigger_tag=trig_name))
    if boundary:
        (out / "boundary.json").write_text(json.dumps(boundary, indent=2))
    log.info("%d events, %d + %d flagged cells", len(stream), len(sc.flagged_edges()), len(sf.flagged_edges()))


def cmd_mine(args) -> None:
    cfg = RunConfig.from_args(args)
    stream, registry = load_inputs(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = registry.names
    mined = ep.mine_episodes(stream, cfg.max_len, cfg.delta, cfg.min_support)
    lift = [s.minimal_occurrences / max(ep.chance_occurrences(stream, s.episode), 1e-12) for s in mined]
    ranked = sorted(range(len(mined)), key=lambda i: (-lift[i], mined[i].episode.chain))
    chosen = ranked if cfg.top <= 0 else ranked[:cfg.top]
    pvals = ep.episodes_significance(stream, [mined[i].episode for i in chosen],
                                     cfg.permutations, cfg.seed) if chosen and len(stream) else []
    p_of = dict(zip(chosen, pvals))
    report = []
    for i in ranked:
        s = mined[i]
        doc = ep.EpisodeStats(s.episode, s.minimal_occurrences, p_of.get(i), s.per_source_counts).to_json(names)
        doc["lift"] = lift[i]
        report.append(doc)
    (out / "episodes.json").write_text(json.dumps(report, indent=1))
    if len(stream):
        sc, sf, asym = _matrices(cfg, stream, registry, None)
        graph = ep.build_graph(sc, sf, asym, cfg.alpha, names)
    else:
        graph = ep.MotifGraph(registry.k, names, (), cfg.alpha)
    (out / "motif_graph.dot").write_text(ep.export_dot(graph))
    motifs = {kind: [[names[n] for n in tup] for tup in ep.find_motifs(graph, kind)]
              for kind in ("edge", "two-path", "loop-2", "loop-3")}
    (out / "motifs.json").write_text(json.dumps(motifs, indent=1))
    log.info("%d episodes mined, %d graph edges", len(mined), len(graph.edges))


def cmd_detect(args) -> None:
    registry = load_registry(Path(args.registry).read_text())
    templates = load_templates(args.templates, registry)
    sink = sys.stdout
    if args.watch:
        _watch(templates, registry, args.input or "-", sink)
        return
    text = _read(args.input or "-")
    stream = parse_stream(text, registry)
    for d in ep.detect_all(stream, templates):
        sink.write(d.to_json() + "\n")


def _watch(templates, registry: TagRegistry, path: str, sink) -> None:
    det = ep.StreamDetector(templates, registry.k)
    fh = sys.stdin if path == "-" else open(path)
    headers: dict = {}
    try:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parse_header(line, lineno, headers)
                continue
            t, name, _, source = parse_record(line, lineno)
            if name not in registry:
                raise StreamFormatError(f"unknown tag {name!r}", lineno)
            try:
                found = det.push(t, registry.index(name), source)
            except ValueError as exc:
                raise StreamFormatError(str(exc), lineno) from None
            for d in found:
                sink.write(d.to_json() + "\n")
            sink.flush()
        for d in det.close():
            sink.write(d.to_json() + "\n")
        sink.flush()
    finally:
        if fh is not sys.stdin:
            fh.close()


def cmd_report(args) -> None:
    out = Path(args.output_dir)
    lines = ["# Motif report", ""]
    meta_path = out / "cooccurrence.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        lines += [f"- events: {meta['total_events']}", f"- span: {meta['span_T']} s",
                  f"- tags: {len(meta['per_tag_counts'])}", f"- co-occurrence window: {meta['window']} s", ""]
    fl = out / "flagged_edges.json"
    if fl.exists():
        doc = json.loads(fl.read_text())
        lines += [f"## Flagged cells (alpha = {doc['alpha']})", "",
                  "| kind | first | second | observed | expected | z | q |", "|---|---|---|---|---|---|---|"]
        for e in doc["edges"][: args.limit]:
            lines.append(f"| {e['kind']} | {e['i_name']} | {e['j_name']} | {e['observed']} | "
                         f"{e['expected']:.3g} | {e['z'] if isinstance(e['z'], str) else format(e['z'], '.3g')} | {e['q']:.3g} |")
        lines.append("")
    asym = out / "asymmetry.json"
    if asym.exists():
        doc = json.loads(asym.read_text())
        lines += ["## Strongest order asymmetries", "", "| pair | i then j | j then i | ratio | p |",
                  "|---|---|---|---|---|"]
        for a in doc[: args.limit]:
            lines.append(f"| {a['i_name']} / {a['j_name']} | {a['n_ij']} | {a['n_ji']} | {a['ratio'] if isinstance(a['ratio'], str) else format(a['ratio'], '.3g')} | {a['p']:.3g} |")
        lines.append("")
    eps = out / "episodes.json"
    if eps.exists():
        doc = json.loads(eps.read_text())
        lines += ["## Episodes by lift over chance", "", "| chain | occurrences | lift | empirical p |",
                  "|---|---|---|---|"]
        for e in doc[: args.limit]:
            p = "-" if e["empirical_p"] is None else f"{e['empirical_p']:.3g}"
            lines.append(f"| {' -> '.join(e['chain_names'])} | {e['minimal_occurrences']} | {e['lift']:.3g} | {p} |")
        lines.append("")
    (out / "report.md").write_text("\n".join(lines))


# -- argument parsing --------------------------------------------------------------

def _add_stream_args(p: argparse.ArgumentParser):
    p.add_argument("--input", action="append", required=True,
                   help="event log (timestamp,tag[,duration][,source]); repeat for several homes, '-' for stdin")
    p.add_argument("--registry", help="taxonomy file; inferred from the tag names in the input when omitted")
    p.add_argument("--dt", type=float, default=DEFAULT_WINDOW, help=f"co-occurrence window in seconds ({WINDOW_NOTE})")
    p.add_argument("--delta", type=float, default=DEFAULT_WINDOW, help=f"following delay in seconds ({WINDOW_NOTE})")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="Benjamini-Hochberg level for flagging cells")
    p.add_argument("--output-dir", default=".", help="directory for output files")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="soundmotifs", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic stream with planted ground truth", formatter_class=fmt)
    p.add_argument("--config", required=True, help="SynthConfig JSON")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--output-dir", default=".")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("matrices", help="co-occurrence and following matrices with significance", formatter_class=fmt)
    _add_stream_args(p)
    p.add_argument("--gap", type=float, help="run merging gap in seconds (defaults to --dt)")
    p.add_argument("--boundary", action="append", metavar="RUN_TAG:TRIGGER_TAG",
                   help="test whether runs of RUN_TAG end just after TRIGGER_TAG events")
    p.set_defaults(func=cmd_matrices)

    p = sub.add_parser("mine", help="mine frequent ordered episodes and the motif graph", formatter_class=fmt)
    _add_stream_args(p)
    p.add_argument("--max-len", type=int, default=ep.DEFAULT_MAX_LEN, help="longest chain mined")
    p.add_argument("--min-support", type=int, default=ep.DEFAULT_MIN_SUPPORT, help="minimal occurrences required")
    p.add_argument("--permutations", type=int, default=99, help="label permutations per significance test")
    p.add_argument("--seed", type=int, default=0, help="permutation seed")
    p.add_argument("--top", type=int, default=100,
                   help="test only the episodes with the highest lift over chance (0 = all)")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("detect", help="match activity templates, one JSON object per detection", formatter_class=fmt)
    p.add_argument("--input", help="event log; stdin when omitted")
    p.add_argument("--registry", required=True, help="taxonomy file")
    p.add_argument("--templates", required=True, help="JSON list of {label, chain, step_max_delay}")
    p.add_argument("--watch", action="store_true", help="read events incrementally and emit detections as they settle")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("report", help="summarise an output directory into report.md", formatter_class=fmt)
    p.add_argument("--output-dir", default=".")
    p.add_argument("--limit", type=int, default=25, help="rows per table")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s: %(message)s")
    try:
        args.func(args)
    except (StreamFormatError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"soundmotifs {args.command}: error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

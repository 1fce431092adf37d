"""Time ``soundmotifs matrices`` on a 50-tag stream of field-study size.

Usage: python scripts/benchmark_matrices.py [--events N] [--repeats R] [--seed S]
"""
import argparse
import tempfile
import time
from pathlib import Path

from soundmotifs import presets as P
from soundmotifs.cli import main as run_cli
from soundmotifs.events import TagRegistry, TagStream, format_registry, format_stream
from soundmotifs.synth import SynthConfig, generate, field_scale_rates


def write_stream(directory: Path, n_events: int, seed: int) -> list[str]:
    rates = field_scale_rates(P.K, int(n_events * 1.02), P.SPAN)
    full, _ = generate(SynthConfig(P.K, P.SPAN, rates, seed=seed, names=P.tag_names()))
    s = TagStream(full.times[:n_events], full.tags[:n_events], P.K, spans=(P.SPAN,))
    registry = TagRegistry(P.tag_names())
    (directory / "events.csv").write_text(format_stream(s, registry))
    (directory / "registry.txt").write_text(format_registry(registry))
    return ["matrices", "--input", str(directory / "events.csv"), "--registry", str(directory / "registry.txt"),
            "--dt", "60", "--delta", "60", "--output-dir", str(directory / "out")]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=P.TOTAL_EVENTS)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    with tempfile.TemporaryDirectory() as tmp:
        argv_cli = write_stream(Path(tmp), args.events, args.seed)
        for r in range(args.repeats):
            t0 = time.perf_counter()
            run_cli(argv_cli)
            print(f"run {r}: {args.events} events in {time.perf_counter() - t0:.2f} s")


if __name__ == "__main__":
    main()

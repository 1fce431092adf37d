"""Temporal motifs in streams of tagged sound events.

Pairwise co-occurrence and following statistics with a uniform-rate null,
serial episode mining with permutation significance, activity template
matching (batch and incremental), and a seeded synthetic generator with
planted ground truth.
"""
from .events import TagEvent, TagRegistry, TagStream, StreamFormatError, load_registry, parse_stream
from .matrices import PairCountMatrix, count_cooccurrence, count_following, segment_runs
from .stats import ScoredMatrix, asymmetry, boundary_association, score_matrix
from .episodes import (Detection, Episode, EpisodeStats, StreamDetector, build_graph, detect_all,
                       episodes_significance, export_dot, find_motifs, match_template, mine_episodes,
                       minimal_occurrences)
from .synth import SynthConfig, GroundTruth, generate

__version__ = "0.1.0"

"""Complementary temporal action proposals on unit-level feature sequences."""

from .core import GroundTruthSegment, Interval, Proposal, Source, best_matches, nms, tiou

__all__ = ["GroundTruthSegment", "Interval", "Proposal", "Source", "best_matches", "nms", "tiou"]
__version__ = "0.1.0"

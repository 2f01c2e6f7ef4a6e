"""Enzyme EC-number annotation toolkit.

Builds chronological benchmark datasets from protein flat files, embeds
sequences, trains a three-agent classifier stack (enzyme detection,
function counting, extreme multi-label EC assignment) with a sequence
alignment fallback, and evaluates predictions with confusion-count
metrics that account for abstaining tools.
"""

__version__ = "0.1.0"

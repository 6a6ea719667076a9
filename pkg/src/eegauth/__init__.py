"""Per-user EEG band-power authentication.

Pipeline: synthesize or load three-channel EEG recordings, band-pass filter,
cut random 4 s segments, reduce each to 15 band-power features, assemble
balanced per-user datasets, pick each user's classifier under a wall-clock
budget, and evaluate with confusion metrics, Cohen's kappa, and
normality-gated location tests.  The service module wraps enrollment and
session authentication behind a JSON HTTP interface.
"""

__version__ = "0.1.0"

"""Power spectral density estimation and the 15-value band-power feature set.

Features are band powers (microvolts squared) of five bands on three channels,
in the fixed order Fz_delta ... Pz_alpha.  The alpha band [8, 12) is exactly
the union of its half-open halves, and the feature builder computes it as
their sum so the identity holds bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as _sps

from .errors import ChannelMismatchError, DegenerateBandError, InvalidBandError, TooShortError
from .signal import CHANNELS, Segment, segment_length


@dataclass(frozen=True)
class BandDef:
    name: str
    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        if not self.lo_hz < self.hi_hz:
            raise InvalidBandError(f"band {self.name}: lo {self.lo_hz} >= hi {self.hi_hz}")


BANDS = (
    BandDef("delta", 0.0, 4.0),
    BandDef("theta", 4.0, 8.0),
    BandDef("lalpha", 8.0, 10.0),
    BandDef("halpha", 10.0, 12.0),
    BandDef("alpha", 8.0, 12.0),
)

BAND_NAMES = tuple(b.name for b in BANDS)

FEATURE_NAMES = tuple(f"{ch}_{band}" for ch in CHANNELS for band in BAND_NAMES)
N_FEATURES = len(FEATURE_NAMES)


def psd(channel_data: np.ndarray, sample_rate_hz: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided power spectral density in uV^2/Hz on a uniform grid.

    Averaged rectangular-window periodograms of segment-length windows with
    50% overlap; a canonical 4 s input is a single full-length periodogram at
    0.25 Hz resolution.  The rectangular window keeps integer-hertz tones in
    exactly one bin, so band boundaries at integer frequencies never split a
    tone's power.  Parseval holds exactly: sum(density) * df == mean square.
    """
    x = np.asarray(channel_data, dtype=float)
    if x.ndim != 1:
        raise ValueError("channel_data must be one-dimensional")
    nperseg = segment_length(sample_rate_hz)
    if x.size < nperseg:
        raise TooShortError(f"need at least {nperseg} samples, got {x.size}")
    freqs, density = _sps.welch(
        x,
        fs=sample_rate_hz,
        window="boxcar",
        nperseg=nperseg,
        noverlap=nperseg // 2,
        detrend=False,
        scaling="density",
    )
    return freqs, density


def band_power(freqs: np.ndarray, density: np.ndarray, band: BandDef) -> float:
    """Integrated density over lo <= f < hi (half-open), in uV^2."""
    freqs = np.asarray(freqs, dtype=float)
    density = np.asarray(density, dtype=float)
    nyquist = freqs[-1]
    if band.lo_hz < 0 or band.hi_hz > nyquist:
        raise InvalidBandError(
            f"band {band.name} [{band.lo_hz}, {band.hi_hz}) outside [0, {nyquist}]"
        )
    mask = (freqs >= band.lo_hz) & (freqs < band.hi_hz)
    if not mask.any():
        raise DegenerateBandError(f"band {band.name} covers no frequency bins")
    df = freqs[1] - freqs[0]
    return float(density[mask].sum() * df)


def extract_features(seg: Segment) -> np.ndarray:
    """The 15 canonical band powers of one segment, in FEATURE_NAMES order."""
    if seg.channels != CHANNELS:
        raise ChannelMismatchError(
            f"segment carries channels {seg.channels}, expected {CHANNELS}"
        )
    values = np.empty(N_FEATURES, dtype=float)
    for ci in range(len(CHANNELS)):
        freqs, density = psd(seg.data[ci], seg.sample_rate_hz)
        powers = {b.name: band_power(freqs, density, b) for b in BANDS[:4]}
        # alpha is the union of its half-open halves; computing it as the sum
        # keeps the identity exact.
        powers["alpha"] = powers["lalpha"] + powers["halpha"]
        for bi, name in enumerate(BAND_NAMES):
            values[ci * len(BAND_NAMES) + bi] = powers[name]
    return values

"""Voiced-region detection, 50 ms segmentation, windowing, FFT, spectral peaks.

The FFT is an iterative radix-2 transform; frames are zero-padded to the next
power of two (2400-sample frames at 48 kHz become 4096 points).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import AudioClip

SEGMENT_SECONDS = 0.050
MAX_SEGMENTS = 2400
DEFAULT_WINDOW_SIGMA = 0.4

# voiced gate: frame RMS > 2x clip median frame RMS and flatness < 0.3
VOICED_RMS_FACTOR = 2.0
VOICED_FLATNESS_MAX = 0.3
FLATNESS_BAND_HZ = (100.0, 4000.0)
MIN_REGION_SECONDS = 0.100

FLATNESS_FLOOR = 1e-12


class InvalidLength(ValueError):
    pass


class InvalidSigma(ValueError):
    pass


class EmptyFrame(ValueError):
    pass


class ClipTooShort(ValueError):
    pass


class DegenerateSpectrum(ValueError):
    """All magnitudes zero; no peaks or descriptors exist."""


@dataclass(frozen=True)
class Segment:
    samples: np.ndarray
    sample_rate: int
    start_s: float
    index: int


@dataclass(frozen=True)
class Spectrum:
    """One-sided magnitude spectrum over bins 0..N/2."""

    magnitudes: np.ndarray
    bin_hz: float
    fft_size: int


@dataclass(frozen=True)
class VoicedRegion:
    start_s: float
    end_s: float

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def segment_length(sample_rate: int) -> int:
    return int(round(SEGMENT_SECONDS * sample_rate))


def gaussian_window(n: int, sigma: float = DEFAULT_WINDOW_SIGMA) -> np.ndarray:
    """w[i] = exp(-0.5 * ((i - (n-1)/2) / (sigma * (n-1)/2))^2), peak 1 at center."""
    if n < 2:
        raise InvalidLength(f"window needs n >= 2, got {n}")
    if not (0.0 < sigma <= 1.0):
        raise InvalidSigma(f"sigma must lie in (0, 1], got {sigma}")
    half = (n - 1) / 2.0
    i = np.arange(n)
    return np.exp(-0.5 * ((i - half) / (sigma * half)) ** 2)


# === radix-2 FFT ===

_rev_cache: dict = {}
_twiddle_cache: dict = {}


def _bit_reversal(n: int) -> np.ndarray:
    perm = _rev_cache.get(n)
    if perm is None:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        perm = np.zeros(n, dtype=np.intp)
        for _ in range(bits):
            perm = (perm << 1) | (idx & 1)
            idx >>= 1
        _rev_cache[n] = perm
    return perm


def fft_radix2(x) -> np.ndarray:
    """In-order iterative Cooley-Tukey FFT along the last axis.

    Length must be a power of two.  Butterfly stages are vectorized so large
    frames stay affordable without importing a library transform.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n == 0 or n & (n - 1):
        raise InvalidLength(f"radix-2 length must be a power of two, got {n}")
    if n == 1:
        return x.copy()

    lead = x.shape[:-1]
    y = x[..., _bit_reversal(n)].reshape(-1, n)
    m = 1
    while m < n:
        tw = _twiddle_cache.get(m)
        if tw is None:
            tw = np.exp(-1j * np.pi * np.arange(m) / m)
            _twiddle_cache[m] = tw
        pairs = y.reshape(-1, 2, m)
        even = pairs[:, 0, :]
        odd = pairs[:, 1, :] * tw
        y = np.concatenate([even + odd, even - odd], axis=1)
        m *= 2
    return y.reshape(*lead, n)


def fft_magnitude(samples, sample_rate: int) -> Spectrum:
    """Magnitude spectrum of a frame, zero-padded to the next power of two.

    Returns bins 0..N/2 inclusive; bin_hz = sample_rate / N.
    """
    x = np.asarray(samples, dtype=np.float64)
    if len(x) == 0:
        raise EmptyFrame("cannot transform an empty frame")
    if not np.all(np.isfinite(x)):
        raise ValueError("frame contains non-finite samples")
    nfft = 1
    while nfft < len(x):
        nfft *= 2
    padded = np.zeros(nfft)
    padded[:len(x)] = x
    spectrum = fft_radix2(padded)
    mags = np.abs(spectrum[:nfft // 2 + 1])
    return Spectrum(magnitudes=mags, bin_hz=sample_rate / nfft, fft_size=nfft)


def flatness_ratio(magnitudes) -> float:
    """Geometric over arithmetic mean, with bins floored at 1e-12.

    Near 1 for noise-like spectra, near 0 for tonal ones.  Shared by the
    voiced-frame gate here and by the spectral descriptors in features.
    """
    m = np.maximum(np.asarray(magnitudes, dtype=np.float64), FLATNESS_FLOOR)
    geometric = np.exp(np.mean(np.log(m)))
    return float(geometric / np.mean(m))


# === voiced-region detection ===

def detect_voiced_regions(clip: AudioClip) -> list[VoicedRegion]:
    """Energy + flatness gating over non-overlapping 50 ms frames.

    A frame qualifies when its RMS exceeds VOICED_RMS_FACTOR times the clip's
    median frame RMS and its spectral flatness over 100-4000 Hz is below
    VOICED_FLATNESS_MAX.  Qualifying frames are merged into regions; regions
    shorter than 100 ms are dropped.
    """
    sr = clip.sample_rate
    if clip.duration_s < MIN_REGION_SECONDS:
        raise ClipTooShort(
            f"need at least {MIN_REGION_SECONDS * 1000:.0f} ms, "
            f"got {clip.duration_s * 1000:.1f} ms")

    frame_len = segment_length(sr)
    x = np.asarray(clip.samples, dtype=np.float64)
    starts = np.arange(0, len(x) - frame_len + 1, frame_len)
    if len(starts) == 0:
        return []

    frames = x[:len(starts) * frame_len].reshape(len(starts), frame_len)
    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    gate = VOICED_RMS_FACTOR * float(np.median(rms))

    # Gaussian analysis window keeps leakage out of the flatness measurement;
    # rectangular frames smear enough to push tonal frames past the gate.
    window = gaussian_window(frame_len)
    voiced = np.zeros(len(starts), dtype=bool)
    band = None
    for j in np.flatnonzero(rms > gate):
        spec = fft_magnitude(frames[j] * window, sr)
        if band is None:
            freqs = np.arange(len(spec.magnitudes)) * spec.bin_hz
            band = (freqs >= FLATNESS_BAND_HZ[0]) & (freqs <= FLATNESS_BAND_HZ[1])
        voiced[j] = flatness_ratio(spec.magnitudes[band]) < VOICED_FLATNESS_MAX

    # merge overlapping/touching frame intervals, then apply the length floor
    regions = []
    run_start = None
    prev = None
    for j in np.flatnonzero(voiced):
        if run_start is None:
            run_start = j
        elif j != prev + 1:
            regions.append((starts[run_start], starts[prev] + frame_len))
            run_start = j
        prev = j
    if run_start is not None:
        regions.append((starts[run_start], starts[prev] + frame_len))

    merged = []
    for lo, hi in regions:
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))

    out = []
    for lo, hi in merged:
        if (hi - lo) / sr >= MIN_REGION_SECONDS:
            out.append(VoicedRegion(start_s=lo / sr, end_s=hi / sr))
    return out


def segment_regions(clip: AudioClip, regions, max_segments: int = MAX_SEGMENTS):
    """Tile 50 ms non-overlapping segments left-to-right inside each region.

    Partial trailing windows are dropped; output is capped at max_segments,
    keeping the earliest voiced audio.
    """
    sr = clip.sample_rate
    seg_len = segment_length(sr)
    n = len(clip.samples)
    segments: list[Segment] = []
    for region in regions:
        lo = int(round(region.start_s * sr))
        hi = int(round(region.end_s * sr))
        if lo < 0 or hi > n or hi <= lo:
            raise ValueError(f"region [{region.start_s}, {region.end_s}] "
                             "outside clip bounds")
        start = lo
        while start + seg_len <= hi:
            if len(segments) == max_segments:
                return segments
            segments.append(Segment(samples=clip.samples[start:start + seg_len],
                                    sample_rate=sr, start_s=start / sr,
                                    index=len(segments)))
            start += seg_len
    return segments


def spectral_peaks(spectrum: Spectrum, min_separation_hz: float = 50.0,
                   relative_floor: float = 0.1):
    """Up to five spectral peaks as (frequency_hz, magnitude), strongest first.

    Local maxima below relative_floor of the global maximum are ignored, and
    peaks closer than min_separation_hz to an already accepted one are
    suppressed.
    """
    m = np.asarray(spectrum.magnitudes, dtype=np.float64)
    peak_mag = float(np.max(m)) if len(m) else 0.0
    if peak_mag <= 0.0:
        raise DegenerateSpectrum("all magnitudes are zero")

    floor = relative_floor * peak_mag
    interior = np.arange(1, len(m) - 1)
    is_max = (m[interior] >= m[interior - 1]) & (m[interior] >= m[interior + 1])
    candidates = interior[is_max & (m[interior] >= floor)]
    # strongest first; frequency breaks exact magnitude ties deterministically
    order = sorted(candidates, key=lambda k: (-m[k], k))

    chosen: list[tuple[float, float]] = []
    for k in order:
        freq = float(k * spectrum.bin_hz)
        if all(abs(freq - f) >= min_separation_hz for f, _ in chosen):
            chosen.append((freq, float(m[k])))
            if len(chosen) == 5:
                break
    return chosen

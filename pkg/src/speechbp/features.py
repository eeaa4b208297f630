"""Per-segment acoustic features and their per-recording aggregation.

Each 50 ms segment yields 12 MFCCs, amplitude-shape statistics (skewness,
excess kurtosis, rectified area, extrema) and a handful of spectral/temporal
descriptors.  A recording is summarized by the arithmetic mean of each feature
over its segments, laid out under a fixed schema so downstream CSVs line up.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dsp import (DEFAULT_WINDOW_SIGMA, EmptyFrame, MAX_SEGMENTS,
                  SEGMENT_SECONDS, DegenerateSpectrum, Segment, Spectrum,
                  detect_voiced_regions, fft_magnitude, flatness_ratio,
                  gaussian_window, segment_length, segment_regions)
from .audio_io import AudioClip

PREEMPHASIS = 0.97
N_MEL_FILTERS = 26
LOG_FLOOR = 1e-10
N_MFCC = 12

PITCH_MIN_HZ = 60.0
PITCH_MAX_HZ = 400.0
PITCH_MIN_CORRELATION = 0.3
# pitch joins the extended schema only when at least this fraction of
# segments comes back voiced
PITCH_VOICED_FRACTION = 0.5

BASE_SCHEMA = "base"
EXTENDED_SCHEMA = "extended"

BASE_NAMES = tuple(f"mfcc{i}" for i in range(1, N_MFCC + 1)) + (
    "skewness", "kurtosis", "poly_area", "amp_max", "amp_min")
EXTRA_NAMES = ("zcr", "energy", "centroid_hz", "bandwidth_hz", "flatness")
PITCH_NAME = "pitch_hz"


class WrongFrameLength(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


class ZeroVariance(ValueError):
    pass


class NoSegments(ValueError):
    pass


@dataclass(frozen=True)
class SegmentFeatures:
    mfcc: np.ndarray
    skewness: float
    kurtosis: float
    poly_area: float
    amp_max: float
    amp_min: float
    zcr: float
    energy: float
    centroid_hz: float
    bandwidth_hz: float
    flatness: float
    pitch_hz: float


@dataclass(frozen=True)
class FeatureVector:
    names: tuple
    values: np.ndarray
    n_segments: int
    schema_id: str


def mel_from_hz(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def hz_from_mel(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


_FILTERBANK_CACHE: dict = {}


def mel_filterbank(sample_rate: int, n_bins: int, fft_size: int,
                   n_filters: int = N_MEL_FILTERS) -> np.ndarray:
    """Triangular filters spanning 0 Hz to Nyquist, evaluated at bin centers.

    Rows are filters, columns are spectrum bins; each filter rises linearly
    in Hz from its left edge to 1.0 at its center and falls to the right
    edge, with the edges equally spaced on the mel scale.
    """
    key = (sample_rate, n_bins, fft_size, n_filters)
    bank = _FILTERBANK_CACHE.get(key)
    if bank is None:
        edges = hz_from_mel(np.linspace(0.0, mel_from_hz(sample_rate / 2.0),
                                        n_filters + 2))
        freqs = np.arange(n_bins) * (sample_rate / fft_size)
        left = edges[:-2, None]
        center = edges[1:-1, None]
        right = edges[2:, None]
        rising = (freqs - left) / (center - left)
        falling = (right - freqs) / (right - center)
        bank = np.clip(np.minimum(rising, falling), 0.0, None)
        _FILTERBANK_CACHE[key] = bank
    return bank


_DCT_CACHE: dict = {}


def _dct2_matrix(m: int) -> np.ndarray:
    # orthonormal DCT-II; row 0 carries the DC scale even though mfcc_12
    # discards it
    mat = _DCT_CACHE.get(m)
    if mat is None:
        k = np.arange(m)[:, None]
        i = np.arange(m)[None, :]
        mat = np.cos(np.pi * k * (2 * i + 1) / (2 * m)) * np.sqrt(2.0 / m)
        mat[0] /= np.sqrt(2.0)
        _DCT_CACHE[m] = mat
    return mat


def mfcc_12(segment: Segment) -> np.ndarray:
    """Mel-frequency cepstral coefficients 1..12 of one 50 ms segment."""
    x = np.asarray(segment.samples, dtype=np.float64)
    expected = segment_length(segment.sample_rate)
    if len(x) != expected:
        raise WrongFrameLength(
            f"segment has {len(x)} samples, expected {expected}")
    emphasized = np.empty_like(x)
    emphasized[0] = x[0]
    emphasized[1:] = x[1:] - PREEMPHASIS * x[:-1]
    spec = fft_magnitude(emphasized * gaussian_window(len(x)),
                         segment.sample_rate)
    bank = mel_filterbank(segment.sample_rate, len(spec.magnitudes),
                          spec.fft_size)
    log_e = np.log(np.maximum(bank @ spec.magnitudes, LOG_FLOOR))
    return (_dct2_matrix(len(log_e)) @ log_e)[1:N_MFCC + 1]


def skewness(samples) -> float:
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < 3:
        raise TooFewSamples("skewness needs at least 3 samples")
    centered = x - x.mean()
    m2 = float(np.mean(centered ** 2))
    if m2 == 0.0:
        raise ZeroVariance("constant signal has no skewness")
    return float(np.mean(centered ** 3)) / m2 ** 1.5


def kurtosis(samples) -> float:
    """Excess kurtosis: 0 for a normal distribution, -2 for a two-level one."""
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < 4:
        raise TooFewSamples("kurtosis needs at least 4 samples")
    centered = x - x.mean()
    m2 = float(np.mean(centered ** 2))
    if m2 == 0.0:
        raise ZeroVariance("constant signal has no kurtosis")
    return float(np.mean(centered ** 4)) / m2 ** 2 - 3.0


def poly_area(segment: Segment) -> float:
    """Trapezoidal integral of |x(t)| over the segment, in amplitude-seconds."""
    x = np.abs(np.asarray(segment.samples, dtype=np.float64))
    if len(x) < 2:
        raise TooFewSamples("area needs at least 2 samples")
    return float(np.sum(x[1:] + x[:-1])) * 0.5 / segment.sample_rate


def amplitude_extrema(segment: Segment):
    x = np.asarray(segment.samples, dtype=np.float64)
    if len(x) == 0:
        raise EmptyFrame("empty segment has no extrema")
    return float(np.max(x)), float(np.min(x))


def zero_crossing_rate(samples) -> float:
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < 2:
        raise TooFewSamples("zero-crossing rate needs at least 2 samples")
    signs = np.where(x >= 0.0, 1, -1)  # zero counts as positive
    return float(np.count_nonzero(signs[1:] != signs[:-1])) / (len(x) - 1)


def spectral_descriptors(spectrum: Spectrum):
    """(centroid_hz, bandwidth_hz, flatness) of a magnitude spectrum."""
    m = np.asarray(spectrum.magnitudes, dtype=np.float64)
    total = float(np.sum(m))
    if not np.any(m > 0.0):
        raise DegenerateSpectrum("all magnitudes zero")
    freqs = np.arange(len(m)) * spectrum.bin_hz
    centroid = float(np.sum(freqs * m)) / total
    bandwidth = float(np.sqrt(np.sum((freqs - centroid) ** 2 * m) / total))
    return centroid, bandwidth, flatness_ratio(m)


def pitch(segment: Segment) -> float:
    """Autocorrelation pitch in the 60-400 Hz band; 0.0 means unvoiced.

    The normalized autocorrelation must reach 0.3 at the winning lag;
    anything weaker (noise, silence) is reported as unvoiced rather than
    raising.
    """
    x = np.asarray(segment.samples, dtype=np.float64)
    n = len(x)
    lag_lo = int(round(segment.sample_rate / PITCH_MAX_HZ))
    lag_hi = min(int(round(segment.sample_rate / PITCH_MIN_HZ)), n - 1)
    if lag_lo < 1 or lag_hi < lag_lo:
        return 0.0
    r0 = float(np.dot(x, x))
    if r0 <= 0.0:
        return 0.0
    best_lag = 0
    best_r = -np.inf
    for lag in range(lag_lo, lag_hi + 1):
        r = float(np.dot(x[:-lag], x[lag:])) / r0
        if r > best_r:
            best_r = r
            best_lag = lag
    if best_r < PITCH_MIN_CORRELATION:
        return 0.0
    return segment.sample_rate / best_lag


def segment_features(segment: Segment) -> SegmentFeatures:
    """All per-segment features in one pass."""
    x = np.asarray(segment.samples, dtype=np.float64)
    amp_max, amp_min = amplitude_extrema(segment)
    spec = fft_magnitude(x * gaussian_window(len(x)), segment.sample_rate)
    centroid, bandwidth, flat = spectral_descriptors(spec)
    return SegmentFeatures(
        mfcc=mfcc_12(segment),
        skewness=skewness(x),
        kurtosis=kurtosis(x),
        poly_area=poly_area(segment),
        amp_max=amp_max,
        amp_min=amp_min,
        zcr=zero_crossing_rate(x),
        energy=float(np.mean(x ** 2)),
        centroid_hz=centroid,
        bandwidth_hz=bandwidth,
        flatness=flat,
        pitch_hz=pitch(segment),
    )


def aggregate_recording(per_segment: Sequence[SegmentFeatures],
                        schema: str = BASE_SCHEMA) -> FeatureVector:
    """Mean of each feature over segments, in fixed schema order.

    The extended schema appends the spectral/temporal descriptors; pitch is
    appended after those only when at least half the segments are voiced,
    and its mean runs over the voiced segments alone.
    """
    if schema not in (BASE_SCHEMA, EXTENDED_SCHEMA):
        raise ValueError(f"unknown schema {schema!r}")
    if not per_segment:
        raise NoSegments("cannot aggregate zero segments")

    rows = np.array([
        list(f.mfcc) + [f.skewness, f.kurtosis, f.poly_area, f.amp_max,
                        f.amp_min, f.zcr, f.energy, f.centroid_hz,
                        f.bandwidth_hz, f.flatness]
        for f in per_segment
    ], dtype=np.float64)
    means = rows.mean(axis=0)

    names = list(BASE_NAMES)
    values = list(means[:len(BASE_NAMES)])
    if schema == EXTENDED_SCHEMA:
        names += list(EXTRA_NAMES)
        values += list(means[len(BASE_NAMES):])
        voiced = [f.pitch_hz for f in per_segment if f.pitch_hz > 0.0]
        if len(voiced) * 2 >= len(per_segment):
            names.append(PITCH_NAME)
            values.append(float(np.mean(voiced)))
    return FeatureVector(names=tuple(names),
                         values=np.array(values, dtype=np.float64),
                         n_segments=len(per_segment), schema_id=schema)


def extract_recording(clip: AudioClip, schema: str = BASE_SCHEMA,
                      max_segments: int = MAX_SEGMENTS) -> FeatureVector:
    """Voiced-region detection, segmentation, and aggregation for one clip."""
    regions = detect_voiced_regions(clip)
    segments = segment_regions(clip, regions, max_segments)
    return aggregate_recording([segment_features(s) for s in segments],
                               schema)


def default_parameters() -> dict:
    return {
        "segment_seconds": SEGMENT_SECONDS,
        "window_sigma": DEFAULT_WINDOW_SIGMA,
        "preemphasis": PREEMPHASIS,
        "n_mel_filters": N_MEL_FILTERS,
        "log_floor": LOG_FLOOR,
        "n_mfcc": N_MFCC,
        "pitch_band_hz": [PITCH_MIN_HZ, PITCH_MAX_HZ],
    }


def write_features_csv(csv_path, manifest_path, recording_ids,
                       vectors: Sequence[FeatureVector],
                       parameters: dict | None = None) -> None:
    """One CSV row per recording plus a JSON manifest with ids and settings.

    The CSV header is exactly the feature names; row order matches the
    manifest's recording list.  Values carry 17 significant digits so they
    parse back to the identical float64.
    """
    if len(recording_ids) != len(vectors):
        raise ValueError("one id per feature vector required")
    if not vectors:
        raise ValueError("nothing to write")
    names = vectors[0].names
    for v in vectors:
        if v.names != names:
            raise ValueError("feature vectors disagree on schema layout")

    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for v in vectors:
            writer.writerow([f"{x:.17g}" for x in v.values])

    merged = default_parameters()
    if parameters:
        merged.update(parameters)
    manifest = {
        "schema_id": vectors[0].schema_id,
        "feature_names": list(names),
        "parameters": merged,
        "recordings": [{"id": str(rid), "n_segments": v.n_segments}
                       for rid, v in zip(recording_ids, vectors)],
    }
    Path(manifest_path).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_features_csv(csv_path, manifest_path):
    """Returns (ids, names, value matrix, manifest dict)."""
    manifest = json.loads(Path(manifest_path).read_text())
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        names = tuple(next(reader))
        matrix = np.array([[float(cell) for cell in row] for row in reader],
                          dtype=np.float64)
    ids = [rec["id"] for rec in manifest["recordings"]]
    if len(ids) != len(matrix):
        raise ValueError("manifest and CSV row counts disagree")
    if tuple(manifest["feature_names"]) != names:
        raise ValueError("manifest and CSV header disagree")
    return ids, names, matrix, manifest

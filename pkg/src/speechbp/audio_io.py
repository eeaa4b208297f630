"""WAV ingestion, normalization, and vowel-like fixture synthesis.

The corpus format is RIFF/WAVE, PCM format code 1, 16-bit little-endian,
stereo at 48 kHz.  Loading downmixes to mono; other sample rates are accepted
and passed through, downstream frame sizes are derived from the actual rate.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# -32768 maps to -1.0 exactly with this divisor
INT16_FULL_SCALE = 32768.0

F0_MIN_HZ = 60.0
F0_MAX_HZ = 400.0


class MalformedRiff(ValueError):
    """Container structure is not a readable RIFF/WAVE file."""


class UnsupportedEncoding(ValueError):
    """Valid RIFF, but not 16-bit integer PCM."""


class TruncatedData(ValueError):
    """data chunk declares more bytes than the file holds."""


class EmptyClip(ValueError):
    pass


class InvalidFrequency(ValueError):
    pass


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    source_channels: int = 1

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


def load_wav(path) -> AudioClip:
    """Parse a RIFF/WAVE file into a mono AudioClip.

    Stereo input is downmixed by averaging the two channels.  Samples are
    scaled by 1/32768.

    Raises MalformedRiff, UnsupportedEncoding, or TruncatedData depending on
    what is wrong with the container.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedRiff(f"{path}: not a little-endian RIFF/WAVE container")

    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (declared,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + declared]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise MalformedRiff(f"{path}: fmt chunk shorter than 16 bytes")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            if len(body) < declared:
                raise TruncatedData(
                    f"{path}: data chunk declares {declared} bytes, "
                    f"only {len(body)} present")
            pcm = body
        # chunk bodies are word-aligned; skip the pad byte after odd sizes
        pos += 8 + declared + (declared & 1)

    if fmt is None or pcm is None:
        raise MalformedRiff(f"{path}: missing fmt or data chunk")

    audio_format, channels, sample_rate, _byte_rate, _block_align, bits = fmt
    if audio_format != 1:
        raise UnsupportedEncoding(
            f"{path}: PCM format code 1 required, got {audio_format}")
    if bits != 16:
        raise UnsupportedEncoding(f"{path}: 16-bit samples required, got {bits}")
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{path}: expected 1 or 2 channels, got {channels}")
    if sample_rate <= 0:
        raise MalformedRiff(f"{path}: nonpositive sample rate in fmt chunk")

    usable = len(pcm) - len(pcm) % (2 * channels)
    ints = np.frombuffer(pcm[:usable], dtype="<i2")
    samples = ints.astype(np.float64) / INT16_FULL_SCALE
    if channels == 2:
        samples = samples.reshape(-1, 2).mean(axis=1)
    return AudioClip(samples=samples, sample_rate=int(sample_rate),
                     source_channels=int(channels))


def write_wav(path, samples, sample_rate: int, channels: int = 2) -> None:
    """Write mono samples as a 16-bit PCM WAV; channels=2 duplicates the signal.

    Round trip through load_wav recovers the samples up to one quantization
    step (1/32768).
    """
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"can only write 1 or 2 channels, got {channels}")
    x = np.asarray(samples, dtype=np.float64)
    q = np.clip(np.round(x * INT16_FULL_SCALE), -32768, 32767).astype("<i2")
    if channels == 2:
        q = np.repeat(q, 2)
    payload = q.tobytes()
    block_align = 2 * channels
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    fmt = b"fmt " + struct.pack("<IHHIIHH", 16, 1, channels, sample_rate,
                                sample_rate * block_align, block_align, 16)
    data = b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(header + fmt + data + payload)


def normalize_amplitude(clip: AudioClip) -> AudioClip:
    """Scale so the peak absolute amplitude is exactly 1; all-zero clips pass
    through unchanged."""
    if len(clip.samples) == 0:
        raise EmptyClip("cannot normalize an empty clip")
    peak = float(np.max(np.abs(clip.samples)))
    if peak == 0.0:
        return AudioClip(clip.samples.copy(), clip.sample_rate,
                         clip.source_channels)
    return AudioClip(clip.samples / peak, clip.sample_rate,
                     clip.source_channels)


def synthesize_speech(f0: float, formants, duration_s: float,
                      sample_rate: int = 48000, seed: int = 0) -> AudioClip:
    """Generate a vowel-like periodic signal for fixtures and synthetic cohorts.

    A harmonic series at f0 is shaped by Gaussian resonance bumps centered on
    the given (center_hz, gain) formants, amplitude-modulated by a slow random
    envelope, dusted with low-level noise, and peak-normalized.  Bit-identical
    for identical arguments and seed.
    """
    if not (F0_MIN_HZ <= f0 <= F0_MAX_HZ):
        raise InvalidFrequency(f"f0 {f0} Hz outside [{F0_MIN_HZ}, {F0_MAX_HZ}]")
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")

    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    formants = [(float(c), float(g)) for c, g in formants]

    bandwidth_hz = 90.0
    y = np.zeros(n)
    n_harmonics = min(int((sample_rate / 2) / f0), 60)
    for k in range(1, n_harmonics + 1):
        f = k * f0
        resonance = sum(g * np.exp(-0.5 * ((f - c) / bandwidth_hz) ** 2)
                        for c, g in formants)
        amplitude = (0.02 + resonance) / k ** 0.5
        phase = rng.uniform(0.0, 2.0 * np.pi)
        y += amplitude * np.sin(2.0 * np.pi * f * t + phase)

    # slow amplitude modulation decouples per-segment extrema from f0
    am_rate = rng.uniform(2.0, 4.0)
    am_phase = rng.uniform(0.0, 2.0 * np.pi)
    am_depth = rng.uniform(0.15, 0.25)
    y *= 1.0 + am_depth * np.sin(2.0 * np.pi * am_rate * t + am_phase)

    # raised-cosine onset/offset so the weakest frames sit at region edges
    ramp = min(int(round(0.060 * sample_rate)), n // 4)
    if ramp > 0:
        fade = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp) / ramp))
        y[:ramp] *= fade
        y[-ramp:] *= fade[::-1]

    peak = np.max(np.abs(y))
    if peak > 0:
        y /= peak
    y += 0.004 * rng.standard_normal(n)
    y /= np.max(np.abs(y))
    return AudioClip(samples=y, sample_rate=int(sample_rate), source_channels=1)

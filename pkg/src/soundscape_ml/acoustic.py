"""126-dimensional acoustic features from 10-second recordings.

Each second of the first 10 s yields nine levels: the A-weighted equivalent
level and eight unweighted octave-band levels (62.5 Hz .. 8 kHz, band edges
at center * 2**+/-0.5).  The per-second 10x9 matrix is flattened second-major
and followed by four statistics per channel (mean, 10/50/90th percentile),
giving 9 * (10 + 4) = 126 values:

    index [sec * 9 + ch]            raw level, ch 0 = A-weighted Leq, 1..8 = bands
    index [90 + ch * 4 + stat]      stat 0..3 = mean, p10, p50, p90

Levels are dB relative to full scale plus a caller-supplied calibration
offset (microphone sensitivity is unknown at this layer), floored so silence
never produces -inf.  Percentiles default to the statistical convention with
linear interpolation; the exceedance-level convention (the "p10" slot holds
the level exceeded 10% of the time) is available behind a switch.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.signal import bilinear, lfilter, butter, sosfilt

OCTAVE_CENTERS = (62.5, 125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0)
N_CHANNELS = 1 + len(OCTAVE_CENTERS)
N_SECONDS = 10
FEATURE_DIM = N_CHANNELS * (N_SECONDS + 4)
EXPECTED_SAMPLE_RATE = 32000
DEFAULT_SILENCE_FLOOR = -100.0
BAND_FILTER_ORDER = 6  # Butterworth design order; 2 * order poles per bandpass
STAT_NAMES = ("mean", "p10", "p50", "p90")
PERCENTILE_CONVENTIONS = ("statistical", "exceedance")


class AudioFormatError(ValueError):
    """Unsupported or malformed audio input."""


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1:
            raise AudioFormatError(f"expected mono samples, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise AudioFormatError(f"bad sample rate: {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class PerSecondLevels:
    """10 x 9 dB matrix: rows are seconds, column 0 Leq(A), columns 1..8 bands."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        matrix = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", matrix)
        if matrix.shape != (N_SECONDS, N_CHANNELS):
            raise ValueError(f"expected {N_SECONDS}x{N_CHANNELS} levels, got {matrix.shape}")


@dataclass(frozen=True)
class AcousticFeature:
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != (FEATURE_DIM,):
            raise ValueError(f"expected {FEATURE_DIM} values, got {values.shape}")

    def raw_level(self, second: int, channel: int) -> float:
        return float(self.values[second * N_CHANNELS + channel])

    def stat(self, channel: int, name: str) -> float:
        return float(self.values[N_SECONDS * N_CHANNELS + channel * 4 + STAT_NAMES.index(name)])


def load_audio(path: str | Path) -> Waveform:
    """Read a mono 16-bit PCM RIFF/WAVE file, scaling samples to [-1, 1]."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as reader:
            channels = reader.getnchannels()
            if channels != 1:
                raise AudioFormatError(f"mono required, file has {channels} channels: {path}")
            if reader.getsampwidth() != 2:
                raise AudioFormatError(
                    f"16-bit PCM required, got {8 * reader.getsampwidth()}-bit: {path}"
                )
            if reader.getcomptype() != "NONE":
                raise AudioFormatError(f"compressed WAV not supported: {path}")
            n_frames = reader.getnframes()
            raw = reader.readframes(n_frames)
            rate = reader.getframerate()
    except wave.Error as exc:
        raise AudioFormatError(f"unreadable WAV file {path}: {exc}") from None
    if len(raw) < 2 * n_frames:
        raise AudioFormatError(f"truncated WAV file: {path}")
    samples = np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
    return Waveform(samples=samples, sample_rate=rate)


def write_audio(path: str | Path, waveform: Waveform) -> None:
    """Write mono 16-bit PCM; values are clipped to [-1, 1) before scaling."""
    clipped = np.clip(waveform.samples, -1.0, 32767.0 / 32768.0)
    pcm = np.round(clipped * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as writer:
        writer.setnchannels(1)
        writer.setsampwidth(2)
        writer.setframerate(waveform.sample_rate)
        writer.writeframes(pcm.tobytes())


# Analog A-weighting pole frequencies (Hz).
_A_F1 = 20.598997
_A_F2 = 107.65265
_A_F3 = 737.86223
_A_F4 = 12194.217


def _a_response_squared(freq: np.ndarray) -> np.ndarray:
    f2 = np.asarray(freq, dtype=float) ** 2
    num = (_A_F4**2 * f2**2) ** 2
    den = (
        (f2 + _A_F1**2) ** 2
        * (f2 + _A_F2**2)
        * (f2 + _A_F3**2)
        * (f2 + _A_F4**2) ** 2
    )
    return num / den


def a_weighting_gain(frequency: float | np.ndarray) -> float | np.ndarray:
    """A-weighting response in dB, normalized to exactly 0 dB at 1 kHz."""
    freq = np.asarray(frequency, dtype=float)
    if np.any(freq <= 0.0):
        raise ValueError("frequency must be positive")
    gain = 10.0 * np.log10(_a_response_squared(freq) / _a_response_squared(np.array(1000.0)))
    return float(gain) if np.isscalar(frequency) or freq.ndim == 0 else gain


@lru_cache(maxsize=8)
def _a_weighting_filter(sample_rate: int) -> tuple[np.ndarray, np.ndarray]:
    """Digital A-weighting filter via bilinear transform of the analog prototype."""
    gain_1k = np.sqrt(_a_response_squared(np.array(1000.0)))
    num = [(2.0 * np.pi * _A_F4) ** 2 / gain_1k, 0.0, 0.0, 0.0, 0.0]
    den = np.convolve(
        [1.0, 4.0 * np.pi * _A_F4, (2.0 * np.pi * _A_F4) ** 2],
        [1.0, 4.0 * np.pi * _A_F1, (2.0 * np.pi * _A_F1) ** 2],
    )
    den = np.convolve(np.convolve(den, [1.0, 2.0 * np.pi * _A_F3]), [1.0, 2.0 * np.pi * _A_F2])
    return bilinear(num, den, sample_rate)


@lru_cache(maxsize=8)
def _octave_band_filters(sample_rate: int) -> tuple[np.ndarray, ...]:
    """Butterworth bandpass per octave band, edges at center * 2**+/-0.5."""
    nyquist = sample_rate / 2.0
    filters = []
    for center in OCTAVE_CENTERS:
        low = center / np.sqrt(2.0)
        high = center * np.sqrt(2.0)
        if high >= nyquist:
            raise AudioFormatError(
                f"sample rate {sample_rate} too low for the {center:g} Hz band"
            )
        filters.append(
            butter(BAND_FILTER_ORDER, [low, high], btype="bandpass", fs=sample_rate, output="sos")
        )
    return tuple(filters)


def band_filter_response(
    sample_rate: int, band: int, frequencies: np.ndarray
) -> np.ndarray:
    """|H| in dB of one octave-band filter at the given frequencies."""
    from scipy.signal import sosfreqz

    sos = _octave_band_filters(sample_rate)[band]
    _, response = sosfreqz(sos, worN=2.0 * np.pi * np.asarray(frequencies) / sample_rate)
    return 20.0 * np.log10(np.abs(response) + 1e-300)


def _frame_levels(filtered: np.ndarray, sample_rate: int, offset: float, floor: float) -> np.ndarray:
    frames = filtered[: N_SECONDS * sample_rate].reshape(N_SECONDS, sample_rate)
    power = np.mean(frames**2, axis=1)
    with np.errstate(divide="ignore"):
        levels = 10.0 * np.log10(power) + offset
    return np.maximum(levels, floor)


def per_second_levels(
    waveform: Waveform,
    calibration_offset: float = 0.0,
    silence_floor: float = DEFAULT_SILENCE_FLOOR,
) -> PerSecondLevels:
    """Per-second A-weighted Leq plus unweighted octave-band levels in dB.

    Uses the first 10 seconds.  Each level is 10*log10 of the mean squared
    filtered signal plus the calibration offset, clamped to the silence floor.
    """
    rate = waveform.sample_rate
    needed = N_SECONDS * rate
    if len(waveform.samples) < needed:
        raise AudioFormatError(
            f"audio too short: need {N_SECONDS} s, have {waveform.duration:.3f} s"
        )
    segment = waveform.samples[:needed]

    b, a = _a_weighting_filter(rate)
    columns = [_frame_levels(lfilter(b, a, segment), rate, calibration_offset, silence_floor)]
    for sos in _octave_band_filters(rate):
        columns.append(_frame_levels(sosfilt(sos, segment), rate, calibration_offset, silence_floor))
    return PerSecondLevels(matrix=np.column_stack(columns))


def summarize(
    levels: PerSecondLevels, percentile_convention: str = "statistical"
) -> AcousticFeature:
    """Flatten the level matrix and append per-channel statistics.

    Statistical percentiles interpolate linearly at position p * (n - 1);
    the exceedance convention reports the level exceeded p% of the time
    (its "p10" is the statistical 90th percentile).
    """
    if percentile_convention not in PERCENTILE_CONVENTIONS:
        raise ValueError(f"unknown percentile convention: {percentile_convention}")
    matrix = levels.matrix
    raw = matrix.ravel()  # second-major: row i holds the 9 channels of second i
    percents = (10.0, 50.0, 90.0)
    if percentile_convention == "exceedance":
        percents = (90.0, 50.0, 10.0)
    stats = np.empty((N_CHANNELS, 4))
    stats[:, 0] = matrix.mean(axis=0)
    stats[:, 1:] = np.percentile(matrix, percents, axis=0).T
    return AcousticFeature(values=np.concatenate([raw, stats.ravel()]))


def extract_feature(
    source: Waveform | str | Path,
    calibration_offset: float = 0.0,
    silence_floor: float = DEFAULT_SILENCE_FLOOR,
    percentile_convention: str = "statistical",
    allow_other_rates: bool = False,
) -> AcousticFeature:
    """Full extraction: load (if given a path), level analysis, statistics.

    Input is expected at 32 kHz; other rates are rejected unless
    ``allow_other_rates`` is set (there is no resampler in this package).
    """
    waveform = source if isinstance(source, Waveform) else load_audio(source)
    if waveform.sample_rate != EXPECTED_SAMPLE_RATE and not allow_other_rates:
        raise AudioFormatError(
            f"expected {EXPECTED_SAMPLE_RATE} Hz input, got {waveform.sample_rate} Hz "
            "(pass allow_other_rates=True to override)"
        )
    levels = per_second_levels(waveform, calibration_offset, silence_floor)
    return summarize(levels, percentile_convention)


def write_features(path: str | Path, rows: Iterable[tuple[str, AcousticFeature]]) -> int:
    """Write JSON-lines ``{"id": ..., "feature": [...126 floats]}`` rows."""
    count = 0
    with Path(path).open("w", encoding="utf-8") as handle:
        for rec_id, feature in rows:
            handle.write(json.dumps({"id": rec_id, "feature": feature.values.tolist()}) + "\n")
            count += 1
    return count


def read_features(path: str | Path) -> dict[str, AcousticFeature]:
    features: dict[str, AcousticFeature] = {}
    with Path(path).open(encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            features[str(record["id"])] = AcousticFeature(values=np.array(record["feature"]))
    return features

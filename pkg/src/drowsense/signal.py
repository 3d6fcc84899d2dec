"""Audio primitives: carrier tones, fixed-length framing and 16-bit WAV I/O."""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass

import numpy as np

DEFAULT_FS = 44100.0
DEFAULT_F0 = 20000.0
DEFAULT_FRAME_LENGTH = 0.25

_PCM_SCALE = 32768.0


class WavFormatError(ValueError):
    """Raised for WAV files that are not 16-bit PCM mono or are unreadable."""


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioBuffer holds mono audio; samples must be 1-D")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class Frame:
    samples: np.ndarray
    sample_rate: float
    index: int = 0
    start_time: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self):
        return len(self.samples)

    def with_samples(self, samples, sample_rate=None) -> "Frame":
        """Same provenance (index, start time), new content."""
        return Frame(samples, self.sample_rate if sample_rate is None else sample_rate,
                     self.index, self.start_time)


def generate_tone(f0: float = DEFAULT_F0, fs: float = DEFAULT_FS, duration: float = 1.0,
                  amplitude: float = 1.0) -> AudioBuffer:
    """Cosine carrier ``amplitude * cos(2 pi f0 k / fs)`` starting at phase 0."""
    if not 0 < f0 < fs / 2:
        raise ValueError(f"f0={f0} Hz must lie in (0, fs/2={fs / 2}) Hz")
    if not duration > 0:
        raise ValueError("duration must be positive")
    k = np.arange(int(round(duration * fs)))
    return AudioBuffer(amplitude * np.cos(2 * np.pi * f0 * k / fs), fs)


def frame_size(frame_length: float, fs: float) -> int:
    return int(round(frame_length * fs))


def segment_frames(buffer: AudioBuffer, frame_length: float = DEFAULT_FRAME_LENGTH) -> list[Frame]:
    """Split into contiguous, non-overlapping frames; a trailing partial frame is dropped.

    Returns an empty list when the buffer is shorter than one frame.
    """
    if not frame_length > 0:
        raise ValueError("frame_length must be positive")
    size = frame_size(frame_length, buffer.sample_rate)
    count = math.floor(buffer.duration / frame_length + 1e-9)
    # guard against rounding of size pushing the last frame past the end
    count = min(count, len(buffer) // size)
    return [
        Frame(buffer.samples[i * size:(i + 1) * size], buffer.sample_rate, i, i * frame_length)
        for i in range(count)
    ]


def write_wav(path, buffer: AudioBuffer, clip: bool = True) -> None:
    """Write 16-bit PCM mono. Out-of-range samples are clipped, or rejected if ``clip`` is False."""
    x = buffer.samples
    if not clip and np.any(np.abs(x) > 1.0):
        raise ValueError("samples outside [-1, 1] and clipping disabled")
    fs = buffer.sample_rate
    if fs != int(fs):
        raise ValueError(f"WAV needs an integer sample rate, got {fs}")
    pcm = np.clip(np.round(x * _PCM_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(fs))
        w.writeframes(pcm.tobytes())


def read_wav(path) -> AudioBuffer:
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, fs = w.getnchannels(), w.getsampwidth(), w.getframerate()
            n = w.getnframes()
            raw = w.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if channels != 1:
        raise WavFormatError(f"{path}: expected mono, found {channels} channels")
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit samples, found {8 * width}-bit")
    if len(raw) != 2 * n:
        raise WavFormatError(f"{path}: truncated data chunk")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioBuffer(pcm / _PCM_SCALE, fs)

"""Frame-to-feature front end: band-pass, bandpass undersampling, FFT, bin phases.

The default chain maps a 0.25 s frame at 44.1 kHz through a linear-phase FIR
around 19.8-20.2 kHz, keeps every 8th sample (5512.5 Hz), zero-pads the
1379 survivors to 2048 points and reads the phase of every bin whose centre
falls in the folded image of the band.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import signal as sps

from .signal import DEFAULT_FRAME_LENGTH, DEFAULT_FS, Frame

FFT_SIZE = 2048


@dataclass(frozen=True)
class BandSpec:
    f_low: float = 19800.0
    f_high: float = 20200.0

    def __post_init__(self):
        if not 0 < self.f_low < self.f_high:
            raise ValueError(f"need 0 < f_low < f_high, got {self.f_low}, {self.f_high}")

    @property
    def bandwidth(self) -> float:
        return self.f_high - self.f_low


def max_undersampling_factor(band: BandSpec) -> int:
    return math.floor(band.f_high / band.bandwidth)


def valid_undersampling_rates(f_low: float, f_high: float, n: int) -> tuple[float, float] | None:
    """Admissible reduced rates for factor ``n``: ``[2 f_high / n, 2 f_low / (n - 1)]``.

    ``n = 1`` is plain Nyquist sampling with no upper bound. Returns None when
    the interval is empty.
    """
    band = BandSpec(f_low, f_high)
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= max_undersampling_factor(band):
        raise ValueError(f"n={n} outside [1, {max_undersampling_factor(band)}]")
    low = 2.0 * f_high / n
    high = math.inf if n == 1 else 2.0 * f_low / (n - 1)
    if low > high:
        return None
    return low, high


@dataclass(frozen=True)
class UndersamplePlan:
    n: int = 8
    fs: float = DEFAULT_FS
    band: BandSpec = field(default_factory=BandSpec)

    @property
    def fs_star(self) -> float:
        return self.fs / self.n

    @property
    def admissible(self) -> tuple[float, float] | None:
        return valid_undersampling_rates(self.band.f_low, self.band.f_high, self.n)

    @property
    def is_valid(self) -> bool:
        interval = self.admissible
        return interval is not None and interval[0] <= self.fs_star <= interval[1]

    def validate(self) -> "UndersamplePlan":
        if self.n < 1:
            raise ValueError(f"undersampling factor must be >= 1, got {self.n}")
        if not self.is_valid:
            raise ValueError(
                f"fs/n = {self.fs_star} Hz is outside the admissible interval "
                f"{self.admissible} for band {self.band}")
        return self


def alias_frequency(f: float, fs_star: float) -> float:
    """Where a real tone at ``f`` lands in ``[0, fs_star / 2]`` after sampling at ``fs_star``."""
    if f < 0 or not fs_star > 0:
        raise ValueError("need f >= 0 and fs_star > 0")
    r = math.fmod(f, fs_star)
    return r if r <= fs_star / 2 else fs_star - r


@dataclass(frozen=True)
class DSPConfig:
    """Everything that determines the shape and meaning of a feature vector."""
    fs: float = DEFAULT_FS
    frame_length: float = DEFAULT_FRAME_LENGTH
    band: BandSpec = field(default_factory=BandSpec)
    n: int = 8
    fft_size: int = FFT_SIZE
    transition: float = 500.0
    stopband_db: float = 60.0
    window: str = "rect"
    include_amplitude: bool = False

    @property
    def plan(self) -> UndersamplePlan:
        return UndersamplePlan(self.n, self.fs, self.band)

    @property
    def frame_samples(self) -> int:
        return int(round(self.frame_length * self.fs))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DSPConfig":
        d = dict(d)
        d["band"] = BandSpec(**d["band"]) if isinstance(d.get("band"), dict) else d.get("band", BandSpec())
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def dim(self) -> int:
        first, last = band_bins(self.band, self.plan, self.fft_size)
        per_bin = 2 if self.include_amplitude else 1
        return per_bin * (last - first + 1)


@lru_cache(maxsize=32)
def bandpass_taps(fs: float, f_low: float, f_high: float, transition: float = 500.0,
                  stopband_db: float = 60.0) -> np.ndarray:
    """Kaiser-window FIR whose stopband starts ``transition`` Hz outside the band.

    Cutoffs sit mid-transition; the design targets 5 dB beyond ``stopband_db``
    because the Kaiser estimate is not a guarantee. Tap count is forced odd so
    the group delay is a whole number of samples.
    """
    nyq = fs / 2
    if f_high + transition >= nyq:
        raise ValueError(f"band edge {f_high} Hz (+{transition} Hz transition) exceeds Nyquist {nyq} Hz")
    numtaps, beta = sps.kaiserord(stopband_db + 5.0, transition / nyq)
    numtaps |= 1
    taps = sps.firwin(numtaps, [f_low - transition / 2, f_high + transition / 2],
                      window=("kaiser", beta), pass_zero=False, fs=fs)
    taps.setflags(write=False)
    return taps


def bandpass(frame: Frame, band: BandSpec = BandSpec(), transition: float = 500.0,
             stopband_db: float = 60.0) -> Frame:
    """Linear-phase band-pass with the group delay removed, so output length == input length.

    The frame is extended at both ends by point reflection before filtering;
    zero extension would turn each frame edge into a broadband step that
    leaks through the passband.
    """
    if band.f_high >= frame.sample_rate / 2:
        raise ValueError(f"band {band.f_low}-{band.f_high} Hz is above Nyquist for fs={frame.sample_rate}")
    taps = bandpass_taps(frame.sample_rate, band.f_low, band.f_high, transition, stopband_db)
    x = frame.samples
    if len(x) < 2:
        return frame.with_samples(x * taps[len(taps) // 2])
    delay = (len(taps) - 1) // 2
    extended = np.pad(x, delay, mode="reflect", reflect_type="odd")
    return frame.with_samples(sps.oaconvolve(extended, taps, mode="valid"))


def undersample(frame: Frame, plan: UndersamplePlan) -> Frame:
    """Keep samples 0, n, 2n, ... The band-pass in front of this is the anti-alias guard."""
    plan.validate()
    if frame.sample_rate != plan.fs:
        raise ValueError(f"frame rate {frame.sample_rate} Hz does not match plan rate {plan.fs} Hz")
    if plan.n == 1:
        return frame
    return frame.with_samples(frame.samples[::plan.n], plan.fs_star)


@dataclass(frozen=True)
class Spectrum:
    bins: np.ndarray
    bin_resolution: float
    frame_index: int = 0
    start_time: float = 0.0


def fft_spectrum(frame: Frame, fft_size: int = FFT_SIZE, window: str = "rect") -> Spectrum:
    """Zero-padded DFT; bin k is centred on ``k * fs / fft_size``."""
    x = frame.samples
    if len(x) > fft_size:
        raise ValueError(f"frame has {len(x)} samples, more than the {fft_size}-point FFT; "
                         "raise n or shorten the frame")
    if window != "rect":
        x = x * sps.get_window(window, len(x))
    return Spectrum(np.fft.fft(x, fft_size), frame.sample_rate / fft_size, frame.index, frame.start_time)


def band_bins(band: BandSpec, plan: UndersamplePlan, fft_size: int = FFT_SIZE) -> tuple[int, int]:
    """Inclusive bin range whose centres lie in the folded image of ``band``.

    The image is computed by folding the band edges; it is never assumed to
    sit at a fixed frequency.
    """
    fs_star = plan.fs_star
    edges = sorted((alias_frequency(band.f_low, fs_star), alias_frequency(band.f_high, fs_star)))
    # folding is monotone on the band only if it stays inside one Nyquist zone
    half = fs_star / 2
    zone = math.floor(band.f_low / half)
    if band.f_high > (zone + 1) * half * (1 + 1e-12):
        raise ValueError("band straddles a Nyquist-zone boundary at this rate")
    res = fs_star / fft_size
    first = math.ceil(edges[0] / res - 1e-9)
    last = math.floor(edges[1] / res + 1e-9)
    if last < first:
        raise ValueError("no FFT bin centre falls inside the folded band")
    return first, last


@dataclass(frozen=True)
class FeatureVector:
    phases: np.ndarray
    band_bins: tuple[int, int]
    frame_index: int = 0
    start_time: float = 0.0
    amplitudes: np.ndarray | None = None

    def as_array(self) -> np.ndarray:
        if self.amplitudes is None:
            return self.phases
        return np.concatenate([self.phases, self.amplitudes])


def phase_features(spectrum: Spectrum, band: BandSpec, plan: UndersamplePlan,
                   include_amplitude: bool = False) -> FeatureVector:
    fft_size = len(spectrum.bins)
    if not math.isclose(spectrum.bin_resolution, plan.fs_star / fft_size, rel_tol=1e-12):
        raise ValueError("spectrum resolution does not match the undersampling plan")
    first, last = band_bins(band, plan, fft_size)
    sel = spectrum.bins[first:last + 1]
    phases = np.arctan2(sel.imag, sel.real)
    # arctan2 yields -pi for (-0.0 imag, negative real); the contract is (-pi, pi]
    phases[phases <= -np.pi] = np.pi
    amps = np.abs(sel) if include_amplitude else None
    return FeatureVector(phases, (first, last), spectrum.frame_index, spectrum.start_time, amps)


def extract_features(frame: Frame, config: DSPConfig = DSPConfig()) -> FeatureVector:
    if frame.sample_rate != config.fs:
        raise ValueError(f"frame rate {frame.sample_rate} Hz, config expects {config.fs} Hz")
    plan = config.plan
    filtered = bandpass(frame, config.band, config.transition, config.stopband_db)
    reduced = undersample(filtered, plan)
    spec = fft_spectrum(reduced, config.fft_size, config.window)
    return phase_features(spec, config.band, plan, config.include_amplitude)


def extract_matrix(samples: np.ndarray, config: DSPConfig = DSPConfig()) -> np.ndarray:
    """Features for every whole frame of a mono signal, one row per frame."""
    size = config.frame_samples
    count = len(samples) // size
    rows = [
        extract_features(Frame(samples[i * size:(i + 1) * size], config.fs, i, i * config.frame_length),
                         config).as_array()
        for i in range(count)
    ]
    return np.array(rows).reshape(count, config.dim)

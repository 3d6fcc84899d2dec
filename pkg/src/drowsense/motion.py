"""Synthetic in-cabin Doppler recordings for nodding, yawning and steering actions.

A moving body part is modelled as one reflection path whose length d(t)
follows smooth raised-cosine displacement segments. The received signal is
the carrier delayed by d(t)/c, so the Doppler offset falls out of the
geometry instead of being imposed. Static cabin paths and white noise are
added on top.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator

import numpy as np

from .signal import DEFAULT_F0, DEFAULT_FRAME_LENGTH, DEFAULT_FS, AudioBuffer

SPEED_OF_SOUND = 343.0
# keeps the one-way shift inside +-200 Hz at 20 kHz
V_MAX = 3.43


class ActionKind(enum.Enum):
    NODDING = "Nodding"
    YAWNING = "Yawning"
    OPERATING_SW = "OperatingSW"
    NORMAL = "Normal"

    @property
    def total_time(self) -> float | None:
        """Duration within which 95% of real instances complete."""
        return _TOTAL_TIME.get(self)

    @property
    def is_drowsy(self) -> bool:
        return self is not ActionKind.NORMAL

    @classmethod
    def parse(cls, name: "str | ActionKind") -> "ActionKind":
        if isinstance(name, cls):
            return name
        for kind in cls:
            if name in (kind.value, kind.name):
                return kind
        raise ValueError(f"unknown action {name!r}")


_TOTAL_TIME = {ActionKind.NODDING: 2.3, ActionKind.YAWNING: 2.7, ActionKind.OPERATING_SW: 2.4}

NORMAL_LABEL = "Normal"


def doppler_shift(delta_v: float, f0: float = DEFAULT_F0, c: float = SPEED_OF_SOUND) -> float:
    """Frequency offset ``(delta_v / c) * f0`` for closing speed ``delta_v``."""
    if not c > 0:
        raise ValueError("speed of sound must be positive")
    if abs(delta_v) >= c:
        raise ValueError(f"|delta_v|={abs(delta_v)} m/s is not below c={c} m/s")
    return delta_v / c * f0


@dataclass(frozen=True)
class Displacement:
    """Raised-cosine move of ``delta`` metres between ``start`` and ``stop``."""
    start: float
    stop: float
    delta: float

    def value(self, t):
        u = np.clip((np.asarray(t, dtype=float) - self.start) / (self.stop - self.start), 0.0, 1.0)
        return self.delta * 0.5 * (1.0 - np.cos(np.pi * u))

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        span = self.stop - self.start
        u = (t - self.start) / span
        inside = (u > 0) & (u < 1)
        return np.where(inside, self.delta * np.pi / (2 * span) * np.sin(np.pi * np.clip(u, 0, 1)), 0.0)

    @property
    def peak_rate(self) -> float:
        return abs(self.delta) * math.pi / (2 * (self.stop - self.start))


@dataclass(frozen=True)
class Ramp:
    """Constant-velocity change of ``velocity`` m/s between ``start`` and ``stop``."""
    start: float
    stop: float
    velocity: float

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return self.velocity * (np.clip(t, self.start, self.stop) - self.start)

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t > self.start) & (t < self.stop), self.velocity, 0.0)

    @property
    def peak_rate(self) -> float:
        return abs(self.velocity)


@dataclass(frozen=True)
class Drift:
    """Slow sum-of-sinusoids wander, faded out over ``fade`` (start, stop) if given."""
    components: tuple[tuple[float, float, float], ...] = ()
    fade: tuple[float, float] | None = None

    def _envelope(self, t):
        if self.fade is None:
            return np.ones_like(t), np.zeros_like(t)
        a, b = self.fade
        u = np.clip((t - a) / (b - a), 0.0, 1.0)
        env = 0.5 * (1.0 + np.cos(np.pi * u))
        inside = (u > 0) & (u < 1)
        denv = np.where(inside, -0.5 * np.pi / (b - a) * np.sin(np.pi * u), 0.0)
        return env, denv

    def value(self, t):
        t = np.asarray(t, dtype=float)
        raw = sum((a * (np.sin(2 * np.pi * f * t + p) - math.sin(p)) for a, f, p in self.components),
                  np.zeros_like(t))
        return raw * self._envelope(t)[0]

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        raw = sum((a * (np.sin(2 * np.pi * f * t + p) - math.sin(p)) for a, f, p in self.components),
                  np.zeros_like(t))
        draw = sum((a * 2 * np.pi * f * np.cos(2 * np.pi * f * t + p) for a, f, p in self.components),
                   np.zeros_like(t))
        env, denv = self._envelope(t)
        return draw * env + raw * denv

    @property
    def max_rate(self) -> float:
        """Upper bound on |rate| (fade included)."""
        amp = sum(abs(a) for a, _, _ in self.components)
        speed = sum(abs(a) * 2 * math.pi * f for a, f, _ in self.components)
        if self.fade is None:
            return speed
        return speed + 2 * amp * math.pi / (2 * (self.fade[1] - self.fade[0]))


@dataclass(frozen=True)
class MotionProfile:
    """Time-varying length of the moving reflection path.

    ``interval`` is where the labelled action sits on the profile's own
    timeline (None for normal driving); ``phase_markers`` name the steps of
    the action with their start times.
    """
    action: ActionKind
    duration: float
    base_distance: float
    segments: tuple = ()
    drift: Drift = field(default_factory=Drift)
    interval: tuple[float, float] | None = None
    phase_markers: tuple[tuple[str, float], ...] = ()

    def path_length(self, t):
        t = np.asarray(t, dtype=float)
        d = self.base_distance + self.drift.value(t)
        for seg in self.segments:
            d = d + seg.value(t)
        return d

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        v = self.drift.rate(t)
        for seg in self.segments:
            v = v + seg.rate(t)
        return v

    def step_at(self, t: float) -> str:
        if self.interval is None or not self.interval[0] <= t < self.interval[1]:
            return NORMAL_LABEL
        label = self.phase_markers[0][0]
        for name, start in self.phase_markers:
            if start <= t:
                label = name
        return label

    def shifted(self, offset: float, duration: float) -> "MotionProfile":
        """Move the action ``offset`` seconds later on a timeline of length ``duration``."""
        segs = tuple(replace(s, start=s.start + offset, stop=s.stop + offset) for s in self.segments)
        interval = None if self.interval is None else (self.interval[0] + offset, self.interval[1] + offset)
        markers = tuple((name, t + offset) for name, t in self.phase_markers)
        return replace(self, duration=duration, segments=segs, interval=interval, phase_markers=markers)


@dataclass(frozen=True)
class ProfileParams:
    """Shape knobs for one action.

    ``amplitude`` is the peak path-length excursion in metres (None picks the
    per-action default); ``duration_scale`` stretches the action's total time.
    """
    amplitude: float | None = None
    duration_scale: float = 1.0
    still: float = 3.0
    base_distance: float = 0.6
    drift_amplitude: float = 0.004
    length: float = 8.0

    def validate(self) -> "ProfileParams":
        if self.amplitude is not None and not 0.05 <= self.amplitude <= 0.4:
            raise ValueError(f"amplitude={self.amplitude} m outside [0.05, 0.4]")
        if not 0.8 <= self.duration_scale <= 1.2:
            raise ValueError(f"duration_scale={self.duration_scale} outside [0.8, 1.2]")
        if not 3.0 <= self.still <= 6.0:
            raise ValueError(f"still={self.still} s outside [3, 6]")
        if not 0.45 <= self.base_distance <= 3.0:
            raise ValueError(f"base_distance={self.base_distance} m outside [0.45, 3]")
        if not 0.0 <= self.drift_amplitude <= 0.01:
            raise ValueError(f"drift_amplitude={self.drift_amplitude} m outside [0, 0.01]")
        if not self.length > 0:
            raise ValueError(f"length={self.length} s must be positive")
        return self


DEFAULT_AMPLITUDE = {
    ActionKind.NODDING: 0.12,
    ActionKind.YAWNING: 0.25,
    ActionKind.OPERATING_SW: 0.3,
}

# (step label, fraction of total time, displacement as a multiple of amplitude)
STEPS = {
    ActionKind.NODDING: (("bow", 0.45, -1.0), ("raise", 0.55, 1.0)),
    ActionKind.YAWNING: (("hand_up", 0.35, -1.0), ("hold", 0.3, 0.0), ("hand_down", 0.35, 1.0)),
    ActionKind.OPERATING_SW: (("turn", 0.3, 1.0), ("counter", 0.4, -1.5), ("settle", 0.3, 0.5)),
}


def normal_drift(rng: np.random.Generator, amplitude: float, fade=None) -> Drift:
    """Three slow components (0.1-0.5 Hz) sharing ``amplitude`` metres."""
    if amplitude == 0:
        return Drift((), fade)
    weights = rng.dirichlet(np.ones(3))
    comps = tuple((float(amplitude * w), float(rng.uniform(0.1, 0.5)), float(rng.uniform(0, 2 * np.pi)))
                  for w in weights)
    return Drift(comps, fade)


def motion_profile(action: ActionKind, params: ProfileParams | None = None,
                   rng_seed: int | None = 0) -> MotionProfile:
    """Path-length trajectory for a single action, starting at t = 0.

    Nodding and yawning last ``T * duration_scale``. Steering is preceded by
    ``params.still`` seconds of complete stillness. Normal driving is a slow
    drift over ``params.length`` seconds.
    """
    action = ActionKind.parse(action)
    params = (params or ProfileParams()).validate()
    rng = np.random.default_rng(rng_seed)
    if action is ActionKind.NORMAL:
        return MotionProfile(action, params.length, params.base_distance,
                             drift=normal_drift(rng, params.drift_amplitude))
    amp = DEFAULT_AMPLITUDE[action] if params.amplitude is None else params.amplitude
    total = action.total_time * params.duration_scale
    t = params.still if action is ActionKind.OPERATING_SW else 0.0
    start = t
    segments, markers = [], []
    for name, frac, mult in STEPS[action]:
        span = frac * total
        markers.append((name, t))
        if mult:
            segments.append(Displacement(t, t + span, mult * amp))
        t += span
    profile = MotionProfile(action, t, params.base_distance, tuple(segments),
                            interval=(start, t), phase_markers=tuple(markers))
    peak = max(s.peak_rate for s in segments)
    if peak > V_MAX:
        raise ValueError(f"profile peak speed {peak:.2f} m/s exceeds {V_MAX} m/s")
    return profile


def constant_velocity_profile(path_rate: float, duration: float, base_distance: float = 2.0) -> MotionProfile:
    """Path length changing at ``path_rate`` m/s for the whole duration (a Doppler test fixture)."""
    end = base_distance + path_rate * duration
    if base_distance <= 0 or end <= 0:
        raise ValueError("path length must stay positive")
    return MotionProfile(ActionKind.NORMAL, duration, base_distance, (Ramp(-1.0, duration + 1.0, path_rate),))


def place_in_clip(profile: MotionProfile, clip_duration: float, onset: float,
                  rng: np.random.Generator, drift_amplitude: float = 0.004) -> MotionProfile:
    """Embed an action profile at ``onset`` inside a clip of normal driving.

    Background drift runs through the whole clip, except for steering, where
    it fades out over half a second before the still lead-in and stays off.
    """
    if onset < 0 or onset + profile.duration > clip_duration + 1e-9:
        raise ValueError("action does not fit in the clip")
    if profile.action is ActionKind.NORMAL:
        return replace(profile, duration=clip_duration)
    moved = profile.shifted(onset, clip_duration)
    fade = None
    if profile.action is ActionKind.OPERATING_SW:
        fade = (onset - 0.5, onset) if onset >= 0.5 else (onset - 1e-3, onset)
        if onset == 0:
            return moved
    return replace(moved, drift=normal_drift(rng, drift_amplitude, fade))


@dataclass(frozen=True)
class ChannelSpec:
    static_paths: tuple[tuple[float, float], ...] = ((0.0003, 0.5),)
    moving_path_gain: float = 0.15
    noise_std: float = 0.002
    speed_of_sound: float = SPEED_OF_SOUND
    round_trip: bool = False

    def __post_init__(self):
        if any(g < 0 for _, g in self.static_paths) or self.moving_path_gain < 0:
            raise ValueError("path gains must be non-negative")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if not self.speed_of_sound > 0:
            raise ValueError("speed_of_sound must be positive")

    @property
    def path_factor(self) -> float:
        return 2.0 if self.round_trip else 1.0


@dataclass(frozen=True)
class LabeledSample:
    audio: AudioBuffer
    action: ActionKind
    action_interval: tuple[float, float] | None
    step_labels: tuple[str, ...]
    source: str = "Simulated"
    seed: int | None = None
    params: dict = field(default_factory=dict)
    frame_length: float = DEFAULT_FRAME_LENGTH


def frame_step_labels(profile: MotionProfile, n_frames: int,
                      frame_length: float = DEFAULT_FRAME_LENGTH) -> tuple[str, ...]:
    """Step label at each frame's midpoint."""
    return tuple(profile.step_at((i + 0.5) * frame_length) for i in range(n_frames))


def synthesize_received(profile: MotionProfile, channel: ChannelSpec = ChannelSpec(),
                        f0: float = DEFAULT_F0, fs: float = DEFAULT_FS, rng_seed: int | None = 0,
                        frame_length: float = DEFAULT_FRAME_LENGTH) -> LabeledSample:
    """Sum of static carrier echoes, the moving echo delayed by d(t)/c, and white noise."""
    if not f0 < fs / 2:
        raise ValueError(f"f0={f0} Hz must be below fs/2={fs / 2} Hz")
    t = np.arange(int(round(profile.duration * fs))) / fs
    x = np.zeros_like(t)
    for delay, gain in channel.static_paths:
        if gain:
            x += gain * np.cos(2 * np.pi * f0 * (t - delay))
    if channel.moving_path_gain:
        tau = channel.path_factor * profile.path_length(t) / channel.speed_of_sound
        x += channel.moving_path_gain * np.cos(2 * np.pi * f0 * (t - tau))
    if channel.noise_std:
        x += np.random.default_rng(rng_seed).normal(0.0, channel.noise_std, len(t))
    n_frames = int(len(t) // int(round(frame_length * fs)))
    return LabeledSample(AudioBuffer(x, fs), profile.action, profile.interval,
                         frame_step_labels(profile, n_frames, frame_length), seed=rng_seed,
                         frame_length=frame_length)


@dataclass(frozen=True)
class CorpusSpec:
    """Per-class counts and the ranges each sample's parameters are drawn from."""
    counts: dict = field(default_factory=lambda: {k.value: 600 for k in ActionKind})
    clip_duration: float = 8.0
    duration_scale: tuple[float, float] = (0.85, 1.15)
    amplitude: dict = field(default_factory=lambda: {
        ActionKind.NODDING.value: (0.08, 0.2),
        ActionKind.YAWNING.value: (0.15, 0.35),
        ActionKind.OPERATING_SW.value: (0.2, 0.35),
    })
    still: tuple[float, float] = (3.0, 4.0)
    base_distance: tuple[float, float] = (0.45, 1.0)
    drift_amplitude: tuple[float, float] = (0.001, 0.006)
    static_paths: tuple[int, int] = (1, 3)
    direct_gain: tuple[float, float] = (0.3, 0.5)
    echo_gain: tuple[float, float] = (0.02, 0.12)
    echo_delay: tuple[float, float] = (0.0005, 0.01)
    moving_gain: tuple[float, float] = (0.05, 0.2)
    noise_std: tuple[float, float] = (0.0005, 0.004)
    round_trip: bool = False
    f0: float = DEFAULT_F0
    fs: float = DEFAULT_FS
    frame_length: float = DEFAULT_FRAME_LENGTH

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        d = dict(d)
        for key in ("duration_scale", "still", "base_distance", "drift_amplitude", "static_paths",
                    "direct_gain", "echo_gain", "echo_delay", "moving_gain", "noise_std"):
            if key in d:
                d[key] = tuple(d[key])
        if "amplitude" in d:
            d["amplitude"] = {k: tuple(v) for k, v in d["amplitude"].items()}
        return cls(**d)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class SamplePlan:
    """Everything needed to synthesise one corpus entry, drawn up front."""
    index: int
    action: ActionKind
    seed: int
    params: ProfileParams
    onset: float
    channel: ChannelSpec

    def describe(self) -> dict:
        return {"params": asdict(self.params), "onset": self.onset,
                "channel": {**asdict(self.channel), "static_paths": [list(p) for p in self.channel.static_paths]}}


def _uniform(rng, bounds):
    lo, hi = bounds
    return float(rng.uniform(lo, hi))


def plan_sample(spec: CorpusSpec, action: ActionKind, index: int, seed: int) -> SamplePlan:
    rng = np.random.default_rng(seed)
    amp_range = spec.amplitude.get(action.value)
    params = ProfileParams(
        amplitude=None if amp_range is None else _uniform(rng, amp_range),
        duration_scale=_uniform(rng, spec.duration_scale),
        still=_uniform(rng, spec.still),
        base_distance=_uniform(rng, spec.base_distance),
        drift_amplitude=_uniform(rng, spec.drift_amplitude),
        length=spec.clip_duration,
    )
    if action is ActionKind.NORMAL:
        onset = 0.0
    else:
        span = action.total_time * params.duration_scale
        if action is ActionKind.OPERATING_SW:
            span += params.still
        # leave half a second of context after the action
        latest = spec.clip_duration - span - 0.5
        earliest = min(1.0, latest) if action is not ActionKind.OPERATING_SW else min(0.5, latest)
        if latest < earliest:
            raise ValueError(f"clip_duration={spec.clip_duration} s too short for {action.value}")
        onset = _uniform(rng, (earliest, latest))
    n_static = int(rng.integers(spec.static_paths[0], spec.static_paths[1] + 1))
    paths = [(float(params.base_distance / 4 / SPEED_OF_SOUND), _uniform(rng, spec.direct_gain))]
    for _ in range(n_static - 1):
        paths.append((_uniform(rng, spec.echo_delay), _uniform(rng, spec.echo_gain)))
    channel = ChannelSpec(tuple(paths), _uniform(rng, spec.moving_gain), _uniform(rng, spec.noise_std),
                          round_trip=spec.round_trip)
    return SamplePlan(index, action, seed, params, onset, channel)


def corpus_plan(spec: CorpusSpec, rng_seed: int = 0) -> list[SamplePlan]:
    """Draw per-sample parameters. Sample seeds derive from (master seed, index) only."""
    for kind, count in spec.counts.items():
        ActionKind.parse(kind)
        if count < 0:
            raise ValueError(f"count for {kind} is negative")
    plans = []
    index = 0
    for kind in ActionKind:
        for _ in range(int(spec.counts.get(kind.value, 0))):
            seed = int(np.random.SeedSequence([rng_seed, index]).generate_state(1)[0])
            plans.append(plan_sample(spec, kind, index, seed))
            index += 1
    return plans


def synthesize_plan(plan: SamplePlan, spec: CorpusSpec) -> LabeledSample:
    rng = np.random.default_rng([plan.seed, 1])
    profile = motion_profile(plan.action, plan.params, rng_seed=plan.seed)
    clip = place_in_clip(profile, spec.clip_duration, plan.onset, rng, plan.params.drift_amplitude)
    sample = synthesize_received(clip, plan.channel, spec.f0, spec.fs, rng_seed=plan.seed,
                                 frame_length=spec.frame_length)
    return replace(sample, params=plan.describe())


def iter_corpus(spec: CorpusSpec, rng_seed: int = 0) -> Iterator[LabeledSample]:
    """Lazily synthesise the corpus; audio for the full default corpus does not fit in memory."""
    for plan in corpus_plan(spec, rng_seed):
        yield synthesize_plan(plan, spec)


def generate_corpus(spec: CorpusSpec, rng_seed: int = 0) -> list[LabeledSample]:
    return list(iter_corpus(spec, rng_seed))

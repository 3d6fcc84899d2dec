"""Streaming drowsiness detection: one frame in, one detection out, every frame period."""

from __future__ import annotations

import collections
import time
from dataclasses import dataclass

import numpy as np

from .dsp import extract_features
from .model import NORMAL, DrowsinessModel
from .signal import Frame

# an alert counts for an action if it fires this long after the action ends
MATCH_SLACK = 0.5


# called action when the fused score alerts but no branch names an action
DROWSY_UNSPECIFIED = "Drowsy"


class StreamError(RuntimeError):
    """Frame arrived out of order or after a gap; the caller decides whether to reset."""


@dataclass
class Detection:
    frame_index: int
    timestamp: float
    drowsy: float
    alert: bool
    action: str
    probs: tuple
    latency_within_action: float | None = None

    @property
    def p_short(self):
        return self.probs[0]

    @property
    def p_long(self):
        return self.probs[-1]

    def to_record(self) -> dict:
        return {"frame_index": self.frame_index, "timestamp": self.timestamp, "R": self.drowsy,
                "p_short": [float(v) for v in self.p_short], "p_long": [float(v) for v in self.p_long],
                "action": self.action, "alert": self.alert}


class StreamState:
    """Ring buffer of recent feature vectors plus alert bookkeeping for one audio source."""

    def __init__(self, model: DrowsinessModel, threshold: float = 0.5, cooldown: float = 5.0):
        if not 0 < threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if cooldown < 0:
            raise ValueError("cooldown must be non-negative")
        self.model = model
        self.threshold = threshold
        self.cooldown = cooldown
        self.frame_length = model.dsp.frame_length
        self.reset()

    def reset(self):
        self.buffer = collections.deque(maxlen=self.model.max_timesteps)
        self.last_index = None
        self.last_alert = None

    def push_features(self, index: int, features) -> Detection:
        if self.last_index is not None and index != self.last_index + 1:
            raise StreamError(f"expected frame {self.last_index + 1}, got {index}")
        features = np.asarray(getattr(features, "as_array", lambda: features)(), dtype=float)
        self.buffer.append(features)
        self.last_index = index
        out = self.model.step(np.array(self.buffer))
        timestamp = (index + 1) * self.frame_length
        alert = out.drowsy > self.threshold and (
            self.last_alert is None or timestamp - self.last_alert >= self.cooldown - 1e-9)
        if alert:
            self.last_alert = timestamp
        return Detection(index, timestamp, out.drowsy, alert, out.action, tuple(out.probs))


def push_frame(state: StreamState, frame: Frame) -> Detection:
    """Extract features from ``frame`` and advance the stream by one step."""
    return state.push_features(frame.index, extract_features(frame, state.model.dsp))


def detect_offline(model: DrowsinessModel, features: np.ndarray, threshold: float = 0.5,
                   cooldown: float = 5.0) -> list[Detection]:
    """Whole-recording pass over a feature matrix, slicing each frame's history directly."""
    features = np.asarray(features, dtype=float)
    horizon = model.max_timesteps
    detections, last_alert = [], None
    for i in range(len(features)):
        out = model.step(features[max(0, i - horizon + 1):i + 1])
        timestamp = (i + 1) * model.dsp.frame_length
        alert = out.drowsy > threshold and (last_alert is None or timestamp - last_alert >= cooldown - 1e-9)
        if alert:
            last_alert = timestamp
        detections.append(Detection(i, timestamp, out.drowsy, alert, out.action, tuple(out.probs)))
    return detections


def apply_alerts(drowsy, frame_length: float, threshold: float = 0.5, cooldown: float = 5.0) -> np.ndarray:
    """Alert flags for a sequence of drowsiness probabilities under the threshold/cooldown rule."""
    flags = np.zeros(len(drowsy), dtype=bool)
    last = None
    for i, r in enumerate(drowsy):
        t = (i + 1) * frame_length
        if r > threshold and (last is None or t - last >= cooldown - 1e-9):
            flags[i] = True
            last = t
    return flags


@dataclass
class SampleVerdict:
    """Per-recording outcome: the drowsy call, the action called, and when the first matching alert fired."""
    truth: str
    predicted: str
    drowsy: bool
    first_alert: float | None
    latency: float | None


def judge_sample(detections, truth: str, interval) -> SampleVerdict:
    """Score one recording from its detections.

    A drowsy recording counts as detected when an alert fires inside
    ``[start, end + MATCH_SLACK]``; the called action is the most common
    non-Normal per-frame call decided in that window (earliest wins ties).
    A normal recording is a false alarm if any alert fires at all.
    """
    if interval is None:
        window = list(detections)
    else:
        lo, hi = interval[0], interval[1] + MATCH_SLACK
        window = [d for d in detections if lo <= d.timestamp <= hi]
    alerts = [d for d in window if d.alert]
    if not alerts:
        return SampleVerdict(truth, NORMAL, False, None, None)
    calls = collections.Counter(d.action for d in window if d.action != NORMAL)
    predicted = calls.most_common(1)[0][0] if calls else DROWSY_UNSPECIFIED
    first = alerts[0].timestamp
    latency = None if interval is None else first - interval[0]
    return SampleVerdict(truth, predicted, True, first, latency)


def realtime_budget_check(pipeline, frame: Frame) -> float:
    """Wall-clock seconds for ``pipeline(frame)``, e.g. ``lambda f: push_frame(state, f)``."""
    start = time.perf_counter()
    pipeline(frame)
    return time.perf_counter() - start


def realtime_benchmark(model: DrowsinessModel, frames: int = 1000, seed: int = 0, warmup: int = 5) -> dict:
    """Sustained streaming over synthetic carrier audio; per-frame timing percentiles."""
    from .signal import generate_tone

    rng = np.random.default_rng(seed)
    dsp = model.dsp
    base = generate_tone(20000.0, dsp.fs, dsp.frame_length, 0.5).samples
    state = StreamState(model)
    step = lambda f: push_frame(state, f)
    times = []
    for i in range(frames + warmup):
        samples = base + rng.normal(0, 0.002, len(base))
        elapsed = realtime_budget_check(step, Frame(samples, dsp.fs, i, i * dsp.frame_length))
        if i >= warmup:
            times.append(elapsed)
    times = np.asarray(times)
    return {"frames": frames, "budget_s": dsp.frame_length, "mean_s": float(times.mean()),
            "p50_s": float(np.percentile(times, 50)), "p99_s": float(np.percentile(times, 99)),
            "max_s": float(times.max())}

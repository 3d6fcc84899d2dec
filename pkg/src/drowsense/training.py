"""Mini-batch BPTT training for the branches, then the fusion network on their outputs."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .dsp import DSPConfig
from .model import NORMAL, DrowsinessModel, branch_label
from .neural import FusionDnn, LstmStack

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-3
    lr_decay: float = 0.85
    batch_size: int = 64
    epochs: int = 12
    seed: int = 0
    clip_norm: float = 5.0
    patience: int = 3
    train_fraction: float = 0.9
    val_fraction: float = 0.1
    window_fraction: float = 1.0
    loss_steps: str = "last"
    class_weight: str = "none"
    hidden: int = 64
    fusion_hidden: int = 16
    fusion_epochs: int = 60
    fusion_lr: float = 1e-2
    encoding: str = "sincos"
    compute_dtype: str = "float32"

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "epochs", "clip_norm", "patience", "hidden",
                     "fusion_hidden", "fusion_epochs", "fusion_lr", "train_fraction"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.lr_decay <= 1 or not 0 < self.window_fraction <= 1:
            raise ValueError("lr_decay and window_fraction must lie in (0, 1]")
        if self.val_fraction < 0 or not math.isclose(self.train_fraction + self.val_fraction, 1.0):
            raise ValueError("train_fraction + val_fraction must equal 1")
        if self.class_weight not in ("none", "balanced"):
            raise ValueError("class_weight must be 'none' or 'balanced'")

    def to_dict(self):
        return asdict(self)


@dataclass
class FeatureSet:
    """Per-sample feature matrices with per-frame action labels.

    ``frame_actions[s][i]`` is the sample's action for frames inside the
    action interval and ``"Normal"`` elsewhere.
    """
    features: list[np.ndarray]
    frame_actions: list[tuple[str, ...]]
    actions: list[str]
    intervals: list[tuple[float, float] | None]
    ids: list[int]
    frame_length: float = 0.25

    def __len__(self):
        return len(self.features)

    def subset(self, idx) -> "FeatureSet":
        idx = list(idx)
        return FeatureSet([self.features[i] for i in idx], [self.frame_actions[i] for i in idx],
                          [self.actions[i] for i in idx], [self.intervals[i] for i in idx],
                          [self.ids[i] for i in idx], self.frame_length)

    @property
    def dim(self) -> int:
        return self.features[0].shape[1]


class WindowIndex:
    """All (sample, frame) windows of a feature set, gatherable as (B, T, dim) batches."""

    def __init__(self, data: FeatureSet, max_steps: int):
        pad = np.zeros((max_steps - 1, data.dim))
        chunks, starts, frames, samples, actions, row_actions = [], [], [], [], [], []
        offset = 0
        for s, feats in enumerate(data.features):
            chunks += [pad, feats]
            offset += max_steps - 1
            starts.append(offset)
            n = len(feats)
            frames.append(np.arange(n))
            samples.append(np.full(n, s))
            actions += list(data.frame_actions[s][:n])
            row_actions += [NORMAL] * (max_steps - 1) + list(data.frame_actions[s][:n])
            offset += n
        self.row_actions = np.asarray(row_actions)
        self.rows = np.concatenate(chunks) if chunks else np.zeros((0, data.dim))
        self.starts = np.asarray(starts, dtype=int)
        self.frame = np.concatenate(frames) if frames else np.zeros(0, int)
        self.sample = np.concatenate(samples) if samples else np.zeros(0, int)
        self.actions = np.asarray(actions)
        self.max_steps = max_steps

    def __len__(self):
        return len(self.frame)

    def _rows(self, which, timesteps):
        which = np.asarray(which)
        end = self.starts[self.sample[which]] + self.frame[which]
        return end[:, None] + np.arange(-timesteps + 1, 1)

    def gather(self, which, timesteps: int, dtype=np.float64) -> np.ndarray:
        return self.rows[self._rows(which, timesteps)].astype(dtype, copy=False)

    def row_labels(self, classes) -> np.ndarray:
        lookup = {a: branch_label(a, classes) for a in np.unique(self.row_actions)}
        return np.array([lookup[a] for a in self.row_actions], dtype=int)

    def gather_labels(self, which, timesteps: int, row_labels) -> np.ndarray:
        """Per-timestep labels for each window; padding rows count as Normal."""
        return row_labels[self._rows(which, timesteps)]

    def labels(self, classes) -> np.ndarray:
        lookup = {a: branch_label(a, classes) for a in np.unique(self.actions)}
        return np.array([lookup[a] for a in self.actions], dtype=int)


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict, clip_norm: float | None = None) -> float:
        norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
        scale = 1.0
        if clip_norm is not None and norm > clip_norm:
            scale = clip_norm / norm
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k] * scale
            self.m[k] *= self.beta1
            self.m[k] += (1 - self.beta1) * g
            self.v[k] *= self.beta2
            self.v[k] += (1 - self.beta2) * g * g
            p -= (self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)).astype(p.dtype)
        return norm


def stratified_split(labels, fractions, seed: int):
    """Split indices into len(fractions) disjoint groups, stratified by label."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    groups = [[] for _ in fractions]
    for value in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == value)
        idx = idx[rng.permutation(len(idx))]
        cuts = np.round(np.cumsum(fractions)[:-1] * len(idx)).astype(int)
        for g, part in zip(groups, np.split(idx, cuts)):
            g.extend(part.tolist())
    return [np.sort(np.asarray(g, dtype=int)) for g in groups]


def _snapshot(obj) -> dict:
    state = {k: v.copy() for k, v in obj.params().items()}
    state.update({f"buffer:{k}": v.copy() for k, v in obj.buffers().items()})
    return state


def _restore(obj, state: dict):
    for k, v in obj.params().items():
        v[...] = state[k]
    for k, v in obj.buffers().items():
        v[...] = state[f"buffer:{k}"]


def _class_weights(labels, k, mode):
    if mode == "none":
        return np.ones(k)
    counts = np.bincount(labels, minlength=k).astype(float)
    w = np.where(counts > 0, counts.sum() / np.maximum(counts, 1) / k, 0.0)
    return np.sqrt(w)


def train_branch(stack: LstmStack, train_idx: WindowIndex, val_idx: WindowIndex | None,
                 config: TrainConfig, seed: int, dtype) -> list[dict]:
    """Fit one branch on windows labelled by their newest frame; early-stops on validation loss."""
    rng = np.random.default_rng(seed)
    labels = train_idx.labels(stack.classes)
    rows = train_idx.row_labels(stack.classes) if config.loss_steps == "all" else None
    val_labels = val_idx.labels(stack.classes) if val_idx is not None and len(val_idx) else None
    cw = _class_weights(labels, len(stack.classes), config.class_weight)
    opt = Adam(stack.params(), config.learning_rate)
    history = []
    best, best_loss, bad = _snapshot(stack), math.inf, 0
    for epoch in range(config.epochs):
        start = time.perf_counter()
        order = rng.permutation(len(train_idx))
        if config.window_fraction < 1:
            order = order[:max(config.batch_size, int(config.window_fraction * len(order)))]
        losses = []
        for i in range(0, len(order), config.batch_size):
            which = order[i:i + config.batch_size]
            if len(which) < 2:
                continue
            x = train_idx.gather(which, stack.timesteps, dtype)
            if rows is None:
                loss, grads = stack.loss_and_grads(x, labels[which], "last", weights=cw[labels[which]])
            else:
                loss, grads = stack.loss_and_grads(x, train_idx.gather_labels(which, stack.timesteps, rows),
                                                   "all")
            opt.step(grads, config.clip_norm)
            losses.append(loss)
        opt.lr *= config.lr_decay
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)),
                 "seconds": time.perf_counter() - start}
        if val_labels is not None:
            p = _branch_probs(stack, val_idx, dtype)
            entry["val_loss"] = float(-np.mean(np.log(np.clip(p[np.arange(len(p)), val_labels], 1e-12, None))))
            entry["val_acc"] = float(np.mean(p.argmax(axis=1) == val_labels))
            if entry["val_loss"] < best_loss - 1e-6:
                best, best_loss, bad = _snapshot(stack), entry["val_loss"], 0
            else:
                bad += 1
        history.append(entry)
        log.info("%s epoch %d %s", stack.spec.name, epoch, entry)
        if val_labels is not None and bad >= config.patience:
            break
    if val_labels is not None:
        _restore(stack, best)
    return history


def _branch_probs(stack: LstmStack, idx: WindowIndex, dtype, chunk: int = 1024) -> np.ndarray:
    out = [stack.forward(idx.gather(np.arange(i, min(i + chunk, len(idx))), stack.timesteps, dtype))[:, -1]
           for i in range(0, len(idx), chunk)]
    return np.concatenate(out) if out else np.zeros((0, len(stack.classes)))


def train_fusion(fusion: FusionDnn, d: np.ndarray, y: np.ndarray, config: TrainConfig, seed: int) -> list[float]:
    """Full-data mini-batch Adam on binary cross-entropy."""
    rng = np.random.default_rng(seed)
    opt = Adam(fusion.params(), config.fusion_lr)
    history = []
    batch = max(256, config.batch_size)
    for _ in range(config.fusion_epochs):
        order = rng.permutation(len(d))
        losses = []
        for i in range(0, len(order), batch):
            which = order[i:i + batch]
            loss, grads = fusion.loss_and_grads(d[which], y[which])
            opt.step(grads, config.clip_norm)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


def train(data: FeatureSet, arch: str, config: TrainConfig = TrainConfig(),
          dsp: DSPConfig | None = None) -> tuple[DrowsinessModel, dict]:
    """Train every branch, then the fusion network on the branches' outputs.

    Deterministic for a fixed ``config.seed``. Without ``dsp`` the feature
    dimension is taken from the data and the model carries the default DSP
    config (for toy problems that bypass the front end).
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    if len(set(data.actions)) < 2:
        raise ValueError(f"training set holds a single class ({data.actions[0]}); need at least two")
    if dsp is not None and data.dim != dsp.dim:
        raise ValueError(f"features have dimension {data.dim}, DSP config implies {dsp.dim}")
    dtype = np.dtype(config.compute_dtype)
    model = DrowsinessModel.initialise(arch, dsp or DSPConfig(), config.hidden, config.fusion_hidden,
                                       config.encoding, config.seed, dtype, input_dim=data.dim)
    fit_part, val_part = stratified_split(data.actions, [config.train_fraction, config.val_fraction],
                                          config.seed)
    fit_idx = WindowIndex(data.subset(fit_part), model.max_timesteps)
    val_idx = WindowIndex(data.subset(val_part), model.max_timesteps) if len(val_part) else None
    report = {"arch": arch, "config": config.to_dict(), "branches": {},
              "n_fit": len(fit_part), "n_val": len(val_part)}
    for k, branch in enumerate(model.branches):
        labels = fit_idx.labels(branch.classes)
        if len(np.unique(labels)) < 2:
            raise ValueError(f"branch {branch.spec.name} sees a single class in the training data")
        report["branches"][branch.spec.name] = train_branch(branch, fit_idx, val_idx, config,
                                                            config.seed + 1000 * (k + 1), dtype)
    all_idx = WindowIndex(data, model.max_timesteps)
    d = np.concatenate([_branch_probs(b, all_idx, dtype) for b in model.branches], axis=1)
    y = (all_idx.actions != NORMAL).astype(float)
    report["fusion"] = train_fusion(model.fusion, d, y, config, config.seed + 17)
    return model.astype(np.float64), report

"""Numpy LSTM classifiers, batch normalisation and the fusion network, with BPTT gradients.

Gate layout inside every weight matrix is ``[forget, input, candidate, output]``
and the recurrent input is the concatenation ``[h_prev, x_t]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
PROB_EPS = 1e-12


def lstm_cell_step(x_t, h_prev, c_prev, W, b):
    """One LSTM step.

    ``W`` has shape ``(hidden + input, 4 * hidden)``. Returns ``(h_t, C_t)``
    with ``h_t = sigmoid(W_o [h_prev, x_t] + b_o) * tanh(C_t)``.
    """
    x_t, h_prev, c_prev = np.asarray(x_t), np.asarray(h_prev), np.asarray(c_prev)
    hidden = h_prev.shape[-1]
    if W.shape != (hidden + x_t.shape[-1], 4 * hidden) or b.shape != (4 * hidden,):
        raise ValueError(f"weights {W.shape}/{b.shape} do not fit input {x_t.shape[-1]}, hidden {hidden}")
    if c_prev.shape != h_prev.shape:
        raise ValueError("cell and hidden state shapes differ")
    z = np.concatenate([h_prev, x_t], axis=-1) @ W + b
    f = sigmoid(z[..., :hidden])
    i = sigmoid(z[..., hidden:2 * hidden])
    g = np.tanh(z[..., 2 * hidden:3 * hidden])
    o = sigmoid(z[..., 3 * hidden:])
    c_t = f * c_prev + i * g
    return o * np.tanh(c_t), c_t


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def classify(p) -> int:
    """Index of the most probable class; ``np.argmax`` already breaks ties toward the lowest index."""
    return int(np.argmax(p))


def cross_entropy(predicted, target) -> float:
    """Mean over samples of ``-sum_k target_k * log(predicted_k)`` with predictions clamped at 1e-12."""
    predicted, target = np.asarray(predicted, dtype=float), np.asarray(target, dtype=float)
    if predicted.shape != target.shape:
        raise ValueError(f"prediction shape {predicted.shape} != target shape {target.shape}")
    p = np.clip(predicted, PROB_EPS, 1.0)
    per_sample = -(target * np.log(p)).sum(axis=-1)
    return float(per_sample.mean())


def encode_phases(x, encoding: str):
    if encoding == "raw":
        return x
    if encoding == "sincos":
        return np.concatenate([np.sin(x), np.cos(x)], axis=-1)
    raise ValueError(f"unknown input encoding {encoding!r}")


class BatchNorm:
    """Per-feature normalisation; statistics are shared across timesteps."""

    def __init__(self, dim: int, dtype=np.float64):
        self.gamma = np.ones(dim, dtype)
        self.beta = np.zeros(dim, dtype)
        self.running_mean = np.zeros(dim, dtype)
        self.running_var = np.ones(dim, dtype)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, train: bool = False, update: bool = True):
        flat = x.reshape(-1, x.shape[-1])
        if not train:
            xhat = (flat - self.running_mean) / np.sqrt(self.running_var + BN_EPS)
            return (xhat * self.gamma + self.beta).reshape(x.shape), None
        if flat.shape[0] < 2:
            raise ValueError("train-mode batch normalisation needs at least 2 rows")
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (flat - mean) * inv
        if update:
            self.running_mean *= BN_MOMENTUM
            self.running_mean += (1 - BN_MOMENTUM) * mean
            self.running_var *= BN_MOMENTUM
            self.running_var += (1 - BN_MOMENTUM) * var
        return (xhat * self.gamma + self.beta).reshape(x.shape), (xhat, inv)

    def backward(self, dy, cache):
        xhat, inv = cache
        shape = dy.shape
        dy = dy.reshape(-1, shape[-1])
        m = dy.shape[0]
        grads = {"gamma": (dy * xhat).sum(axis=0), "beta": dy.sum(axis=0)}
        dxhat = dy * self.gamma
        dx = inv / m * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return dx.reshape(shape), grads


def batch_normalize(x, bn: BatchNorm, mode: str = "train"):
    """Functional wrapper: ``mode`` is ``"train"`` (batch statistics, running stats updated) or ``"infer"``."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    return bn.forward(np.asarray(x, dtype=bn.gamma.dtype), train=mode == "train")[0]


class LSTMLayer:
    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator, dtype=np.float64):
        scale = 1.0 / math.sqrt(input_dim + hidden)
        self.W = rng.uniform(-scale, scale, (hidden + input_dim, 4 * hidden)).astype(dtype)
        self.b = np.zeros(4 * hidden, dtype)
        self.b[:hidden] = 1.0  # forget-gate bias
        self.hidden = hidden
        self.input_dim = input_dim

    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x, need_cache: bool = False):
        B, T, _ = x.shape
        H = self.hidden
        Wh, Wx = self.W[:H], self.W[H:]
        zx = (x.reshape(B * T, -1) @ Wx).reshape(B, T, 4 * H) + self.b
        h = np.zeros((B, H), x.dtype)
        c = np.zeros((B, H), x.dtype)
        hs = np.empty((B, T, H), x.dtype)
        if need_cache:
            gates = np.empty((B, T, 4 * H), x.dtype)
            cs = np.empty((B, T, H), x.dtype)
        for t in range(T):
            z = zx[:, t] + h @ Wh
            f = sigmoid(z[:, :H])
            i = sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = sigmoid(z[:, 3 * H:])
            c = f * c + i * g
            h = o * np.tanh(c)
            hs[:, t] = h
            if need_cache:
                gates[:, t, :H], gates[:, t, H:2 * H], gates[:, t, 2 * H:3 * H], gates[:, t, 3 * H:] = f, i, g, o
                cs[:, t] = c
        cache = (x, hs, cs, gates) if need_cache else None
        return hs, cache

    def backward(self, dhs, cache):
        x, hs, cs, gates = cache
        B, T, _ = x.shape
        H = self.hidden
        Wh, Wx = self.W[:H], self.W[H:]
        dz_all = np.empty((B, T, 4 * H), x.dtype)
        dh_next = np.zeros((B, H), x.dtype)
        dc_next = np.zeros((B, H), x.dtype)
        for t in reversed(range(T)):
            f, i, g, o = gates[:, t, :H], gates[:, t, H:2 * H], gates[:, t, 2 * H:3 * H], gates[:, t, 3 * H:]
            c = cs[:, t]
            c_prev = cs[:, t - 1] if t > 0 else np.zeros_like(c)
            tc = np.tanh(c)
            dh = dhs[:, t] + dh_next
            dc = dh * o * (1 - tc * tc) + dc_next
            dz = dz_all[:, t]
            dz[:, :H] = dc * c_prev * f * (1 - f)
            dz[:, H:2 * H] = dc * g * i * (1 - i)
            dz[:, 2 * H:3 * H] = dc * i * (1 - g * g)
            dz[:, 3 * H:] = dh * tc * o * (1 - o)
            dc_next = dc * f
            dh_next = dz @ Wh.T
        h_prev = np.concatenate([np.zeros((B, 1, H), x.dtype), hs[:, :-1]], axis=1)
        dz_flat = dz_all.reshape(B * T, 4 * H)
        dW = np.concatenate([h_prev.reshape(B * T, H).T @ dz_flat, x.reshape(B * T, -1).T @ dz_flat])
        dx = (dz_flat @ Wx.T).reshape(x.shape)
        return dx, {"W": dW, "b": dz_flat.sum(axis=0)}


@dataclass(frozen=True)
class StackSpec:
    """Shape of one recurrent branch."""
    name: str
    layers: int
    timesteps: int
    classes: tuple[str, ...]
    hidden: int = 64


class LstmStack:
    """Normalise -> LSTM x L (normalised between layers) -> softmax head, per timestep."""

    def __init__(self, spec: StackSpec, input_dim: int, encoding: str = "sincos",
                 seed: int = 0, dtype=np.float64):
        rng = np.random.default_rng(seed)
        self.spec = spec
        self.input_dim = input_dim
        self.encoding = encoding
        enc_dim = encode_phases(np.zeros((1, input_dim)), encoding).shape[-1]
        dims = [enc_dim] + [spec.hidden] * spec.layers
        self.norms = [BatchNorm(d, dtype) for d in dims]
        self.lstms = [LSTMLayer(dims[k], spec.hidden, rng, dtype) for k in range(spec.layers)]
        # small random head so the first updates break symmetry across classes
        self.head_W = rng.uniform(-0.1, 0.1, (spec.hidden, len(spec.classes))).astype(dtype)
        self.head_b = np.zeros(len(spec.classes), dtype)

    @property
    def timesteps(self) -> int:
        return self.spec.timesteps

    @property
    def classes(self) -> tuple[str, ...]:
        return self.spec.classes

    def layers(self):
        """(name, object) pairs in a fixed order; used for parameter traversal."""
        out = []
        for k, bn in enumerate(self.norms):
            out.append((f"norm{k}", bn))
            if k < len(self.lstms):
                out.append((f"lstm{k}", self.lstms[k]))
        return out

    def params(self) -> dict[str, np.ndarray]:
        p = {}
        for name, layer in self.layers():
            for key, arr in layer.params().items():
                p[f"{name}.{key}"] = arr
        p["head.W"] = self.head_W
        p["head.b"] = self.head_b
        return p

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"norm{k}.{key}": arr for k, bn in enumerate(self.norms) for key, arr in bn.buffers().items()}

    def _check(self, x):
        x = np.asarray(x, dtype=self.head_W.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"feature dimension {x.shape[-1]} != expected {self.input_dim}")
        return x

    def logits(self, x, train: bool = False, need_cache: bool = False, update_stats: bool = True):
        x = encode_phases(self._check(x), self.encoding)
        caches = []
        h = x
        for k, bn in enumerate(self.norms):
            h, bn_cache = bn.forward(h, train, update_stats)
            lstm_cache = None
            if k < len(self.lstms):
                h, lstm_cache = self.lstms[k].forward(h, need_cache)
            caches.append((bn_cache, lstm_cache))
        z = h @ self.head_W + self.head_b
        return z, (h, caches)

    def forward(self, x, train: bool = False):
        """Class probabilities at every timestep, shape ``(batch, T, K)``."""
        return softmax(self.logits(x, train)[0])

    def loss_and_grads(self, x, labels, steps: str = "last", update_stats: bool = True,
                       weights=None):
        """Cross-entropy against integer ``labels`` of shape (batch,) for the last step or (batch, T)."""
        z, (top, caches) = self.logits(x, train=True, need_cache=True, update_stats=update_stats)
        p = softmax(z)
        B, T, K = p.shape
        dz = np.zeros_like(p)
        if steps == "last":
            labels = np.asarray(labels).reshape(B)
            w = np.ones(B) if weights is None else np.asarray(weights, dtype=float)
            pl = p[:, -1]
            loss = float((w * -np.log(np.clip(pl[np.arange(B), labels], PROB_EPS, None))).sum() / w.sum())
            g = pl.copy()
            g[np.arange(B), labels] -= 1.0
            dz[:, -1] = g * (w / w.sum())[:, None]
        elif steps == "all":
            labels = np.asarray(labels).reshape(B, T)
            bi, ti = np.meshgrid(np.arange(B), np.arange(T), indexing="ij")
            loss = float(-np.log(np.clip(p[bi, ti, labels], PROB_EPS, None)).mean())
            g = p.copy()
            g[bi, ti, labels] -= 1.0
            dz = g / (B * T)
        else:
            raise ValueError(f"steps must be 'last' or 'all', got {steps!r}")
        grads = {"head.W": top.reshape(-1, top.shape[-1]).T @ dz.reshape(-1, K),
                 "head.b": dz.reshape(-1, K).sum(axis=0)}
        dh = dz @ self.head_W.T
        for k in reversed(range(len(self.norms))):
            bn_cache, lstm_cache = caches[k]
            if k < len(self.lstms):
                dh, g_lstm = self.lstms[k].backward(dh, lstm_cache)
                grads.update({f"lstm{k}.{key}": v for key, v in g_lstm.items()})
            dh, g_bn = self.norms[k].backward(dh, bn_cache)
            grads.update({f"norm{k}.{key}": v for key, v in g_bn.items()})
        return loss, grads


def stack_forward(frames, stack: LstmStack) -> np.ndarray:
    """Run one branch on up to ``T`` feature vectors (oldest first); returns ``P_t`` per timestep.

    Shorter histories are left-padded with zero features.
    """
    x = np.asarray([getattr(f, "phases", f) for f in frames], dtype=stack.head_W.dtype)
    if x.ndim != 2:
        raise ValueError("expected a sequence of 1-D feature vectors")
    if x.shape[1] != stack.input_dim:
        raise ValueError(f"feature dimension {x.shape[1]} != expected {stack.input_dim}")
    if len(x) > stack.timesteps:
        raise ValueError(f"sequence of {len(x)} frames exceeds {stack.timesteps} timesteps")
    pad = np.zeros((stack.timesteps - len(x), stack.input_dim), x.dtype)
    return stack.forward(np.concatenate([pad, x]))[0]


class FusionDnn:
    """Two dense layers: tanh hidden layer, then a sigmoid unit giving the drowsiness probability."""

    def __init__(self, input_dim: int, hidden: int = 16, seed: int = 0, dtype=np.float64):
        rng = np.random.default_rng(seed)
        scale = 1.0 / math.sqrt(input_dim)
        self.W1 = rng.uniform(-scale, scale, (input_dim, hidden)).astype(dtype)
        self.b1 = np.zeros(hidden, dtype)
        self.W2 = rng.uniform(-1.0 / math.sqrt(hidden), 1.0 / math.sqrt(hidden), (hidden, 1)).astype(dtype)
        self.b2 = np.zeros(1, dtype)
        self.input_dim = input_dim

    def params(self):
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def buffers(self):
        return {}

    def _check(self, d):
        d = np.asarray(d, dtype=self.W1.dtype)
        if d.shape[-1] != self.input_dim:
            raise ValueError(f"fusion input dimension {d.shape[-1]} != expected {self.input_dim}")
        return d

    def forward(self, d):
        d = self._check(d)
        hidden = np.tanh(d @ self.W1 + self.b1)
        return sigmoid(hidden @ self.W2 + self.b2)[..., 0]

    def loss_and_grads(self, d, labels, weights=None):
        """Binary cross-entropy against 0/1 drowsy labels."""
        d = self._check(d)
        y = np.asarray(labels, dtype=float)
        w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
        w = w / w.sum()
        hidden = np.tanh(d @ self.W1 + self.b1)
        z = (hidden @ self.W2 + self.b2)[:, 0]
        r = sigmoid(z)
        # log(1 + e^z) - y z is the same loss without log(0) when r saturates
        loss = float((w * (np.logaddexp(0, z) - y * z)).sum())
        dlogit = (w * (r - y))[:, None]
        dhidden = dlogit @ self.W2.T * (1 - hidden * hidden)
        return loss, {"W1": d.T @ dhidden, "b1": dhidden.sum(axis=0),
                      "W2": hidden.T @ dlogit, "b2": dlogit.sum(axis=0)}


def fuse(p_short, p_long, dnn: FusionDnn) -> float:
    """Drowsiness probability from the concatenated branch probability vectors."""
    d = np.concatenate([np.ravel(p_short), np.ravel(p_long)])
    return float(dnn.forward(d))


@dataclass
class GradientReport:
    max_rel_error: float
    worst: str
    checked: int
    grad_norm: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def gradient_check(model, x, y, tolerance: float = 1e-4, step: float = 1e-5,
                   floor: float = 1e-6) -> GradientReport:
    """Compare analytic gradients with central differences over every parameter entry.

    ``model`` is an ``LstmStack`` (labels for the last timestep) or a
    ``FusionDnn`` (0/1 labels). Relative error is ``|a - n| / max(|a| + |n|, floor)``;
    the floor keeps round-off in near-zero gradients from dominating.
    Batch-norm running statistics are left untouched. Work in float64.
    """
    if isinstance(model, LstmStack):
        loss_fn = lambda: model.loss_and_grads(x, y, "last", update_stats=False)
    else:
        loss_fn = lambda: model.loss_and_grads(x, y)
    _, grads = loss_fn()
    worst, worst_name, checked = 0.0, "", 0
    for name, p in model.params().items():
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            plus = loss_fn()[0]
            p[idx] = old - step
            minus = loss_fn()[0]
            p[idx] = old
            numeric = (plus - minus) / (2 * step)
            analytic = grads[name][idx]
            rel = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)
            checked += 1
            if rel > worst:
                worst, worst_name = rel, f"{name}{list(idx)}"
    norm = math.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
    return GradientReport(worst, worst_name, checked, norm, tolerance)

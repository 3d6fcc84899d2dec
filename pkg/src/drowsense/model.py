"""Architecture menu and the assembled detector model (branches + fusion)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import DSPConfig
from .neural import FusionDnn, LstmStack, StackSpec, classify

NORMAL = "Normal"
SHORT_CLASSES = (NORMAL, "Nodding", "Yawning")
LONG_CLASSES = (NORMAL, "OperatingSW")
ALL_CLASSES = (NORMAL, "Nodding", "Yawning", "OperatingSW")
SHORT_STEPS = 11
LONG_STEPS = 28


def architecture(name: str, hidden: int = 64) -> list[StackSpec]:
    """Branch layout for one of the five network structures.

    Single-network variants see the long 28-frame window and all four
    classes; dual-network variants split short (nodding/yawning) and long
    (steering) horizons.
    """
    short = lambda layers: StackSpec("short", layers, SHORT_STEPS, SHORT_CLASSES, hidden)
    long = lambda layers: StackSpec("long", layers, LONG_STEPS, LONG_CLASSES, hidden)
    single = lambda layers: StackSpec("single", layers, LONG_STEPS, ALL_CLASSES, hidden)
    table = {
        "2-LSTM-DNN": lambda: [single(2)],
        "3-LSTM-DNN": lambda: [single(3)],
        "2-2-LSTM-DNN": lambda: [short(2), long(2)],
        "2-3-LSTM-DNN": lambda: [short(2), long(3)],
        "3-3-LSTM-DNN": lambda: [short(3), long(3)],
    }
    if name not in table:
        raise ValueError(f"unknown architecture {name!r}; choose from {sorted(table)}")
    return table[name]()


ARCHITECTURES = ("2-LSTM-DNN", "3-LSTM-DNN", "2-2-LSTM-DNN", "2-3-LSTM-DNN", "3-3-LSTM-DNN")
DEFAULT_ARCH = "2-3-LSTM-DNN"


def branch_label(action: str, classes: tuple[str, ...]) -> int:
    """Index of ``action`` in a branch's class table; actions the branch does not know map to Normal."""
    return classes.index(action) if action in classes else classes.index(NORMAL)


@dataclass
class FrameOutput:
    probs: list[np.ndarray]
    drowsy: float
    action: str


class DrowsinessModel:
    """Trained branches plus fusion, bound to the DSP configuration they were trained on."""

    def __init__(self, arch: str, branches: list[LstmStack], fusion: FusionDnn, dsp: DSPConfig,
                 encoding: str = "sincos"):
        self.arch = arch
        self.branches = branches
        self.fusion = fusion
        self.dsp = dsp
        self.encoding = encoding

    @classmethod
    def initialise(cls, arch: str = DEFAULT_ARCH, dsp: DSPConfig = DSPConfig(), hidden: int = 64,
                   fusion_hidden: int = 16, encoding: str = "sincos", seed: int = 0,
                   dtype=np.float64, input_dim: int | None = None) -> "DrowsinessModel":
        specs = architecture(arch, hidden)
        dim = dsp.dim if input_dim is None else input_dim
        branches = [LstmStack(s, dim, encoding, seed=seed + 101 * k, dtype=dtype)
                    for k, s in enumerate(specs)]
        fusion = FusionDnn(sum(len(s.classes) for s in specs), fusion_hidden, seed=seed + 7, dtype=dtype)
        return cls(arch, branches, fusion, dsp, encoding)

    @property
    def max_timesteps(self) -> int:
        return max(b.timesteps for b in self.branches)

    @property
    def input_dim(self) -> int:
        return self.branches[0].input_dim

    def window(self, history: np.ndarray, timesteps: int) -> np.ndarray:
        """Last ``timesteps`` rows of ``history``, left-padded with zeros."""
        history = np.asarray(history, dtype=float)
        if history.ndim != 2 or history.shape[1] != self.input_dim:
            raise ValueError(f"history must be (frames, {self.input_dim})")
        tail = history[-timesteps:]
        pad = np.zeros((timesteps - len(tail), self.input_dim))
        return np.concatenate([pad, tail])

    def step(self, history: np.ndarray) -> FrameOutput:
        """Outputs for the newest row of ``history`` (rows are frames, oldest first)."""
        probs = [b.forward(self.window(history, b.timesteps)[None])[0, -1] for b in self.branches]
        r = float(self.fusion.forward(np.concatenate(probs)))
        return FrameOutput(probs, r, self.frame_action(probs))

    def batch_probs(self, windows: list[np.ndarray], chunk: int = 2048) -> list[np.ndarray]:
        """Branch probabilities for many windows at once; ``windows[k]`` is (N, T_k, dim)."""
        out = []
        for branch, w in zip(self.branches, windows):
            parts = [branch.forward(w[i:i + chunk])[:, -1] for i in range(0, len(w), chunk)]
            out.append(np.concatenate(parts) if parts else np.zeros((0, len(branch.classes))))
        return out

    def frame_action(self, probs) -> str:
        """Most probable non-Normal action across branches, or Normal when every branch says Normal."""
        best, best_p = NORMAL, -1.0
        for branch, p in zip(self.branches, probs):
            label = branch.classes[classify(p)]
            if label != NORMAL and p[classify(p)] > best_p:
                best, best_p = label, float(p[classify(p)])
        return best

    def astype(self, dtype) -> "DrowsinessModel":
        for obj in [*self.branches, self.fusion]:
            _cast(obj, dtype)
        return self


def _cast(obj, dtype):
    if isinstance(obj, LstmStack):
        for bn in obj.norms:
            for name in ("gamma", "beta", "running_mean", "running_var"):
                setattr(bn, name, getattr(bn, name).astype(dtype))
        for layer in obj.lstms:
            layer.W, layer.b = layer.W.astype(dtype), layer.b.astype(dtype)
        obj.head_W, obj.head_b = obj.head_W.astype(dtype), obj.head_b.astype(dtype)
    else:
        for name in ("W1", "b1", "W2", "b2"):
            setattr(obj, name, getattr(obj, name).astype(dtype))

"""Acoustic Doppler drowsy-driving detection.

Synthetic in-cabin recordings, band-pass + undersampled FFT phase features,
numpy LSTM branches fused by a small dense network, and a streaming detector.
"""

from .signal import AudioBuffer, Frame, generate_tone, read_wav, segment_frames, write_wav
from .dsp import DSPConfig, extract_features
from .motion import ActionKind, CorpusSpec, doppler_shift, generate_corpus
from .model import DrowsinessModel
from .detector import StreamState, push_frame

__all__ = [
    "AudioBuffer", "Frame", "generate_tone", "read_wav", "segment_frames", "write_wav",
    "DSPConfig", "extract_features",
    "ActionKind", "CorpusSpec", "doppler_shift", "generate_corpus",
    "DrowsinessModel", "StreamState", "push_frame",
]
__version__ = "0.1.0"

"""On-disk formats: model container, corpus manifest + WAVs, feature dumps, detection streams."""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dsp import DSPConfig
from .model import DrowsinessModel
from .motion import ActionKind, LabeledSample
from .neural import FusionDnn, LstmStack, StackSpec
from .signal import read_wav, write_wav

MODEL_MAGIC = b"DRWSMDL\x00"
MODEL_VERSION = 1
MANIFEST = "manifest.jsonl"
MANIFEST_DIGEST = "manifest.sha256"


class IncompatibleError(ValueError):
    """Version, checksum or DSP-fingerprint mismatch between stored data and the caller."""


# -- model container ---------------------------------------------------------
#
# layout: MAGIC | u32 header length | header JSON (utf-8) | float64 LE payload | 32-byte SHA-256
# of everything before it. The header lists each array's name, shape and payload offset.

def _model_arrays(model: DrowsinessModel) -> dict[str, np.ndarray]:
    arrays = {}
    for k, branch in enumerate(model.branches):
        for name, arr in {**branch.params(), **branch.buffers()}.items():
            arrays[f"branch{k}.{name}"] = arr
    for name, arr in model.fusion.params().items():
        arrays[f"fusion.{name}"] = arr
    return arrays


def save_model(path, model: DrowsinessModel) -> None:
    arrays = _model_arrays(model)
    manifest, offset = [], 0
    for name, arr in arrays.items():
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "version": MODEL_VERSION,
        "arch": model.arch,
        "encoding": model.encoding,
        "branches": [asdict(b.spec) for b in model.branches],
        "fusion": {"input_dim": model.fusion.input_dim, "hidden": int(model.fusion.W1.shape[1])},
        "input_dim": model.input_dim,
        "dsp": model.dsp.to_dict(),
        "dsp_fingerprint": model.dsp.fingerprint(),
        "arrays": manifest,
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = io.BytesIO()
    body.write(MODEL_MAGIC)
    body.write(struct.pack("<I", len(head)))
    body.write(head)
    for arr in arrays.values():
        body.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    blob = body.getvalue()
    Path(path).write_bytes(blob + hashlib.sha256(blob).digest())


def load_model(path, expect_dsp: DSPConfig | None = None) -> DrowsinessModel:
    blob = Path(path).read_bytes()
    if len(blob) < len(MODEL_MAGIC) + 36 or not blob.startswith(MODEL_MAGIC):
        raise IncompatibleError(f"{path}: not a model file")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise IncompatibleError(f"{path}: checksum mismatch (file corrupted or modified)")
    (hlen,) = struct.unpack_from("<I", payload, len(MODEL_MAGIC))
    start = len(MODEL_MAGIC) + 4
    header = json.loads(payload[start:start + hlen])
    if header.get("version") != MODEL_VERSION:
        raise IncompatibleError(f"{path}: model version {header.get('version')}, expected {MODEL_VERSION}")
    dsp = DSPConfig.from_dict(header["dsp"])
    if dsp.fingerprint() != header["dsp_fingerprint"]:
        raise IncompatibleError(f"{path}: stored DSP fingerprint does not match its own configuration")
    if expect_dsp is not None and expect_dsp.fingerprint() != header["dsp_fingerprint"]:
        raise IncompatibleError(f"{path}: trained for DSP config {header['dsp_fingerprint']}, "
                                f"caller uses {expect_dsp.fingerprint()}")
    data = payload[start + hlen:]
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arrays[entry["name"]] = np.frombuffer(data, "<f8", count, entry["offset"]).reshape(entry["shape"])
    branches = []
    for k, spec in enumerate(header["branches"]):
        spec = StackSpec(spec["name"], spec["layers"], spec["timesteps"], tuple(spec["classes"]), spec["hidden"])
        branch = LstmStack(spec, header["input_dim"], header["encoding"])
        for name, arr in {**branch.params(), **branch.buffers()}.items():
            arr[...] = arrays[f"branch{k}.{name}"]
        branches.append(branch)
    fusion = FusionDnn(header["fusion"]["input_dim"], header["fusion"]["hidden"])
    for name, arr in fusion.params().items():
        arr[...] = arrays[f"fusion.{name}"]
    return DrowsinessModel(header["arch"], branches, fusion, dsp, header["encoding"])


# -- corpus on disk ------------------------------------------------------------

def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_dataset(samples, out_dir, extra: dict | None = None) -> int:
    """Write one WAV per sample and a JSON-lines manifest; returns the number of samples written."""
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    count = 0
    with open(out / MANIFEST, "w") as fh:
        for k, sample in enumerate(samples):
            rel = f"wav/{k:05d}_{sample.action.value}.wav"
            write_wav(out / rel, sample.audio)
            record = {
                "id": k,
                "wav_path": rel,
                "action": sample.action.value,
                "interval": None if sample.action_interval is None else list(sample.action_interval),
                "steps": list(sample.step_labels),
                "frame_length": sample.frame_length,
                "seed": sample.seed,
                "params": sample.params,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            count += 1
    (out / MANIFEST_DIGEST).write_text(_digest(out / MANIFEST) + "\n")
    if extra is not None:
        (out / "corpus.json").write_text(json.dumps(extra, indent=2, sort_keys=True))
    return count


def read_manifest(corpus_dir) -> list[dict]:
    root = Path(corpus_dir)
    manifest = root / MANIFEST
    if not manifest.exists():
        raise FileNotFoundError(f"{manifest} not found")
    digest_file = root / MANIFEST_DIGEST
    if not digest_file.exists() or digest_file.read_text().strip() != _digest(manifest):
        raise IncompatibleError(f"{manifest}: checksum mismatch")
    return [json.loads(line) for line in manifest.read_text().splitlines() if line.strip()]


def load_dataset(corpus_dir):
    """Yield ``LabeledSample`` objects in manifest order (audio is read lazily, one file at a time)."""
    root = Path(corpus_dir)
    for record in read_manifest(root):
        interval = record["interval"]
        yield LabeledSample(read_wav(root / record["wav_path"]), ActionKind.parse(record["action"]),
                            None if interval is None else tuple(interval), tuple(record["steps"]),
                            seed=record["seed"], params=record["params"],
                            frame_length=record["frame_length"])


# -- feature dumps -----------------------------------------------------------------

def save_features(path, matrix: np.ndarray, config: DSPConfig) -> None:
    """CSV matrix, one row per frame, preceded by a ``#`` line holding the DSP header as JSON."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    header = {"fs": config.fs, "n": config.n, "band": [config.band.f_low, config.band.f_high],
              "fft_size": config.fft_size, "dim": config.dim, "frame_length": config.frame_length,
              "fingerprint": config.fingerprint(), "dsp": config.to_dict()}
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        np.savetxt(fh, matrix, delimiter=",", fmt="%.17g")


def load_features(path) -> tuple[np.ndarray, DSPConfig]:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise IncompatibleError(f"{path}: missing feature header")
        header = json.loads(first[2:])
        matrix = np.loadtxt(fh, delimiter=",", ndmin=2)
    config = DSPConfig.from_dict(header["dsp"])
    if matrix.size and matrix.shape[1] != header["dim"]:
        raise IncompatibleError(f"{path}: {matrix.shape[1]} columns, header says {header['dim']}")
    return matrix.reshape(-1, header["dim"]), config


def write_detections(stream, detections) -> None:
    for det in detections:
        stream.write(json.dumps(det.to_record()) + "\n")

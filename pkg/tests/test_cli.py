import json

import numpy as np
import pytest
import yaml

from drowsense.cli import main
from drowsense.motion import ActionKind, motion_profile, place_in_clip, synthesize_received
from drowsense.signal import write_wav

FAST = {"train": {"hidden": 4, "fusion_hidden": 4, "epochs": 1, "fusion_epochs": 2, "batch_size": 32}}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "fast.yaml"
    cfg.write_text(yaml.safe_dump(FAST))
    corpus = root / "corpus"
    assert main(["gen-data", "--per-class", "2", "--seed", "7", "--out", str(corpus)]) == 0
    model = root / "model.bin"
    assert main(["train", "--corpus", str(corpus), "--arch", "2-3-LSTM-DNN", "--config", str(cfg),
                 "--out", str(model)]) == 0
    wav = root / "drive.wav"
    profile = motion_profile(ActionKind.NODDING)
    clip = place_in_clip(profile, 8.0, 4.0, np.random.default_rng(0))
    write_wav(wav, synthesize_received(clip).audio)
    return {"root": root, "cfg": cfg, "corpus": corpus, "model": model, "wav": wav}


def test_gen_data_writes_manifest(workspace):
    corpus = workspace["corpus"]
    lines = (corpus / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 8
    assert len(list((corpus / "wav").glob("*.wav"))) == 8
    assert json.loads((corpus / "corpus.json").read_text())["seed"] == 7


def test_train_writes_model_and_history(workspace):
    assert workspace["model"].exists()
    history = json.loads(workspace["model"].with_suffix(".train.json").read_text())
    assert set(history["branches"]) == {"short", "long"}


def test_detect_wav_streams_records(workspace, capsys):
    assert main(["detect", "--model", str(workspace["model"]), "--wav", str(workspace["wav"])]) == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert len(rows) == 32
    assert [r["frame_index"] for r in rows] == list(range(32))
    assert all(0 < r["R"] < 1 for r in rows)


def test_extract_then_detect_features_matches_wav(workspace, capsys):
    feats = workspace["root"] / "drive.csv"
    assert main(["extract", "--wav", str(workspace["wav"]), "--out", str(feats)]) == 0
    capsys.readouterr()
    main(["detect", "--model", str(workspace["model"]), "--wav", str(workspace["wav"])])
    from_wav = capsys.readouterr().out
    main(["detect", "--model", str(workspace["model"]), "--features", str(feats)])
    assert capsys.readouterr().out == from_wav


def test_eval_with_saved_model(workspace, capsys):
    out = workspace["root"] / "report"
    assert main(["eval", "--model", str(workspace["model"]), "--corpus", str(workspace["corpus"]),
                 "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert {"per_action_accuracy", "drowsy_accuracy", "timeliness"} <= set(report["results"])
    assert (out / "latency_cdf.csv").exists()
    assert "resolved config" in capsys.readouterr().err


def test_output_root_env(workspace, monkeypatch, tmp_path):
    monkeypatch.setenv("DROWSENSE_OUT", str(tmp_path))
    assert main(["extract", "--wav", str(workspace["wav"]), "--out", "f.csv"]) == 0
    assert (tmp_path / "f.csv").exists()


def test_bench_runs(capsys):
    assert main(["bench", "--frames", "3"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["frames"] == 3 and stats["p99_s"] > 0


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code != 0
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--out", "x", "--bogus"])
    assert exc.value.code != 0
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--model", "m.bin"])
    assert exc.value.code != 0


def test_missing_input_reports_error(tmp_path, capsys):
    assert main(["train", "--corpus", str(tmp_path / "nothing"), "--out", str(tmp_path / "m.bin")]) == 2
    assert "error" in capsys.readouterr().err

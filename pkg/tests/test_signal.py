import wave

import numpy as np
import pytest
from hypothesis import given, strategies as st

from drowsense.signal import (AudioBuffer, WavFormatError, generate_tone, read_wav, segment_frames,
                              write_wav)


def test_tone_starts_at_cosine_peak():
    tone = generate_tone(20000, 44100, 1.0, 1.0)
    assert len(tone) == 44100
    assert tone.samples[0] == 1.0


def test_tone_peak_bin_is_carrier():
    tone = generate_tone(20000, 44100, 1.0, 1.0)
    spectrum = np.abs(np.fft.rfft(tone.samples))
    freqs = np.fft.rfftfreq(len(tone), 1 / 44100)
    assert abs(freqs[np.argmax(spectrum)] - 20000) <= freqs[1]


def test_zero_amplitude_tone_is_silent():
    assert not np.any(generate_tone(20000, 44100, 0.5, 0.0).samples)


@pytest.mark.parametrize("f0", [22050, 30000, 0, -5])
def test_tone_rejects_out_of_range_carrier(f0):
    with pytest.raises(ValueError):
        generate_tone(f0, 44100, 1.0)


@given(st.integers(1, 22049))
def test_tone_spectral_purity(f0):
    # one-second buffer: every integer frequency is bin-aligned
    x = generate_tone(float(f0), 44100, 1.0).samples
    power = np.abs(np.fft.rfft(x)) ** 2
    assert power[max(f0 - 2, 0):f0 + 3].sum() >= 0.99 * power.sum()


def test_buffer_rejects_nan_and_bad_rate():
    with pytest.raises(ValueError):
        AudioBuffer(np.array([0.0, np.nan]), 44100)
    with pytest.raises(ValueError):
        AudioBuffer(np.zeros(4), 0)


def test_buffer_duration_exact():
    assert AudioBuffer(np.zeros(11025), 44100).duration == 0.25


@pytest.mark.parametrize("seconds, expected", [(1.0, 4), (0.25, 1), (0.999, 3), (0.2, 0)])
def test_segment_counts(seconds, expected):
    buf = AudioBuffer(np.zeros(int(round(seconds * 44100))), 44100)
    frames = segment_frames(buf, 0.25)
    assert len(frames) == expected
    assert all(len(f) == 11025 for f in frames)
    assert [f.start_time for f in frames] == [0.25 * i for i in range(expected)]


@given(st.integers(0, 60000), st.sampled_from([0.1, 0.25, 0.3]))
def test_segments_partition_prefix(n, frame_length):
    x = np.arange(n, dtype=float) / max(n, 1)
    frames = segment_frames(AudioBuffer(x, 44100), frame_length)
    joined = np.concatenate([f.samples for f in frames]) if frames else np.zeros(0)
    np.testing.assert_array_equal(joined, x[:len(joined)])
    assert [f.index for f in frames] == list(range(len(frames)))


def test_wav_silence(tmp_path):
    path = tmp_path / "silence.wav"
    write_wav(path, AudioBuffer(np.zeros(44100), 44100))
    back = read_wav(path)
    assert len(back) == 44100 and back.sample_rate == 44100
    assert not np.any(back.samples)


def test_wav_tone_roundtrip_within_quantisation(tmp_path):
    tone = generate_tone(20000, 44100, 1.0, 1.0)
    write_wav(tmp_path / "t.wav", tone)
    back = read_wav(tmp_path / "t.wav")
    assert np.max(np.abs(back.samples - tone.samples)) <= 2 ** -15


@given(st.lists(st.integers(-32768, 32767), min_size=1, max_size=400))
def test_wav_rewrite_is_bit_exact(tmp_path_factory, pcm):
    d = tmp_path_factory.mktemp("wav")
    raw = np.array(pcm, dtype="<i2")
    with wave.open(str(d / "a.wav"), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(8000)
        w.writeframes(raw.tobytes())
    write_wav(d / "b.wav", read_wav(d / "a.wav"))
    assert (d / "a.wav").read_bytes() == (d / "b.wav").read_bytes()


def test_wav_clip_policy(tmp_path):
    loud = AudioBuffer(np.array([1.5, -2.0, 0.5]), 8000)
    with pytest.raises(ValueError):
        write_wav(tmp_path / "x.wav", loud, clip=False)
    write_wav(tmp_path / "x.wav", loud)
    np.testing.assert_allclose(read_wav(tmp_path / "x.wav").samples, [32767 / 32768, -1.0, 0.5])


def test_wav_rejects_stereo_and_8bit(tmp_path):
    for channels, width in [(2, 2), (1, 1)]:
        path = tmp_path / f"{channels}_{width}.wav"
        with wave.open(str(path), "wb") as w:
            w.setnchannels(channels)
            w.setsampwidth(width)
            w.setframerate(8000)
            w.writeframes(b"\x00" * 8 * channels * width)
        with pytest.raises(WavFormatError):
            read_wav(path)


def test_wav_rejects_garbage(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"RIFF\x00\x00\x00\x00NOPE")
    with pytest.raises(WavFormatError):
        read_wav(path)
    float_wav = tmp_path / "float.wav"
    # RIFF header with format code 3 (IEEE float)
    fmt = (b"fmt " + (16).to_bytes(4, "little") + (3).to_bytes(2, "little") + (1).to_bytes(2, "little")
           + (8000).to_bytes(4, "little") + (32000).to_bytes(4, "little") + (4).to_bytes(2, "little")
           + (32).to_bytes(2, "little"))
    data = b"data" + (4).to_bytes(4, "little") + b"\x00\x00\x00\x00"
    float_wav.write_bytes(b"RIFF" + (4 + len(fmt) + len(data)).to_bytes(4, "little") + b"WAVE" + fmt + data)
    with pytest.raises(WavFormatError):
        read_wav(float_wav)

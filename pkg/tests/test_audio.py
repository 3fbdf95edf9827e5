import struct

import numpy as np
import pytest

from rirbench.audio import (
    AudioBuffer,
    ImpulseResponse,
    WavFormatError,
    WavParseError,
    convolve,
    lowpass_anchor,
    parse_wav_bytes,
    peak_normalize,
    read_wav,
    resample,
    wav_bytes,
    write_wav,
)
from rirbench.errors import ValidationError

from conftest import sine


def make_pcm16_wav(samples, rate, channels=1):
    payload = np.asarray(samples, dtype="<i2").tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, channels, rate, rate * 2 * channels, 2 * channels, 16)
    header += b"data" + struct.pack("<I", len(payload))
    return header + payload


class TestBuffers:
    def test_invariants(self):
        with pytest.raises(ValidationError):
            AudioBuffer([], 16000)
        with pytest.raises(ValidationError):
            AudioBuffer([0.1, np.nan], 16000)
        with pytest.raises(ValidationError):
            AudioBuffer([0.1], 0)
        with pytest.raises(ValidationError):
            AudioBuffer(np.zeros((4, 3)), 16000)

    def test_channels_and_duration(self):
        mono = AudioBuffer(np.zeros(8000) + 0.1, 16000)
        stereo = AudioBuffer(np.zeros((8000, 2)) + 0.1, 16000)
        assert mono.channels == 1 and stereo.channels == 2
        assert mono.duration == 0.5


class TestWavIO:
    def test_pcm16_constant_half_scale(self, tmp_path):
        # full-scale/2 integers decode to 0.5 exactly under the /2^15 rule
        path = tmp_path / "c.wav"
        path.write_bytes(make_pcm16_wav(np.full(16000, 16384), 16000))
        buf = read_wav(path)
        assert len(buf) == 16000 and buf.sample_rate == 16000
        assert np.allclose(buf.samples, 0.5)

    def test_pcm16_round_trip_tolerance(self, tmp_path):
        rng = np.random.default_rng(0)
        buf = AudioBuffer(rng.uniform(-0.99, 0.99, 5000), 22050)
        path = tmp_path / "rt.wav"
        clips = write_wav(path, buf, "pcm16")
        assert clips == 0
        back = read_wav(path)
        assert np.max(np.abs(back.samples - buf.samples)) <= 1.0 / 2**15

    def test_float32_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        samples = rng.standard_normal(3000).astype(np.float32).astype(np.float64)
        buf = AudioBuffer(samples, 48000)
        path = tmp_path / "f.wav"
        assert write_wav(path, buf, "float32") == 0
        back = read_wav(path)
        assert np.array_equal(back.samples, buf.samples)

    def test_pcm16_clipping_saturates_and_counts(self):
        data, clips = wav_bytes(AudioBuffer([1.5, 0.0, -0.5], 8000), "pcm16")
        assert clips == 1
        back = parse_wav_bytes(data)
        assert back.samples[0] == 32767 / 32768

    def test_empty_file_is_parse_error(self, tmp_path):
        path = tmp_path / "empty.wav"
        path.write_bytes(b"")
        with pytest.raises(WavParseError, match="byte offset"):
            read_wav(path)

    def test_truncated_data_chunk(self, tmp_path):
        data = make_pcm16_wav(np.arange(100, dtype=np.int16), 8000)
        path = tmp_path / "t.wav"
        path.write_bytes(data[:-17])
        with pytest.raises(WavParseError, match="byte offset"):
            read_wav(path)

    def test_unsupported_codec_named(self):
        payload = b"\x00" * 16
        data = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
        data += b"fmt " + struct.pack("<IHHIIHH", 16, 7, 1, 8000, 8000, 1, 8)
        data += b"data" + struct.pack("<I", len(payload)) + payload
        with pytest.raises(WavFormatError, match="mu-law"):
            parse_wav_bytes(data)

    def test_pcm24_round_trip(self):
        # hand-encode one PCM24 frame per value
        values = np.array([0x400000, -0x400000, 0], dtype=np.int64)
        raw = b"".join(int(v & 0xFFFFFF).to_bytes(3, "little") for v in values)
        data = b"RIFF" + struct.pack("<I", 36 + len(raw)) + b"WAVE"
        data += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, 16000, 48000, 3, 24)
        data += b"data" + struct.pack("<I", len(raw)) + raw
        buf = parse_wav_bytes(data)
        assert np.allclose(buf.samples, [0.5, -0.5, 0.0])

    def test_stereo_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        buf = AudioBuffer(rng.uniform(-0.9, 0.9, (500, 2)), 44100)
        path = tmp_path / "s.wav"
        write_wav(path, buf, "float32")
        back = read_wav(path)
        assert back.channels == 2
        assert np.allclose(back.samples, buf.samples, atol=1e-7)

    def test_write_rejects_unknown_format(self):
        with pytest.raises(ValidationError):
            wav_bytes(AudioBuffer([0.1], 8000), "mp3")


class TestConvolve:
    def test_delta_identity(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(1000)
        delta = np.zeros(32)
        delta[0] = 1.0
        out = convolve(AudioBuffer(x, 16000), ImpulseResponse(delta, 16000))
        assert len(out) == 1000 + 31
        assert np.max(np.abs(out.samples[:1000] - x)) < 1e-7
        assert np.max(np.abs(out.samples[1000:])) < 1e-7

    def test_hand_convolution(self):
        out = convolve(AudioBuffer([1.0, 2.0, 3.0], 8000), ImpulseResponse([1.0, 1.0], 8000))
        assert np.allclose(out.samples, [1.0, 3.0, 5.0, 3.0])

    def test_matches_direct_convolution(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(-1, 1, 4096)
        h = rng.uniform(-1, 1, 512)
        out = convolve(AudioBuffer(x, 16000), ImpulseResponse(h, 16000))
        assert np.max(np.abs(out.samples - np.convolve(x, h))) < 1e-6

    def test_oracle_equivalence_random_sizes(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            n = int(rng.integers(1, 4097))
            m = int(rng.integers(1, 513))
            x = rng.uniform(-1, 1, n)
            h = rng.uniform(-1, 1, m)
            out = convolve(AudioBuffer(x, 8000), ImpulseResponse(h, 8000))
            assert np.max(np.abs(out.samples - np.convolve(x, h))) < 1e-6

    def test_linearity(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(-1, 1, 2048)
        b = rng.uniform(-1, 1, 2048)
        h = ImpulseResponse(rng.uniform(-1, 1, 333), 8000)
        left = convolve(AudioBuffer(a, 8000), h).samples + convolve(AudioBuffer(b, 8000), h).samples
        right = convolve(AudioBuffer(a + b, 8000), h).samples
        assert np.max(np.abs(left - right)) < 1e-5

    def test_shifted_delta_delays(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal(500)
        k = 37
        h = np.zeros(64)
        h[k] = 1.0
        out = convolve(AudioBuffer(x, 8000), ImpulseResponse(h, 8000)).samples
        assert np.max(np.abs(out[k : k + 500] - x)) < 1e-7

    def test_rate_mismatch(self):
        with pytest.raises(ValidationError, match="16000.*8000|8000.*16000"):
            convolve(AudioBuffer([0.1], 16000), ImpulseResponse([1.0], 8000))

    def test_channel_routing(self):
        rng = np.random.default_rng(8)
        mono = AudioBuffer(rng.standard_normal(100), 8000)
        stereo = AudioBuffer(rng.standard_normal((100, 2)), 8000)
        rir_m = ImpulseResponse(rng.standard_normal(16), 8000)
        rir_s = ImpulseResponse(rng.standard_normal((16, 2)), 8000)
        assert convolve(stereo, rir_m).channels == 2
        assert convolve(mono, rir_s).channels == 2
        with pytest.raises(ValidationError):
            convolve(stereo, rir_s)

    def test_long_rir_falls_back_to_full_fft(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(-1, 1, 2000)
        h = rng.uniform(-1, 1, 20000)  # longer than the overlap-add block cap / 4
        out = convolve(AudioBuffer(x, 48000), ImpulseResponse(h, 48000))
        assert np.max(np.abs(out.samples - np.convolve(x, h))) < 1e-6


class TestResample:
    def test_identity(self):
        buf = sine(440, 16000)
        out = resample(buf, 16000)
        assert out.sample_rate == 16000
        assert np.array_equal(out.samples, buf.samples)

    def test_sine_survives_downsample(self):
        buf = sine(1000, 48000, 1.0)
        out = resample(buf, 16000)
        assert len(out) == 16000
        n = len(out)
        lo, hi = n // 10, n - n // 10
        t = np.arange(n) / 16000
        ref = 0.8 * np.sin(2 * np.pi * 1000 * t)
        err = np.sqrt(np.mean((out.samples[lo:hi] - ref[lo:hi]) ** 2)) / np.sqrt(np.mean(ref[lo:hi] ** 2))
        assert err < 0.01

    def test_sine_survives_upsample(self):
        buf = sine(2000, 16000, 0.5)
        out = resample(buf, 44100)
        n = len(out)
        lo, hi = n // 10, n - n // 10
        t = np.arange(n) / 44100
        ref = 0.8 * np.sin(2 * np.pi * 2000 * t)
        rms_out = np.sqrt(np.mean(out.samples[lo:hi] ** 2))
        rms_ref = np.sqrt(np.mean(ref[lo:hi] ** 2))
        assert abs(rms_out / rms_ref - 1.0) < 0.01

    def test_single_sample(self):
        out = resample(AudioBuffer([0.5], 16000), 48000)
        assert len(out) == 3  # ceil(48000/16000)

    def test_output_length(self):
        out = resample(AudioBuffer(np.zeros(16000) + 0.1, 16000), 10000)
        assert len(out) == 10000

    def test_invalid_rate(self):
        with pytest.raises(ValidationError):
            resample(AudioBuffer([0.1], 8000), 0)

    def test_preserves_buffer_type(self):
        rir = ImpulseResponse([0.0, 1.0, 0.5, 0.0], 48000)
        assert isinstance(resample(rir, 16000), ImpulseResponse)


class TestLowpassAnchor:
    def test_passband_sine(self):
        out = lowpass_anchor(sine(1000, 16000))
        rms_in, rms_out = 0.8 / np.sqrt(2), np.sqrt(np.mean(out.samples[2000:-2000] ** 2))
        assert abs(20 * np.log10(rms_out / rms_in)) < 0.5

    def test_stopband_sine(self):
        out = lowpass_anchor(sine(6000, 16000))
        assert np.sqrt(np.mean(out.samples**2)) <= 0.01 * (0.8 / np.sqrt(2))

    def test_attenuation_at_1p25_cutoff(self):
        out = lowpass_anchor(sine(4375, 48000))
        rms = np.sqrt(np.mean(out.samples[4000:-4000] ** 2))
        assert 20 * np.log10(rms / (0.8 / np.sqrt(2))) <= -40

    def test_zero_in_zero_out(self):
        buf = AudioBuffer(np.zeros(4000) + 0.0, 16000)

        out = lowpass_anchor(buf)
        assert np.allclose(out.samples, 0.0)

    def test_group_delay_compensated(self):
        # a lowpassed click should stay centered where it was
        x = np.zeros(4001)
        x[2000] = 1.0
        out = lowpass_anchor(AudioBuffer(x, 16000))
        assert len(out) == 4001
        assert np.argmax(np.abs(out.samples)) == 2000

    def test_idempotent_in_passband(self):
        buf = sine(1000, 16000)
        once = lowpass_anchor(buf)
        twice = lowpass_anchor(once)
        r1 = np.sqrt(np.mean(once.samples[2000:-2000] ** 2))
        r2 = np.sqrt(np.mean(twice.samples[2000:-2000] ** 2))
        assert abs(20 * np.log10(r2 / r1)) < 0.5

    def test_low_rate_rejected(self):
        with pytest.raises(ValidationError, match="Nyquist"):
            lowpass_anchor(AudioBuffer([0.1, 0.2], 7000))


class TestPeakNormalize:
    def test_scales_up(self):
        out = peak_normalize(AudioBuffer([0.45, -0.1], 8000))
        assert np.allclose(out.samples, [0.9, -0.2])

    def test_already_at_target(self):
        buf = AudioBuffer([0.9, -0.45], 8000)
        out = peak_normalize(buf)
        assert np.allclose(out.samples, buf.samples)

    def test_scales_down(self):
        out = peak_normalize(AudioBuffer([1.8, 0.9], 8000))
        assert np.allclose(out.samples, [0.9, 0.45])

    def test_silent_rejected(self):
        with pytest.raises(ValidationError, match="silent"):
            peak_normalize(AudioBuffer(np.zeros(10) + 0.0, 8000))

"""Audio containers, WAV file I/O, convolution, resampling, and filters.

Everything downstream (acoustic analysis, room simulation, listening-test
stimulus preparation, intelligibility metrics) works on the two containers
defined here. All operations are pure functions over immutable buffers and
are safe to call from multiple threads.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import upfirdn

from .errors import ValidationError


class WavFormatError(ValidationError):
    """The file is a WAV we do not support (codec, bit depth, channel count)."""


class WavParseError(ValidationError):
    """The file is structurally broken (truncated, missing chunks)."""


def _canonical_samples(samples) -> np.ndarray:
    a = np.asarray(samples, dtype=np.float64)
    if a.ndim == 2 and a.shape[1] == 1:
        a = a[:, 0]
    if a.ndim not in (1, 2):
        raise ValidationError(f"samples must be 1-D or 2-D, got shape {a.shape}")
    if a.ndim == 2 and a.shape[1] != 2:
        raise ValidationError(f"only mono or stereo supported, got {a.shape[1]} channels")
    if a.shape[0] == 0:
        raise ValidationError("empty signal")
    if not np.all(np.isfinite(a)):
        raise ValidationError("samples contain NaN or Inf")
    a = np.array(a, dtype=np.float64, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """A sampled signal: float samples, shape (n,) mono or (n, 2) stereo."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        object.__setattr__(self, "samples", _canonical_samples(self.samples))
        rate = int(self.sample_rate)
        if rate <= 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "sample_rate", rate)

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def mono(self) -> np.ndarray:
        """Channel-averaged 1-D view of the samples."""
        if self.samples.ndim == 1:
            return self.samples
        return self.samples.mean(axis=1)


class ImpulseResponse(AudioBuffer):
    """A room impulse response; same container, distinct role."""


def _like(buffer: AudioBuffer, samples, sample_rate=None) -> AudioBuffer:
    return type(buffer)(samples, sample_rate or buffer.sample_rate)


# ---------------------------------------------------------------------------
# WAV (RIFF) reading and writing.  PCM16 / PCM24 / IEEE float32 in,
# PCM16 / float32 out.  Hand-rolled so parse errors can carry byte offsets
# and codec names.

_TAG_NAMES = {
    0x0002: "ADPCM",
    0x0006: "A-law",
    0x0007: "mu-law",
    0x0011: "IMA ADPCM",
    0x0055: "MP3",
}


def parse_wav_bytes(data: bytes, source: str = "<bytes>") -> AudioBuffer:
    """Decode a RIFF/WAVE byte string into an AudioBuffer."""
    if len(data) < 12:
        raise WavParseError(f"{source}: truncated RIFF header, file ends at byte offset {len(data)}")
    if data[0:4] != b"RIFF":
        raise WavFormatError(f"{source}: not a RIFF file")
    if data[8:12] != b"WAVE":
        raise WavFormatError(f"{source}: RIFF file is not WAVE")

    fmt = None
    raw = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if body + size > len(data):
            raise WavParseError(
                f"{source}: chunk {chunk_id.decode('ascii', 'replace')!r} declares {size} bytes "
                f"at byte offset {pos} but file ends at {len(data)}"
            )
        if chunk_id == b"fmt ":
            if size < 16:
                raise WavParseError(f"{source}: fmt chunk too short ({size} bytes) at byte offset {pos}")
            tag, channels, rate, _byte_rate, block_align, bits = struct.unpack_from("<HHIIHH", data, body)
            if tag == 0xFFFE:  # WAVE_FORMAT_EXTENSIBLE: real tag leads the GUID
                if size < 40:
                    raise WavParseError(f"{source}: extensible fmt chunk too short at byte offset {pos}")
                (tag,) = struct.unpack_from("<H", data, body + 24)
            fmt = (tag, channels, rate, block_align, bits)
        elif chunk_id == b"data" and raw is None:
            raw = data[body : body + size]
        pos = body + size + (size & 1)

    if fmt is None:
        raise WavParseError(f"{source}: missing fmt chunk")
    if raw is None:
        raise WavParseError(f"{source}: missing data chunk")
    tag, channels, rate, _block_align, bits = fmt
    if channels not in (1, 2):
        raise WavFormatError(f"{source}: only mono/stereo supported, file has {channels} channels")

    if tag == 0x0001:  # integer PCM
        if bits == 16:
            frame_bytes = 2 * channels
            if len(raw) % frame_bytes:
                raise WavParseError(f"{source}: data chunk ends mid-frame ({len(raw)} bytes, frame size {frame_bytes})")
            flat = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
        elif bits == 24:
            frame_bytes = 3 * channels
            if len(raw) % frame_bytes:
                raise WavParseError(f"{source}: data chunk ends mid-frame ({len(raw)} bytes, frame size {frame_bytes})")
            b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
            ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
            ints = np.where(ints & 0x800000, ints - (1 << 24), ints)
            flat = ints.astype(np.float64) / float(1 << 23)
        else:
            raise WavFormatError(f"{source}: unsupported WAV codec: PCM{bits}")
    elif tag == 0x0003:  # IEEE float
        if bits == 32:
            frame_bytes = 4 * channels
            if len(raw) % frame_bytes:
                raise WavParseError(f"{source}: data chunk ends mid-frame ({len(raw)} bytes, frame size {frame_bytes})")
            flat = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        else:
            raise WavFormatError(f"{source}: unsupported WAV codec: IEEE float{bits}")
    else:
        name = _TAG_NAMES.get(tag, f"format tag 0x{tag:04x}")
        raise WavFormatError(f"{source}: unsupported WAV codec: {name}")

    if channels == 2:
        flat = flat.reshape(-1, 2)
    return AudioBuffer(flat, rate)


def read_wav(path) -> AudioBuffer:
    return parse_wav_bytes(Path(path).read_bytes(), source=str(path))


def read_rir(path) -> ImpulseResponse:
    buf = read_wav(path)
    return ImpulseResponse(buf.samples, buf.sample_rate)


def wav_bytes(buffer: AudioBuffer, fmt: str = "float32") -> tuple[bytes, int]:
    """Encode a buffer as WAV bytes.

    Returns (bytes, clip_count); clip_count is nonzero only for pcm16 inputs
    whose samples fall outside [-1, 1] (those are saturated).
    """
    s = buffer.samples
    interleaved = s if s.ndim == 1 else s.reshape(-1)
    clips = 0
    if fmt == "float32":
        payload = interleaved.astype("<f4").tobytes()
        tag, bits = 0x0003, 32
    elif fmt == "pcm16":
        clips = int(np.count_nonzero(np.abs(interleaved) > 1.0))
        q = np.clip(np.round(interleaved * 32768.0), -32768, 32767).astype("<i2")
        payload = q.tobytes()
        tag, bits = 0x0001, 16
    else:
        raise ValidationError(f"unsupported write format {fmt!r}, expected 'pcm16' or 'float32'")

    channels = buffer.channels
    block_align = channels * bits // 8
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, tag, channels, buffer.sample_rate,
        buffer.sample_rate * block_align, block_align, bits,
    )
    header += b"data" + struct.pack("<I", len(payload))
    return header + payload, clips


def write_wav(path, buffer: AudioBuffer, fmt: str = "float32") -> int:
    """Write a WAV file; returns the number of clipped samples (pcm16 only)."""
    data, clips = wav_bytes(buffer, fmt)
    Path(path).write_bytes(data)
    return clips


# ---------------------------------------------------------------------------
# Convolution.

def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())

_OLA_BLOCK_CAP = 1 << 16


def _fft_convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Full linear convolution of two 1-D arrays via FFT overlap-add."""
    n, m = len(x), len(h)
    out_len = n + m - 1
    block = min(_OLA_BLOCK_CAP, _next_pow2(4 * m))
    if m > _OLA_BLOCK_CAP // 4 or out_len <= block:
        # long kernels get a single full-size transform
        nfft = _next_pow2(out_len)
        return np.fft.irfft(np.fft.rfft(x, nfft) * np.fft.rfft(h, nfft), nfft)[:out_len]
    seg = block - m + 1
    H = np.fft.rfft(h, block)
    y = np.zeros(out_len)
    for start in range(0, n, seg):
        chunk = x[start : start + seg]
        yb = np.fft.irfft(np.fft.rfft(chunk, block) * H, block)[: len(chunk) + m - 1]
        y[start : start + len(yb)] += yb
    return y


def convolve(signal: AudioBuffer, rir: ImpulseResponse) -> AudioBuffer:
    """Convolve a signal with an impulse response.

    Mono RIRs are applied to each signal channel; a stereo RIR requires a
    mono signal and renders stereo. Output length is len(signal)+len(rir)-1.
    """
    if signal.sample_rate != rir.sample_rate:
        raise ValidationError(
            f"sample rate mismatch: signal {signal.sample_rate} Hz vs rir {rir.sample_rate} Hz"
        )
    x, h = signal.samples, rir.samples
    if h.ndim == 1:
        if x.ndim == 1:
            out = _fft_convolve(x, h)
        else:
            out = np.stack([_fft_convolve(x[:, c], h) for c in range(2)], axis=1)
    else:
        if x.ndim != 1:
            raise ValidationError("stereo rir requires a mono signal")
        out = np.stack([_fft_convolve(x, h[:, c]) for c in range(2)], axis=1)
    return AudioBuffer(out, signal.sample_rate)


# ---------------------------------------------------------------------------
# Polyphase resampling and FIR filters.

_TAPS_PER_PHASE = 32


def _windowed_sinc(num_taps: int, cutoff: float) -> np.ndarray:
    """Linear-phase lowpass prototype; cutoff in cycles/sample, unity DC gain."""
    k = np.arange(num_taps) - (num_taps - 1) / 2
    h = 2.0 * cutoff * np.sinc(2.0 * cutoff * k) * np.hanning(num_taps)
    return h / h.sum()


def resample(buffer: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Windowed-sinc polyphase resampling to target_rate."""
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValidationError(f"target_rate must be positive, got {target_rate}")
    src = buffer.sample_rate
    if target_rate == src:
        return _like(buffer, buffer.samples)

    g = math.gcd(target_rate, src)
    up, down = target_rate // g, src // g
    num_taps = _TAPS_PER_PHASE * max(up, down) + 1
    h = _windowed_sinc(num_taps, 0.5 / max(up, down)) * up

    n = len(buffer)
    n_out = -((-n * up) // down)  # ceil
    half = (num_taps - 1) // 2
    pre = (-half) % down  # pad so the filter delay is whole output samples
    skip = (half + pre) // down
    needed = (n_out + skip) * down + 1 - ((n - 1) * up + num_taps + pre)
    h_pad = np.concatenate([np.zeros(pre), h, np.zeros(max(0, needed))])

    def _one(x):
        return upfirdn(h_pad, x, up, down)[skip : skip + n_out]

    s = buffer.samples
    if s.ndim == 1:
        out = _one(s)
    else:
        out = np.stack([_one(s[:, c]) for c in range(2)], axis=1)
    return _like(buffer, out, target_rate)


_ANCHOR_CUTOFF_HZ = 3500.0
_ANCHOR_TAPS_AT_48K = 511


def lowpass_anchor(buffer: AudioBuffer) -> AudioBuffer:
    """3.5 kHz linear-phase FIR lowpass used as the degraded listening anchor.

    Group delay is compensated so the output aligns with the input sample for
    sample; attenuation reaches 40 dB well before 1.25x the cutoff.
    """
    rate = buffer.sample_rate
    if rate <= 2 * _ANCHOR_CUTOFF_HZ:
        raise ValidationError("cutoff above Nyquist")
    num_taps = max(63, int(round(_ANCHOR_TAPS_AT_48K * rate / 48000.0)))
    if num_taps % 2 == 0:
        num_taps += 1
    h = _windowed_sinc(num_taps, _ANCHOR_CUTOFF_HZ / rate)
    half = (num_taps - 1) // 2

    def _one(x):
        return _fft_convolve(x, h)[half : half + len(x)]

    s = buffer.samples
    if s.ndim == 1:
        out = _one(s)
    else:
        out = np.stack([_one(s[:, c]) for c in range(2)], axis=1)
    return _like(buffer, out)


def peak_normalize(buffer: AudioBuffer, target_peak: float = 0.9) -> AudioBuffer:
    """Scale so the absolute peak equals target_peak."""
    peak = float(np.max(np.abs(buffer.samples)))
    if peak == 0.0:
        raise ValidationError("silent signal")
    return _like(buffer, buffer.samples * (target_peak / peak))

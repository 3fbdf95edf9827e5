"""Short-time objective intelligibility of degraded speech against a clean reference.

The degraded signal is aligned to the clean signal's length, both are taken
to 10 kHz, silent frames are dropped using the clean signal's energy, and
one-third-octave temporal envelopes are compared segment by segment with
normalization and a -15 dB distortion bound. The score is the mean clipped
correlation over bands and segments.
"""

from __future__ import annotations

import numpy as np

from .audio import AudioBuffer, resample
from .errors import ValidationError

FS = 10000
FRAME_LEN = 256
HOP = 128
NFFT = 512
NUM_BANDS = 15
MIN_FREQ = 150.0
SEG_FRAMES = 30  # 384 ms at the analysis rate
BETA_DB = -15.0
DYN_RANGE_DB = 40.0
_EPS = np.finfo(np.float64).eps


def _frames(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    n_frames = (len(x) - FRAME_LEN) // HOP + 1
    if n_frames <= 0:
        return np.empty((0, FRAME_LEN))
    idx = np.arange(FRAME_LEN)[None, :] + HOP * np.arange(n_frames)[:, None]
    return x[idx] * window[None, :]


def _remove_silent_frames(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames whose clean-signal energy is 40 dB under the loudest frame."""
    window = np.hanning(FRAME_LEN + 2)[1:-1]
    xf = _frames(x, window)
    yf = _frames(y, window)
    energies = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    mask = energies > energies.max() - DYN_RANGE_DB
    xf, yf = xf[mask], yf[mask]
    out_len = (len(xf) - 1) * HOP + FRAME_LEN if len(xf) else 0
    xs = np.zeros(out_len)
    ys = np.zeros(out_len)
    for i in range(len(xf)):
        xs[i * HOP : i * HOP + FRAME_LEN] += xf[i]
        ys[i * HOP : i * HOP + FRAME_LEN] += yf[i]
    return xs, ys


def _third_octave_matrix() -> np.ndarray:
    """Band-by-bin indicator matrix for 15 one-third-octave bands from 150 Hz."""
    f = np.linspace(0, FS, NFFT + 1)[: NFFT // 2 + 1]
    k = np.arange(NUM_BANDS)
    cf = MIN_FREQ * 2.0 ** (k / 3.0)
    lo = cf / 2.0 ** (1.0 / 6.0)
    hi = cf * 2.0 ** (1.0 / 6.0)
    obm = np.zeros((NUM_BANDS, len(f)))
    for b in range(NUM_BANDS):
        i_lo = int(np.argmin((f - lo[b]) ** 2))
        i_hi = int(np.argmin((f - hi[b]) ** 2))
        obm[b, i_lo:i_hi] = 1.0
    return obm


_OBM = _third_octave_matrix()


def _band_envelopes(x: np.ndarray) -> np.ndarray:
    window = np.hanning(FRAME_LEN + 2)[1:-1]
    frames = _frames(x, window)
    spec = np.fft.rfft(frames, NFFT, axis=1)
    power = (spec.real**2 + spec.imag**2).T  # bins x frames
    return np.sqrt(_OBM @ power)


def stoi(clean: AudioBuffer, degraded: AudioBuffer) -> float:
    """Intelligibility score, 1.0 for an undistorted copy."""
    if clean.sample_rate != degraded.sample_rate:
        raise ValidationError(
            f"sample rate mismatch: clean {clean.sample_rate} Hz vs degraded {degraded.sample_rate} Hz"
        )
    x = clean.mono()
    y = degraded.mono()
    if len(y) >= len(x):
        y = y[: len(x)]
    else:
        y = np.concatenate([y, np.zeros(len(x) - len(y))])

    if clean.sample_rate != FS:
        x = resample(AudioBuffer(x, clean.sample_rate), FS).samples
        y = resample(AudioBuffer(y, clean.sample_rate), FS).samples

    x, y = _remove_silent_frames(x, y)
    xb = _band_envelopes(x)
    yb = _band_envelopes(y)
    n_frames = xb.shape[1]
    if n_frames < SEG_FRAMES:
        raise ValidationError("signal too short for STOI")

    clip_gain = 10.0 ** (-BETA_DB / 20.0)
    scores = []
    for m in range(SEG_FRAMES, n_frames + 1):
        xs = xb[:, m - SEG_FRAMES : m]
        ys = yb[:, m - SEG_FRAMES : m]
        alpha = np.linalg.norm(xs, axis=1, keepdims=True) / (np.linalg.norm(ys, axis=1, keepdims=True) + _EPS)
        ys_clipped = np.minimum(alpha * ys, xs * (1.0 + clip_gain))
        xc = xs - xs.mean(axis=1, keepdims=True)
        yc = ys_clipped - ys_clipped.mean(axis=1, keepdims=True)
        num = (xc * yc).sum(axis=1)
        den = np.linalg.norm(xc, axis=1) * np.linalg.norm(yc, axis=1) + _EPS
        scores.append(num / den)
    return float(np.mean(scores))

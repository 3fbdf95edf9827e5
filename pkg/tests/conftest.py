"""Shared signal builders for the test suite."""

import numpy as np
import pytest
from scipy.signal import lfilter

from rirbench.audio import AudioBuffer, ImpulseResponse


def sine(freq, rate, seconds=1.0, amp=0.8):
    t = np.arange(int(rate * seconds)) / rate
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t), rate)


def exp_decay_rir(t60, rate=16000, seconds=2.0, seed=None, noise=True):
    """Noise (or bare envelope) under a 10^(-3t/T) amplitude decay."""
    n = int(rate * seconds)
    t = np.arange(n) / rate
    env = 10.0 ** (-3.0 * t / t60)
    if noise:
        rng = np.random.default_rng(seed)
        return ImpulseResponse(rng.standard_normal(n) * env, rate)
    return ImpulseResponse(env, rate)


def speech_like(seed=42, rate=16000, seconds=3.0):
    """Noise with a speech-ish spectral tilt and syllabic envelope."""
    rng = np.random.default_rng(seed)
    n = int(rate * seconds)
    carrier = lfilter([1.0], [1.0, -0.9], rng.standard_normal(n))
    env = 0.3 + np.abs(lfilter([1.0], [1.0, -0.999], rng.standard_normal(n)))
    sig = carrier * env / np.max(np.abs(carrier * env))
    return AudioBuffer(0.9 * sig, rate)


@pytest.fixture
def speech_buffer():
    return speech_like()

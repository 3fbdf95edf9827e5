"""Image-source shoebox room simulation and the structured-prompt baseline generator.

The simulator enumerates mirror images of the source across the six walls of
a rectangular room, sums their contributions with frequency-independent
reflection coefficients, and renders fractional delays with a windowed-sinc
kernel. Sabine and Eyring predictors serve as closed-form cross-checks.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from .audio import ImpulseResponse, parse_wav_bytes, wav_bytes
from .errors import TransportError, ValidationError

SPEED_OF_SOUND = 343.0

_KERNEL_HALF = 16  # fractional-delay sinc reaches +-16 samples
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class ShoeboxRoom:
    """Rectangular room with per-wall absorption.

    absorption holds six coefficients ordered (x=0, x=Lx, y=0, y=Ly, z=0, z=Lz);
    a scalar is broadcast to all walls. Exactly one of max_order / max_time
    bounds the image expansion.
    """

    dims: tuple
    source: tuple
    receiver: tuple
    absorption: tuple
    speed_of_sound: float = SPEED_OF_SOUND
    max_order: int | None = None
    max_time: float | None = None

    def __post_init__(self):
        dims = tuple(float(v) for v in self.dims)
        source = tuple(float(v) for v in self.source)
        receiver = tuple(float(v) for v in self.receiver)
        if len(dims) != 3 or any(v <= 0 for v in dims):
            raise ValidationError(f"dims must be three positive lengths, got {self.dims}")
        for name, p in (("source", source), ("receiver", receiver)):
            if len(p) != 3:
                raise ValidationError(f"{name} must have three coordinates, got {p}")
            if not all(0.0 < p[i] < dims[i] for i in range(3)):
                raise ValidationError(f"{name} must lie strictly inside the room: {p} vs dims {dims}")
        if source == receiver:
            raise ValidationError("source and receiver must differ")
        alpha = self.absorption
        if np.isscalar(alpha):
            alpha = (float(alpha),) * 6
        else:
            alpha = tuple(float(a) for a in alpha)
        if len(alpha) != 6 or any(not (0.0 < a <= 1.0) for a in alpha):
            raise ValidationError(f"absorption needs six coefficients in (0, 1], got {self.absorption}")
        if (self.max_order is None) == (self.max_time is None):
            raise ValidationError("exactly one of max_order or max_time must be set")
        if self.max_order is not None and self.max_order < 0:
            raise ValidationError(f"max_order must be >= 0, got {self.max_order}")
        if self.max_time is not None and self.max_time <= 0:
            raise ValidationError(f"max_time must be positive, got {self.max_time}")
        if self.speed_of_sound <= 0:
            raise ValidationError(f"speed_of_sound must be positive, got {self.speed_of_sound}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "receiver", receiver)
        object.__setattr__(self, "absorption", alpha)

    @property
    def volume(self) -> float:
        lx, ly, lz = self.dims
        return lx * ly * lz

    @property
    def wall_areas(self) -> tuple:
        lx, ly, lz = self.dims
        return (ly * lz, ly * lz, lx * lz, lx * lz, lx * ly, lx * ly)


def sabine_rt60(room: ShoeboxRoom) -> float:
    """0.161 * V / sum(S_i * alpha_i)."""
    absorbing_area = sum(s * a for s, a in zip(room.wall_areas, room.absorption))
    return 0.161 * room.volume / absorbing_area


def eyring_rt60(room: ShoeboxRoom) -> float:
    """0.161 * V / (-S_total * ln(1 - mean_alpha))."""
    areas = room.wall_areas
    s_total = sum(areas)
    mean_alpha = sum(s * a for s, a in zip(areas, room.absorption)) / s_total
    if mean_alpha >= 1.0:
        raise ValidationError("mean absorption >= 1, Eyring formula undefined")
    return 0.161 * room.volume / (-s_total * np.log(1.0 - mean_alpha))


def _axis_images(src: float, rcv: float, length: float, beta_lo: float, beta_hi: float, n_lim: int):
    """Per-axis image offsets, reflection products, and hit counts.

    For index n and parity q, the image sits at (1-2q)*src + 2*n*length and
    has bounced |n-q| times off the wall at 0 and |n| times off the wall at
    length.
    """
    ns = np.arange(-n_lim, n_lim + 1, dtype=np.int64)
    deltas, amps, orders = [], [], []
    for q in (0, 1):
        pos = (1 - 2 * q) * src + 2.0 * ns * length
        deltas.append(pos - rcv)
        hits_lo = np.abs(ns - q)
        hits_hi = np.abs(ns)
        amps.append(beta_lo ** hits_lo * beta_hi ** hits_hi)
        orders.append(hits_lo + hits_hi)
    return (
        np.concatenate(deltas),
        np.concatenate(amps),
        np.concatenate(orders),
    )


def _inject_impulses(out: np.ndarray, delays: np.ndarray, amps: np.ndarray) -> None:
    """Scatter sinc-interpolated impulses (in samples) into out."""
    base = np.floor(delays).astype(np.int64)
    frac = delays - base
    sin_pi_frac = np.sin(np.pi * frac)
    win_span = _KERNEL_HALF + 1.0
    cos_w = np.cos(np.pi * frac / win_span)
    sin_w = np.sin(np.pi * frac / win_span)
    n = len(out)
    for j in range(-_KERNEL_HALF, _KERNEL_HALF + 1):
        t = j - frac
        denom = np.pi * t
        sign = 1.0 if j % 2 else -1.0  # sin(pi*(j - frac)) = -(-1)^j * sin(pi*frac)
        with np.errstate(divide="ignore", invalid="ignore"):
            sinc = np.where(np.abs(denom) < 1e-12, 1.0, sign * sin_pi_frac / denom)
        window = 0.5 + 0.5 * (np.cos(np.pi * j / win_span) * cos_w + np.sin(np.pi * j / win_span) * sin_w)
        idx = base + j
        valid = (idx >= 0) & (idx < n)
        if not valid.all():
            idx, w = idx[valid], (amps * sinc * window)[valid]
        else:
            w = amps * sinc * window
        out += np.bincount(idx, weights=w, minlength=n)


def simulate_shoebox(
    room: ShoeboxRoom, sample_rate: int = 16000, highpass_hz: float | None = 40.0
) -> ImpulseResponse:
    """Render the room impulse response of a shoebox via the image-source expansion.

    All image amplitudes are positive, so the dense late field piles up
    spurious energy at very low frequencies; the customary fix is a gentle
    post-highpass (default 40 Hz, zero phase). Pass highpass_hz=None for the
    raw image sum.
    """
    c = room.speed_of_sound
    beta = tuple(np.sqrt(1.0 - a) for a in room.absorption)

    if room.max_time is not None:
        radius = c * room.max_time
        n_lims = [int(np.ceil((radius + 2 * L) / (2 * L))) for L in room.dims]
    else:
        n_lims = [room.max_order + 1] * 3

    axes = [
        _axis_images(room.source[i], room.receiver[i], room.dims[i], beta[2 * i], beta[2 * i + 1], n_lims[i])
        for i in range(3)
    ]
    (dx, ax, ox), (dy, ay, oy), (dz, az, oz) = axes

    if room.max_time is not None:
        max_dist = c * room.max_time
    else:
        max_dist = np.sqrt(np.max(dx * dx) + np.max(dy * dy) + np.max(dz * dz))
    n_samples = int(np.ceil(max_dist / c * sample_rate)) + _KERNEL_HALF + 2
    out = np.zeros(n_samples)

    chunk = max(1, _CHUNK_ELEMENTS // max(1, len(dy) * len(dz)))
    dy2 = (dy * dy)[:, None]
    dz2 = (dz * dz)[None, :]
    ayz = ay[:, None] * az[None, :]
    oyz = oy[:, None] + oz[None, :]
    for start in range(0, len(dx), chunk):
        sl = slice(start, start + chunk)
        d2 = (dx[sl] * dx[sl])[:, None, None] + dy2[None, :, :] + dz2[None, :, :]
        dist = np.sqrt(d2)
        if room.max_time is not None:
            keep = dist <= max_dist
        else:
            keep = (ox[sl][:, None, None] + oyz[None, :, :]) <= room.max_order
        amp = (ax[sl][:, None, None] * ayz[None, :, :])[keep] / (4.0 * np.pi * dist[keep])
        delays = dist[keep] * (sample_rate / c)
        _inject_impulses(out, delays, amp)

    if highpass_hz is not None:
        from scipy.signal import butter, sosfiltfilt

        sos = butter(2, highpass_hz, "highpass", fs=sample_rate, output="sos")
        out = sosfiltfilt(sos, out)

    return ImpulseResponse(out, sample_rate)


def count_images(room: ShoeboxRoom) -> int:
    """Number of image sources within the room's order or time bound."""
    c = room.speed_of_sound
    if room.max_time is not None:
        n_lims = [int(np.ceil((c * room.max_time + 2 * L) / (2 * L))) for L in room.dims]
    else:
        n_lims = [room.max_order + 1] * 3
    beta = tuple(np.sqrt(1.0 - a) for a in room.absorption)
    axes = [
        _axis_images(room.source[i], room.receiver[i], room.dims[i], beta[2 * i], beta[2 * i + 1], n_lims[i])
        for i in range(3)
    ]
    (dx, _, ox), (dy, _, oy), (dz, _, oz) = axes
    if room.max_time is not None:
        d2 = dx[:, None, None] ** 2 + (dy * dy)[None, :, None] + (dz * dz)[None, None, :]
        return int(np.count_nonzero(d2 <= (c * room.max_time) ** 2))
    order = ox[:, None, None] + oy[None, :, None] + oz[None, None, :]
    return int(np.count_nonzero(order <= room.max_order))


# ---------------------------------------------------------------------------
# Structured-prompt baseline generator.

ABSORPTION_CLASSES = {
    "very absorptive": 0.6,
    "absorptive": 0.4,
    "moderate": 0.25,
    "reflective": 0.1,
    "very reflective": 0.05,
}

PROMPT_GRAMMAR = (
    "expected a prompt like 'room 6 by 5 by 3 meters, moderate absorption' "
    "(dimensions '<Lx> by <Ly> by <Lz>' plus one of: "
    + ", ".join(repr(k) for k in ABSORPTION_CLASSES)
    + "; optional 'source at x, y, z' and 'receiver at x, y, z')"
)

_NUM = r"(\d+(?:\.\d+)?)"
_DIMS_RE = re.compile(rf"{_NUM}\s*(?:by|x|×)\s*{_NUM}\s*(?:by|x|×)\s*{_NUM}", re.IGNORECASE)


def _position_re(kind: str) -> re.Pattern:
    return re.compile(rf"{kind}\s+at\s+\(?\s*{_NUM}\s*[, ]\s*{_NUM}\s*[, ]\s*{_NUM}", re.IGNORECASE)


def parse_structured_prompt(prompt: str) -> dict:
    """Extract dims, absorption class, and optional positions from a prompt."""
    m = _DIMS_RE.search(prompt)
    if m is None:
        raise ValidationError(f"could not parse room dimensions from prompt {prompt!r}; {PROMPT_GRAMMAR}")
    dims = tuple(float(g) for g in m.groups())

    lowered = prompt.lower()
    absorption_class = None
    for name in sorted(ABSORPTION_CLASSES, key=len, reverse=True):
        if name in lowered:
            absorption_class = name
            break
    if absorption_class is None:
        absorption_class = "moderate"

    parsed = {"dims": dims, "absorption_class": absorption_class,
              "alpha": ABSORPTION_CLASSES[absorption_class]}
    for kind in ("source", "receiver"):
        pm = _position_re(kind).search(prompt)
        if pm is not None:
            parsed[kind] = tuple(float(g) for g in pm.groups())
    return parsed


# Default receiver sits off the source's mirror position: with source at 1/3
# of each dimension, a receiver at exactly 2/3 degenerates the image lattice
# (many coincident path lengths) and biases measured decay upward.
_DEFAULT_SOURCE_FRAC = (1 / 3, 1 / 3, 1 / 3)
_DEFAULT_RECEIVER_FRAC = (0.71, 0.62, 0.58)


def baseline_generate(prompt: str, sample_rate: int = 16000, seed=None) -> tuple[ImpulseResponse, dict]:
    """Classical text-to-RIR path: parse the prompt, simulate the shoebox.

    The seed is accepted for interface parity with stochastic generators; the
    simulation itself is deterministic.
    """
    parsed = parse_structured_prompt(prompt)
    dims = parsed["dims"]
    source = parsed.get("source", tuple(d * f for d, f in zip(dims, _DEFAULT_SOURCE_FRAC)))
    receiver = parsed.get("receiver", tuple(d * f for d, f in zip(dims, _DEFAULT_RECEIVER_FRAC)))
    probe = ShoeboxRoom(dims, source, receiver, parsed["alpha"], max_order=0)
    max_time = 3.0 * sabine_rt60(probe)
    room = ShoeboxRoom(dims, source, receiver, parsed["alpha"], max_time=max_time)
    rir = simulate_shoebox(room, sample_rate)
    metadata = {
        "generator": "ism",
        "room": {
            "dims": list(dims),
            "source": list(source),
            "receiver": list(receiver),
            "absorption": list(room.absorption),
            "max_time_s": max_time,
        },
        "absorption_class": parsed["absorption_class"],
        "sabine_rt60_s": sabine_rt60(room),
        "eyring_rt60_s": eyring_rt60(room),
        "sample_rate": sample_rate,
        "seed": seed,
    }
    return rir, metadata


# ---------------------------------------------------------------------------
# Generator endpoints: the local baseline and a remote HTTP generator share
# one calling convention so the evaluation harness does not care which it is.

METADATA_HEADER = "X-Generator-Metadata"


class IsmGenerator:
    """In-process generator backed by the shoebox simulator."""

    name = "ism"

    def generate(self, prompt: str, sample_rate: int = 16000, seed=None) -> tuple[ImpulseResponse, dict]:
        return baseline_generate(prompt, sample_rate=sample_rate, seed=seed)


class HttpGenerator:
    """Remote generator: POST /generate with a prompt, WAV bytes back."""

    def __init__(self, url: str, timeout: float = 120.0):
        self.url = url.rstrip("/")
        self.name = url
        self.timeout = timeout

    def generate(self, prompt: str, sample_rate: int = 16000, seed=None) -> tuple[ImpulseResponse, dict]:
        import requests

        try:
            resp = requests.post(
                f"{self.url}/generate",
                json={"prompt": prompt, "seed": seed, "sample_rate": sample_rate},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"generator endpoint {self.url} unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"generator endpoint {self.url} returned HTTP {resp.status_code}")
        buf = parse_wav_bytes(resp.content, source=self.url)
        metadata = {}
        if METADATA_HEADER in resp.headers:
            try:
                metadata = json.loads(resp.headers[METADATA_HEADER])
            except json.JSONDecodeError:
                metadata = {"raw_metadata_header": resp.headers[METADATA_HEADER]}
        return ImpulseResponse(buf.samples, buf.sample_rate), metadata


def generator_from_spec(spec: str):
    if spec == "ism":
        return IsmGenerator()
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpGenerator(spec)
    raise ValidationError(f"unknown generator spec {spec!r}; expected 'ism' or an http(s) URL")


def make_generator_app(generator=None):
    """FastAPI app exposing a generator over the POST /generate wire format."""
    from fastapi import FastAPI, Response

    from .errors import RirbenchError

    gen = generator or IsmGenerator()
    app = FastAPI(title="rir-generator")

    @app.post("/generate")
    def generate(body: dict):
        prompt = body.get("prompt", "")
        sample_rate = int(body.get("sample_rate") or 16000)
        seed = body.get("seed")
        try:
            rir, metadata = gen.generate(prompt, sample_rate=sample_rate, seed=seed)
        except RirbenchError as exc:
            return Response(
                content=json.dumps({"error": str(exc)}), status_code=422, media_type="application/json"
            )
        data, _ = wav_bytes(rir, "float32")
        return Response(
            content=data,
            media_type="audio/wav",
            headers={METADATA_HEADER: json.dumps(metadata)},
        )

    return app

"""Room-acoustic parameter extraction from impulse responses.

Schroeder backward integration yields the energy decay curve; line fits on
selected spans give RT60 (T20/T30) and EDT; energy split at 50 ms gives
C50/D50. Percentage-error aggregation mirrors how text-to-RIR generators
are scored against measured ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import ImpulseResponse
from .errors import RirbenchError, ValidationError

ONSET_THRESHOLD_DB = 20.0
_EDC_FLOOR_DB = -300.0


class InsufficientDecayRange(RirbenchError):
    """The decay curve does not span enough dynamic range for the requested fit."""

    def __init__(self, message: str, range_db: float):
        super().__init__(message)
        self.range_db = range_db


@dataclass(frozen=True, eq=False)
class EnergyDecayCurve:
    values_db: np.ndarray  # 0 dB at onset, non-increasing
    sample_rate: int
    onset_index: int

    def __len__(self) -> int:
        return len(self.values_db)


@dataclass(frozen=True)
class Rt60Estimate:
    seconds: float
    method: str  # "T20" or "T30"
    dynamic_range_db: float


@dataclass(frozen=True)
class AcousticParams:
    rt60: float  # headline broadband T20 estimate
    edt: float
    c50: float  # dB; +inf when no late energy
    d50: float
    estimation_method: str
    dynamic_range_db: float
    rt60_t30: float | None = None  # supplementary deeper fit when the curve reaches -35 dB


@dataclass(frozen=True)
class ErrorReport:
    per_sample_errors: tuple
    mean_error_pct: float
    median_error_pct: float
    n: int


def _energy_envelope(rir: ImpulseResponse) -> np.ndarray:
    s = rir.samples
    if s.ndim == 1:
        return s * s
    return (s * s).mean(axis=1)


def detect_onset(rir: ImpulseResponse) -> int:
    """First sample whose level exceeds the peak minus 20 dB."""
    e = _energy_envelope(rir)
    peak = e.max()
    if peak <= 0.0:
        raise ValidationError("silent impulse response")
    threshold = peak * 10.0 ** (-ONSET_THRESHOLD_DB / 10.0)
    return int(np.argmax(e > threshold))


def _tail_truncation(tail_energy: np.ndarray) -> int:
    """Index at which to cut the Schroeder integral.

    If the last 5% of samples sits at essentially the same level as the 5%
    before it, the tail is a noise floor and gets excluded.
    """
    n = len(tail_energy)
    w = n // 20
    if w < 16:
        return n
    last = tail_energy[n - w :].mean()
    prev = tail_energy[n - 2 * w : n - w].mean()
    if prev <= 0.0:
        return n
    drop_db = 10.0 * np.log10((last + 1e-300) / prev)
    if drop_db > -1.0:
        return n - w
    return n


def energy_decay_curve(rir: ImpulseResponse) -> EnergyDecayCurve:
    """Schroeder backward integral, normalized to 0 dB at the detected onset."""
    e = _energy_envelope(rir)
    if e.sum() <= 0.0:
        raise ValidationError("silent impulse response")
    onset = detect_onset(rir)
    tail = e[onset:]
    tail = tail[: _tail_truncation(tail)]
    cum = np.cumsum(tail[::-1])[::-1]
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(cum / cum[0])
    db = np.maximum(db, _EDC_FLOOR_DB)
    return EnergyDecayCurve(db, rir.sample_rate, onset)


def _fit_decay_slope(edc: EnergyDecayCurve, top_db: float, bottom_db: float) -> float:
    """Least-squares slope (dB/s) of the EDC between two levels."""
    db = edc.values_db
    mask = (db <= top_db) & (db >= bottom_db)
    if int(mask.sum()) < 5:
        measured = float(-db[db > _EDC_FLOOR_DB].min()) if np.any(db > _EDC_FLOOR_DB) else 0.0
        raise InsufficientDecayRange(
            f"insufficient decay range: need samples between {top_db} and {bottom_db} dB, "
            f"measured range {measured:.1f} dB",
            range_db=measured,
        )
    t = np.flatnonzero(mask) / edc.sample_rate
    slope = np.polyfit(t, db[mask], 1)[0]
    if slope >= -1e-12:
        raise InsufficientDecayRange("decay curve is not decreasing over the fit span", range_db=float("nan"))
    return float(slope)


def _usable_range_db(edc: EnergyDecayCurve) -> float:
    finite = edc.values_db[edc.values_db > _EDC_FLOOR_DB]
    return abs(float(finite.min())) if len(finite) else 0.0


def rt60(rir: ImpulseResponse, method: str = "auto") -> Rt60Estimate:
    """Reverberation time from a decay-curve line fit.

    method "auto" fits T20 (-5..-25 dB) and upgrades to T30 (-5..-35 dB) when
    the curve reaches -35 dB; "T20" and "T30" force one estimator. T20 is the
    headline broadband estimator used in evaluation reports.
    """
    if method not in ("auto", "T20", "T30"):
        raise ValidationError(f"unknown rt60 method {method!r}, expected 'auto', 'T20', or 'T30'")
    edc = energy_decay_curve(rir)
    rng = _usable_range_db(edc)
    if rng < 25.0:
        raise InsufficientDecayRange(
            f"insufficient decay range: {rng:.1f} dB measured, need at least 25 dB", range_db=rng
        )
    if method in ("auto", "T30") and rng >= 35.0:
        try:
            slope = _fit_decay_slope(edc, -5.0, -35.0)
            return Rt60Estimate(-60.0 / slope, "T30", rng)
        except InsufficientDecayRange:
            if method == "T30":
                raise
    elif method == "T30":
        raise InsufficientDecayRange(
            f"insufficient decay range for T30: {rng:.1f} dB measured, need at least 35 dB", range_db=rng
        )
    slope = _fit_decay_slope(edc, -5.0, -25.0)
    return Rt60Estimate(-60.0 / slope, "T20", rng)


def edt(rir: ImpulseResponse) -> float:
    """Early decay time: line fit over the first 10 dB of the EDC."""
    edc = energy_decay_curve(rir)
    slope = _fit_decay_slope(edc, 0.0, -10.0)
    return -60.0 / slope


def _energy_split_50ms(rir: ImpulseResponse) -> tuple[float, float]:
    e = _energy_envelope(rir)
    if e.sum() <= 0.0:
        raise ValidationError("silent impulse response")
    onset = detect_onset(rir)
    k50 = onset + int(round(0.05 * rir.sample_rate))
    if k50 > len(e):
        raise ValidationError("impulse response ends less than 50 ms after onset")
    early = float(e[onset:k50].sum())
    late = float(e[k50:].sum())
    return early, late


def c50(rir: ImpulseResponse) -> float:
    """Clarity index in dB; +inf when all energy is early."""
    early, late = _energy_split_50ms(rir)
    if late == 0.0:
        return float("inf")
    return 10.0 * np.log10(early / late)


def d50(rir: ImpulseResponse) -> float:
    """Definition: fraction of energy within 50 ms of the onset."""
    early, late = _energy_split_50ms(rir)
    return early / (early + late)


def analyze(rir: ImpulseResponse) -> AcousticParams:
    """Full parameter bundle; the headline RT60 is the broadband T20 estimate."""
    headline = rt60(rir, method="T20")
    try:
        deeper = rt60(rir, method="T30").seconds
    except InsufficientDecayRange:
        deeper = None
    return AcousticParams(
        rt60=headline.seconds,
        edt=edt(rir),
        c50=c50(rir),
        d50=d50(rir),
        estimation_method=headline.method,
        dynamic_range_db=headline.dynamic_range_db,
        rt60_t30=deeper,
    )


def params_to_json(params: AcousticParams) -> dict:
    """JSON-ready dict; an infinite C50 is serialized as null plus a flag."""
    infinite = not np.isfinite(params.c50)
    return {
        "rt60_s": params.rt60,
        "rt60_t30_s": params.rt60_t30,
        "edt_s": params.edt,
        "c50_db": None if infinite else params.c50,
        "c50_infinite": infinite,
        "d50": params.d50,
        "estimation_method": params.estimation_method,
        "dynamic_range_db": params.dynamic_range_db,
    }


def rt60_percent_error(estimated: float, ground_truth: float) -> float:
    """Signed percentage error, 100*(est-gt)/gt."""
    if ground_truth <= 0.0:
        raise ValidationError(f"ground truth RT60 must be positive, got {ground_truth}")
    return 100.0 * (estimated - ground_truth) / ground_truth


def aggregate_errors(errors) -> ErrorReport:
    errs = [float(e) for e in errors]
    if not errs:
        raise ValidationError("cannot aggregate an empty error list")
    return ErrorReport(
        per_sample_errors=tuple(errs),
        mean_error_pct=float(np.mean(errs)),
        median_error_pct=float(np.median(errs)),
        n=len(errs),
    )


def build_rt60_report(run_id: str, common_rate_hz: int, entries: list[dict]) -> dict:
    """Assemble the per-run RT60 evaluation report.

    Each entry carries {id, rt60_est, rt60_gt, method}; the error column and
    the aggregate rows are derived here so the report is self-consistent.
    """
    per_sample = []
    errors = []
    for item in entries:
        err = rt60_percent_error(item["rt60_est"], item["rt60_gt"])
        errors.append(err)
        per_sample.append(
            {
                "id": item["id"],
                "rt60_est": item["rt60_est"],
                "rt60_gt": item["rt60_gt"],
                "error_pct": err,
                "method": item["method"],
            }
        )
    report = aggregate_errors(errors)
    return {
        "run_id": run_id,
        "common_rate_hz": common_rate_hz,
        "ground_truth_rt60_measured_with_same_estimator": True,
        "per_sample": per_sample,
        "mean_error_pct": report.mean_error_pct,
        "median_error_pct": report.median_error_pct,
    }

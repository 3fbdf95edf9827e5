"""Listening-test sessions: stimulus preparation, trial assignment,
listener screening, and score aggregation.

Every trial presents a labeled reference plus a blinded set containing one
byte-identical hidden reference, one low-passed anchor, and one stimulus
per system under test, all peak-normalized identically. Listeners who rate
the hidden reference below 90 in more than 15% of their trials are
excluded before aggregation.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .audio import ImpulseResponse, convolve, lowpass_anchor, peak_normalize, read_rir, read_wav, resample, write_wav
from .errors import ValidationError
from .stats import METHOD_PRATT, stats_to_json, wilcoxon_signed_rank

LABEL_REFERENCE = "reference"
LABEL_HIDDEN_REFERENCE = "hidden_reference"
LABEL_ANCHOR = "anchor"

ANCHOR_LOWPASS = "lowpass"
ANCHOR_AVERAGE_RIR = "average_rir"

SCREEN_THRESHOLD_SCORE = 90
SCREEN_MAX_VIOLATION_RATE = 0.15
STIMULUS_PEAK = 0.9


@dataclass(frozen=True)
class StimulusDef:
    stimulus_id: str
    condition_label: str
    wav_path: str


@dataclass(frozen=True)
class MushraTrial:
    trial_id: str
    context: dict
    reference_stimulus_id: str
    reference_wav_path: str
    stimuli: tuple  # StimulusDef, hidden ref + anchor + systems

    def stimulus_ids(self) -> list[str]:
        return [s.stimulus_id for s in self.stimuli]


@dataclass(frozen=True)
class RatingRecord:
    listener_id: str
    trial_id: str
    stimulus_id: str
    score: int
    submitted_at: str

    def to_json(self) -> dict:
        return {
            "listener_id": self.listener_id,
            "trial_id": self.trial_id,
            "stimulus_id": self.stimulus_id,
            "score": self.score,
            "submitted_at": self.submitted_at,
        }


@dataclass(frozen=True)
class ScreeningResult:
    listener_id: str
    trials_rated: int
    hidden_ref_below_90_count: int
    violation_rate: float
    excluded: bool

    def to_json(self) -> dict:
        return {
            "listener_id": self.listener_id,
            "trials_rated": self.trials_rated,
            "hidden_ref_below_90_count": self.hidden_ref_below_90_count,
            "violation_rate": self.violation_rate,
            "excluded": self.excluded,
        }


@dataclass
class MushraSession:
    session_id: str
    root: Path
    seed: int
    trials_per_listener: int
    primary_system: str
    anchor_mode: str
    common_rate_hz: int
    conditions: list
    trials: list = field(default_factory=list)

    def trial_by_id(self, trial_id: str) -> MushraTrial | None:
        for t in self.trials:
            if t.trial_id == trial_id:
                return t
        return None

    def stimulus_path(self, stimulus_id: str) -> Path | None:
        for t in self.trials:
            if t.reference_stimulus_id == stimulus_id:
                return self.root / t.reference_wav_path
            for s in t.stimuli:
                if s.stimulus_id == stimulus_id:
                    return self.root / s.wav_path
        return None

    def label_of(self, stimulus_id: str) -> str | None:
        for t in self.trials:
            for s in t.stimuli:
                if s.stimulus_id == stimulus_id:
                    return s.condition_label
        return None

    def hidden_reference_ids(self) -> dict:
        out = {}
        for t in self.trials:
            for s in t.stimuli:
                if s.condition_label == LABEL_HIDDEN_REFERENCE:
                    out[t.trial_id] = s.stimulus_id
        return out

    def _listener_rng(self, listener_id: str, salt: str = "") -> np.random.Generator:
        digest = hashlib.sha256(f"{self.seed}:{listener_id}:{salt}".encode()).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))

    def trials_for_listener(self, listener_id: str) -> list[str]:
        """Deterministic without-replacement draw of this listener's trials."""
        rng = self._listener_rng(listener_id, "assignment")
        order = rng.permutation(len(self.trials))[: self.trials_per_listener]
        return [self.trials[i].trial_id for i in order]

    def presentation_order(self, listener_id: str, trial_id: str) -> list[str]:
        trial = self.trial_by_id(trial_id)
        rng = self._listener_rng(listener_id, f"order:{trial_id}")
        ids = trial.stimulus_ids()
        return [ids[i] for i in rng.permutation(len(ids))]

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "seed": self.seed,
            "trials_per_listener": self.trials_per_listener,
            "primary_system": self.primary_system,
            "anchor_mode": self.anchor_mode,
            "common_rate_hz": self.common_rate_hz,
            "conditions": self.conditions,
            "trials": [
                {
                    "trial_id": t.trial_id,
                    "context": t.context,
                    "reference_stimulus_id": t.reference_stimulus_id,
                    "reference_wav_path": t.reference_wav_path,
                    "stimuli": [
                        {
                            "stimulus_id": s.stimulus_id,
                            "condition_label": s.condition_label,
                            "wav_path": s.wav_path,
                        }
                        for s in t.stimuli
                    ],
                }
                for t in self.trials
            ],
        }

    def save(self) -> None:
        (self.root / "session.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, root) -> "MushraSession":
        root = Path(root)
        blob = json.loads((root / "session.json").read_text())
        session = cls(
            session_id=blob["session_id"],
            root=root,
            seed=blob["seed"],
            trials_per_listener=blob["trials_per_listener"],
            primary_system=blob["primary_system"],
            anchor_mode=blob["anchor_mode"],
            common_rate_hz=blob["common_rate_hz"],
            conditions=blob["conditions"],
        )
        session.trials = [
            MushraTrial(
                trial_id=t["trial_id"],
                context=t["context"],
                reference_stimulus_id=t["reference_stimulus_id"],
                reference_wav_path=t["reference_wav_path"],
                stimuli=tuple(
                    StimulusDef(s["stimulus_id"], s["condition_label"], s["wav_path"]) for s in t["stimuli"]
                ),
            )
            for t in blob["trials"]
        ]
        return session


# ---------------------------------------------------------------------------
# Session building.

def _load_manifest(manifest) -> dict:
    if isinstance(manifest, (str, Path)):
        return json.loads(Path(manifest).read_text())
    return dict(manifest)


def build_session(manifest, out_dir, seed: int, trials_per_listener: int,
                  anchor_mode: str = ANCHOR_LOWPASS, session_id: str | None = None) -> MushraSession:
    """Materialize all stimuli and the trial table for one listening test.

    The manifest lists items with clean speech, a ground-truth RIR, prompt
    context, and one RIR per system. Stimuli are rendered by convolution,
    peak-normalized identically, and written as float32 WAV files.
    """
    spec = _load_manifest(manifest)
    items = spec.get("items", [])
    if not items:
        raise ValidationError("manifest has no items")
    if anchor_mode not in (ANCHOR_LOWPASS, ANCHOR_AVERAGE_RIR):
        raise ValidationError(f"unknown anchor mode {anchor_mode!r}")
    if trials_per_listener < 1 or trials_per_listener > len(items):
        raise ValidationError(
            f"trials_per_listener must be in 1..{len(items)} (items available), got {trials_per_listener}"
        )

    out_dir = Path(out_dir)
    (out_dir / "stimuli").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    session_id = session_id or f"mushra-{rng.integers(0, 1 << 48):012x}"

    missing = [
        it["id"] for it in items
        if not Path(it["clean_wav"]).exists() or not Path(it["gt_rir"]).exists()
        or any(not Path(p).exists() for p in it.get("systems", {}).values())
    ]
    if missing:
        raise ValidationError(f"missing assets for items: {missing}")

    system_names = sorted({name for it in items for name in it.get("systems", {})})
    if not system_names:
        raise ValidationError("manifest items declare no systems")
    primary = spec.get("primary_system", system_names[0])
    conditions = [LABEL_HIDDEN_REFERENCE, LABEL_ANCHOR] + system_names

    used_ids: set[str] = set()

    def new_stim_id() -> str:
        while True:
            sid = f"st-{rng.integers(0, 1 << 48):012x}"
            if sid not in used_ids:
                used_ids.add(sid)
                return sid

    average_rir = None
    if anchor_mode == ANCHOR_AVERAGE_RIR:
        average_rir = _average_rir([it["gt_rir"] for it in items])

    trials = []
    rates = set()
    for item in items:
        clean = read_wav(item["clean_wav"])
        rate = clean.sample_rate
        rates.add(rate)
        gt = _rir_at_rate(item["gt_rir"], rate)
        reference = peak_normalize(convolve(clean, gt), STIMULUS_PEAK)

        ref_id = new_stim_id()
        ref_path = f"stimuli/{ref_id}.wav"
        write_wav(out_dir / ref_path, reference, "float32")

        stimuli = []
        hid_id = new_stim_id()
        stimuli.append(StimulusDef(hid_id, LABEL_HIDDEN_REFERENCE, ref_path))  # same bytes by construction

        if anchor_mode == ANCHOR_LOWPASS:
            anchor = peak_normalize(lowpass_anchor(clean), STIMULUS_PEAK)
        else:
            anchor_rir = resample(average_rir, rate) if average_rir.sample_rate != rate else average_rir
            anchor = peak_normalize(convolve(clean, anchor_rir), STIMULUS_PEAK)
        anchor_id = new_stim_id()
        anchor_path = f"stimuli/{anchor_id}.wav"
        write_wav(out_dir / anchor_path, anchor, "float32")
        stimuli.append(StimulusDef(anchor_id, LABEL_ANCHOR, anchor_path))

        for name in system_names:
            rir = _rir_at_rate(item["systems"][name], rate)
            rendered = peak_normalize(convolve(clean, rir), STIMULUS_PEAK)
            sid = new_stim_id()
            path = f"stimuli/{sid}.wav"
            write_wav(out_dir / path, rendered, "float32")
            stimuli.append(StimulusDef(sid, name, path))

        trials.append(
            MushraTrial(
                trial_id=f"trial-{item['id']}",
                context={"prompt": item.get("prompt", ""), "image_ref": item.get("image_ref")},
                reference_stimulus_id=ref_id,
                reference_wav_path=ref_path,
                stimuli=tuple(stimuli),
            )
        )

    session = MushraSession(
        session_id=session_id,
        root=out_dir,
        seed=seed,
        trials_per_listener=trials_per_listener,
        primary_system=primary,
        anchor_mode=anchor_mode,
        common_rate_hz=max(rates),
        conditions=conditions,
        trials=trials,
    )
    session.save()
    return session


def _rir_at_rate(path, rate: int) -> ImpulseResponse:
    rir = read_rir(path)
    return resample(rir, rate) if rir.sample_rate != rate else rir


def _average_rir(paths) -> ImpulseResponse:
    rirs = [read_rir(p) for p in paths]
    rate = max(r.sample_rate for r in rirs)
    rirs = [resample(r, rate) if r.sample_rate != rate else r for r in rirs]
    n = max(len(r) for r in rirs)
    acc = np.zeros(n)
    for r in rirs:
        acc[: len(r)] += r.mono()
    return ImpulseResponse(acc / len(rirs), rate)


# ---------------------------------------------------------------------------
# Rating log.

class RatingStore:
    """Append-only JSONL rating log; one writer, consistent snapshots."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def load(self) -> list[RatingRecord]:
        if not self.path.exists():
            return []
        records = []
        with self._lock:
            text = self.path.read_text()
        for line in text.splitlines():
            if line.strip():
                blob = json.loads(line)
                records.append(
                    RatingRecord(
                        blob["listener_id"], blob["trial_id"], blob["stimulus_id"],
                        blob["score"], blob["submitted_at"],
                    )
                )
        return records

    def existing_scores(self, listener_id: str, trial_id: str) -> dict:
        return {
            r.stimulus_id: r.score
            for r in self.load()
            if r.listener_id == listener_id and r.trial_id == trial_id
        }

    def append(self, records) -> None:
        with self._lock:
            with self.path.open("a") as fh:
                for r in records:
                    fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def submit_ratings(session: MushraSession, store: RatingStore, listener_id: str,
                   trial_id: str, scores: dict) -> str:
    """Validate and persist one complete rating set.

    Returns "stored" or "unchanged" (identical duplicate). Incomplete sets,
    out-of-range scores, unknown ids, and conflicting resubmissions raise.
    """
    trial = session.trial_by_id(trial_id)
    if trial is None:
        raise KeyError(f"unknown trial {trial_id!r}")
    if not listener_id:
        raise ValidationError("listener id must be non-empty")
    expected = set(trial.stimulus_ids())
    unknown = sorted(set(scores) - expected)
    if unknown:
        raise KeyError(f"unknown stimulus ids: {unknown}")
    missing = sorted(expected - set(scores))
    if missing:
        raise ValidationError(f"missing ratings for stimulus ids: {missing}")
    for sid, score in scores.items():
        if not isinstance(score, int) or isinstance(score, bool) or not 0 <= score <= 100:
            raise ValidationError(f"score for {sid} must be an integer in 0..100, got {score!r}")

    previous = store.existing_scores(listener_id, trial_id)
    if previous:
        if previous == scores:
            return "unchanged"
        raise ValidationError(f"trial {trial_id} already rated by {listener_id} with different scores")

    now = datetime.now(timezone.utc).isoformat()
    store.append(
        RatingRecord(listener_id, trial_id, sid, score, now) for sid, score in sorted(scores.items())
    )
    return "stored"


# ---------------------------------------------------------------------------
# Screening and reporting.

def screen_listeners(ratings, hidden_ref_ids: dict, listeners=None) -> list[ScreeningResult]:
    """Exclude listeners who under-rate the hidden reference too often."""
    by_listener: dict[str, dict[str, dict[str, int]]] = {}
    for r in ratings:
        by_listener.setdefault(r.listener_id, {}).setdefault(r.trial_id, {})[r.stimulus_id] = r.score

    results = []
    for listener in sorted(listeners or by_listener):
        trials = by_listener.get(listener, {})
        rated = 0
        violations = 0
        for trial_id, scores in trials.items():
            hid = hidden_ref_ids.get(trial_id)
            if hid is None or hid not in scores:
                continue
            rated += 1
            if scores[hid] < SCREEN_THRESHOLD_SCORE:
                violations += 1
        if rated == 0:
            continue  # nothing to screen on; skipped with note in the report
        rate = violations / rated
        results.append(
            ScreeningResult(listener, rated, violations, rate, excluded=rate > SCREEN_MAX_VIOLATION_RATE)
        )
    return results


def mushra_report(session: MushraSession, ratings) -> dict:
    """Screening, per-condition means with 95% CIs, and pairwise tests.

    Everything derives from the raw rating log so the report can always be
    recomputed; Wilcoxon pairs are reported both per (listener, trial)
    score and per listener mean.
    """
    ratings = list(ratings)
    screening = screen_listeners(ratings, session.hidden_reference_ids())
    excluded = {s.listener_id for s in screening if s.excluded}
    retained = [r for r in ratings if r.listener_id not in excluded]

    label_by_stim = {}
    for t in session.trials:
        for s in t.stimuli:
            label_by_stim[s.stimulus_id] = s.condition_label

    per_condition_scores: dict[str, list[tuple[str, str, int]]] = {c: [] for c in session.conditions}
    for r in retained:
        label = label_by_stim.get(r.stimulus_id)
        if label in per_condition_scores:
            per_condition_scores[label].append((r.listener_id, r.trial_id, r.score))

    rows = {}
    warnings = []
    for condition, entries in per_condition_scores.items():
        scores = np.array([e[2] for e in entries], dtype=np.float64)
        n = len(scores)
        if n == 0:
            rows[condition] = {"mean": None, "ci95_halfwidth": None, "n": 0}
            warnings.append(f"condition {condition!r} has no ratings")
            continue
        sd = float(np.std(scores, ddof=1)) if n > 1 else 0.0
        rows[condition] = {
            "mean": float(np.mean(scores)),
            "ci95_halfwidth": 1.96 * sd / np.sqrt(n) if n > 1 else 0.0,
            "n": n,
        }

    pairwise = {}
    primary = session.primary_system
    primary_scores = {(l, t): s for l, t, s in per_condition_scores.get(primary, [])}
    for condition in session.conditions:
        if condition == primary:
            continue
        other = {(l, t): s for l, t, s in per_condition_scores.get(condition, [])}
        keys = sorted(set(primary_scores) & set(other))
        entry = {"n_pairs": len(keys), "by_trial": None, "by_listener": None}
        # Pratt zero-handling: tied integer scores are common and must not
        # break the test when two conditions agree on every pair
        if len(keys) >= 5:
            x = [float(primary_scores[k]) for k in keys]
            y = [float(other[k]) for k in keys]
            entry["by_trial"] = stats_to_json(wilcoxon_signed_rank(x, y, method=METHOD_PRATT))
        listeners = sorted({l for l, _ in keys})
        if len(listeners) >= 5:
            lx = [float(np.mean([primary_scores[k] for k in keys if k[0] == l])) for l in listeners]
            ly = [float(np.mean([other[k] for k in keys if k[0] == l])) for l in listeners]
            entry["by_listener"] = stats_to_json(wilcoxon_signed_rank(lx, ly, method=METHOD_PRATT))
        pairwise[condition] = entry

    return {
        "session_id": session.session_id,
        "common_rate_hz": session.common_rate_hz,
        "primary_system": primary,
        "screening": [s.to_json() for s in screening],
        "n_listeners_retained": len({s.listener_id for s in screening if not s.excluded}),
        "n_listeners_excluded": len(excluded),
        "conditions": rows,
        "pairwise_vs_primary": pairwise,
        "warnings": warnings,
    }

"""HTTP service for running listening tests.

Serves blinded trial payloads and stimulus audio, collects complete rating
sets into an append-only log, and produces the screening/score report. A
static mount point hosts the browser frontend bundle when one is built.

JSON surface:
  POST /api/sessions {manifest_ref, seed, trials_per_listener} -> {session_id}
  GET  /api/sessions/{s}/listeners/{l}/next -> blinded trial or {done: true}
  GET  /api/stimuli/{id} -> WAV bytes
  POST /api/ratings {listener, trial, scores: [{stimulus_id, score}]}
  GET  /api/sessions/{s}/report -> screening + per-condition statistics
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse, Response

from .errors import ValidationError
from .mushra import MushraSession, RatingStore, build_session, mushra_report, submit_ratings


class SessionRegistry:
    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self.sessions: dict[str, MushraSession] = {}
        self.stores: dict[str, RatingStore] = {}
        self.stimulus_index: dict[str, tuple[str, Path]] = {}

    def register(self, session: MushraSession) -> None:
        self.sessions[session.session_id] = session
        self.stores[session.session_id] = RatingStore(session.root / "ratings.jsonl")
        for trial in session.trials:
            self.stimulus_index[trial.reference_stimulus_id] = (
                session.session_id, session.root / trial.reference_wav_path,
            )
            for stim in trial.stimuli:
                self.stimulus_index[stim.stimulus_id] = (session.session_id, session.root / stim.wav_path)

    def load_existing(self) -> None:
        if not self.data_dir.exists():
            return
        for sub in sorted(self.data_dir.iterdir()):
            if (sub / "session.json").exists():
                self.register(MushraSession.load(sub))

    def get(self, session_id: str) -> MushraSession:
        if session_id not in self.sessions:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return self.sessions[session_id]


def make_app(data_dir, ui_dir=None) -> FastAPI:
    app = FastAPI(title="mushra-service")
    registry = SessionRegistry(data_dir)
    registry.load_existing()
    app.state.registry = registry

    @app.get("/api/health")
    def health():
        return {"status": "ok", "sessions": sorted(registry.sessions)}

    @app.post("/api/sessions")
    def create_session(body: dict):
        manifest_ref = body.get("manifest_ref")
        if not manifest_ref:
            raise HTTPException(status_code=422, detail="manifest_ref is required")
        seed = int(body.get("seed", 0))
        trials_per_listener = int(body.get("trials_per_listener", 0) or 0)
        if trials_per_listener < 1:
            raise HTTPException(status_code=422, detail="trials_per_listener must be a positive integer")
        out_dir = registry.data_dir / f"session-{seed}-{trials_per_listener}-{abs(hash(manifest_ref)) % 10**8}"
        try:
            session = build_session(
                manifest_ref, out_dir, seed=seed, trials_per_listener=trials_per_listener,
                anchor_mode=body.get("anchor_mode", "lowpass"),
            )
        except (ValidationError, FileNotFoundError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        registry.register(session)
        return {"session_id": session.session_id, "n_trials": len(session.trials)}

    @app.get("/api/sessions/{session_id}/listeners/{listener_id}/next")
    def next_trial(session_id: str, listener_id: str):
        session = registry.get(session_id)
        store = registry.stores[session_id]
        assigned = session.trials_for_listener(listener_id)
        done_trials = {
            r.trial_id for r in store.load() if r.listener_id == listener_id
        }
        n_done = sum(1 for t in assigned if t in done_trials)
        for trial_id in assigned:
            if trial_id in done_trials:
                continue
            trial = session.trial_by_id(trial_id)
            order = session.presentation_order(listener_id, trial_id)
            # blinded payload: stimulus ids only, no condition labels anywhere
            return {
                "done": False,
                "trial_id": trial.trial_id,
                "context": trial.context,
                "reference_stimulus_id": trial.reference_stimulus_id,
                "stimuli": [{"stimulus_id": sid} for sid in order],
                "progress": {"n_done": n_done, "n_total": len(assigned)},
            }
        return {"done": True, "progress": {"n_done": n_done, "n_total": len(assigned)}}

    @app.get("/api/stimuli/{stimulus_id}")
    def get_stimulus(stimulus_id: str):
        entry = registry.stimulus_index.get(stimulus_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"unknown stimulus {stimulus_id!r}")
        _, path = entry
        return Response(content=path.read_bytes(), media_type="audio/wav")

    @app.post("/api/ratings")
    def post_ratings(body: dict):
        listener = body.get("listener", "")
        trial_id = body.get("trial", "")
        raw_scores = body.get("scores", [])
        session = None
        for s in registry.sessions.values():
            if s.trial_by_id(trial_id) is not None:
                session = s
                break
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown trial {trial_id!r}")
        scores = {}
        for row in raw_scores:
            if not isinstance(row, dict) or "stimulus_id" not in row or "score" not in row:
                raise HTTPException(status_code=422, detail="scores must be [{stimulus_id, score}]")
            scores[row["stimulus_id"]] = row["score"]
        try:
            status = submit_ratings(session, registry.stores[session.session_id], listener, trial_id, scores)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except ValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"status": status}

    @app.get("/api/sessions/{session_id}/report")
    def report(session_id: str):
        session = registry.get(session_id)
        ratings = registry.stores[session_id].load()
        return JSONResponse(mushra_report(session, ratings))

    if ui_dir is not None and Path(ui_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app

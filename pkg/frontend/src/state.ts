// Trial-screen state: which stimuli have been played, which scores are set,
// and when submission becomes legal. Pure functions over immutable objects
// so the rules can be tested without a DOM or an audio stack.

import type { RatingSubmission, TrialPayload } from "./types.js";

export type PlaybackGate = "once" | "full" | "none";

export interface StimulusState {
  stimulusId: string;
  played: boolean;
  score: number | null;
}

export interface TrialState {
  trialId: string;
  referenceId: string;
  prompt: string;
  imageRef: string | null;
  gate: PlaybackGate;
  stimuli: StimulusState[];
}

export function initTrialState(payload: TrialPayload, gate: PlaybackGate = "once"): TrialState {
  return {
    trialId: payload.trial_id,
    referenceId: payload.reference_stimulus_id,
    prompt: payload.context.prompt,
    imageRef: payload.context.image_ref,
    gate,
    stimuli: payload.stimuli.map((s) => ({
      stimulusId: s.stimulus_id,
      played: gate === "none",
      score: null,
    })),
  };
}

export function markPlayed(state: TrialState, stimulusId: string): TrialState {
  return {
    ...state,
    stimuli: state.stimuli.map((s) =>
      s.stimulusId === stimulusId ? { ...s, played: true } : s,
    ),
  };
}

/** Clamp to an integer in 0..100; slider values must round-trip exactly. */
export function clampScore(value: number): number {
  if (Number.isNaN(value)) return 0;
  return Math.min(100, Math.max(0, Math.round(value)));
}

export function setScore(state: TrialState, stimulusId: string, value: number): TrialState {
  const score = clampScore(value);
  return {
    ...state,
    stimuli: state.stimuli.map((s) =>
      s.stimulusId === stimulusId ? { ...s, score } : s,
    ),
  };
}

export interface PendingActions {
  unplayed: string[];
  unscored: string[];
}

export function pendingActions(state: TrialState): PendingActions {
  return {
    unplayed: state.stimuli.filter((s) => !s.played).map((s) => s.stimulusId),
    unscored: state.stimuli.filter((s) => s.score === null).map((s) => s.stimulusId),
  };
}

/** Submit unlocks only when every stimulus was played and every score is set. */
export function canSubmit(state: TrialState): boolean {
  const pending = pendingActions(state);
  return pending.unplayed.length === 0 && pending.unscored.length === 0;
}

export function buildSubmission(state: TrialState, listener: string): RatingSubmission {
  if (!canSubmit(state)) {
    throw new Error("submission attempted before every stimulus was played and scored");
  }
  return {
    listener,
    trial: state.trialId,
    scores: state.stimuli.map((s) => ({ stimulus_id: s.stimulusId, score: s.score as number })),
  };
}

// Verbal anchors rendered beside the 0..100 scale.
export const SCALE_ANCHORS: ReadonlyArray<{ at: number; label: string }> = [
  { at: 100, label: "Excellent" },
  { at: 80, label: "Good" },
  { at: 60, label: "Fair" },
  { at: 40, label: "Poor" },
  { at: 20, label: "Bad" },
];

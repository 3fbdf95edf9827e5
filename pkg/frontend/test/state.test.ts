import { describe, expect, it } from "vitest";

import {
  buildSubmission,
  canSubmit,
  clampScore,
  initTrialState,
  markPlayed,
  pendingActions,
  setScore,
} from "../src/state.js";
import type { TrialPayload } from "../src/types.js";

const payload: TrialPayload = {
  done: false,
  trial_id: "trial-x",
  context: { prompt: "a small room", image_ref: null },
  reference_stimulus_id: "st-ref",
  stimuli: [{ stimulus_id: "st-1" }, { stimulus_id: "st-2" }, { stimulus_id: "st-3" }],
  progress: { n_done: 0, n_total: 2 },
};

function fullyRated() {
  let state = initTrialState(payload);
  for (const id of ["st-1", "st-2", "st-3"]) {
    state = markPlayed(state, id);
    state = setScore(state, id, 70);
  }
  return state;
}

describe("submit gating", () => {
  it("starts disabled", () => {
    const state = initTrialState(payload);
    expect(canSubmit(state)).toBe(false);
    expect(pendingActions(state).unplayed).toHaveLength(3);
    expect(pendingActions(state).unscored).toHaveLength(3);
  });

  it("enables only when every stimulus is played and scored", () => {
    expect(canSubmit(fullyRated())).toBe(true);
  });

  it("one unplayed stimulus keeps submit disabled", () => {
    let state = fullyRated();
    state = {
      ...state,
      stimuli: state.stimuli.map((s) =>
        s.stimulusId === "st-2" ? { ...s, played: false } : s,
      ),
    };
    expect(canSubmit(state)).toBe(false);
    expect(pendingActions(state).unplayed).toEqual(["st-2"]);
  });

  it("one unset score keeps submit disabled", () => {
    let state = initTrialState(payload);
    for (const id of ["st-1", "st-2", "st-3"]) state = markPlayed(state, id);
    state = setScore(state, "st-1", 10);
    state = setScore(state, "st-3", 90);
    expect(canSubmit(state)).toBe(false);
    expect(pendingActions(state).unscored).toEqual(["st-2"]);
  });

  it("a score of 0 counts as set", () => {
    let state = fullyRated();
    state = setScore(state, "st-1", 0);
    expect(canSubmit(state)).toBe(true);
  });

  it("gate 'none' skips the playback requirement", () => {
    let state = initTrialState(payload, "none");
    for (const id of ["st-1", "st-2", "st-3"]) state = setScore(state, id, 40);
    expect(canSubmit(state)).toBe(true);
  });
});

describe("score handling", () => {
  it("clamps to integers 0..100", () => {
    expect(clampScore(-5)).toBe(0);
    expect(clampScore(101)).toBe(100);
    expect(clampScore(49.6)).toBe(50);
    expect(clampScore(Number.NaN)).toBe(0);
  });

  it("submission carries integer-exact scores for every stimulus", () => {
    let state = fullyRated();
    state = setScore(state, "st-2", 33.4);
    const body = buildSubmission(state, "listener-7");
    expect(body.listener).toBe("listener-7");
    expect(body.trial).toBe("trial-x");
    expect(body.scores).toEqual([
      { stimulus_id: "st-1", score: 70 },
      { stimulus_id: "st-2", score: 33 },
      { stimulus_id: "st-3", score: 70 },
    ]);
    for (const entry of body.scores) {
      expect(Number.isInteger(entry.score)).toBe(true);
    }
  });

  it("refuses to build a submission before the gate opens", () => {
    expect(() => buildSubmission(initTrialState(payload), "l")).toThrow();
  });
});

describe("blindness", () => {
  it("state never contains condition labels, only opaque ids", () => {
    const state = fullyRated();
    const text = JSON.stringify(state);
    for (const label of ["hidden_reference", "anchor", "condition", "label"]) {
      expect(text).not.toContain(label);
    }
  });
});

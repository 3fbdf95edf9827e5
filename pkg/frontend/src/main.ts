// Trial screen: labeled reference plus blinded stimuli with sliders, looping
// A/B playback, gated submission, and a completion screen. All state is
// server-authoritative; reloading resumes at the first unrated trial.

import { ApiError, fetchNextTrial, stimulusUrl, submitRatings } from "./api.js";
import {
  PlaybackGate,
  SCALE_ANCHORS,
  TrialState,
  buildSubmission,
  canSubmit,
  clampScore,
  initTrialState,
  markPlayed,
  pendingActions,
  setScore,
} from "./state.js";
import { LoopingPlayer } from "./player.js";
import type { TrialPayload } from "./types.js";

const params = new URLSearchParams(window.location.search);
const SESSION = params.get("session") ?? "";
const LISTENER = params.get("listener") ?? "";
const GATE = (params.get("gate") ?? "once") as PlaybackGate;
const BASE = "";

const root = document.getElementById("app") as HTMLElement;

let state: TrialState | null = null;
let player: LoopingPlayer | null = null;
let busy = false;

function el(tag: string, cls?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function banner(kind: "error" | "info", text: string, retry?: () => void): HTMLElement {
  const box = el("div", `banner ${kind}`);
  box.append(el("span", "", text));
  if (retry) {
    const btn = el("button", "retry", "Retry") as HTMLButtonElement;
    btn.addEventListener("click", retry);
    box.append(btn);
  }
  return box;
}

function ensurePlayer(): LoopingPlayer {
  if (!player) {
    player = new LoopingPlayer(new AudioContext());
  }
  return player;
}

async function start(): Promise<void> {
  if (!SESSION || !LISTENER) {
    root.replaceChildren(
      banner("error", "Missing ?session=...&listener=... in the URL."),
    );
    return;
  }
  await loadNextTrial();
}

async function loadNextTrial(): Promise<void> {
  root.replaceChildren(el("p", "status", "Loading trial..."));
  let next;
  try {
    next = await fetchNextTrial(BASE, SESSION, LISTENER);
  } catch (err) {
    root.replaceChildren(banner("error", `Could not reach the test server: ${err}`, () => void loadNextTrial()));
    return;
  }
  if (next.done) {
    renderCompletion(next.progress.n_done, next.progress.n_total);
    return;
  }
  player?.stop();
  player = null;
  state = initTrialState(next, GATE);
  renderTrial(next);
}

function renderCompletion(done: number, total: number): void {
  const box = el("div", "completion");
  box.append(el("h1", "", "All done"));
  box.append(el("p", "", `You rated ${done} of ${total} assigned trials. Thank you for listening.`));
  root.replaceChildren(box);
}

function playStimulus(id: string): void {
  const p = ensurePlayer();
  void p
    .load(id, stimulusUrl(BASE, id))
    .then(() => {
      p.switchTo(id);
      if (state && GATE === "once") {
        state = markPlayed(state, id);
      }
      if (state && GATE === "full") {
        const check = () => {
          if (state && p.playedFully(id)) {
            state = markPlayed(state, id);
            refreshControls();
          } else if (p.playing === id) {
            window.setTimeout(check, 250);
          }
        };
        window.setTimeout(check, 250);
      }
      refreshControls();
    })
    .catch((err) => {
      root.prepend(banner("error", `Playback failed: ${err}`));
    });
}

function renderTrial(payload: TrialPayload): void {
  if (!state) return;
  const screen = el("div", "trial");

  const header = el("header");
  header.append(el("h1", "", "Listening test"));
  header.append(
    el("p", "progress", `Trial ${payload.progress.n_done + 1} of ${payload.progress.n_total}`),
  );
  screen.append(header);

  const context = el("section", "context");
  context.append(el("h2", "", "Room"));
  context.append(el("p", "prompt", state.prompt));
  if (state.imageRef) {
    const img = el("img", "room-image") as HTMLImageElement;
    img.src = state.imageRef;
    img.alt = "room under test";
    context.append(img);
  }
  context.append(
    el("p", "instructions",
       "Rate how well each stimulus matches the reference in this room. " +
       "Play every stimulus at least once and set every slider before submitting."),
  );
  screen.append(context);

  const refRow = el("section", "reference");
  const refBtn = el("button", "play reference-btn", "Play reference") as HTMLButtonElement;
  refBtn.addEventListener("click", () => playStimulus(state!.referenceId));
  refRow.append(refBtn);
  screen.append(refRow);

  const list = el("section", "stimuli");
  state.stimuli.forEach((stim, index) => {
    const row = el("div", "stimulus-row");
    row.dataset.stimulus = stim.stimulusId;

    const name = String.fromCharCode(65 + index); // blinded: A, B, C...
    const playBtn = el("button", "play", `Play ${name}`) as HTMLButtonElement;
    playBtn.addEventListener("click", () => playStimulus(stim.stimulusId));
    row.append(playBtn);

    const playedMark = el("span", "played-indicator", "not played yet");
    playedMark.dataset.role = "played";
    row.append(playedMark);

    const slider = el("input", "score") as HTMLInputElement;
    slider.type = "range";
    slider.min = "0";
    slider.max = "100";
    slider.step = "1";
    slider.value = "50";
    slider.dataset.set = "false";
    slider.addEventListener("input", () => {
      state = setScore(state!, stim.stimulusId, clampScore(Number(slider.value)));
      slider.dataset.set = "true";
      refreshControls();
    });
    row.append(slider);

    const value = el("span", "score-value", "-");
    value.dataset.role = "value";
    row.append(value);

    list.append(row);
  });

  const scale = el("aside", "scale");
  for (const anchor of SCALE_ANCHORS) {
    scale.append(el("div", "anchor", `${anchor.at} ${anchor.label}`));
  }
  list.append(scale);
  screen.append(list);

  const footer = el("footer");
  const stopBtn = el("button", "stop", "Stop playback") as HTMLButtonElement;
  stopBtn.addEventListener("click", () => player?.stop());
  footer.append(stopBtn);

  const submit = el("button", "submit", "Submit ratings") as HTMLButtonElement;
  submit.disabled = true;
  submit.addEventListener("click", () => void submitCurrent());
  footer.append(submit);

  const hint = el("p", "gate-hint", "");
  hint.dataset.role = "hint";
  footer.append(hint);
  screen.append(footer);

  root.replaceChildren(screen);
  refreshControls();
}

function refreshControls(): void {
  if (!state) return;
  const submit = root.querySelector<HTMLButtonElement>("button.submit");
  const hint = root.querySelector<HTMLElement>("[data-role=hint]");
  for (const row of root.querySelectorAll<HTMLElement>(".stimulus-row")) {
    const id = row.dataset.stimulus!;
    const stim = state.stimuli.find((s) => s.stimulusId === id);
    if (!stim) continue;
    const mark = row.querySelector<HTMLElement>("[data-role=played]");
    if (mark) {
      mark.textContent = stim.played ? "played" : "not played yet";
      mark.classList.toggle("ok", stim.played);
    }
    const value = row.querySelector<HTMLElement>("[data-role=value]");
    if (value) value.textContent = stim.score === null ? "-" : String(stim.score);
  }
  if (submit) submit.disabled = busy || !canSubmit(state);
  if (hint) {
    const pending = pendingActions(state);
    if (pending.unplayed.length || pending.unscored.length) {
      hint.textContent =
        `${pending.unplayed.length} stimulus(es) not played, ` +
        `${pending.unscored.length} score(s) unset`;
    } else {
      hint.textContent = "Ready to submit.";
    }
  }
}

async function submitCurrent(): Promise<void> {
  if (!state || busy || !canSubmit(state)) return;
  busy = true;
  refreshControls();
  const body = buildSubmission(state, LISTENER);
  try {
    await submitRatings(BASE, body);
    player?.stop();
    busy = false;
    await loadNextTrial();
  } catch (err) {
    busy = false;
    refreshControls();
    const message =
      err instanceof ApiError
        ? `The server rejected the submission: ${err.detail}`
        : `Network failure, nothing was lost: ${err}`;
    // slider state is untouched; the listener can retry
    root.prepend(banner("error", message, () => void submitCurrent()));
  }
}

void start();

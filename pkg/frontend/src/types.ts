// Wire types for the listening-test API. Stimuli arrive blinded: ids only,
// never condition labels.

export interface TrialContext {
  prompt: string;
  image_ref: string | null;
}

export interface BlindStimulus {
  stimulus_id: string;
}

export interface Progress {
  n_done: number;
  n_total: number;
}

export interface TrialPayload {
  done: false;
  trial_id: string;
  context: TrialContext;
  reference_stimulus_id: string;
  stimuli: BlindStimulus[];
  progress: Progress;
}

export interface SessionDone {
  done: true;
  progress: Progress;
}

export type NextResponse = TrialPayload | SessionDone;

export interface ScoreEntry {
  stimulus_id: string;
  score: number;
}

export interface RatingSubmission {
  listener: string;
  trial: string;
  scores: ScoreEntry[];
}

export interface SubmitResult {
  status: "stored" | "unchanged";
}

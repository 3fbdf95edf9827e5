// Thin typed client for the listening-test service.

import type { NextResponse, RatingSubmission, SubmitResult } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function parseDetail(resp: Response): Promise<string> {
  try {
    const blob = await resp.json();
    return typeof blob.detail === "string" ? blob.detail : JSON.stringify(blob.detail ?? blob);
  } catch {
    return resp.statusText;
  }
}

export async function fetchNextTrial(
  base: string,
  sessionId: string,
  listenerId: string,
): Promise<NextResponse> {
  const resp = await fetch(
    `${base}/api/sessions/${encodeURIComponent(sessionId)}/listeners/${encodeURIComponent(listenerId)}/next`,
  );
  if (!resp.ok) throw new ApiError(resp.status, await parseDetail(resp));
  return (await resp.json()) as NextResponse;
}

export function stimulusUrl(base: string, stimulusId: string): string {
  return `${base}/api/stimuli/${encodeURIComponent(stimulusId)}`;
}

export async function submitRatings(base: string, body: RatingSubmission): Promise<SubmitResult> {
  const resp = await fetch(`${base}/api/ratings`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!resp.ok) throw new ApiError(resp.status, await parseDetail(resp));
  return (await resp.json()) as SubmitResult;
}

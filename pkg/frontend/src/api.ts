/** Typed client for the experiment service's HTTP+JSON endpoints. */

export interface StimulusRef {
  class_name: string;
  image_id: string;
  family: string;
  seed: number | null;
}

export interface TrialSpec {
  id: string;
  task: "oddity" | "match2afc";
  condition: string;
  eccentricity_deg: number;
  stimuli: StimulusRef[];
  side: "left" | "right";
}

export interface TrialTiming {
  stimulus_ms: number;
  mask_ms: number;
  iti_ms: number;
  intervals_ms: number[];
  refresh_hz: number;
}

export interface PlacementPx {
  eccentricity_px: number;
  offset_x_px: number;
  offset_y_px: number;
  stimulus_px: number;
}

export interface NextTrialResponse {
  done: boolean;
  status?: string;
  trial?: TrialSpec & { stimulus_urls: string[] };
  cursor?: number;
  n_trials?: number;
  timing?: TrialTiming;
  placement_px?: PlacementPx | null;
}

export interface Telemetry {
  intervals_ms: number[];
  response_time_ms?: number;
  frames?: number[];
  aborted?: boolean;
}

export interface TrialRecord {
  trial_id: string;
  response_index: number;
  correct: boolean;
  timing_suspect: boolean;
  telemetry_valid: boolean;
}

export interface ResultsCell {
  condition: string;
  eccentricity_deg: number;
  k: number;
  n: number;
  p: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public body: Record<string, unknown> = {},
  ) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(url, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  const body = (await resp.json()) as Record<string, unknown>;
  if (!resp.ok) {
    throw new ApiError(
      resp.status,
      String(body["code"] ?? resp.status),
      String(body["message"] ?? resp.statusText),
      body,
    );
  }
  return body as T;
}

export class ExperimentApi {
  constructor(private baseUrl: string) {}

  url(path: string): string {
    return this.baseUrl + path;
  }

  healthz(): Promise<{ status: string }> {
    return request(this.url("/healthz"));
  }

  createSession(body: {
    subject: string;
    config: Record<string, unknown>;
    geometry?: Record<string, unknown>;
    idempotency_key?: string;
    seed?: number;
  }): Promise<{ session_id: string; n_trials: number }> {
    return request(this.url("/sessions"), {
      method: "POST",
      body: JSON.stringify(body),
    });
  }

  putGeometry(
    sessionId: string,
    geometry: {
      screen_px: [number, number];
      screen_cm: [number, number];
      viewing_distance_cm: number;
    },
  ): Promise<{ px_per_degree: number; stimulus_px: number }> {
    return request(this.url(`/sessions/${sessionId}/geometry`), {
      method: "PUT",
      body: JSON.stringify(geometry),
    });
  }

  nextTrial(sessionId: string): Promise<NextTrialResponse> {
    return request(this.url(`/sessions/${sessionId}/next`));
  }

  submitResponse(
    sessionId: string,
    body: { trial_id: string; response_index: number; telemetry: Telemetry },
  ): Promise<{ record: TrialRecord; cursor: number; status: string }> {
    return request(this.url(`/sessions/${sessionId}/responses`), {
      method: "POST",
      body: JSON.stringify(body),
    });
  }

  results(sessionId: string): Promise<{ cells: ResultsCell[]; status: string }> {
    return request(this.url(`/sessions/${sessionId}/results`));
  }
}

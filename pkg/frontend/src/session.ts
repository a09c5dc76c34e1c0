/**
 * Session runner: preload, run, submit, repeat.
 *
 * Submission is write-behind with retries: the response is queued
 * immediately and the inter-trial interval overlaps the network round trip.
 * The server's exactly-once guard makes retries safe - a duplicate rejection
 * that echoes the stored record counts as delivered. Because the service
 * serves trials strictly in order, the next trial is fetched only once the
 * previous response is acknowledged.
 */

import { ApiError, ExperimentApi, Telemetry } from "./api.js";
import { BitmapLoader, preloadAll } from "./preload.js";
import { TrialOutcome, TrialRunner } from "./trial.js";

export interface SessionEvents {
  onTrialStart?(trialId: string, index: number, total: number): void;
  onTrialDone?(trialId: string, outcome: TrialOutcome): void;
  onRetry?(trialId: string, attempt: number, error: unknown): void;
}

export class SubmissionQueue {
  constructor(
    private api: ExperimentApi,
    private sessionId: string,
    private maxAttempts = 5,
    private events: SessionEvents = {},
  ) {}

  async deliver(trialId: string, responseIndex: number, telemetry: Telemetry) {
    let attempt = 0;
    for (;;) {
      attempt += 1;
      try {
        return await this.api.submitResponse(this.sessionId, {
          trial_id: trialId,
          response_index: responseIndex,
          telemetry,
        });
      } catch (err) {
        if (err instanceof ApiError && err.code === "duplicate_response") {
          // a lost ack, not a lost response: the server already has it
          return err.body as never;
        }
        if (attempt >= this.maxAttempts) throw err;
        this.events.onRetry?.(trialId, attempt, err);
        await new Promise((r) => setTimeout(r, Math.min(250 * attempt, 2000)));
      }
    }
  }
}

export class SessionRunner {
  constructor(
    private api: ExperimentApi,
    private runner: TrialRunner,
    private loader: BitmapLoader,
    private events: SessionEvents = {},
  ) {}

  /** Run every remaining trial of the session; resolves when complete. */
  async runAll(sessionId: string): Promise<number> {
    const queue = new SubmissionQueue(this.api, sessionId, 5, this.events);
    let completed = 0;
    for (;;) {
      const next = await this.api.nextTrial(sessionId);
      if (next.done) return completed;
      const trial = next.trial!;
      // preload gate: every stimulus decoded before anything is shown
      const bitmaps = await preloadAll(
        trial.stimulus_urls.map((u) => this.api.url(u)),
        this.loader,
      );
      this.events.onTrialStart?.(trial.id, next.cursor ?? 0, next.n_trials ?? 0);
      const outcome = await this.runner.run({ payload: next, bitmaps });
      await queue.deliver(trial.id, outcome.responseIndex, outcome.telemetry);
      this.events.onTrialDone?.(trial.id, outcome);
      completed += 1;
    }
  }
}

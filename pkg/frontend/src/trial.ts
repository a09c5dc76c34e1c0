/**
 * Trial state machine.
 *
 * Oddity: three sequential 100 ms peripheral presentations separated by
 * blank masks, fixation persistent throughout, then a response screen
 * (keys 1/2/3 map to intervals 1/2/3). Matching: a 100 ms foveal template,
 * a mask, then a 100 ms left/right peripheral pair (ArrowLeft/ArrowRight).
 *
 * Responses are gated: the response source is only consulted after the
 * response screen is up, so early keypresses can never submit. Telemetry
 * always reports the measured interval durations, including aborted trials.
 */

import type { NextTrialResponse, Telemetry } from "./api.js";
import type { StimulusBitmap } from "./preload.js";
import { FramePresenter, IntervalPlan, IntervalTelemetry } from "./timing.js";

export interface Display {
  /** Stimulus plus the persistent fixation marker. */
  drawStimulus(bitmap: StimulusBitmap, role: "peripheral" | "foveal" | "pair-left" | "pair-right"): void;
  drawPair(left: StimulusBitmap, right: StimulusBitmap): void;
  /** Mid-gray blank with the fixation marker still visible. */
  drawBlank(): void;
  drawResponseScreen(task: "oddity" | "match2afc"): void;
  clear(): void;
}

export interface ResponseSource {
  /** Resolves with the first accepted key pressed AFTER this call. */
  waitFor(keys: string[], sinceMs: number): Promise<{ key: string; timeMs: number }>;
}

export const ODDITY_KEYS: Record<string, number> = { "1": 0, "2": 1, "3": 2 };
export const MATCH_KEYS: Record<string, number> = { ArrowLeft: 0, ArrowRight: 1 };

export interface TrialPresentation {
  payload: NextTrialResponse; // from next_trial, done === false
  bitmaps: StimulusBitmap[];  // decoded, in stimulus order
}

export interface TrialOutcome {
  responseIndex: number;
  responseTimeMs: number;
  telemetry: Telemetry;
  intervals: IntervalTelemetry[];
}

export class TrialRunner {
  constructor(
    private presenter: FramePresenter,
    private display: Display,
    private responses: ResponseSource,
  ) {}

  private plansFor(p: TrialPresentation): IntervalPlan[] {
    const trial = p.payload.trial!;
    const timing = p.payload.timing!;
    const bitmaps = p.bitmaps;
    if (trial.task === "oddity") {
      if (bitmaps.length !== 3) throw new Error("oddity trial needs 3 stimuli");
      const plans: IntervalPlan[] = [];
      bitmaps.forEach((bm, i) => {
        if (i > 0) {
          plans.push({
            name: `mask${i}`,
            nominalMs: timing.mask_ms,
            draw: () => this.display.drawBlank(),
          });
        }
        plans.push({
          name: `stimulus${i + 1}`,
          nominalMs: timing.stimulus_ms,
          draw: () => this.display.drawStimulus(bm, "peripheral"),
        });
      });
      return plans;
    }
    if (bitmaps.length !== 3) throw new Error("matching trial needs 3 stimuli");
    const [template, left, right] = bitmaps as [StimulusBitmap, StimulusBitmap, StimulusBitmap];
    return [
      {
        name: "template",
        nominalMs: timing.stimulus_ms,
        draw: () => this.display.drawStimulus(template, "foveal"),
      },
      {
        name: "mask",
        nominalMs: timing.mask_ms,
        draw: () => this.display.drawBlank(),
      },
      {
        name: "pair",
        nominalMs: timing.stimulus_ms,
        draw: () => this.display.drawPair(left, right),
      },
    ];
  }

  async run(p: TrialPresentation): Promise<TrialOutcome> {
    const trial = p.payload.trial!;
    if (p.bitmaps.some((b) => b.handle === undefined || b.handle === null)) {
      throw new Error("stimuli must be decoded before the trial starts");
    }
    const intervals = await this.presenter.run(this.plansFor(p));
    this.display.drawResponseScreen(trial.task);
    const responseScreenAt = intervals[intervals.length - 1]!.offsetMs;
    const keyMap = trial.task === "oddity" ? ODDITY_KEYS : MATCH_KEYS;
    const { key, timeMs } = await this.responses.waitFor(
      Object.keys(keyMap),
      responseScreenAt,
    );
    this.display.drawBlank();
    return {
      responseIndex: keyMap[key]!,
      responseTimeMs: timeMs - responseScreenAt,
      telemetry: {
        intervals_ms: intervals.map((iv) => iv.measuredMs),
        frames: intervals.map((iv) => iv.frames),
        response_time_ms: timeMs - responseScreenAt,
      },
      intervals,
    };
  }
}

/**
 * Frame-locked interval presentation.
 *
 * Millisecond intervals are realized as the nearest whole number of display
 * frames, counted on the refresh callback; wall-clock timers cannot honor a
 * 100 ms contract. Telemetry reports the measured onset/offset of every
 * interval from the display clock - realized values, never the nominal ones.
 */

export interface FrameScheduler {
  request(cb: (timeMs: number) => void): number;
  cancel(id: number): void;
}

/** requestAnimationFrame-backed scheduler for the browser. */
export const browserScheduler: FrameScheduler = {
  request: (cb) => requestAnimationFrame(cb),
  cancel: (id) => cancelAnimationFrame(id),
};

/** Deterministic scheduler for tests and scripted sessions. */
export class SyntheticScheduler implements FrameScheduler {
  private now = 0;
  private next = 1;
  private pending = new Map<number, (t: number) => void>();

  constructor(private frameMs: number = 1000 / 60) {}

  request(cb: (t: number) => void): number {
    const id = this.next++;
    this.pending.set(id, cb);
    queueMicrotask(() => {
      if (this.pending.delete(id)) {
        this.now += this.frameMs;
        cb(this.now);
      }
    });
    return id;
  }

  cancel(id: number): void {
    this.pending.delete(id);
  }
}

export interface IntervalPlan {
  name: string;
  nominalMs: number;
  /** Called once at the interval's first frame to put content on screen. */
  draw: () => void;
}

export interface IntervalTelemetry {
  name: string;
  nominalMs: number;
  frames: number;
  onsetMs: number;
  offsetMs: number;
  measuredMs: number;
}

function nextFrame(sched: FrameScheduler): Promise<number> {
  return new Promise((resolve) => sched.request(resolve));
}

export class FramePresenter {
  constructor(
    private sched: FrameScheduler,
    private frameMs: number = 1000 / 60,
  ) {}

  framesFor(nominalMs: number): number {
    return Math.max(1, Math.round(nominalMs / this.frameMs));
  }

  /**
   * Present the intervals back to back, frame-counted. The offset of each
   * interval is the onset of the next content change, so measured durations
   * reflect what was actually on screen.
   */
  async run(plans: IntervalPlan[]): Promise<IntervalTelemetry[]> {
    const telemetry: IntervalTelemetry[] = [];
    let t = await nextFrame(this.sched); // align to the refresh
    for (const plan of plans) {
      plan.draw();
      const onset = t;
      const frames = this.framesFor(plan.nominalMs);
      for (let i = 0; i < frames; i++) {
        t = await nextFrame(this.sched);
      }
      telemetry.push({
        name: plan.name,
        nominalMs: plan.nominalMs,
        frames,
        onsetMs: onset,
        offsetMs: t,
        measuredMs: t - onset,
      });
    }
    return telemetry;
  }
}

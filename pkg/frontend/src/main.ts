/**
 * Browser entry point: calibration form, fullscreen gate, canvas display,
 * keyboard responses, and the session loop against the experiment service.
 */

import { ExperimentApi } from "./api.js";
import { degToPx, validateGeometry, DisplayGeometry } from "./geometry.js";
import { browserLoader, StimulusBitmap } from "./preload.js";
import { SessionRunner } from "./session.js";
import { browserScheduler, FramePresenter } from "./timing.js";
import { Display, ResponseSource, TrialRunner } from "./trial.js";

const GRAY = "#7f7f7f";
const FIXATION = "#ff8c00";

class CanvasDisplay implements Display {
  private ctx: CanvasRenderingContext2D;
  private placement = { offsetX: 0, offsetY: 0, sizePx: 256, side: 1 };

  constructor(private canvas: HTMLCanvasElement) {
    this.ctx = canvas.getContext("2d")!;
  }

  setPlacement(offsetX: number, offsetY: number, sizePx: number) {
    this.placement = { offsetX, offsetY, sizePx, side: Math.sign(offsetX) || 1 };
  }

  private center(): [number, number] {
    return [this.canvas.width / 2, this.canvas.height / 2];
  }

  private fill() {
    this.ctx.fillStyle = GRAY;
    this.ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
  }

  private fixation() {
    const [cx, cy] = this.center();
    this.ctx.fillStyle = FIXATION;
    this.ctx.beginPath();
    this.ctx.arc(cx, cy, 5, 0, 2 * Math.PI);
    this.ctx.fill();
  }

  private drawAt(bitmap: StimulusBitmap, dx: number, dy: number) {
    const [cx, cy] = this.center();
    const s = this.placement.sizePx;
    this.ctx.drawImage(
      bitmap.handle as ImageBitmap,
      cx + dx - s / 2,
      cy + dy - s / 2,
      s,
      s,
    );
  }

  drawStimulus(bitmap: StimulusBitmap, role: "peripheral" | "foveal" | "pair-left" | "pair-right") {
    this.fill();
    if (role === "foveal") {
      this.drawAt(bitmap, 0, 0);
    } else {
      this.drawAt(bitmap, this.placement.offsetX, this.placement.offsetY);
    }
    this.fixation();
  }

  drawPair(left: StimulusBitmap, right: StimulusBitmap) {
    this.fill();
    const e = Math.abs(this.placement.offsetX);
    this.drawAt(left, -e, this.placement.offsetY);
    this.drawAt(right, e, this.placement.offsetY);
    this.fixation();
  }

  drawBlank() {
    this.fill();
    this.fixation();
  }

  drawResponseScreen(task: "oddity" | "match2afc") {
    this.fill();
    this.fixation();
    this.ctx.fillStyle = "#ffffff";
    this.ctx.font = "20px sans-serif";
    this.ctx.textAlign = "center";
    const [cx, cy] = this.center();
    const prompt =
      task === "oddity"
        ? "Which interval was different?  1 / 2 / 3"
        : "Which side matched?  ← / →";
    this.ctx.fillText(prompt, cx, cy + 120);
  }

  clear() {
    this.fill();
  }
}

class KeyboardResponses implements ResponseSource {
  waitFor(keys: string[], _sinceMs: number): Promise<{ key: string; timeMs: number }> {
    return new Promise((resolve) => {
      const handler = (ev: KeyboardEvent) => {
        if (keys.includes(ev.key)) {
          window.removeEventListener("keydown", handler);
          resolve({ key: ev.key, timeMs: performance.now() });
        }
      };
      // listener attached only once the response screen is up, so earlier
      // presses can never submit
      window.addEventListener("keydown", handler);
    });
  }
}

function el<T extends HTMLElement>(id: string): T {
  return document.getElementById(id) as T;
}

async function start() {
  const api = new ExperimentApi("");
  const form = el<HTMLFormElement>("calibration");
  const status = el<HTMLElement>("status");
  const canvas = el<HTMLCanvasElement>("stage");

  form.addEventListener("submit", async (ev) => {
    ev.preventDefault();
    const read = (id: string) => {
      const v = el<HTMLInputElement>(id).value;
      return v === "" ? undefined : Number(v);
    };
    const check = validateGeometry({
      screenPx: [read("px-w") ?? NaN, read("px-h") ?? NaN] as [number, number],
      screenCm: [read("cm-w") ?? NaN, read("cm-h") ?? NaN] as [number, number],
      viewingDistanceCm: read("dist-cm"),
    });
    if (check.errors.length) {
      status.textContent = check.errors.join("; ");
      return;
    }
    if (check.warnings.length && !window.confirm(check.warnings.join("\n"))) {
      return;
    }
    const geometry = check.geometry as DisplayGeometry;
    const subject = el<HTMLInputElement>("subject").value || "anon";
    const configText = el<HTMLTextAreaElement>("config").value;

    const session = await api.createSession({
      subject,
      config: JSON.parse(configText),
      geometry: {
        screen_px: geometry.screenPx,
        screen_cm: geometry.screenCm,
        viewing_distance_cm: geometry.viewingDistanceCm,
      },
    });
    status.textContent = `session ${session.session_id}: ${session.n_trials} trials`;

    await document.documentElement.requestFullscreen().catch(() => {
      status.textContent += " (fullscreen refused; timing may suffer)";
    });
    form.hidden = true;
    canvas.hidden = false;
    canvas.width = geometry.screenPx[0];
    canvas.height = geometry.screenPx[1];

    const display = new CanvasDisplay(canvas);
    const refresh = 60;
    const presenter = new FramePresenter(browserScheduler, 1000 / refresh);
    const trialRunner = new TrialRunner(presenter, display, new KeyboardResponses());

    const runner = new SessionRunner(api, trialRunner, browserLoader, {
      onTrialStart: (id, i, n) => {
        const next = el<HTMLElement>("progress");
        next.textContent = `trial ${i + 1} / ${n}`;
      },
    });

    // placement comes from the service per trial; mirror it into the display
    const origNext = api.nextTrial.bind(api);
    api.nextTrial = async (sid: string) => {
      const payload = await origNext(sid);
      if (!payload.done && payload.placement_px) {
        const side = payload.trial!.side === "left" ? -1 : 1;
        display.setPlacement(
          side * Math.abs(payload.placement_px.offset_x_px),
          payload.placement_px.offset_y_px,
          payload.placement_px.stimulus_px,
        );
      } else if (!payload.done) {
        display.setPlacement(
          degToPx(payload.trial!.eccentricity_deg, geometry),
          0,
          degToPx(6.67, geometry),
        );
      }
      return payload;
    };

    const done = await runner.runAll(session.session_id);
    display.clear();
    status.textContent = `session complete: ${done} trials`;
    await document.exitFullscreen().catch(() => undefined);
  });
}

if (typeof document !== "undefined") {
  window.addEventListener("DOMContentLoaded", start);
}

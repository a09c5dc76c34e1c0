/**
 * Display-geometry calibration math (client-side mirror of the service).
 *
 * Stimulus sizes map proportionally: a stimulus spanning a fraction of the
 * screen's pixels spans the same fraction of the screen's total visual
 * angle.
 */

export interface DisplayGeometry {
  screenPx: [number, number]; // width, height
  screenCm: [number, number];
  viewingDistanceCm: number;
}

export function degreesPerScreen(g: DisplayGeometry): {
  horizontal: number;
  vertical: number;
} {
  const angle = (extentCm: number) =>
    (2 * Math.atan(extentCm / 2 / g.viewingDistanceCm) * 180) / Math.PI;
  return { horizontal: angle(g.screenCm[0]), vertical: angle(g.screenCm[1]) };
}

export function pxPerDegree(g: DisplayGeometry): number {
  return g.screenPx[1] / degreesPerScreen(g).vertical;
}

export function degToPx(deg: number, g: DisplayGeometry): number {
  if (deg < 0) throw new Error("visual angle must be >= 0");
  return deg * pxPerDegree(g);
}

export interface GeometryValidation {
  geometry?: DisplayGeometry;
  errors: string[];
  warnings: string[];
}

/** Validate raw calibration-form inputs. Missing or non-positive entries are
 * errors; an implausibly close viewing distance only warns (the form asks
 * for confirmation). */
export function validateGeometry(input: {
  screenPx?: [number, number];
  screenCm?: [number, number];
  viewingDistanceCm?: number;
}): GeometryValidation {
  const errors: string[] = [];
  const warnings: string[] = [];
  const { screenPx, screenCm, viewingDistanceCm } = input;
  if (!screenPx || screenPx.some((v) => !(v > 0))) {
    errors.push("screen resolution (px) is required and must be positive");
  }
  if (!screenCm || screenCm.some((v) => !(v > 0))) {
    errors.push("screen size (cm) is required and must be positive");
  }
  if (viewingDistanceCm === undefined || viewingDistanceCm === null) {
    errors.push("viewing distance is required");
  } else if (!(viewingDistanceCm > 0)) {
    errors.push("viewing distance must be positive");
  } else if (viewingDistanceCm < 10) {
    warnings.push(
      `viewing distance ${viewingDistanceCm} cm is implausibly close; confirm before continuing`,
    );
  }
  if (errors.length > 0) return { errors, warnings };
  return {
    geometry: {
      screenPx: screenPx as [number, number],
      screenCm: screenCm as [number, number],
      viewingDistanceCm: viewingDistanceCm as number,
    },
    errors,
    warnings,
  };
}

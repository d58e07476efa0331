/** Scene rendering: road strip with the stop bar at a fixed anchor,
 * vehicles to scale, signal head by phase, and the advisory circle. */

import { ego, type Frame, type Warning } from "./protocol.js";

/** The advisory circle never vanishes: 10 % of full size at u <= 0. */
export const MIN_DIAMETER_FRACTION = 0.1;

export const PHASE_FILL: Record<string, string> = {
  green: "#2ecc40",
  yellow: "#ffdc00",
  red: "#ff4136",
};

export interface CircleStyle {
  color: string;
  diameterPx: number;
}

/**
 * Visual style of the advisory circle. The fill color is the frame's own
 * color field (no client-side reclassification); the diameter scales
 * linearly with the advised intensity, clamped to a visible minimum.
 */
export function circleStyle(warning: Warning, maxDiameterPx: number): CircleStyle {
  if (!(maxDiameterPx > 0)) {
    throw new RangeError("maxDiameterPx must be positive");
  }
  const fraction = Math.min(1, Math.max(MIN_DIAMETER_FRACTION, warning.diameter_fraction));
  return {
    color: PHASE_FILL[warning.color] ?? warning.color,
    diameterPx: fraction * maxDiameterPx,
  };
}

export interface ViewTransform {
  /** Screen x of the stop bar (fixed anchor). */
  anchorPx: number;
  /** Pixels per meter. */
  scale: number;
}

export function viewTransform(canvasWidth: number, visibleMeters = 520): ViewTransform {
  return { anchorPx: canvasWidth * 0.88, scale: (canvasWidth * 0.86) / visibleMeters };
}

export function xToPx(view: ViewTransform, positionM: number): number {
  return view.anchorPx + positionM * view.scale;
}

export function renderScene(ctx: CanvasRenderingContext2D, frame: Frame): void {
  const { width, height } = ctx.canvas;
  const view = viewTransform(width);
  const roadY = height * 0.62;
  const laneHeight = 26;

  ctx.clearRect(0, 0, width, height);

  // road strip
  ctx.fillStyle = "#444";
  ctx.fillRect(0, roadY - laneHeight / 2, width, laneHeight);

  // stop bar at its fixed anchor
  const barX = xToPx(view, frame.stop_bar_position_m);
  ctx.fillStyle = "#fff";
  ctx.fillRect(barX - 2, roadY - laneHeight / 2, 4, laneHeight);

  // signal head colored by phase
  ctx.fillStyle = PHASE_FILL[frame.phase] ?? "#888";
  ctx.beginPath();
  ctx.arc(barX, roadY - laneHeight / 2 - 22, 10, 0, 2 * Math.PI);
  ctx.fill();

  // vehicles to scale (rear-bumper positions)
  for (const v of frame.vehicles) {
    const rear = xToPx(view, v.position_m - v.length_m);
    const lengthPx = Math.max(3, v.length_m * view.scale);
    ctx.fillStyle = v.is_ego ? "#0074d9" : "#aaaaaa";
    ctx.fillRect(rear, roadY - 7, lengthPx, 14);
  }

  // advisory circle
  if (frame.warning !== null) {
    const style = circleStyle(frame.warning, height * 0.4);
    ctx.globalAlpha = frame.warning.stale ? 0.45 : 1.0;
    ctx.fillStyle = style.color;
    ctx.beginPath();
    ctx.arc(width * 0.14, height * 0.3, style.diameterPx / 2, 0, 2 * Math.PI);
    ctx.fill();
    ctx.globalAlpha = 1.0;
  }

  // ego readout
  const egoVehicle = ego(frame);
  ctx.fillStyle = "#eee";
  ctx.font = "13px monospace";
  ctx.fillText(
    `t=${frame.t.toFixed(1)}s  v=${egoVehicle.speed_mps.toFixed(1)} m/s` +
      `  a=${egoVehicle.accel_mps2.toFixed(2)} m/s²` +
      `  d=${(-egoVehicle.position_m).toFixed(0)} m to bar` +
      (frame.baseline_warning ? "  [BASELINE WARN]" : ""),
    10,
    height - 12,
  );
}

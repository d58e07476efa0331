/** Wire types for the live session socket and strict frame decoding. */

import { z } from "zod";

export const SCHEMA = "redlight-frame-v1";

const vehicleSchema = z.object({
  id: z.string(),
  position_m: z.number(),
  speed_mps: z.number(),
  accel_mps2: z.number(),
  length_m: z.number().positive(),
  is_ego: z.boolean(),
});

const warningSchema = z.object({
  u: z.number().min(-20).max(100),
  color: z.enum(["green", "yellow", "red"]),
  diameter_fraction: z.number().min(0).max(1),
  stale: z.boolean(),
});

const planSchema = z.object({
  t: z.array(z.number()),
  x: z.array(z.number()),
  v: z.array(z.number()),
});

const frameSchema = z.object({
  type: z.literal("frame"),
  schema: z.literal(SCHEMA),
  t: z.number(),
  phase: z.enum(["green", "yellow", "red"]),
  stop_bar_position_m: z.number(),
  vehicles: z.array(vehicleSchema).min(1),
  warning: warningSchema.nullable(),
  plan: planSchema.nullable(),
  baseline_warning: z.boolean(),
  paused: z.boolean(),
});

const errorSchema = z.object({
  type: z.literal("error"),
  message: z.string(),
});

export type Vehicle = z.infer<typeof vehicleSchema>;
export type Warning = z.infer<typeof warningSchema>;
export type Plan = z.infer<typeof planSchema>;
export type Frame = z.infer<typeof frameSchema>;

export type ServerMessage =
  | { kind: "frame"; frame: Frame }
  | { kind: "error"; message: string };

export class ProtocolError extends Error {}

/** Decode one raw socket payload; throws ProtocolError on malformed input. */
export function parseMessage(raw: unknown): ServerMessage {
  let payload: unknown = raw;
  if (typeof raw === "string") {
    try {
      payload = JSON.parse(raw);
    } catch {
      throw new ProtocolError("message is not valid JSON");
    }
  }
  const asError = errorSchema.safeParse(payload);
  if (asError.success) {
    return { kind: "error", message: asError.data.message };
  }
  const asFrame = frameSchema.safeParse(payload);
  if (asFrame.success) {
    return { kind: "frame", frame: asFrame.data };
  }
  throw new ProtocolError(
    asFrame.error.issues
      .map((i) => `${i.path.join(".")}: ${i.message}`)
      .join("; "),
  );
}

export function ego(frame: Frame): Vehicle {
  const v = frame.vehicles.find((veh) => veh.is_ego);
  if (v === undefined) {
    throw new ProtocolError("frame has no ego vehicle");
  }
  return v;
}

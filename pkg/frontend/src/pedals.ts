/** Hold-to-press pedal model: fractions ramp while a key is held and
 * decay once it is released; brake suppresses throttle. */

export const RAMP_RATE = 2.0; // fraction per second while held
export const DECAY_RATE = 4.0; // fraction per second on release
export const SEND_INTERVAL_S = 0.05; // >= 50 ms between pedal commands (20 Hz)

export interface PedalCommand {
  throttle: number;
  brake: number;
}

export class Pedals {
  private throttle = 0;
  private brake = 0;
  throttleHeld = false;
  brakeHeld = false;

  /** Advance the ramp/decay dynamics by dt seconds. */
  update(dt: number): void {
    if (!(dt >= 0)) {
      throw new RangeError(`dt must be non-negative, got ${dt}`);
    }
    this.throttle = advance(this.throttle, this.throttleHeld, dt);
    this.brake = advance(this.brake, this.brakeHeld, dt);
  }

  /** Current command; while any brake is applied, throttle is zeroed. */
  command(): PedalCommand {
    return {
      throttle: this.brake > 0 || this.brakeHeld ? 0 : this.throttle,
      brake: this.brake,
    };
  }
}

function advance(value: number, held: boolean, dt: number): number {
  if (held) {
    return Math.min(1, value + RAMP_RATE * dt);
  }
  return Math.max(0, value - DECAY_RATE * dt);
}

/**
 * Rate limiter for outbound pedal commands: returns true when a command
 * may be sent at time `now` (seconds), tracking the last send internally.
 */
export class SendGate {
  private lastSent = -Infinity;

  allow(now: number): boolean {
    if (now - this.lastSent < SEND_INTERVAL_S) {
      return false;
    }
    this.lastSent = now;
    return true;
  }
}

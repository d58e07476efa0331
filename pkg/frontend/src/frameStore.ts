/** Keeps the newest frame; stale or out-of-order frames are discarded so
 * rendering never moves backwards in simulation time. */

import type { Frame } from "./protocol.js";

export class FrameStore {
  private current: Frame | null = null;
  accepted = 0;
  discarded = 0;

  /** Returns true when the frame became the new render state. */
  push(frame: Frame): boolean {
    if (this.current !== null && frame.t <= this.current.t) {
      this.discarded += 1;
      return false;
    }
    this.current = frame;
    this.accepted += 1;
    return true;
  }

  latest(): Frame | null {
    return this.current;
  }

  clear(): void {
    this.current = null;
  }
}

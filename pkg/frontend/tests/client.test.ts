import { describe, expect, it } from "vitest";

import {
  BACKOFF_MAX_S,
  backoffDelay,
  pruneBuffer,
} from "../src/client.js";

describe("reconnect backoff", () => {
  it("doubles from half a second", () => {
    expect(backoffDelay(0)).toBe(0.5);
    expect(backoffDelay(1)).toBe(1.0);
    expect(backoffDelay(2)).toBe(2.0);
  });

  it("caps at the maximum delay", () => {
    expect(backoffDelay(10)).toBe(BACKOFF_MAX_S);
    expect(backoffDelay(30)).toBe(BACKOFF_MAX_S);
  });
});

describe("offline input buffer", () => {
  const cmd = { type: "pedal", brake: 1 };

  it("keeps commands at most one second old", () => {
    const buffer = [
      { cmd, at: 0.0 },
      { cmd, at: 0.6 },
      { cmd, at: 1.4 },
    ];
    const kept = pruneBuffer(buffer, 1.5);
    expect(kept.map((e) => e.at)).toEqual([0.6, 1.4]);
  });

  it("keeps everything when nothing is stale", () => {
    const buffer = [{ cmd, at: 1.0 }];
    expect(pruneBuffer(buffer, 1.2)).toHaveLength(1);
  });
});

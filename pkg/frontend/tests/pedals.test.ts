import { describe, expect, it } from "vitest";

import { Pedals, SendGate } from "../src/pedals.js";

describe("pedal ramp dynamics", () => {
  it("brake held 0.5 s from idle saturates at full brake", () => {
    const pedals = new Pedals();
    pedals.brakeHeld = true;
    for (let i = 0; i < 50; i += 1) {
      pedals.update(0.01);
    }
    expect(pedals.command().brake).toBeCloseTo(1.0, 9);
  });

  it("ramps at 2.0 per second while held", () => {
    const pedals = new Pedals();
    pedals.throttleHeld = true;
    pedals.update(0.2);
    expect(pedals.command().throttle).toBeCloseTo(0.4, 9);
  });

  it("decays at 4.0 per second on release", () => {
    const pedals = new Pedals();
    pedals.brakeHeld = true;
    pedals.update(0.5); // saturated
    pedals.brakeHeld = false;
    pedals.update(0.1);
    expect(pedals.command().brake).toBeCloseTo(0.6, 9);
    pedals.update(0.2);
    expect(pedals.command().brake).toBeCloseTo(0.0, 9);
  });

  it("no keys produces a zero command", () => {
    const pedals = new Pedals();
    pedals.update(1.0);
    expect(pedals.command()).toEqual({ throttle: 0, brake: 0 });
  });

  it("brake wins when both keys are held", () => {
    const pedals = new Pedals();
    pedals.throttleHeld = true;
    pedals.brakeHeld = true;
    pedals.update(0.5);
    const cmd = pedals.command();
    expect(cmd.brake).toBeCloseTo(1.0, 9);
    expect(cmd.throttle).toBe(0);
  });

  it("rejects negative time steps", () => {
    expect(() => new Pedals().update(-0.1)).toThrow(RangeError);
  });
});

describe("send gate", () => {
  it("limits pedal commands to 20 Hz", () => {
    const gate = new SendGate();
    expect(gate.allow(0.0)).toBe(true);
    expect(gate.allow(0.01)).toBe(false);
    expect(gate.allow(0.049)).toBe(false);
    expect(gate.allow(0.05)).toBe(true);
    expect(gate.allow(0.06)).toBe(false);
  });
});

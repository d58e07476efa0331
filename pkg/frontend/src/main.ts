/** Console entry point: wires the socket client, keyboard pedals,
 * frame store and canvas renderer together. */

import { SessionClient } from "./client.js";
import { FrameStore } from "./frameStore.js";
import { Pedals, SendGate } from "./pedals.js";
import { parseMessage, ProtocolError } from "./protocol.js";
import { renderScene } from "./render.js";

const params = new URLSearchParams(window.location.search);
const host = params.get("host") ?? (window.location.hostname || "127.0.0.1");
const port = params.get("port") ?? "8321";
const scenario = params.get("scenario") ?? "solo-red";
const seed = Number(params.get("seed") ?? "0");
const pace = Number(params.get("pace") ?? "1");

const canvas = document.getElementById("scene") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const hud = document.getElementById("hud")!;
const banner = document.getElementById("banner")!;

const store = new FrameStore();
const pedals = new Pedals();
const gate = new SendGate();

let status = "connecting";
let lastFrameArrival = 0;
let lastLatencyMs = 0;
let paused = false;

function showBanner(message: string): void {
  banner.textContent = message;
  banner.classList.remove("hidden");
  setTimeout(() => banner.classList.add("hidden"), 4000);
}

const client = new SessionClient(
  `ws://${host}:${port}/session`,
  {
    onMessage: (raw) => {
      let message;
      try {
        message = parseMessage(raw);
      } catch (err) {
        // malformed frame: show the banner and keep consuming the stream
        showBanner(err instanceof ProtocolError ? err.message : String(err));
        return;
      }
      if (message.kind === "error") {
        showBanner(message.message);
        return;
      }
      const arrival = performance.now();
      if (store.push(message.frame)) {
        lastLatencyMs = lastFrameArrival > 0 ? arrival - lastFrameArrival : 0;
        lastFrameArrival = arrival;
        paused = message.frame.paused;
      }
    },
    onStatus: (s) => {
      status = s;
    },
  },
  { type: "open", scenario, seed, pace },
);

window.addEventListener("keydown", (event) => {
  if (event.repeat) return;
  if (event.key === "ArrowUp") pedals.throttleHeld = true;
  if (event.key === "ArrowDown") pedals.brakeHeld = true;
  if (event.key === " ") {
    paused = !paused;
    client.send({ type: paused ? "pause" : "resume" });
  }
  if (event.key === "r" || event.key === "R") {
    store.clear(); // the clock restarts, so drop the old timeline
    client.send({ type: "reset" });
  }
  if (event.key === "ArrowUp" || event.key === "ArrowDown") event.preventDefault();
});

window.addEventListener("keyup", (event) => {
  if (event.key === "ArrowUp") pedals.throttleHeld = false;
  if (event.key === "ArrowDown") pedals.brakeHeld = false;
});

let lastTick = performance.now();

function loop(now: number): void {
  const dt = Math.min(0.25, (now - lastTick) / 1000);
  lastTick = now;
  pedals.update(dt);

  const cmd = pedals.command();
  if ((cmd.throttle > 0 || cmd.brake > 0 || pedals.throttleHeld || pedals.brakeHeld)
      && gate.allow(now / 1000)) {
    client.send({ type: "pedal", ...cmd });
  }

  const frame = store.latest();
  if (frame !== null) {
    renderScene(ctx, frame);
  }
  hud.textContent =
    `link ${status} | scenario ${scenario} seed ${seed}` +
    ` | frame gap ${lastLatencyMs.toFixed(0)} ms` +
    ` | throttle ${cmd.throttle.toFixed(2)} brake ${cmd.brake.toFixed(2)}` +
    (paused ? " | PAUSED" : "");
  requestAnimationFrame(loop);
}

client.connect();
requestAnimationFrame(loop);

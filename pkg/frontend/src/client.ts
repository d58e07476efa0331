/** WebSocket session client with exponential-backoff reconnect and a
 * short-lived input buffer for commands issued while disconnected. */

export const BACKOFF_BASE_S = 0.5;
export const BACKOFF_MAX_S = 8.0;
export const BUFFER_MAX_AGE_S = 1.0;

export interface Command {
  type: string;
  [key: string]: unknown;
}

interface BufferedCommand {
  cmd: Command;
  at: number; // seconds
}

/** Drop buffered commands older than BUFFER_MAX_AGE_S. */
export function pruneBuffer(buffer: BufferedCommand[], now: number): BufferedCommand[] {
  return buffer.filter((entry) => now - entry.at <= BUFFER_MAX_AGE_S);
}

export function backoffDelay(attempt: number): number {
  return Math.min(BACKOFF_MAX_S, BACKOFF_BASE_S * 2 ** attempt);
}

export interface ClientHandlers {
  onMessage: (raw: string) => void;
  onStatus: (status: "connecting" | "open" | "closed") => void;
}

type SocketFactory = (url: string) => WebSocket;

export class SessionClient {
  private socket: WebSocket | null = null;
  private buffer: BufferedCommand[] = [];
  private attempt = 0;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private closedByUser = false;

  constructor(
    private readonly url: string,
    private readonly handlers: ClientHandlers,
    private readonly openCommand: Command,
    private readonly makeSocket: SocketFactory = (u) => new WebSocket(u),
    private readonly now: () => number = () => performance.now() / 1000,
  ) {}

  connect(): void {
    this.closedByUser = false;
    this.handlers.onStatus("connecting");
    const ws = this.makeSocket(this.url);
    this.socket = ws;
    ws.onopen = () => {
      this.attempt = 0;
      this.handlers.onStatus("open");
      // (re)open the session first, then flush recent buffered inputs
      ws.send(JSON.stringify(this.openCommand));
      this.buffer = pruneBuffer(this.buffer, this.now());
      for (const entry of this.buffer) {
        ws.send(JSON.stringify(entry.cmd));
      }
      this.buffer = [];
    };
    ws.onmessage = (event) => this.handlers.onMessage(String(event.data));
    ws.onclose = () => {
      this.socket = null;
      this.handlers.onStatus("closed");
      this.scheduleReconnect();
    };
    ws.onerror = () => ws.close();
  }

  private scheduleReconnect(): void {
    if (this.closedByUser || this.reconnectTimer !== null) {
      return;
    }
    const delay = backoffDelay(this.attempt);
    this.attempt += 1;
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null;
      this.connect();
    }, delay * 1000);
  }

  /** Send now if connected, otherwise buffer for up to one second. */
  send(cmd: Command): void {
    if (this.socket !== null && this.socket.readyState === WebSocket.OPEN) {
      this.socket.send(JSON.stringify(cmd));
      return;
    }
    this.buffer = pruneBuffer(this.buffer, this.now());
    this.buffer.push({ cmd, at: this.now() });
  }

  close(): void {
    this.closedByUser = true;
    if (this.reconnectTimer !== null) {
      clearTimeout(this.reconnectTimer);
      this.reconnectTimer = null;
    }
    this.socket?.close();
  }
}

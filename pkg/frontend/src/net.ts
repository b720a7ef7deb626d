// WebSocket session with reconnect backoff, plus the 60 Hz gaze throttle.
// Both the throttle and the backoff schedule are plain state machines so
// they can be tested without a socket.

import { encodeClient, type ClientMsg } from "./protocol.js";

export const GAZE_HZ = 60;

/** Fixed-rate gate: allows one send per 1/60 s of the caller's clock. */
export class RateLimiter {
  private readonly periodMs: number;
  private nextDueMs: number | null = null;

  constructor(hz: number = GAZE_HZ) {
    this.periodMs = 1000 / hz;
  }

  /** True if a send is due at nowMs; advances the schedule when it is. */
  shouldSend(nowMs: number): boolean {
    if (this.nextDueMs === null) {
      this.nextDueMs = nowMs + this.periodMs;
      return true;
    }
    if (nowMs < this.nextDueMs) return false;
    // Advance by whole periods so a late frame does not cause a burst.
    const missed = Math.floor((nowMs - this.nextDueMs) / this.periodMs);
    this.nextDueMs += (missed + 1) * this.periodMs;
    return true;
  }
}

/** Exponential backoff: 500 ms doubling to an 8 s ceiling. */
export class Backoff {
  private attempt = 0;

  nextDelayMs(): number {
    const delay = Math.min(500 * 2 ** this.attempt, 8000);
    this.attempt += 1;
    return delay;
  }

  reset(): void {
    this.attempt = 0;
  }
}

export interface SessionEvents {
  onLine(line: string): void;
  onStatus(connected: boolean): void;
}

/**
 * Headset-role session: connects, says HELLO, stamps seq/ts on outbound
 * messages, and reconnects with backoff when the socket drops.
 */
export class Session {
  private ws: WebSocket | null = null;
  private seq = 0;
  private epochTs: number | null = null;
  private readonly backoff = new Backoff();
  private closed = false;

  constructor(
    private readonly url: string,
    private readonly events: SessionEvents,
  ) {}

  connect(): void {
    if (this.closed) return;
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.seq = 0;
      this.send({ type: "HELLO", role: "headset" });
    };
    ws.onmessage = (ev) => {
      // The WELCOME epoch anchors our ts clock before anything else.
      if (this.epochTs === null) {
        try {
          const obj = JSON.parse(String(ev.data));
          if (obj.type === "WELCOME") {
            this.epochTs = obj.epoch_ts;
            this.backoff.reset();
            this.events.onStatus(true);
          }
        } catch {
          // fall through; the line still goes to the state layer
        }
      }
      this.events.onLine(String(ev.data));
    };
    ws.onclose = () => this.handleDrop();
    ws.onerror = () => ws.close();
  }

  private handleDrop(): void {
    this.ws = null;
    this.epochTs = null;
    this.events.onStatus(false);
    if (!this.closed) {
      setTimeout(() => this.connect(), this.backoff.nextDelayMs());
    }
  }

  get connected(): boolean {
    return this.ws !== null && this.ws.readyState === WebSocket.OPEN;
  }

  /** Microseconds since the session epoch, from the wall clock. */
  nowUs(): number {
    if (this.epochTs === null) return 0;
    return Math.max(0, Math.round(Date.now() * 1000 - this.epochTs));
  }

  send(msg: ClientMsg): boolean {
    if (!this.ws || this.ws.readyState !== WebSocket.OPEN) return false;
    this.ws.send(encodeClient(msg, this.seq, this.nowUs()));
    this.seq += 1;
    return true;
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}

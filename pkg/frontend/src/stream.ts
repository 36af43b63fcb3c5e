/** Neural-remote frame streaming with one-in-flight coalescing.
 *
 * While a render is in flight, camera updates overwrite a single pending
 * slot; when the frame arrives the newest pending camera is sent. The socket
 * reconnects with exponential backoff on loss.
 */

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((data: ArrayBuffer | string) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface StreamOptions {
  /** Called with each displayed frame (PNG bytes) and round-trip millis. */
  onFrame: (frame: ArrayBuffer, latencyMs: number) => void;
  onError?: (message: string) => void;
  /** Reconnect backoff base / cap in milliseconds. */
  backoffBaseMs?: number;
  backoffMaxMs?: number;
  now?: () => number;
  setTimer?: (fn: () => void, ms: number) => unknown;
}

export class FrameStream {
  private socket: SocketLike | null = null;
  private pending: string | null = null;
  private inFlight = false;
  private sentAt = 0;
  private closed = false;
  private failures = 0;
  /** Cameras sent to the service, in order (for protocol tests). */
  readonly sentLog: string[] = [];

  constructor(
    private readonly url: string,
    private readonly factory: SocketFactory,
    private readonly options: StreamOptions,
  ) {
    this.connect();
  }

  private connect(): void {
    if (this.closed) return;
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.failures = 0;
      this.inFlight = false;
      this.flush();
    };
    socket.onmessage = (data) => {
      if (typeof data === "string") {
        this.options.onError?.(data);
        this.inFlight = false;
        this.flush();
        return;
      }
      const now = this.options.now ?? Date.now;
      this.options.onFrame(data, now() - this.sentAt);
      this.inFlight = false;
      this.flush();
    };
    socket.onclose = () => {
      if (this.closed) return;
      this.inFlight = false;
      this.failures += 1;
      const base = this.options.backoffBaseMs ?? 250;
      const cap = this.options.backoffMaxMs ?? 8000;
      const delay = Math.min(cap, base * 2 ** (this.failures - 1));
      const timer = this.options.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
      timer(() => this.connect(), delay);
    };
  }

  /** Queue the newest camera; stale pending cameras are replaced. */
  requestFrame(cameraPayload: Record<string, unknown>): void {
    this.pending = JSON.stringify(cameraPayload);
    this.flush();
  }

  private flush(): void {
    if (this.inFlight || this.pending === null || this.socket === null) return;
    const message = this.pending;
    this.pending = null;
    this.inFlight = true;
    const now = this.options.now ?? Date.now;
    this.sentAt = now();
    this.sentLog.push(message);
    this.socket.send(message);
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
  }
}

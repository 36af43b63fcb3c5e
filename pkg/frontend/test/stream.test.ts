import { describe, expect, it } from "vitest";

import { FrameStream, SocketLike, StreamOptions } from "../src/stream.js";

/** Scripted socket: frames are delivered when the test calls deliver(). */
class FakeSocket implements SocketLike {
  sent: string[] = [];
  closedByClient = false;
  onmessage: ((data: ArrayBuffer | string) => void) | null = null;
  onopen: (() => void) | null = null;
  onclose: (() => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closedByClient = true;
  }

  open(): void {
    this.onopen?.();
  }

  deliverFrame(): void {
    this.onmessage?.(new ArrayBuffer(8));
  }

  deliverError(message: string): void {
    this.onmessage?.(message);
  }

  drop(): void {
    this.onclose?.();
  }
}

function makeStream(overrides: Partial<StreamOptions> = {}) {
  const sockets: FakeSocket[] = [];
  const timers: { fn: () => void; ms: number }[] = [];
  const frames: number[] = [];
  const errors: string[] = [];
  const stream = new FrameStream(
    "ws://service/stream",
    () => {
      const s = new FakeSocket();
      sockets.push(s);
      return s;
    },
    {
      onFrame: (_frame, latency) => frames.push(latency),
      onError: (m) => errors.push(m),
      now: () => 0,
      setTimer: (fn, ms) => timers.push({ fn, ms }),
      ...overrides,
    },
  );
  return { stream, sockets, timers, frames, errors };
}

describe("frame stream", () => {
  it("coalesces rapid camera updates into a monotone subsequence", () => {
    const { stream, sockets, frames } = makeStream();
    const sock = sockets[0];
    sock.open();
    const cameras = Array.from({ length: 30 }, (_, i) => ({ pose: i }));
    // Send all 30 rapidly, delivering a frame after every third update.
    for (let i = 0; i < cameras.length; i++) {
      stream.requestFrame(cameras[i]);
      if (i % 3 === 2) sock.deliverFrame();
    }
    sock.deliverFrame();
    const served = sock.sent.map((s) => (JSON.parse(s) as { pose: number }).pose);
    expect(served.length).toBeLessThan(cameras.length);
    expect(frames.length).toBeGreaterThan(0);
    // Monotone subsequence of the input order, ending at the newest camera.
    for (let i = 1; i < served.length; i++) {
      expect(served[i]).toBeGreaterThan(served[i - 1]);
    }
    expect(served[served.length - 1]).toBe(29);
  });

  it("keeps exactly one request in flight", () => {
    const { stream, sockets } = makeStream();
    const sock = sockets[0];
    sock.open();
    stream.requestFrame({ pose: 0 });
    stream.requestFrame({ pose: 1 });
    stream.requestFrame({ pose: 2 });
    expect(sock.sent.length).toBe(1);
    sock.deliverFrame();
    expect(sock.sent.length).toBe(2);
    expect((JSON.parse(sock.sent[1]) as { pose: number }).pose).toBe(2);
  });

  it("surfaces service errors and keeps streaming", () => {
    const { stream, sockets, errors, frames } = makeStream();
    const sock = sockets[0];
    sock.open();
    stream.requestFrame({ pose: 0 });
    sock.deliverError('{"error":"missing camera field: fx"}');
    expect(errors.length).toBe(1);
    stream.requestFrame({ pose: 1 });
    sock.deliverFrame();
    expect(frames.length).toBe(1);
  });

  it("reconnects with exponential backoff after socket loss", () => {
    const { stream, sockets, timers } = makeStream();
    sockets[0].open();
    stream.requestFrame({ pose: 0 });
    sockets[0].drop();
    expect(timers.length).toBe(1);
    expect(timers[0].ms).toBe(250);
    timers[0].fn();
    expect(sockets.length).toBe(2);
    sockets[1].drop();
    expect(timers[1].ms).toBe(500);
    timers[1].fn();
    sockets[2].open();
    // The camera queued before the drop is flushed on reconnect.
    stream.requestFrame({ pose: 1 });
    expect(sockets[2].sent.length).toBe(1);
    stream.close();
    expect(sockets[2].closedByClient).toBe(true);
  });
});

import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { StudioSession, SessionStatus } from "../src/session.js";
import { StubTransport, fakePng } from "./stub.js";

const baseParams = {
  orbit: { azimuth: 0, elevation: 0.2, radius: 4 },
  width: 64,
  height: 64,
};

function makeSession(transport: StubTransport, events = {}, options = {}) {
  return new StudioSession("http://svc", transport, events, {
    minIntervalMs: 0,
    reconnectDelayMs: 50,
    ...options,
  });
}

describe("StudioSession", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("fetches info and exposes stage gating", async () => {
    const transport = new StubTransport({ stage: "dynamic", attribute_count: 0, attribute_names: [] });
    const session = makeSession(transport);
    const info = await session.connect();
    expect(info.stage).toBe("dynamic");
    expect(session.controlsEnabled).toBe(false);
  });

  it("controls enabled on a finetuned model", async () => {
    const session = makeSession(new StubTransport());
    await session.connect();
    expect(session.controlsEnabled).toBe(true);
  });

  it("coalesces steers while a request is in flight", async () => {
    const transport = new StubTransport();
    const session = makeSession(transport);
    await session.connect();
    transport.socket.open();

    session.steer({ ...baseParams, controls: [0.1, 0.1] });
    session.steer({ ...baseParams, controls: [0.2, 0.1] });
    session.steer({ ...baseParams, controls: [0.3, 0.1] });
    vi.runAllTimers();
    expect(transport.socket.sent.length).toBe(1); // one in flight, rest coalesce
    transport.socket.replyBinary(1, fakePng(1));
    vi.runAllTimers();
    const reqs = transport.socket.lastRequests();
    expect(reqs.length).toBe(2);
    expect(reqs[1].body.controls).toEqual([0.3, 0.1]); // latest survived
  });

  it("never lets an older frame overwrite a newer one", async () => {
    const transport = new StubTransport();
    const frames: Uint8Array[] = [];
    const session = makeSession(transport, { onFrame: (png: Uint8Array) => frames.push(png) });
    await session.connect();
    transport.socket.open();

    session.steer({ ...baseParams, controls: [0.1, 0.1] });
    vi.runAllTimers();
    transport.socket.replyBinary(1, fakePng(1));
    session.steer({ ...baseParams, controls: [0.2, 0.1] });
    vi.runAllTimers();
    transport.socket.replyBinary(2, fakePng(2));
    expect(frames.length).toBe(2);

    transport.socket.replyBinary(1, fakePng(1)); // stale duplicate arrives late
    expect(frames.length).toBe(2);
    expect(frames[frames.length - 1][4]).toBe(2);
  });

  it("clamps control values and dimensions before sending", async () => {
    const transport = new StubTransport();
    const session = makeSession(transport);
    await session.connect();
    transport.socket.open();
    session.steer({ ...baseParams, width: 5000, controls: [1.7, -0.3] });
    vi.runAllTimers();
    const req = transport.socket.lastRequests()[0].body;
    expect(req.width).toBe(1024);
    expect(req.controls).toEqual([1, 0]);
  });

  it("never sends time and controls together", async () => {
    const transport = new StubTransport();
    const session = makeSession(transport);
    await session.connect();
    transport.socket.open();
    session.steer({ ...baseParams, time: 0.5 });
    vi.runAllTimers();
    const req = transport.socket.lastRequests()[0].body;
    expect(req.time).toBe(0.5);
    expect("controls" in req).toBe(false);
  });

  it("reports server errors without dropping the session", async () => {
    const transport = new StubTransport();
    const errors: string[] = [];
    const session = makeSession(transport, { onError: (m: string) => errors.push(m) });
    await session.connect();
    transport.socket.open();
    session.steer({ ...baseParams, time: 0.5 });
    vi.runAllTimers();
    transport.socket.replyError(1, "boom");
    expect(errors).toEqual(["boom"]);
    expect(session.status).toBe("live");
  });

  it("shows a banner and reconnects with backoff after a drop", async () => {
    const transport = new StubTransport();
    const statuses: SessionStatus[] = [];
    const session = makeSession(transport, { onStatus: (s: SessionStatus) => statuses.push(s) });
    await session.connect();
    transport.socket.open();
    expect(session.status).toBe("live");

    transport.socket.dropFromServer();
    expect(session.status).toBe("disconnected");
    expect(transport.sockets.length).toBe(1);
    vi.advanceTimersByTime(60); // past the reconnect delay
    expect(transport.sockets.length).toBe(2);
    transport.socket.open();
    expect(session.status).toBe("live");
    expect(statuses).toContain("disconnected");
  });

  it("close() stops reconnect attempts", async () => {
    const transport = new StubTransport();
    const session = makeSession(transport);
    await session.connect();
    transport.socket.open();
    session.close();
    vi.advanceTimersByTime(5000);
    expect(transport.sockets.length).toBe(1);
  });
});

// Live connection to the render service: connect/reconnect, steering with
// latest-wins coalescing, and monotone frame ids so stale frames never
// overwrite newer ones.

import {
  RenderParams,
  ServiceInfo,
  StreamFrame,
  decodeStreamFrame,
  decodeTextFrame,
  renderRequestBody,
  sanitizeParams,
} from "./api.js";
import { LatestWins } from "./limiter.js";
import { SocketLike, Transport, wsUrl } from "./transport.js";

export type SessionStatus = "connecting" | "live" | "disconnected";

export interface SessionEvents {
  onFrame?: (png: Uint8Array, latencyMs: number) => void;
  onStatus?: (status: SessionStatus) => void;
  onError?: (message: string) => void;
}

export interface SessionOptions {
  minIntervalMs?: number;
  reconnectDelayMs?: number;
  maxReconnectDelayMs?: number;
}

export class StudioSession {
  info: ServiceInfo | null = null;
  status: SessionStatus = "disconnected";

  private socket: SocketLike | null = null;
  private nextId = 1;
  private lastShownId = 0;
  private sendTimes = new Map<number, number>();
  private limiter: LatestWins<RenderParams>;
  private reconnectDelay: number;
  private closed = false;

  constructor(
    private baseUrl: string,
    private transport: Transport,
    private events: SessionEvents = {},
    private options: SessionOptions = {},
  ) {
    this.limiter = new LatestWins(
      (params) => this.sendRequest(params),
      options.minIntervalMs ?? 100,
    );
    this.reconnectDelay = options.reconnectDelayMs ?? 1000;
  }

  get controlsEnabled(): boolean {
    return (this.info?.attribute_count ?? 0) > 0;
  }

  async connect(): Promise<ServiceInfo> {
    this.setStatus("connecting");
    const info = (await this.transport.fetchInfo(this.baseUrl)) as ServiceInfo;
    this.info = info;
    this.openSocket();
    return info;
  }

  private openSocket() {
    if (this.closed) return;
    const socket = this.transport.openSocket(wsUrl(this.baseUrl));
    this.socket = socket;
    socket.onopen = () => {
      this.reconnectDelay = this.options.reconnectDelayMs ?? 1000;
      this.setStatus("live");
    };
    socket.onmessage = (data) => this.handleMessage(data);
    socket.onclose = () => {
      this.socket = null;
      if (this.closed) return;
      this.setStatus("disconnected");
      const delay = this.reconnectDelay;
      this.reconnectDelay = Math.min(
        delay * 2,
        this.options.maxReconnectDelayMs ?? 10000,
      );
      setTimeout(() => {
        if (!this.closed) this.openSocket();
      }, delay);
    };
  }

  /** Queue a render for the given state; rapid calls coalesce (latest wins). */
  steer(params: RenderParams) {
    this.limiter.push(sanitizeParams(params));
  }

  private sendRequest(params: RenderParams) {
    if (this.socket === null || this.status !== "live") {
      // nothing to send on; drop and let the reconnect path re-steer
      this.limiter.settled();
      return;
    }
    const id = this.nextId++;
    this.sendTimes.set(id, Date.now());
    this.socket.send(renderRequestBody(params, id));
  }

  private handleMessage(data: ArrayBuffer | string) {
    let frame: StreamFrame;
    if (typeof data === "string") {
      frame = decodeTextFrame(data);
    } else {
      frame = decodeStreamFrame(data);
    }
    const sent = this.sendTimes.get(frame.id);
    this.sendTimes.delete(frame.id);
    this.limiter.settled();
    if (!frame.ok) {
      this.events.onError?.(frame.error ?? "render failed");
      return;
    }
    if (frame.id <= this.lastShownId || frame.png === undefined) {
      return; // stale: a newer frame is already on screen
    }
    this.lastShownId = frame.id;
    this.events.onFrame?.(frame.png, sent !== undefined ? Date.now() - sent : 0);
  }

  private setStatus(status: SessionStatus) {
    this.status = status;
    this.events.onStatus?.(status);
  }

  close() {
    this.closed = true;
    this.limiter.dispose();
    this.socket?.close();
    this.socket = null;
  }
}

// In-process stub of the render service: records requests and lets tests
// answer them in any order, with any payload.

import { ServiceInfo } from "../src/api.js";
import { SocketLike, Transport } from "../src/transport.js";

export class StubSocket implements SocketLike {
  sent: string[] = [];
  closedByClient = false;
  onmessage: ((data: ArrayBuffer | string) => void) | null = null;
  onopen: (() => void) | null = null;
  onclose: (() => void) | null = null;

  send(data: string) {
    this.sent.push(data);
  }

  close() {
    this.closedByClient = true;
    this.onclose?.();
  }

  open() {
    this.onopen?.();
  }

  dropFromServer() {
    this.onclose?.();
  }

  replyBinary(id: number, png: Uint8Array) {
    const header = new TextEncoder().encode(JSON.stringify({ id, ok: true }));
    const buf = new ArrayBuffer(4 + header.length + png.length);
    new DataView(buf).setUint32(0, header.length, true);
    new Uint8Array(buf, 4, header.length).set(header);
    new Uint8Array(buf, 4 + header.length).set(png);
    this.onmessage?.(buf);
  }

  replyError(id: number, error: string) {
    this.onmessage?.(JSON.stringify({ id, ok: false, error }));
  }

  lastRequests(): { id: number; body: Record<string, unknown> }[] {
    return this.sent.map((s) => {
      const body = JSON.parse(s);
      return { id: body.id, body };
    });
  }
}

export class StubTransport implements Transport {
  sockets: StubSocket[] = [];
  info: ServiceInfo;

  constructor(info?: Partial<ServiceInfo>) {
    this.info = {
      gaussian_count: 100,
      stage: "finetuned",
      attribute_names: ["lift", "slide"],
      attribute_count: 2,
      time_range: [0, 1],
      ...info,
    };
  }

  async fetchInfo(): Promise<unknown> {
    return this.info;
  }

  openSocket(): StubSocket {
    const socket = new StubSocket();
    this.sockets.push(socket);
    return socket;
  }

  get socket(): StubSocket {
    return this.sockets[this.sockets.length - 1];
  }
}

export const fakePng = (tag: number) => new Uint8Array([0x89, 0x50, 0x4e, 0x47, tag]);

// Injectable network seams so the session logic is testable without a server.

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((data: ArrayBuffer | string) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
}

export interface Transport {
  fetchInfo(baseUrl: string): Promise<unknown>;
  openSocket(url: string): SocketLike;
}

class BrowserSocket implements SocketLike {
  private ws: WebSocket;
  onmessage: ((data: ArrayBuffer | string) => void) | null = null;
  onopen: (() => void) | null = null;
  onclose: (() => void) | null = null;

  constructor(url: string) {
    this.ws = new WebSocket(url);
    this.ws.binaryType = "arraybuffer";
    this.ws.onopen = () => this.onopen?.();
    this.ws.onclose = () => this.onclose?.();
    this.ws.onerror = () => this.ws.close();
    this.ws.onmessage = (ev) => this.onmessage?.(ev.data);
  }

  send(data: string) {
    this.ws.send(data);
  }

  close() {
    this.ws.close();
  }
}

export const browserTransport: Transport = {
  async fetchInfo(baseUrl: string) {
    const resp = await fetch(`${baseUrl}/api/info`);
    if (!resp.ok) throw new Error(`info request failed: ${resp.status}`);
    return resp.json();
  },
  openSocket(url: string) {
    return new BrowserSocket(url);
  },
};

export function wsUrl(baseUrl: string): string {
  return baseUrl.replace(/^http/, "ws") + "/api/stream";
}

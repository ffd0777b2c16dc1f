// Transport abstraction: the protocol layer only needs an ordered duplex
// line stream. Browsers use the WebSocket flavor (through a ws->tcp bridge,
// see bridge.ts); tests and tooling under Node talk TCP directly.

export interface LineTransport {
  send(line: string): void;
  onLine(handler: (line: string) => void): void;
  onClose(handler: () => void): void;
  close(): void;
}

export class WebSocketTransport implements LineTransport {
  private ws: WebSocket;
  private lineHandler: ((line: string) => void) | null = null;
  private closeHandler: (() => void) | null = null;
  private pending = "";

  constructor(url: string) {
    this.ws = new WebSocket(url);
    this.ws.onmessage = (ev) => {
      this.pending += String(ev.data);
      let idx: number;
      while ((idx = this.pending.indexOf("\n")) >= 0) {
        const line = this.pending.slice(0, idx);
        this.pending = this.pending.slice(idx + 1);
        if (line.trim() && this.lineHandler) this.lineHandler(line);
      }
    };
    this.ws.onclose = () => this.closeHandler?.();
  }

  ready(): Promise<void> {
    if (this.ws.readyState === WebSocket.OPEN) return Promise.resolve();
    return new Promise((resolve, reject) => {
      this.ws.onopen = () => resolve();
      this.ws.onerror = () => reject(new Error("websocket failed"));
    });
  }

  send(line: string): void {
    this.ws.send(line);
  }

  onLine(handler: (line: string) => void): void {
    this.lineHandler = handler;
  }

  onClose(handler: () => void): void {
    this.closeHandler = handler;
  }

  close(): void {
    this.ws.close();
  }
}

// Node-only TCP transport; imported lazily so browser bundles skip it.
export async function createTcpTransport(
  host: string,
  port: number
): Promise<LineTransport> {
  const net = await import("node:net");
  const socket = net.createConnection({ host, port });
  socket.setNoDelay(true);
  let lineHandler: ((line: string) => void) | null = null;
  let closeHandler: (() => void) | null = null;
  let pending = "";

  await new Promise<void>((resolve, reject) => {
    socket.once("connect", () => resolve());
    socket.once("error", (e) => reject(e));
  });

  socket.on("data", (chunk: Buffer) => {
    pending += chunk.toString("utf-8");
    let idx: number;
    while ((idx = pending.indexOf("\n")) >= 0) {
      const line = pending.slice(0, idx);
      pending = pending.slice(idx + 1);
      if (line.trim() && lineHandler) lineHandler(line);
    }
  });
  socket.on("close", () => closeHandler?.());

  return {
    send: (line: string) => socket.write(line),
    onLine: (h) => {
      lineHandler = h;
    },
    onClose: (h) => {
      closeHandler = h;
    },
    close: () => socket.end(),
  };
}

// Development bridge: exposes the TCP session service to browsers as a
// WebSocket endpoint, forwarding newline-framed text verbatim in both
// directions. Run with: node dist/bridge.js [wsPort tcpHost tcpPort]

import { createServer } from "node:http";
import { createConnection } from "node:net";
import { createHash } from "node:crypto";

const WS_PORT = Number(process.argv[2] ?? 5929);
const TCP_HOST = process.argv[3] ?? "127.0.0.1";
const TCP_PORT = Number(process.argv[4] ?? 5928);
const WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

function acceptKey(key: string): string {
  return createHash("sha1").update(key + WS_GUID).digest("base64");
}

function encodeTextFrame(payload: Buffer): Buffer {
  const len = payload.length;
  let header: Buffer;
  if (len < 126) {
    header = Buffer.from([0x81, len]);
  } else if (len < 65536) {
    header = Buffer.alloc(4);
    header[0] = 0x81;
    header[1] = 126;
    header.writeUInt16BE(len, 2);
  } else {
    header = Buffer.alloc(10);
    header[0] = 0x81;
    header[1] = 127;
    header.writeBigUInt64BE(BigInt(len), 2);
  }
  return Buffer.concat([header, payload]);
}

const server = createServer((_, res) => {
  res.writeHead(426, { "Content-Type": "text/plain" });
  res.end("websocket endpoint; connect with ws://");
});

server.on("upgrade", (req, socket) => {
  const key = req.headers["sec-websocket-key"];
  if (typeof key !== "string") {
    socket.destroy();
    return;
  }
  socket.write(
    "HTTP/1.1 101 Switching Protocols\r\n" +
      "Upgrade: websocket\r\nConnection: Upgrade\r\n" +
      `Sec-WebSocket-Accept: ${acceptKey(key)}\r\n\r\n`
  );

  const tcp = createConnection({ host: TCP_HOST, port: TCP_PORT });
  tcp.on("data", (chunk) => socket.write(encodeTextFrame(chunk)));
  tcp.on("close", () => socket.end());
  tcp.on("error", () => socket.end());

  let pending = Buffer.alloc(0);
  socket.on("data", (chunk: Buffer) => {
    pending = Buffer.concat([pending, chunk]);
    for (;;) {
      if (pending.length < 2) return;
      const opcode = pending[0] & 0x0f;
      const masked = (pending[1] & 0x80) !== 0;
      let len = pending[1] & 0x7f;
      let offset = 2;
      if (len === 126) {
        if (pending.length < 4) return;
        len = pending.readUInt16BE(2);
        offset = 4;
      } else if (len === 127) {
        if (pending.length < 10) return;
        len = Number(pending.readBigUInt64BE(2));
        offset = 10;
      }
      const maskLen = masked ? 4 : 0;
      if (pending.length < offset + maskLen + len) return;
      const mask = pending.subarray(offset, offset + maskLen);
      const payload = Buffer.from(pending.subarray(offset + maskLen, offset + maskLen + len));
      if (masked) {
        for (let i = 0; i < payload.length; i++) payload[i] ^= mask[i % 4];
      }
      pending = pending.subarray(offset + maskLen + len);
      if (opcode === 0x8) {
        tcp.end();
        socket.end();
        return;
      }
      if (opcode === 0x1) tcp.write(payload);
    }
  });
  socket.on("close", () => tcp.end());
  socket.on("error", () => tcp.end());
});

server.listen(WS_PORT, () => {
  console.log(`ws://127.0.0.1:${WS_PORT} -> tcp ${TCP_HOST}:${TCP_PORT}`);
});

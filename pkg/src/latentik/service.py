"""TCP service speaking the line-delimited JSON protocol.

One reconstruction session per connection. A reader thread drains the socket
into a queue (preserving order and absorbing bursts); the handler processes
messages one at a time, so frames are answered in order with at most one in
flight. Residual replies report the current queue depth.
"""

from __future__ import annotations

import queue
import socket
import socketserver
import threading

from . import protocol
from .errors import LatentikError, ProtocolError
from .optimizer import OptimizerConfig, ConstraintSet, Session
from .scenarios import default_w_future
from .skeleton import Pose, RootState
from .temporal import TemporalPredictor
from .vae import PoseVae


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server: SessionService = self.server  # type: ignore[assignment]
        out_seq = 0
        out_lock = threading.Lock()

        def send(msg: dict):
            nonlocal out_seq
            with out_lock:
                out_seq += 1
                try:
                    self.wfile.write(protocol.encode_message(msg, out_seq).encode())
                    self.wfile.flush()
                except (BrokenPipeError, ConnectionResetError):
                    pass

        inbox: queue.Queue = queue.Queue()
        closed = threading.Event()

        def reader():
            expected = None
            while not closed.is_set():
                try:
                    raw = self.rfile.readline()
                except (ConnectionResetError, OSError):
                    break
                if not raw:
                    break
                line = raw.decode(errors="replace").strip()
                if not line:
                    continue
                try:
                    msg = protocol.decode_line(line)
                except ProtocolError as e:
                    inbox.put(("error", str(e)))
                    continue
                seq = msg.get("seq")
                if seq is not None:
                    if expected is not None and seq != expected:
                        inbox.put(("gap", f"sequence gap: expected {expected}, got {seq}"))
                    expected = seq + 1
                inbox.put(("msg", msg))
            inbox.put(("eof", None))

        t = threading.Thread(target=reader, daemon=True)
        t.start()

        session: Session | None = None
        try:
            while True:
                kind, payload = inbox.get()
                if kind == "eof":
                    break
                if kind in ("error", "gap"):
                    send({"type": "error", "reason": payload})
                    continue
                msg = payload
                mtype = msg["type"]
                if mtype == "hello":
                    if msg.get("version", protocol.PROTOCOL_VERSION) != protocol.PROTOCOL_VERSION:
                        send({"type": "bye", "reason": "protocol version mismatch"})
                        break
                    try:
                        session = server.build_session(msg.get("header"))
                    except LatentikError as e:
                        send({"type": "bye", "reason": f"handshake failed: {e}"})
                        break
                    send(
                        {
                            "type": "hello",
                            "version": protocol.PROTOCOL_VERSION,
                            "mode": server.config.mode,
                            "checkpoint": server.vae.content_hash(),
                        }
                    )
                    send(protocol.skeleton_message(server.vae.skeleton, session_roles(session)))
                elif session is None:
                    send({"type": "error", "reason": "hello required first"})
                elif mtype == "sparse_frame":
                    try:
                        frame, sparse = protocol.parse_sparse_frame(msg)
                        pose, trace = session.optimize_frame(sparse)
                    except LatentikError as e:
                        send({"type": "error", "reason": str(e)})
                        continue
                    send(
                        protocol.pose_frame_message(frame, session.root_state, pose, trace)
                    )
                    send(protocol.residuals_message(frame, trace, inbox.qsize()))
                elif mtype == "constraint_edit":
                    try:
                        add, remove = protocol.parse_constraint_edit(msg)
                        session.edit_constraints(add, remove)
                    except LatentikError as e:
                        send({"type": "error", "reason": str(e)})
                elif mtype == "bye":
                    send({"type": "bye", "reason": "goodbye"})
                    break
                else:
                    send({"type": "error", "reason": f"unexpected {mtype}"})
        finally:
            closed.set()


def session_roles(session: Session) -> list[str]:
    roles = []
    for cid in session.constraints.ids():
        if cid.startswith("ee_pos:"):
            roles.append(cid.split(":", 1)[1])
    return roles


class SessionService(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(
        self,
        address: tuple[str, int],
        vae: PoseVae,
        temporal: TemporalPredictor | None = None,
        config: OptimizerConfig | None = None,
        default_roles: list[str] | None = None,
        default_dof: str = "pos_rot",
        w_future: int | None = None,
    ):
        super().__init__(address, _Handler)
        self.vae = vae
        self.temporal_checkpoint = temporal
        self.config = config or OptimizerConfig.for_mode("realtime")
        self.default_roles = default_roles or list(vae.skeleton.end_effectors)
        self.default_dof = default_dof
        self.w_future = w_future

    def build_session(self, header: dict | None) -> Session:
        if header is not None:
            roles, dof, _rate, root, seed = protocol.parse_stream_header(header)
            if header.get("skeleton_hash") not in (None, self.vae.skeleton.content_hash()):
                raise ProtocolError("stream skeleton does not match the loaded checkpoint")
        else:
            roles, dof = self.default_roles, self.default_dof
            root = RootState()
            seed = Pose.identity(self.vae.skeleton.joint_count)
        wf = self.w_future if self.w_future is not None else default_w_future(roles)
        return Session(
            self.vae,
            ConstraintSet.from_roles(roles, dof),
            self.config,
            temporal=self.temporal_checkpoint,
            seed_pose=seed,
            initial_root=root,
            w_future=wf,
        )

    @property
    def port(self) -> int:
        return self.server_address[1]


def replay_stream(host: str, port: int, header: dict, frames: list[dict], timeout=60.0):
    """Test/replay client: send a recorded stream, collect replies until done."""
    received: list[dict] = []
    with socket.create_connection((host, port), timeout=timeout) as sock:
        rfile = sock.makefile("r", encoding="utf-8")
        wfile = sock.makefile("w", encoding="utf-8")
        seq = 0

        def send(msg):
            nonlocal seq
            seq += 1
            wfile.write(protocol.encode_message(msg, seq))
            wfile.flush()

        send({"type": "hello", "version": protocol.PROTOCOL_VERSION, "header": header})
        for msg in frames:
            send(msg)
        send({"type": "bye"})
        for line in rfile:
            msg = protocol.decode_line(line.strip())
            received.append(msg)
            if msg["type"] == "bye":
                break
    return received

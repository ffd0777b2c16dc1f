// Browser entry: connect to the session service (through the ws->tcp
// bridge), render the skeleton, and wire pointer dragging + sensor toggles.

import { SessionClient } from "./client.js";
import type { ResidualsMessage, SkeletonMessage } from "./protocol.js";
import { ViewState } from "./state.js";
import { WebSocketTransport } from "./transport.js";
import { SkeletonView } from "./view3d.js";

const DEFAULT_URL = "ws://127.0.0.1:5929";

function residualPanel(el: HTMLElement, msg: ResidualsMessage): void {
  const rows = Object.entries(msg.residuals)
    .map(([id, v]) => {
      const unit = id.startsWith("ee_rot") ? "deg" : "m";
      return `<tr><td>${id}</td><td>${v.toFixed(4)} ${unit}</td></tr>`;
    })
    .join("");
  el.innerHTML =
    `<table>${rows}</table>` +
    `<p>queue ${msg.queue_len}${
      msg.diagnostics.length ? " | " + msg.diagnostics.join(", ") : ""
    }</p>`;
}

async function start(): Promise<void> {
  const canvas = document.getElementById("scene") as HTMLCanvasElement;
  const status = document.getElementById("status")!;
  const panel = document.getElementById("residuals")!;
  const url = new URLSearchParams(location.search).get("url") ?? DEFAULT_URL;

  let state: ViewState | null = null;
  let view: SkeletonView | null = null;
  let skeleton: SkeletonMessage | null = null;

  const client = new SessionClient({
    onPoseFrame: (m) => skeleton && state?.applyPoseFrame(m, skeleton.skeleton.joints),
    onResiduals: (m) => {
      state?.applyResiduals(m);
      residualPanel(panel, m);
    },
    onError: (reason) => {
      status.textContent = `error: ${reason}`;
    },
    onClose: () => {
      status.textContent = "disconnected - retrying in 2s";
      setTimeout(start, 2000);
    },
  });
  state = new ViewState(client);

  status.textContent = `connecting to ${url} ...`;
  const transport = new WebSocketTransport(url);
  try {
    await transport.ready();
    skeleton = await client.attach(transport);
  } catch (e) {
    status.textContent = `service offline (${String(e)}) - retrying in 2s`;
    setTimeout(start, 2000);
    return;
  }
  if (skeleton.protocol !== 1) {
    status.textContent = "protocol version mismatch - read-only mode";
    state.connection = "readonly";
  } else {
    status.textContent = `live | ${client.hello?.mode} | ${skeleton.roles.join(", ")}`;
  }
  state.initFromSkeleton(skeleton);
  view = new SkeletonView(state, canvas);
  view.buildSkeleton(skeleton);

  // pointer dragging: project pointer motion onto the camera plane
  let dragging: string | null = null;
  canvas.addEventListener("pointerdown", (ev) => {
    const role = pickHandle(ev);
    if (role) dragging = role;
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging || !state) return;
    const handle = state.handles.get(dragging);
    if (!handle) return;
    const dx = ev.movementX / 300;
    const dy = -ev.movementY / 300;
    state.dragHandle(dragging, [
      handle.position[0] + dx,
      handle.position[1] + dy,
      handle.position[2],
    ]);
  });
  canvas.addEventListener("pointerup", () => {
    if (dragging && state) state.releaseHandle(dragging);
    dragging = null;
  });

  function pickHandle(ev: PointerEvent): string | null {
    // nearest handle in screen space within a small radius
    if (!state || !view) return null;
    let best: string | null = null;
    let bestD = 30;
    for (const [role, handle] of state.handles) {
      const p = handle.position;
      // cheap fixed-view projection; good enough for handle picking
      const rect = canvas.getBoundingClientRect();
      const sx = rect.width * (0.5 + 0.18 * p[0]);
      const sy = rect.height * (0.85 - 0.4 * p[1]);
      const d = Math.hypot(ev.offsetX - sx, ev.offsetY - sy);
      if (d < bestD) {
        best = role;
        bestD = d;
      }
    }
    return best;
  }

  const toggles = document.getElementById("toggles")!;
  for (const role of skeleton.roles) {
    const btn = document.createElement("button");
    btn.textContent = role;
    btn.onclick = () => {
      const handle = state!.handles.get(role);
      if (!handle) return;
      state!.toggleSensor(role, !handle.enabled);
      btn.classList.toggle("disabled", !handle.enabled);
    };
    toggles.appendChild(btn);
  }

  function loop(): void {
    state?.flushDrag();
    view?.render();
    requestAnimationFrame(loop);
  }
  loop();
}

start();

// DOM wiring for the control studio: one slider per attribute, a time
// scrubber, orbit-drag on the viewport, and a status banner. All rendering
// happens server-side; this file only steers.

import { RenderParams } from "./api.js";
import { OrbitState } from "./orbit.js";
import { SessionStatus, StudioSession } from "./session.js";
import { browserTransport } from "./transport.js";

type Mode = "time" | "controls";

export class Studio {
  private session: StudioSession;
  private orbit = new OrbitState();
  private sliders: HTMLInputElement[] = [];
  private mode: Mode = "time";
  private time = 0;
  private viewSize = 384;

  constructor(private root: HTMLElement, baseUrl: string) {
    this.session = new StudioSession(baseUrl, browserTransport, {
      onFrame: (png, latency) => this.showFrame(png, latency),
      onStatus: (status) => this.showStatus(status),
      onError: (message) => this.toast(message),
    });
  }

  async start() {
    const info = await this.session.connect();
    this.buildPanel(info.attribute_names);
    if (!this.session.controlsEnabled) {
      this.setMode("time");
      this.el("mode-controls").setAttribute("disabled", "true");
      this.sliders.forEach((s) => (s.disabled = true));
    }
    this.requestFrame();
  }

  private currentParams(): RenderParams {
    const base = {
      orbit: this.orbit.params(),
      width: this.viewSize,
      height: this.viewSize,
    };
    if (this.mode === "controls") {
      return { ...base, controls: this.sliders.map((s) => Number(s.value)) };
    }
    return { ...base, time: this.time };
  }

  private requestFrame() {
    this.session.steer(this.currentParams());
  }

  private setMode(mode: Mode) {
    this.mode = mode;
    this.el("mode-time").classList.toggle("active", mode === "time");
    this.el("mode-controls").classList.toggle("active", mode === "controls");
    this.el("scrubber-row").style.display = mode === "time" ? "" : "none";
    this.el("sliders").style.display = mode === "controls" ? "" : "none";
    this.requestFrame();
  }

  private buildPanel(attributeNames: string[]) {
    const panel = this.el("sliders");
    panel.innerHTML = "";
    this.sliders = attributeNames.map((name) => {
      const row = document.createElement("label");
      row.className = "slider-row";
      const title = document.createElement("span");
      title.textContent = name;
      const input = document.createElement("input");
      input.type = "range";
      input.min = "0";
      input.max = "1";
      input.step = "0.01";
      input.value = "0";
      input.addEventListener("input", () => this.requestFrame());
      row.append(title, input);
      panel.append(row);
      return input;
    });

    const scrubber = this.el("scrubber") as HTMLInputElement;
    scrubber.addEventListener("input", () => {
      this.time = Number(scrubber.value);
      this.requestFrame();
    });
    this.el("mode-time").addEventListener("click", () => this.setMode("time"));
    this.el("mode-controls").addEventListener("click", () => {
      if (this.session.controlsEnabled) this.setMode("controls");
    });

    const view = this.el("view");
    let dragging = false;
    let last: [number, number] = [0, 0];
    view.addEventListener("pointerdown", (ev) => {
      dragging = true;
      last = [ev.clientX, ev.clientY];
      view.setPointerCapture(ev.pointerId);
    });
    view.addEventListener("pointermove", (ev) => {
      if (!dragging) return;
      this.orbit.drag(ev.clientX - last[0], ev.clientY - last[1]);
      last = [ev.clientX, ev.clientY];
      this.requestFrame();
    });
    view.addEventListener("pointerup", () => (dragging = false));
    view.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.orbit.zoom(ev.deltaY);
      this.requestFrame();
    });
  }

  private lastUrl: string | null = null;

  private showFrame(png: Uint8Array, latencyMs: number) {
    const img = this.el("view") as HTMLImageElement;
    const url = URL.createObjectURL(new Blob([png.slice().buffer], { type: "image/png" }));
    img.src = url;
    if (this.lastUrl) URL.revokeObjectURL(this.lastUrl);
    this.lastUrl = url;
    this.el("latency").textContent = `${latencyMs} ms`;
  }

  private showStatus(status: SessionStatus) {
    const banner = this.el("banner");
    banner.textContent =
      status === "live" ? "" : status === "connecting" ? "connecting…" : "disconnected — retrying";
    banner.style.display = status === "live" ? "none" : "";
    if (status === "live") this.requestFrame();
  }

  private toast(message: string) {
    const el = this.el("toast");
    el.textContent = message;
    el.style.display = "";
    setTimeout(() => (el.style.display = "none"), 2500);
  }

  private el(id: string): HTMLElement {
    const node = this.root.querySelector(`#${id}`);
    if (!node) throw new Error(`missing #${id}`);
    return node as HTMLElement;
  }
}

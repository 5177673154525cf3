// Pointer-drag orbit state. The UI never does matrix math: it just tracks
// azimuth/elevation/radius and ships them to the service.

import { OrbitParams } from "./api.js";

const ELEVATION_LIMIT = Math.PI / 2 - 0.05;

export class OrbitState {
  azimuth = 0;
  elevation = 0.2;
  radius = 4.0;

  constructor(initial?: Partial<OrbitParams>) {
    Object.assign(this, initial);
  }

  drag(dxPx: number, dyPx: number, speed = 0.01) {
    this.azimuth -= dxPx * speed;
    this.elevation = Math.min(
      ELEVATION_LIMIT,
      Math.max(-ELEVATION_LIMIT, this.elevation + dyPx * speed),
    );
  }

  zoom(deltaY: number) {
    this.radius = Math.min(20, Math.max(0.5, this.radius * Math.exp(deltaY * 0.001)));
  }

  params(): OrbitParams {
    return { azimuth: this.azimuth, elevation: this.elevation, radius: this.radius };
  }
}

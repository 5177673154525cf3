// Opt-in check against a live service: a UI-built request must yield bytes
// identical to a CLI render of the same state.
//
//   COGS_SERVICE_URL=http://127.0.0.1:8000 \
//   COGS_CLI_RENDER=/path/to/cli_reference.png \
//   COGS_RENDER_STATE='{"controls":[0.5,0.5],"orbit":{"azimuth":0,"elevation":0.2,"radius":4},"width":256,"height":256}' \
//   npm test
//
// The reference PNG comes from `cogs render` with matching --controls/--orbit.

import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { renderRequestBody, sanitizeParams } from "../src/api.js";

const serviceUrl = process.env.COGS_SERVICE_URL;
const referencePath = process.env.COGS_CLI_RENDER;

describe.skipIf(!serviceUrl || !referencePath)("live service", () => {
  it("UI-issued render is byte-identical to the CLI render", async () => {
    const state = JSON.parse(process.env.COGS_RENDER_STATE ?? "{}");
    const body = renderRequestBody(sanitizeParams(state));
    const resp = await fetch(`${serviceUrl}/api/render`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body,
    });
    expect(resp.status).toBe(200);
    const got = new Uint8Array(await resp.arrayBuffer());
    const want = new Uint8Array(readFileSync(referencePath!));
    expect(Buffer.compare(Buffer.from(got), Buffer.from(want))).toBe(0);
  });
});

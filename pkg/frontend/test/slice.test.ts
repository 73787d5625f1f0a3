import { describe, expect, it } from "vitest";

import {
  acceptResponse,
  beginRequest,
  criterionKey,
  idleSession,
  metricsBanner,
  overlayFor,
} from "../src/slice.js";
import { SLICE } from "./fixtures.js";

describe("slice overlay", () => {
  it("highlights exactly the server's kept positions", () => {
    const overlay = overlayFor(SLICE, 3);
    expect(overlay.highlighted).toEqual(new Set(["", "1", "1.1", "1.1.1"]));
    expect(overlay.rendered).toBe("state(br(B(b1, t1)))");
  });

  it("tracks the cursor state", () => {
    expect(overlayFor(SLICE, 0).highlighted).toEqual(new Set([""]));
    expect(() => overlayFor(SLICE, 99)).toThrow();
  });

  it("renders the metrics banner with the reduction figure", () => {
    const banner = metricsBanner(SLICE);
    expect(banner).toContain("|T| = 200");
    expect(banner).toContain("|T.| = 10");
    expect(banner).toContain("reduction 95.0%");
  });

  it("adds the cursor state's own reduction when asked", () => {
    const banner = metricsBanner(SLICE, 3);
    expect(banner).toContain("this state: 4/60");
    expect(banner).toContain("(reduction 93.3%)");
  });
});

describe("stale response handling", () => {
  it("applies a response matching the pending request", () => {
    const key = criterionKey(3, "B(?, _)");
    const s = beginRequest(idleSession(), key);
    const next = acceptResponse(s, key, SLICE);
    expect(next).not.toBeNull();
    expect(next!.doc).toBe(SLICE);
    expect(next!.pendingKey).toBeNull();
  });

  it("discards a response superseded by a newer criterion", () => {
    const stale = criterionKey(3, "B(?, _)");
    let s = beginRequest(idleSession(), stale);
    s = beginRequest(s, criterionKey(3, "B(?, ?, ?)"));
    expect(acceptResponse(s, stale, SLICE)).toBeNull();
  });
});

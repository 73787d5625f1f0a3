import { describe, expect, it } from "vitest";

import {
  clearSlice,
  enterSlicedMode,
  incomingStep,
  jumpTo,
  makeView,
  outgoingStep,
  slideshowNavigate,
} from "../src/traceView.js";
import { META } from "./fixtures.js";

describe("slideshow navigation", () => {
  it("starts at the initial state in full mode", () => {
    const v = makeView(META);
    expect(v.cursor).toBe(0);
    expect(v.renderMode).toBe("full");
    expect(incomingStep(v)).toBeNull();
  });

  it("clamps at both ends", () => {
    let v = makeView(META);
    v = slideshowNavigate(v, -1);
    expect(v.cursor).toBe(0);
    for (let i = 0; i < 10; i++) v = slideshowNavigate(v, 1);
    expect(v.cursor).toBe(META.states - 1);
    expect(outgoingStep(v)).toBeNull();
  });

  it("forward then back is the identity", () => {
    const v = jumpTo(makeView(META), 1);
    const roundTrip = slideshowNavigate(slideshowNavigate(v, 1), -1);
    expect(roundTrip).toEqual(v);
  });

  it("shows the label and kind of the crossed step", () => {
    let v = makeView(META);
    v = slideshowNavigate(v, 1);
    expect(incomingStep(v)).toEqual({ kind: "rule", label: "ReqFin" });
    v = slideshowNavigate(v, 1);
    expect(incomingStep(v)).toEqual({ kind: "builtin", label: "evalScript" });
    // stepping backward from the last state crosses the recorded flat step
    v = jumpTo(v, META.states - 1);
    expect(incomingStep(v)).toEqual({ kind: "flat", label: "flat" });
  });

  it("sliced mode carries a criterion and clears back to full", () => {
    let v = enterSlicedMode(makeView(META), "abc123");
    expect(v.renderMode).toBe("sliced");
    expect(v.activeSlice).toBe("abc123");
    v = clearSlice(v);
    expect(v.renderMode).toBe("full");
    expect(v.activeSlice).toBeNull();
  });

  it("rejects out-of-range jumps", () => {
    expect(() => jumpTo(makeView(META), 99)).toThrow();
  });
});

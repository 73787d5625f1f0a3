import { describe, expect, it } from "vitest";

import {
  applyPattern,
  canApply,
  editPattern,
  emptyDraft,
  reportServerError,
  validatePattern,
} from "../src/patternDraft.js";

describe("pattern validation", () => {
  it("accepts the browser-focus pattern", () => {
    expect(validatePattern("B(?, _, ?, _, _, _, _, _, _)").ok).toBe(true);
  });

  it("accepts bare fragments and wildcards", () => {
    expect(validatePattern("?").ok).toBe(true);
    expect(validatePattern("astro").ok).toBe(true);
    expect(validatePattern("topic(astro, #posts(?))").ok).toBe(true);
  });

  it("rejects an all-blank pattern", () => {
    expect(validatePattern("_").ok).toBe(false);
    expect(validatePattern("").ok).toBe(false);
  });

  it("rejects unbalanced parentheses", () => {
    expect(validatePattern("B(?, _").ok).toBe(false);
    expect(validatePattern("B ?)").ok).toBe(false);
  });
});

describe("draft lifecycle", () => {
  it("enables apply only after successful validation", () => {
    let d = emptyDraft();
    expect(canApply(d)).toBe(false);
    d = editPattern(d, "_");
    expect(canApply(d)).toBe(false);
    expect(() => applyPattern(d)).toThrow();
    d = editPattern(d, "B(?, _)");
    expect(canApply(d)).toBe(true);
  });

  it("records applied patterns once in history", () => {
    let d = editPattern(emptyDraft(), "B(?, _)");
    d = applyPattern(d);
    d = applyPattern(d);
    expect(d.history).toEqual(["B(?, _)"]);
    d = editPattern(d, "topic(astro, ?)");
    d = applyPattern(d);
    expect(d.history).toEqual(["B(?, _)", "topic(astro, ?)"]);
  });

  it("clears a server rejection on the next edit", () => {
    let d = editPattern(emptyDraft(), "B(?, _)");
    d = reportServerError(d, "bad pattern: unknown operator B");
    expect(d.serverError).toContain("unknown operator");
    d = editPattern(d, "topic(?)");
    expect(d.serverError).toBeNull();
  });
});

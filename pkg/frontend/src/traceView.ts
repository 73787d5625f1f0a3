// Slideshow state for stepping through a counterexample trace.

import type { StepInfo, TraceMeta } from "./types.js";

export type RenderMode = "full" | "sliced";

export interface TraceView {
  readonly traceId: string;
  readonly cursor: number;
  readonly stateCount: number;
  readonly steps: readonly StepInfo[];
  readonly renderMode: RenderMode;
  readonly activeSlice: string | null;
}

export function makeView(meta: TraceMeta): TraceView {
  if (meta.states < 1) {
    throw new Error("trace has no states");
  }
  return {
    traceId: meta.trace_id,
    cursor: 0,
    stateCount: meta.states,
    steps: meta.steps,
    renderMode: "full",
    activeSlice: null,
  };
}

export function slideshowNavigate(view: TraceView, direction: 1 | -1): TraceView {
  const cursor = Math.min(view.stateCount - 1, Math.max(0, view.cursor + direction));
  return { ...view, cursor };
}

export function jumpTo(view: TraceView, index: number): TraceView {
  if (index < 0 || index >= view.stateCount) {
    throw new Error(`state ${index} out of range`);
  }
  return { ...view, cursor: index };
}

/** The step taken to reach the cursor state, shown alongside the slideshow;
 * the initial state has no incoming step. */
export function incomingStep(view: TraceView): StepInfo | null {
  return view.cursor === 0 ? null : view.steps[view.cursor - 1];
}

export function outgoingStep(view: TraceView): StepInfo | null {
  return view.cursor >= view.steps.length ? null : view.steps[view.cursor];
}

export function enterSlicedMode(view: TraceView, criterionHash: string): TraceView {
  return { ...view, renderMode: "sliced", activeSlice: criterionHash };
}

export function clearSlice(view: TraceView): TraceView {
  return { ...view, renderMode: "full", activeSlice: null };
}

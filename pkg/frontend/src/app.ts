// Browser wiring: connects the pure view-model modules to the DOM.  All
// heavy lifting (checking, slicing, graph extraction) happens server-side.

import { ApiError, Client } from "./api.js";
import { browserBadges, renderGraphSvg } from "./graph.js";
import {
  applyPattern,
  canApply,
  editPattern,
  emptyDraft,
  reportServerError,
  type PatternDraft,
} from "./patternDraft.js";
import {
  acceptResponse,
  beginRequest,
  criterionKey,
  idleSession,
  metricsBanner,
  overlayFor,
  type SliceSession,
} from "./slice.js";
import { buildTreeView, visibleNodes, type TreeVM } from "./tree.js";
import {
  clearSlice,
  enterSlicedMode,
  incomingStep,
  makeView,
  slideshowNavigate,
  type TraceView,
} from "./traceView.js";
import type { GraphDoc } from "./types.js";

interface AppState {
  view: TraceView | null;
  draft: PatternDraft;
  slice: SliceSession;
  graph: GraphDoc | null;
}

export function startApp(root: Document, baseUrl = ""): void {
  const client = new Client(baseUrl, (url, init) => fetch(url, init));
  const state: AppState = {
    view: null,
    draft: emptyDraft(),
    slice: idleSession(),
    graph: null,
  };

  const el = <T extends HTMLElement>(id: string): T => {
    const found = root.getElementById(id);
    if (!found) throw new Error(`missing element #${id}`);
    return found as T;
  };

  async function render(): Promise<void> {
    const view = state.view;
    if (!view) return;
    el("step-label").textContent = (() => {
      const s = incomingStep(view);
      return s ? `state ${view.cursor} via ${s.kind} ${s.label}` : "initial state";
    })();
    const stateDoc = await client.traceState(view.traceId, view.cursor);
    const overlay =
      view.renderMode === "sliced" && state.slice.doc
        ? overlayFor(state.slice.doc, view.cursor)
        : null;
    const vm = buildTreeView(stateDoc.tree, overlay?.highlighted ?? null);
    el("state-tree").innerHTML = renderTreeHtml(vm);
    el("metrics").textContent = state.slice.doc && view.renderMode === "sliced"
      ? metricsBanner(state.slice.doc, view.cursor)
      : "";
    if (state.graph) {
      el("graph").innerHTML = renderGraphSvg(
        state.graph,
        browserBadges(stateDoc.tree),
      );
    }
  }

  async function loadTrace(traceId: string): Promise<void> {
    const meta = await client.traceMeta(traceId);
    state.view = makeView(meta);
    state.graph = await client.graph(traceId);
    state.slice = idleSession();
    await render();
  }

  async function requestSlice(): Promise<void> {
    const view = state.view;
    if (!view || !canApply(state.draft)) return;
    state.draft = applyPattern(state.draft);
    const pattern = state.draft.text;
    const key = criterionKey(view.cursor, pattern);
    state.slice = beginRequest(state.slice, key);
    try {
      const doc = await client.slice(view.traceId, view.cursor, pattern);
      const next = acceptResponse(state.slice, key, doc);
      if (next === null) return; // superseded by a newer request
      state.slice = next;
      state.view = enterSlicedMode(view, doc.criterion_hash ?? key);
    } catch (e) {
      if (e instanceof ApiError) {
        state.draft = reportServerError(state.draft, e.message);
        el("pattern-error").textContent = e.message;
        return;
      }
      throw e;
    }
    await render();
  }

  el("btn-load").addEventListener("click", () => {
    void loadTrace(el<HTMLInputElement>("trace-id").value.trim());
  });
  el("btn-prev").addEventListener("click", () => {
    if (state.view) {
      state.view = slideshowNavigate(state.view, -1);
      void render();
    }
  });
  el("btn-next").addEventListener("click", () => {
    if (state.view) {
      state.view = slideshowNavigate(state.view, 1);
      void render();
    }
  });
  el("pattern").addEventListener("input", (ev) => {
    state.draft = editPattern(state.draft, (ev.target as HTMLInputElement).value);
    el<HTMLButtonElement>("btn-slice").disabled = !canApply(state.draft);
    el("pattern-error").textContent = state.draft.validation?.ok
      ? ""
      : state.draft.validation?.message ?? "";
  });
  el("btn-slice").addEventListener("click", () => void requestSlice());
  el("btn-full").addEventListener("click", () => {
    if (state.view) {
      state.view = clearSlice(state.view);
      void render();
    }
  });
}

function renderTreeHtml(vm: TreeVM): string {
  const esc = (s: string) =>
    s.replace(/&/g, "&amp;").replace(/</g, "&lt;");
  const line = (n: TreeVM): string =>
    `<div class="node${n.highlighted ? " kept" : ""}" data-pos="${n.posKey}">` +
    `${esc(n.label)}</div>`;
  return visibleNodes(vm).map(line).join("\n");
}

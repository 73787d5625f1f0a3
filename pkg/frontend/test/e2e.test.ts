// End-to-end flow against a live service: check the bundled buggy forum
// model, load the refutation trace, step to the final state, apply the
// browser-focus pattern and verify the overlay against the server's answer.
//
// Requires a running service; skipped otherwise:
//   webnav serve --port 8321   then   WEBNAV_SERVICE_URL=http://127.0.0.1:8321

import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { Client } from "../src/api.js";
import { browserBadges, renderGraphSvg } from "../src/graph.js";
import { metricsBanner, overlayFor } from "../src/slice.js";
import { buildTreeView, visibleNodes } from "../src/tree.js";
import { enterSlicedMode, makeView, jumpTo, incomingStep } from "../src/traceView.js";
import { posKey } from "../src/types.js";

const BASE = process.env.WEBNAV_SERVICE_URL ?? "";
const PATTERN = "B(?, _, ?, _, _, _, _, _, _)";
const PROPERTY =
  "[] ~ (curPage(bidAlfred, Admin) /\\ curPage(bidAnna, Admin))";

describe.skipIf(!BASE)("end-to-end explorer flow", () => {
  it("slices the buggy-forum refutation at the final state", async () => {
    const client = new Client(BASE, (url, init) => fetch(url, init));
    const spec = readFileSync(
      new URL("../../src/webnav/corpus/forum-buggy.nav", import.meta.url),
      "utf8",
    );
    const { job_id } = await client.submitCheck(spec, PROPERTY);
    let job = await client.pollCheck(job_id);
    for (let i = 0; i < 600 && job.status === "running"; i++) {
      await new Promise((r) => setTimeout(r, 500));
      job = await client.pollCheck(job_id);
    }
    expect(job.status).toBe("done");
    expect(job.verdict!.outcome).toBe("refuted");
    const traceId = job.verdict!.trace_id!;

    const meta = await client.traceMeta(traceId);
    let view = makeView(meta);
    view = jumpTo(view, meta.states - 1);
    expect(incomingStep(view)).not.toBeNull();

    const doc = await client.slice(traceId, view.cursor, PATTERN);
    view = enterSlicedMode(view, doc.criterion_hash!);
    // the banner must show a substantial reduction at the focused state
    expect(metricsBanner(doc, view.cursor))
      .toMatch(/\(reduction (8[5-9]|9\d)\./);

    const state = await client.traceState(traceId, view.cursor);
    const overlay = overlayFor(doc, view.cursor);
    const vm = buildTreeView(state.tree, overlay.highlighted);
    const lit = new Set(
      visibleNodes(vm).filter((n) => n.highlighted).map((n) => n.posKey),
    );
    const want = new Set(
      doc.per_state[view.cursor].kept_positions.map(posKey),
    );
    expect(lit).toEqual(want);

    const badges = browserBadges(state.tree);
    expect(badges.map((b) => b.page)).toEqual(["Admin", "Admin"]);
    const svg = renderGraphSvg(await client.graph(traceId), badges);
    expect((svg.match(/class="badge"/g) ?? [])).toHaveLength(2);
  }, 600_000);
});

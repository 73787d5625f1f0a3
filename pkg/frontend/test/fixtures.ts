import type { GraphDoc, SliceDoc, TermTree, TraceMeta } from "../src/types.js";

export const META: TraceMeta = {
  trace_id: "t0",
  theory_hash: "h0",
  property: "[] ~ p",
  states: 4,
  steps: [
    { kind: "rule", label: "ReqFin" },
    { kind: "builtin", label: "evalScript" },
    { kind: "flat", label: "flat" },
  ],
  metadata: {},
};

function leaf(op: string, pos: number[], kind: TermTree["kind"] = "app"): TermTree {
  return { op, sort: "X", kind, pos, children: [] };
}

/** state(br(B(b1, t1, 'Admin, ...9 children), B(b2, t2, 'Admin, ...)), ms) */
function browser(pos: number[], id: string, tab: string, page: string): TermTree {
  const children = [
    leaf(id, [...pos, 1]),
    leaf(tab, [...pos, 2]),
    leaf(`'${page}`, [...pos, 3]),
  ];
  for (let i = 4; i <= 9; i++) {
    children.push(leaf(`x${i}`, [...pos, i]));
  }
  return { op: "B", sort: "Browser", kind: "app", pos, children };
}

export const STATE_TREE: TermTree = {
  op: "state",
  sort: "State",
  kind: "app",
  pos: [],
  children: [
    {
      op: "br",
      sort: "Browsers",
      kind: "app",
      pos: [1],
      children: [
        browser([1, 1], "bidAlfred", "tidAlfred", "Admin"),
        browser([1, 2], "bidAnna", "tidAnna", "Admin"),
      ],
    },
    leaf("mes-empty", [2]),
  ],
};

export const DEEP_TREE: TermTree = {
  op: "a",
  sort: "X",
  kind: "app",
  pos: [],
  children: [
    {
      op: "b",
      sort: "X",
      kind: "app",
      pos: [1],
      children: [
        {
          op: "c",
          sort: "X",
          kind: "app",
          pos: [1, 1],
          children: [
            {
              op: "d",
              sort: "X",
              kind: "app",
              pos: [1, 1, 1],
              children: [leaf("e", [1, 1, 1, 1]), leaf("*", [1, 1, 1, 2], "hole")],
            },
          ],
        },
        leaf("f", [1, 2]),
      ],
    },
  ],
};

export const SLICE: SliceDoc = {
  schema: "webnav-slice/1",
  trace_id: "t0",
  criterion_hash: "abc123",
  criterion: { state_index: 3, positions: [[1], [1, 1]] },
  per_state: [
    { rendered: "state(*)", kept_positions: [[]] },
    { rendered: "state(br(*))", kept_positions: [[], [1]] },
    { rendered: "state(br(B(b1)))", kept_positions: [[], [1], [1, 1]] },
    { rendered: "state(br(B(b1, t1)))", kept_positions: [[], [1], [1, 1], [1, 1, 1]] },
  ],
  metrics: {
    state_symbols: [1, 2, 3, 4],
    full_state_symbols: [40, 50, 50, 60],
    total_symbols: 200,
    sliced_symbols: 10,
    ratio: 0.05,
    reduction_percent: 95.0,
  },
};

export const GRAPH: GraphDoc = {
  schema: "webnav-graph/1",
  nodes: [
    { name: "Index", entry: true },
    { name: "Login", entry: false },
    { name: "Admin", entry: false },
  ],
  edges: [
    { from: "Index", to: "Login", kind: "link", label: "true" },
    { from: "Login", to: "Admin", kind: "link", label: "adm=yes" },
    { from: "Login", to: "Index", kind: "continuation", label: "reg=yes" },
  ],
};

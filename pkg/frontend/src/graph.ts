// Navigation-graph panel: force layout of the page graph plus badges for the
// page each browser currently displays.

import * as d3 from "d3";

import type { GraphDoc, TermTree } from "./types.js";

export interface Badge {
  browser: string;
  page: string;
}

function pageName(op: string): string {
  return op.startsWith("'") ? op.slice(1) : op;
}

/** One badge per browser instance in the state; the badge carries the page
 * the browser currently shows. */
export function browserBadges(state: TermTree): Badge[] {
  const out: Badge[] = [];
  const walk = (node: TermTree) => {
    if (node.op === "B" && node.children.length === 9) {
      out.push({
        browser: node.children[0].op,
        page: pageName(node.children[2].op),
      });
      return;
    }
    node.children.forEach(walk);
  };
  walk(state);
  return out.sort((a, b) => a.browser.localeCompare(b.browser));
}

export interface LaidOutNode {
  name: string;
  entry: boolean;
  x: number;
  y: number;
}

export interface Layout {
  nodes: LaidOutNode[];
  edges: { from: LaidOutNode; to: LaidOutNode; kind: string; label: string }[];
}

export function layoutGraph(doc: GraphDoc, width = 640, height = 480): Layout {
  interface SimNode extends d3.SimulationNodeDatum {
    name: string;
    entry: boolean;
  }
  const nodes: SimNode[] = doc.nodes.map((n) => ({ ...n }));
  const index = new Map(nodes.map((n) => [n.name, n]));
  const links = doc.edges.map((e) => ({
    source: index.get(e.from)!,
    target: index.get(e.to)!,
  }));
  const sim = d3
    .forceSimulation(nodes)
    .randomSource(d3.randomLcg(42))
    .force("charge", d3.forceManyBody().strength(-300))
    .force("link", d3.forceLink(links).distance(120))
    .force("center", d3.forceCenter(width / 2, height / 2))
    .stop();
  sim.tick(200);
  const placed = new Map(
    nodes.map((n) => [
      n.name,
      {
        name: n.name,
        entry: n.entry,
        x: Math.max(30, Math.min(width - 30, n.x ?? 0)),
        y: Math.max(30, Math.min(height - 30, n.y ?? 0)),
      },
    ]),
  );
  return {
    nodes: [...placed.values()],
    edges: doc.edges.map((e) => ({
      from: placed.get(e.from)!,
      to: placed.get(e.to)!,
      kind: e.kind,
      label: e.label,
    })),
  };
}

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/"/g, "&quot;");
}

export function renderGraphSvg(
  doc: GraphDoc,
  badges: Badge[],
  width = 640,
  height = 480,
): string {
  const layout = layoutGraph(doc, width, height);
  const byPage = new Map<string, Badge[]>();
  for (const b of badges) {
    const list = byPage.get(b.page) ?? [];
    list.push(b);
    byPage.set(b.page, list);
  }
  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}">`,
  ];
  for (const e of layout.edges) {
    const dash = e.kind === "continuation" ? ' stroke-dasharray="6 3"' : "";
    parts.push(
      `<line class="edge ${e.kind}" x1="${e.from.x.toFixed(1)}" ` +
        `y1="${e.from.y.toFixed(1)}" x2="${e.to.x.toFixed(1)}" ` +
        `y2="${e.to.y.toFixed(1)}" stroke="#555"${dash}/>`,
    );
    const mx = (e.from.x + e.to.x) / 2;
    const my = (e.from.y + e.to.y) / 2;
    parts.push(
      `<text class="edge-label" x="${mx.toFixed(1)}" y="${my.toFixed(1)}" ` +
        `font-size="9">${esc(e.label)}</text>`,
    );
  }
  for (const n of layout.nodes) {
    // entry pages get a double ring
    if (n.entry) {
      parts.push(
        `<circle class="entry-ring" cx="${n.x.toFixed(1)}" ` +
          `cy="${n.y.toFixed(1)}" r="26" fill="none" stroke="#333"/>`,
      );
    }
    parts.push(
      `<circle class="page" cx="${n.x.toFixed(1)}" cy="${n.y.toFixed(1)}" ` +
        `r="22" fill="#eef" stroke="#333"/>`,
      `<text class="page-label" x="${n.x.toFixed(1)}" y="${n.y.toFixed(1)}" ` +
        `text-anchor="middle" font-size="11">${esc(n.name)}</text>`,
    );
    const here = byPage.get(n.name) ?? [];
    here.forEach((b, i) => {
      parts.push(
        `<text class="badge" data-browser="${esc(b.browser)}" ` +
          `x="${(n.x + 26).toFixed(1)}" y="${(n.y - 18 + 12 * i).toFixed(1)}" ` +
          `font-size="10" fill="#a00">${esc(b.browser)}</text>`,
      );
    });
  }
  parts.push("</svg>");
  return parts.join("\n");
}

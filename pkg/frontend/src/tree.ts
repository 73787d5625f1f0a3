// Lazy state-tree view model.  Web states render to thousands of characters,
// so nodes beyond a depth budget start collapsed; slice overlays force the
// paths to highlighted positions open.

import type { TermTree } from "./types.js";
import { posKey } from "./types.js";

export interface TreeVM {
  readonly op: string;
  readonly label: string;
  readonly posKey: string;
  readonly highlighted: boolean;
  readonly expanded: boolean;
  readonly children: TreeVM[];
}

export function nodeLabel(node: TermTree): string {
  return node.kind === "hole" ? "*" : node.op;
}

export function buildTreeView(
  tree: TermTree,
  highlighted: Set<string> | null,
  maxDepth = 3,
): TreeVM {
  const onKeptPath = (node: TermTree): boolean => {
    if (highlighted === null) return false;
    const key = posKey(node.pos);
    const prefix = key === "" ? "" : key + ".";
    for (const h of highlighted) {
      if (h === key || h.startsWith(prefix)) return true;
    }
    return false;
  };

  const build = (node: TermTree, depth: number): TreeVM => {
    const key = posKey(node.pos);
    return {
      op: node.op,
      label: nodeLabel(node),
      posKey: key,
      highlighted: highlighted !== null && highlighted.has(key),
      expanded: depth < maxDepth || onKeptPath(node),
      children: node.children.map((c) => build(c, depth + 1)),
    };
  };
  return build(tree, 0);
}

/** Nodes actually shown: children of a collapsed node are hidden. */
export function visibleNodes(vm: TreeVM): TreeVM[] {
  const out: TreeVM[] = [vm];
  if (vm.expanded) {
    for (const c of vm.children) {
      out.push(...visibleNodes(c));
    }
  }
  return out;
}

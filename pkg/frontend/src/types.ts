// Document shapes served by the verification service (schemas/*.json).

export interface GraphNode {
  name: string;
  entry: boolean;
}

export interface GraphEdge {
  from: string;
  to: string;
  kind: "link" | "continuation";
  label: string;
}

export interface GraphDoc {
  schema: string;
  nodes: GraphNode[];
  edges: GraphEdge[];
}

export interface StepInfo {
  kind: string;
  label: string;
}

export interface TraceMeta {
  trace_id: string;
  theory_hash: string;
  property: string;
  states: number;
  steps: StepInfo[];
  metadata: Record<string, unknown>;
}

export interface TermTree {
  op: string;
  sort: string;
  kind: "app" | "var" | "hole";
  pos: number[];
  children: TermTree[];
}

export interface StateDoc {
  index: number;
  rendered: string;
  symbols: number;
  tree: TermTree;
}

export interface SliceMetrics {
  state_symbols: number[];
  full_state_symbols: number[];
  total_symbols: number;
  sliced_symbols: number;
  ratio: number;
  reduction_percent: number;
}

export interface SlicePerState {
  rendered: string;
  kept_positions: number[][];
}

export interface SliceDoc {
  schema: string;
  trace_id: string | null;
  criterion_hash?: string;
  criterion: { state_index: number; positions: number[][] };
  per_state: SlicePerState[];
  metrics: SliceMetrics;
}

export interface VerdictDoc {
  schema: string;
  outcome: "fulfilled" | "refuted" | "budget-exhausted";
  property: string;
  lasso_start: number;
  states_explored: number;
  product_nodes: number;
  elapsed: number;
  reason: string;
  trace_id?: string;
}

export interface ErrorBody {
  error: { code: string; message: string };
}

export function posKey(pos: number[]): string {
  return pos.join(".");
}

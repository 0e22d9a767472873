/** Layered layout and execution-status overlay for the decision graph.
 *
 * Layout is deterministic: column = longest path from a trigger, row =
 * declaration order within the column. Unreachable steps land in a
 * trailing detached column so they are visible with a warning badge.
 */

import type { DiagnosticResponse, DocumentGraph, StepStatus } from "./types.js";

export interface PositionedNode {
  name: string;
  kind: string;
  filter?: string | null;
  column: number;
  row: number;
  x: number;
  y: number;
  detached: boolean;
  status: StepStatus | "Unvisited" | null;
}

export interface PositionedEdge {
  from: string;
  to: string;
  points: { x1: number; y1: number; x2: number; y2: number };
  filter?: string | null;
}

export interface DagLayout {
  nodes: PositionedNode[];
  edges: PositionedEdge[];
  width: number;
  height: number;
}

export const NODE_W = 170;
export const NODE_H = 46;
const GAP_X = 70;
const GAP_Y = 22;

export function layoutGraph(graph: DocumentGraph): DagLayout {
  const order = new Map(graph.nodes.map((n, i) => [n.name, i]));
  const out = new Map<string, string[]>();
  for (const node of graph.nodes) out.set(node.name, []);
  for (const edge of graph.edges) {
    if (out.has(edge.from) && order.has(edge.to)) out.get(edge.from)!.push(edge.to);
  }

  // longest-path depth from the trigger roots
  const depth = new Map<string, number>();
  const roots = graph.nodes.filter((n) => n.kind === "trigger").map((n) => n.name);
  const visit = (name: string, d: number, seen: Set<string>) => {
    if (seen.has(name)) return; // cycles render flat rather than recursing
    if ((depth.get(name) ?? -1) >= d) return;
    depth.set(name, d);
    const nextSeen = new Set(seen).add(name);
    for (const next of out.get(name) ?? []) visit(next, d + 1, nextSeen);
  };
  for (const root of roots) visit(root, 0, new Set());

  const maxDepth = Math.max(0, ...depth.values());
  const detachedColumn = maxDepth + 1;

  const columns = new Map<number, string[]>();
  for (const node of graph.nodes) {
    const column = depth.has(node.name) ? depth.get(node.name)! : detachedColumn;
    if (!columns.has(column)) columns.set(column, []);
    columns.get(column)!.push(node.name);
  }
  for (const names of columns.values()) {
    names.sort((a, b) => order.get(a)! - order.get(b)!);
  }

  const positioned = new Map<string, PositionedNode>();
  let height = 0;
  for (const [column, names] of [...columns.entries()].sort((a, b) => a[0] - b[0])) {
    names.forEach((name, row) => {
      const node = graph.nodes[order.get(name)!];
      const x = column * (NODE_W + GAP_X);
      const y = row * (NODE_H + GAP_Y);
      height = Math.max(height, y + NODE_H);
      positioned.set(name, {
        name,
        kind: node.kind,
        filter: node.filter ?? null,
        column,
        row,
        x,
        y,
        detached: !depth.has(name) && node.kind !== "trigger",
        status: null,
      });
    });
  }

  const edges: PositionedEdge[] = graph.edges
    .filter((e) => positioned.has(e.from) && positioned.has(e.to))
    .map((e) => {
      const from = positioned.get(e.from)!;
      const to = positioned.get(e.to)!;
      const target = graph.nodes[order.get(e.to)!];
      return {
        from: e.from,
        to: e.to,
        points: {
          x1: from.x + NODE_W,
          y1: from.y + NODE_H / 2,
          x2: to.x,
          y2: to.y + NODE_H / 2,
        },
        filter: target.filter ?? null,
      };
    });

  const width = (Math.max(0, ...[...columns.keys()]) + 1) * (NODE_W + GAP_X) - GAP_X;
  return { nodes: [...positioned.values()], edges, width, height };
}

/** Per-step status from an execution: the "strongest" outcome wins. */
const STATUS_RANK: Record<string, number> = {
  Fired: 0,
  Errored: 1,
  NoData: 2,
  FilteredOut: 3,
  SkippedMissingKeys: 4,
  Deduplicated: 5,
};

export function overlayStatuses(
  layout: DagLayout,
  response: DiagnosticResponse | null,
  tsgId?: string,
): DagLayout {
  if (!response) return layout;
  const byStep = new Map<string, StepStatus>();
  for (const finding of response.findings) {
    if (tsgId && finding.tsg_id !== tsgId) continue;
    for (const outcome of finding.outcomes) {
      const current = byStep.get(outcome.step);
      if (
        current === undefined ||
        (STATUS_RANK[outcome.status] ?? 9) < (STATUS_RANK[current] ?? 9)
      ) {
        byStep.set(outcome.step, outcome.status);
      }
    }
  }
  return {
    ...layout,
    nodes: layout.nodes.map((node) => ({
      ...node,
      status: byStep.get(node.name) ?? (byStep.size ? "Unvisited" : null),
    })),
  };
}

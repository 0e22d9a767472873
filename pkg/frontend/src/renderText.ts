/** Extract the human-readable content of a response as plain strings.
 *
 * This is the parity surface against the CLI's markdown output: both
 * render the same explanation texts, summary sections, and action lines,
 * so diffing these strings proves the workbench loses nothing.
 */

import type { DiagnosticResponse } from "./types.js";

export function extractContent(response: DiagnosticResponse): string[] {
  const lines: string[] = [];
  lines.push(response.summary.problem_statement);
  lines.push(response.summary.findings);
  for (const item of response.summary.automatic_actions) lines.push(item);
  for (const item of response.summary.suggested_actions) lines.push(item);
  for (const finding of response.findings) {
    for (const outcome of finding.outcomes) {
      if (outcome.status === "Fired" && outcome.explanation) {
        lines.push(outcome.explanation.trimEnd());
      }
      if (outcome.table && outcome.table.rows.length) {
        for (const row of outcome.table.rows) {
          lines.push(row.map(String).join(" | "));
        }
      }
    }
  }
  return lines.filter((line) => line.trim().length > 0);
}

/** The same extraction, tolerant of the CLI emitting identical JSON. */
export function diffContent(a: string[], b: string[]): string[] {
  const differences: string[] = [];
  const max = Math.max(a.length, b.length);
  for (let i = 0; i < max; i++) {
    if (a[i] !== b[i]) {
      differences.push(`line ${i}: ${JSON.stringify(a[i])} != ${JSON.stringify(b[i])}`);
    }
  }
  return differences;
}

/** DOM rendering: template strings in, innerHTML out. */

import type { DagLayout } from "./dag.js";
import { NODE_H, NODE_W } from "./dag.js";
import type {
  DiagnosticResponse,
  FindingView,
  TablePayload,
  TsgListEntry,
  ValidationReport,
} from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

/** Minimal markdown: bold, inline code, line breaks, bullets. */
export function miniMarkdown(text: string): string {
  const escaped = escapeHtml(text.trim());
  return escaped
    .replace(/\*\*(.+?)\*\*/g, "<strong>$1</strong>")
    .replace(/`([^`]+)`/g, "<code>$1</code>")
    .split(/\n/)
    .map((line) => (line.trim().startsWith("- ") ? `<li>${line.trim().slice(2)}</li>` : line))
    .join("<br/>")
    .replace(/(<li>.*?<\/li>)(<br\/>)?/g, "$1");
}

export function renderValidation(report: ValidationReport | null, dirty: boolean): string {
  if (report === null) {
    return `<p class="muted">Paste or edit a guide; validation runs as you type.</p>`;
  }
  const badge = dirty
    ? `<span class="badge pending">validating…</span>`
    : report.ok
      ? `<span class="badge ok">valid</span>`
      : `<span class="badge fail">${report.errors.length} error(s)</span>`;
  const issue = (kind: string) => (entry: { code: string; scope: string; message: string }) =>
    `<li class="${kind}"><code>${escapeHtml(entry.scope)}</code> [${escapeHtml(entry.code)}] ${escapeHtml(entry.message)}</li>`;
  return `
    ${badge}
    <ul class="issues">
      ${report.errors.map(issue("error")).join("")}
      ${report.warnings.map(issue("warning")).join("")}
    </ul>`;
}

const KIND_COLORS: Record<string, string> = {
  trigger: "#7986cb",
  check: "#4db6ac",
  explanation: "#a48fff",
  action: "#ff9e64",
};

const STATUS_COLORS: Record<string, string> = {
  Fired: "#4db6ac",
  NoData: "#607d8b",
  FilteredOut: "#9e9e9e",
  SkippedMissingKeys: "#fdd835",
  Deduplicated: "#64b5f6",
  Errored: "#ff5470",
  Unvisited: "#455a64",
};

export function renderDag(layout: DagLayout | null): string {
  if (!layout || layout.nodes.length === 0) {
    return `<p class="muted">The decision graph appears after a successful validation.</p>`;
  }
  const pad = 10;
  const edges = layout.edges
    .map((edge) => {
      const { x1, y1, x2, y2 } = edge.points;
      const mid = (x1 + x2) / 2;
      const badge = edge.filter
        ? `<text x="${mid}" y="${(y1 + y2) / 2 - 6}" class="edge-badge">⧩ filter</text>`
        : "";
      return `<path d="M ${x1} ${y1} C ${mid} ${y1}, ${mid} ${y2}, ${x2} ${y2}" class="edge"/>${badge}`;
    })
    .join("");
  const nodes = layout.nodes
    .map((node) => {
      const stroke = node.status
        ? (STATUS_COLORS[node.status] ?? "#455a64")
        : (KIND_COLORS[node.kind] ?? "#455a64");
      const status = node.status
        ? `<text x="${node.x + 8}" y="${node.y + NODE_H - 8}" class="node-status" fill="${stroke}">${node.status}</text>`
        : "";
      const warn = node.detached
        ? `<text x="${node.x + NODE_W - 18}" y="${node.y + 16}" class="warn">⚠</text>`
        : "";
      return `
        <g>
          <rect x="${node.x}" y="${node.y}" width="${NODE_W}" height="${NODE_H}" rx="8"
                class="node node-${node.kind}" stroke="${stroke}"/>
          <text x="${node.x + 8}" y="${node.y + 17}" class="node-name">${escapeHtml(node.name)}</text>
          <text x="${node.x + 8}" y="${node.y + 30}" class="node-kind">${node.kind}${node.filter ? " · filtered" : ""}</text>
          ${status}${warn}
        </g>`;
    })
    .join("");
  return `<svg viewBox="-${pad} -${pad} ${layout.width + 2 * pad} ${layout.height + 2 * pad}"
               width="100%" preserveAspectRatio="xMinYMin meet">${edges}${nodes}</svg>`;
}

function renderTable(table: TablePayload): string {
  if (!table.rows.length) return "";
  const head = table.columns.map((c) => `<th>${escapeHtml(c.name)}</th>`).join("");
  const body = table.rows
    .map((row) => `<tr>${row.map((cell) => `<td>${escapeHtml(String(cell))}</td>`).join("")}</tr>`)
    .join("");
  return `<table class="result"><thead><tr>${head}</tr></thead><tbody>${body}</tbody></table>`;
}

function renderFinding(finding: FindingView): string {
  const probability = Math.round(finding.probability * 100);
  const outcomes = finding.outcomes
    .filter((o) => o.status !== "Deduplicated")
    .map(
      (o) => `
      <details ${o.status === "Fired" ? "open" : ""}>
        <summary><span class="chip chip-${o.status.toLowerCase()}">${o.status}</span>
          <code>${escapeHtml(o.step)}</code> <span class="muted">${o.kind}</span></summary>
        ${o.explanation ? `<div class="md">${miniMarkdown(o.explanation)}</div>` : ""}
        ${o.table ? renderTable(o.table) : ""}
        ${o.query_text ? `<pre class="query">${escapeHtml(o.query_text.trim())}</pre>` : ""}
        ${o.error ? `<p class="error">${escapeHtml(o.error)}</p>` : ""}
      </details>`,
    )
    .join("");
  return `
    <article class="finding" data-tsg="${escapeHtml(finding.tsg_id)}">
      <header>
        <h3>${escapeHtml(finding.tsg_id)} <span class="muted">v${finding.version} · ${finding.tsg_type}</span></h3>
        <div class="prob"><div class="prob-bar" style="width:${probability}%"></div>
          <span>${probability}%</span></div>
      </header>
      <p class="muted">${escapeHtml(finding.ranking_explanation)} · gate: ${finding.actions_gate}</p>
      ${outcomes}
      <footer>
        <button class="thumb" data-verdict="up" data-tsg="${escapeHtml(finding.tsg_id)}">👍</button>
        <button class="thumb" data-verdict="down" data-tsg="${escapeHtml(finding.tsg_id)}">👎</button>
        <span class="feedback-note" data-tsg="${escapeHtml(finding.tsg_id)}"></span>
      </footer>
    </article>`;
}

export function renderResponse(response: DiagnosticResponse | null): string {
  if (!response) {
    return `<p class="muted">Run a diagnosis to see ranked findings here.</p>`;
  }
  const summary = response.summary;
  const actions = response.actions
    .map((item) => {
      const badge = `<span class="chip chip-${item.decision}">${item.decision}</span>`;
      const suppressed = item.suppressed_by
        ? ` <span class="muted">(suppressed by ${escapeHtml(item.suppressed_by)})</span>`
        : "";
      const result = item.result ? ` → ${escapeHtml(item.result)}` : "";
      return `<li>${badge} ${escapeHtml(item.action.kind)} from
        <code>${escapeHtml(item.action.tsg_id)}/${escapeHtml(item.action.step)}</code>${suppressed}${result}</li>`;
    })
    .join("");
  const groups = (response.groups ?? [])
    .map(
      (g) =>
        `<span class="chip">${escapeHtml(g.topic)}: ${g.tsg_ids.map(escapeHtml).join(", ")}</span>`,
    )
    .join(" ");
  const suppressed = (response.suppressed ?? [])
    .map((s) => `<li>${escapeHtml(s.tsg_id)} (${Math.round(s.probability * 100)}%)</li>`)
    .join("");
  const empty =
    response.findings.length === 0
      ? `<p class="muted">No findings for this audience — triggers either found nothing,
         lacked context, or do not serve <strong>${response.audience}</strong>.</p>`
      : "";
  return `
    <section class="summary">
      <h3>Summary <span class="muted">session ${escapeHtml(response.session_id)} ·
        ${response.activated_tsgs}/${response.evaluated_tsgs} activated</span></h3>
      <h4>Problem Description</h4><div class="md">${miniMarkdown(summary.problem_statement)}</div>
      <h4>Findings</h4><div class="md">${miniMarkdown(summary.findings)}</div>
      <h4>Automatic Actions</h4>
      <ul>${summary.automatic_actions.map((a) => `<li>${escapeHtml(a)}</li>`).join("") || "<li class='muted'>(none)</li>"}</ul>
      <h4>Suggested Actions</h4>
      <ul>${summary.suggested_actions.map((a) => `<li>${escapeHtml(a)}</li>`).join("") || "<li class='muted'>(none)</li>"}</ul>
    </section>
    ${groups ? `<section><h3>Topics</h3>${groups}</section>` : ""}
    ${empty}
    ${response.findings.map(renderFinding).join("")}
    ${actions ? `<section><h3>Actions</h3><ul>${actions}</ul></section>` : ""}
    ${suppressed ? `<details><summary>Suppressed (low confidence)</summary><ul>${suppressed}</ul></details>` : ""}
    ${
      response.ticket
        ? `<section><h3>Ticket</h3><p>${escapeHtml(response.ticket.ticket_id)} ·
           severity ${escapeHtml(response.ticket.severity)} ·
           ${escapeHtml(response.ticket.owning_team)}</p>
           <ul>${response.ticket.notes.map((n) => `<li>${escapeHtml(n)}</li>`).join("")}</ul></section>`
        : ""
    }`;
}

export function renderTsgList(entries: TsgListEntry[]): string {
  if (!entries.length) return `<p class="muted">No guides registered.</p>`;
  const rows = entries
    .map((entry) => {
      const approval = entry.approval;
      const rate =
        approval.approval_rate === null
          ? "—"
          : `${Math.round(approval.approval_rate * 100)}% (${approval.up}↑ ${approval.down}↓)`;
      return `<tr class="${entry.enabled ? "" : "disabled"}">
        <td><code>${escapeHtml(entry.id)}</code></td>
        <td>${escapeHtml(entry.title)}</td>
        <td>${entry.type}</td>
        <td>v${entry.version}</td>
        <td>${rate}</td>
        <td>${entry.enabled ? "enabled" : "disabled"}</td>
      </tr>`;
    })
    .join("");
  return `<table class="result"><thead><tr>
    <th>id</th><th>title</th><th>type</th><th>version</th><th>approval</th><th>state</th>
  </tr></thead><tbody>${rows}</tbody></table>`;
}

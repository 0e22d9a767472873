/** Workbench wiring: editor, validation loop, DAG, execution, feedback. */

import { ApiClient, reportFromError } from "./api.js";
import { layoutGraph, overlayStatuses, type DagLayout } from "./dag.js";
import {
  applyResponse,
  applyValidation,
  canExecute,
  contextFromRows,
  editDocument,
  newSession,
  type WorkbenchSession,
} from "./state.js";
import type { Audience, DocumentGraph } from "./types.js";
import { AUDIENCES } from "./types.js";
import { renderDag, renderResponse, renderTsgList, renderValidation } from "./views.js";

const api = new ApiClient("");
let session: WorkbenchSession = newSession();
let layout: DagLayout | null = null;
let graph: DocumentGraph | null = null;
let validateTimer: number | undefined;
let inflight: AbortController | null = null;

const $ = <T extends HTMLElement>(id: string): T => {
  const element = document.getElementById(id);
  if (!element) throw new Error(`missing element #${id}`);
  return element as T;
};

function refreshValidation(): void {
  $("validation").innerHTML = renderValidation(session.lastReport, session.dirty);
  $<HTMLButtonElement>("run").disabled = !canExecute(session);
}

function refreshDag(): void {
  const overlaid = layout ? overlayStatuses(layout, session.lastResponse) : null;
  $("dag").innerHTML = renderDag(overlaid);
}

function refreshResults(): void {
  $("results").innerHTML = renderResponse(session.lastResponse);
  for (const button of document.querySelectorAll<HTMLButtonElement>("button.thumb")) {
    button.addEventListener("click", () => {
      void sendFeedback(button.dataset.tsg ?? "", button.dataset.verdict as "up" | "down");
    });
  }
}

async function sendFeedback(tsgId: string, verdict: "up" | "down"): Promise<void> {
  const note = document.querySelector<HTMLElement>(`.feedback-note[data-tsg="${tsgId}"]`);
  try {
    const result = await api.submitFeedback(tsgId, verdict);
    if (note) {
      const rate =
        result.approval_rate === null ? "" : ` · ${Math.round(result.approval_rate * 100)}%`;
      note.textContent = `recorded (${result.up}↑ ${result.down}↓${rate})`;
    }
    await refreshTsgList();
  } catch {
    if (note) note.textContent = "feedback failed (guide not registered?)";
  }
}

async function refreshTsgList(): Promise<void> {
  try {
    $("tsg-list").innerHTML = renderTsgList(await api.listTsgs());
  } catch {
    $("tsg-list").innerHTML = `<p class="muted">registry unavailable</p>`;
  }
}

async function validateNow(): Promise<void> {
  const text = session.documentText;
  if (!text.trim()) return;
  try {
    const result = await api.validateDocument(text);
    const report = result.reports[0]?.validation ?? {
      ok: true,
      errors: [],
      warnings: [],
    };
    graph = result.graphs[0]?.graph ?? null;
    layout = graph ? layoutGraph(graph) : null;
    session = applyValidation(session, report, graph);
  } catch (error) {
    const fallback = reportFromError(error);
    graph = null;
    layout = null;
    session = applyValidation(
      session,
      fallback?.reports[0]?.validation ?? {
        ok: false,
        errors: [{ code: "network", scope: "document", message: String(error) }],
        warnings: [],
      },
      null,
    );
  }
  refreshValidation();
  refreshDag();
}

function scheduleValidation(): void {
  window.clearTimeout(validateTimer);
  validateTimer = window.setTimeout(() => void validateNow(), 400);
}

async function run(): Promise<void> {
  if (!canExecute(session)) return;
  inflight?.abort();
  inflight = new AbortController();
  $<HTMLButtonElement>("run").disabled = true;
  $("results").innerHTML = `<p class="muted">running…</p>`;
  try {
    const response = await api.execute(
      {
        base_context: contextFromRows(session.contextRows),
        audience: session.audience,
        problem_statement: session.problemStatement,
        injected_tsgs: [session.documentText],
        ticket: { id: "T-WB", severity: "C", owning_team: "Workbench" },
      },
      inflight.signal,
    );
    session = applyResponse(session, response);
    refreshResults();
    refreshDag();
  } catch (error) {
    if ((error as Error).name !== "AbortError") {
      $("results").innerHTML = `<p class="error">execution failed: ${String(error)}</p>`;
    }
  } finally {
    $<HTMLButtonElement>("run").disabled = !canExecute(session);
  }
}

function bindContextForm(): void {
  const container = $("context-rows");
  container.innerHTML = session.contextRows
    .map(
      (row, i) => `
      <div class="ctx-row">
        <input data-i="${i}" data-field="key" value="${row.key}" placeholder="key"/>
        <select data-i="${i}" data-field="type">
          ${["string", "long", "real", "bool", "datetime", "timespan"]
            .map((t) => `<option ${t === row.type ? "selected" : ""}>${t}</option>`)
            .join("")}
        </select>
        <input data-i="${i}" data-field="value" value="${row.value}" placeholder="value"/>
      </div>`,
    )
    .join("");
  container.addEventListener("input", (event) => {
    const target = event.target as HTMLInputElement | HTMLSelectElement;
    const index = Number(target.dataset.i);
    const field = target.dataset.field as "key" | "type" | "value";
    const row = session.contextRows[index];
    if (!row) return;
    if (field === "type") {
      row.type = target.value as (typeof row)["type"];
    } else {
      row[field] = target.value;
    }
  });
}

function boot(): void {
  const editor = $<HTMLTextAreaElement>("editor");
  editor.addEventListener("input", () => {
    session = editDocument(session, editor.value);
    refreshValidation();
    scheduleValidation();
  });

  const audienceSelect = $<HTMLSelectElement>("audience");
  audienceSelect.innerHTML = AUDIENCES.map((a) => `<option>${a}</option>`).join("");
  audienceSelect.addEventListener("change", () => {
    session.audience = audienceSelect.value as Audience;
  });

  $<HTMLInputElement>("problem").addEventListener("input", (event) => {
    session.problemStatement = (event.target as HTMLInputElement).value;
  });

  $("run").addEventListener("click", () => void run());
  $("add-row").addEventListener("click", () => {
    session.contextRows.push({ key: "", type: "string", value: "" });
    bindContextForm();
  });

  bindContextForm();
  refreshValidation();
  refreshDag();
  refreshResults();
  void refreshTsgList();
}

document.addEventListener("DOMContentLoaded", boot);

/** Client-side session state and its invariants, kept framework-free. */

import type {
  Audience,
  BaseContext,
  ContextEntry,
  DiagnosticResponse,
  ValidationReport,
  DocumentGraph,
  ValueType,
} from "./types.js";

export interface ContextRow {
  key: string;
  type: ValueType;
  value: string;
}

export interface WorkbenchSession {
  documentText: string;
  dirty: boolean;
  lastReport: ValidationReport | null;
  lastGraph: DocumentGraph | null;
  contextRows: ContextRow[];
  audience: Audience;
  problemStatement: string;
  lastResponse: DiagnosticResponse | null;
}

export function newSession(): WorkbenchSession {
  return {
    documentText: "",
    dirty: false,
    lastReport: null,
    lastGraph: null,
    contextRows: [
      { key: "ServerName", type: "string", value: "" },
      { key: "DatabaseName", type: "string", value: "" },
      { key: "StartTime", type: "datetime", value: "" },
      { key: "EndTime", type: "datetime", value: "" },
    ],
    audience: "InternalOnDemand",
    problemStatement: "",
    lastResponse: null,
  };
}

export function editDocument(session: WorkbenchSession, text: string): WorkbenchSession {
  return { ...session, documentText: text, dirty: true };
}

export function applyValidation(
  session: WorkbenchSession,
  report: ValidationReport,
  graph: DocumentGraph | null,
): WorkbenchSession {
  return { ...session, dirty: false, lastReport: report, lastGraph: graph };
}

export function applyResponse(
  session: WorkbenchSession,
  response: DiagnosticResponse,
): WorkbenchSession {
  return { ...session, lastResponse: response };
}

/** Execute stays disabled until the current text has validated cleanly. */
export function canExecute(session: WorkbenchSession): boolean {
  return (
    !session.dirty &&
    session.lastReport !== null &&
    session.lastReport.errors.length === 0 &&
    session.documentText.trim().length > 0
  );
}

export function contextFromRows(rows: ContextRow[]): BaseContext {
  const context: BaseContext = {};
  for (const row of rows) {
    if (row.key.trim() && row.value.trim()) {
      context[row.key.trim()] = { type: row.type, value: row.value.trim() } as ContextEntry;
    }
  }
  return context;
}

/** Step-name and placeholder completions derived from the validated graph. */
export function completionsFor(session: WorkbenchSession): {
  stepNames: string[];
  placeholders: string[];
} {
  const stepNames: string[] = [];
  const placeholders = new Set<string>(session.contextRows.map((r) => r.key).filter(Boolean));
  if (session.lastGraph) {
    for (const node of session.lastGraph.nodes) {
      if (node.kind !== "trigger") stepNames.push(node.name);
      for (const key of node.required_keys) placeholders.add(key);
    }
  }
  return { stepNames, placeholders: [...placeholders].sort() };
}

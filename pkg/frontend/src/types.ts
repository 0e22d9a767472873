/** Mirror of the service's published JSON contract. */

export type Audience =
  | "CustomerVisible"
  | "InternalOnDemand"
  | "SupportTicket"
  | "InternalTicket"
  | "Schedule";

export const AUDIENCES: Audience[] = [
  "InternalOnDemand",
  "InternalTicket",
  "SupportTicket",
  "CustomerVisible",
  "Schedule",
];

export type ValueType = "string" | "long" | "real" | "bool" | "datetime" | "timespan";

export interface ContextEntry {
  type: ValueType;
  value: string;
}

export type BaseContext = Record<string, ContextEntry>;

export interface ValidationIssue {
  code: string;
  scope: string;
  message: string;
}

export interface ValidationReport {
  ok: boolean;
  errors: ValidationIssue[];
  warnings: ValidationIssue[];
}

export interface GraphNode {
  name: string;
  kind: "trigger" | "check" | "explanation" | "action";
  audiences: string[];
  filter?: string | null;
  required_keys: string[];
}

export interface GraphEdge {
  from: string;
  to: string;
}

export interface DocumentGraph {
  nodes: GraphNode[];
  edges: GraphEdge[];
}

export interface ValidateResponse {
  reports: { id: string; validation: ValidationReport }[];
  graphs: { id: string; graph: DocumentGraph }[];
}

export type StepStatus =
  | "Fired"
  | "NoData"
  | "FilteredOut"
  | "SkippedMissingKeys"
  | "Deduplicated"
  | "Errored";

export interface TablePayload {
  columns: { name: string; type: ValueType }[];
  rows: (string | number | boolean)[][];
}

export interface OutcomeView {
  step: string;
  kind: string;
  status: StepStatus;
  variations: number;
  explanation?: string;
  table?: TablePayload;
  query_text?: string;
  error?: string;
  deduplicated_with?: string;
}

export interface FindingView {
  tsg_id: string;
  version: number;
  tsg_type: "Informational" | "Warning" | "Critical";
  topics: string[];
  probability: number;
  ranking_explanation: string;
  actions_gate: "Execute" | "Propose" | "Skip";
  headline: string | null;
  outcomes: OutcomeView[];
  called_by?: string;
  error?: string;
}

export interface SummaryView {
  problem_statement: string;
  findings: string;
  automatic_actions: string[];
  suggested_actions: string[];
}

export interface ActionView {
  action: {
    tsg_id: string;
    step: string;
    kind: string;
    parameters: Record<string, string>;
    scoping: BaseContext;
    detected_at: string;
    impactful: boolean;
  };
  probability: number;
  decision: "execute" | "propose" | "skip" | "suppressed";
  suppressed_by?: string;
  result?: string;
}

export interface TicketView {
  ticket_id: string;
  severity: string;
  owning_team: string;
  notes: string[];
}

export interface DiagnosticResponse {
  session_id: string;
  audience: Audience;
  generated_at: string;
  base_context: BaseContext;
  problem_statement: string;
  evaluated_tsgs: number;
  activated_tsgs: number;
  summary: SummaryView;
  findings: FindingView[];
  suppressed?: { tsg_id: string; probability: number }[];
  groups?: { topic: string; tsg_ids: string[] }[];
  actions: ActionView[];
  ticket: TicketView | null;
  incidents: unknown[];
}

export interface TsgListEntry {
  id: string;
  version: number;
  enabled: boolean;
  title: string;
  type: string;
  topics: string[];
  approval: {
    tsg_id: string;
    version: number;
    up: number;
    down: number;
    approval_rate: number | null;
    disabled: boolean;
    work_item: string | null;
  };
}

export interface FeedbackResult {
  tsg_id: string;
  version: number;
  up: number;
  down: number;
  approval_rate: number | null;
  disabled: boolean;
  work_item: string | null;
}

// Wire types mirroring the service's JSON responses. Every value shown in
// the UI comes verbatim from one of these payloads.

export type RelationType = "blend" | "inspiration";

export interface DomainLabel {
  kind: "arxiv" | "branch" | "other";
  value: string;
  grouped: string;
}

export interface NodeRef {
  node_id: string;
  canonical: string;
  domain: DomainLabel;
}

export interface EdgeView {
  edge_id: string;
  type: RelationType;
  endpoint_a: string;
  endpoint_b: string;
  paper_id: string;
  published: string | null;
  arxiv_categories: string[];
  interdisciplinary: boolean;
  self_loop: boolean;
  source: NodeRef;
  target: NodeRef;
}

export interface EdgesResponse {
  total: number;
  limit: number;
  offset: number;
  edges: EdgeView[];
}

export interface Suggestion {
  node_id: string;
  canonical: string;
  domain: DomainLabel;
  score: number;
  papers: string[];
}

export interface SuggestResponse {
  entity: string;
  relation_type: RelationType;
  suggestions: Suggestion[];
}

export interface SuggestRequest {
  context: string;
  entity: string;
  relation_type: RelationType;
  top_k: number;
}

export interface DomainPairRow {
  source: string;
  target: string;
  count: number;
}

export interface DomainPairsResponse {
  type: RelationType;
  quantile: number;
  rows: DomainPairRow[];
}

export interface HealthResponse {
  status: string;
  nodes: number;
  edges: number;
}

/** Remote data lifecycle for a panel; rendering is a pure projection of it. */
export type RemoteData<T> =
  | { kind: "idle" }
  | { kind: "loading" }
  | { kind: "ok"; data: T }
  | { kind: "error"; message: string };

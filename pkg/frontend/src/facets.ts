// Facet state lives in the URL query string so every view is shareable:
// parsing and serializing round-trip exactly.

import type { RelationType } from "./types.js";

export interface FacetState {
  view: "explore" | "inspire" | "analytics";
  type?: RelationType;
  sourceDomain?: string;
  targetDomain?: string;
  yearFrom?: number;
  yearTo?: number;
  q?: string;
  page: number; // 0-based
  // inspire panel inputs
  context?: string;
  entity?: string;
  relation: RelationType;
  // analytics view
  pairType: RelationType;
  sort: "count" | "source" | "target";
}

export const PAGE_SIZE = 20;

export function defaultFacets(): FacetState {
  return { view: "explore", page: 0, relation: "inspiration",
           pairType: "inspiration", sort: "count" };
}

function relationOf(value: string | null): RelationType | undefined {
  return value === "blend" || value === "inspiration" ? value : undefined;
}

function intOf(value: string | null): number | undefined {
  if (!value) return undefined;
  const parsed = Number.parseInt(value, 10);
  return Number.isFinite(parsed) ? parsed : undefined;
}

export function parseFacets(search: string): FacetState {
  const params = new URLSearchParams(search);
  const state = defaultFacets();
  const view = params.get("view");
  if (view === "inspire" || view === "analytics") state.view = view;
  state.type = relationOf(params.get("type"));
  state.sourceDomain = params.get("source_domain") ?? undefined;
  state.targetDomain = params.get("target_domain") ?? undefined;
  state.yearFrom = intOf(params.get("year_from"));
  state.yearTo = intOf(params.get("year_to"));
  state.q = params.get("q") ?? undefined;
  const page = intOf(params.get("page"));
  state.page = page !== undefined && page > 0 ? page : 0;
  state.context = params.get("context") ?? undefined;
  state.entity = params.get("entity") ?? undefined;
  state.relation = relationOf(params.get("relation")) ?? "inspiration";
  state.pairType = relationOf(params.get("pair_type")) ?? "inspiration";
  const sort = params.get("sort");
  if (sort === "source" || sort === "target" || sort === "count") state.sort = sort;
  return state;
}

/** Canonical query string; defaults are omitted so clean URLs stay clean. */
export function serializeFacets(state: FacetState): string {
  const params = new URLSearchParams();
  if (state.view !== "explore") params.set("view", state.view);
  if (state.type) params.set("type", state.type);
  if (state.sourceDomain) params.set("source_domain", state.sourceDomain);
  if (state.targetDomain) params.set("target_domain", state.targetDomain);
  if (state.yearFrom !== undefined) params.set("year_from", String(state.yearFrom));
  if (state.yearTo !== undefined) params.set("year_to", String(state.yearTo));
  if (state.q) params.set("q", state.q);
  if (state.page > 0) params.set("page", String(state.page));
  if (state.context) params.set("context", state.context);
  if (state.entity) params.set("entity", state.entity);
  if (state.relation !== "inspiration") params.set("relation", state.relation);
  if (state.pairType !== "inspiration") params.set("pair_type", state.pairType);
  if (state.sort !== "count") params.set("sort", state.sort);
  const query = params.toString();
  return query ? `?${query}` : "";
}

export function withPage(state: FacetState, page: number): FacetState {
  return { ...state, page: Math.max(0, page) };
}

/** The feedback loop: a suggestion's entity becomes the next query. */
export function promoteSuggestion(state: FacetState, entity: string): FacetState {
  return { ...state, view: "inspire", entity, page: 0 };
}

/** Client-side validation for the inspire form; null means submittable. */
export function validateInspire(state: FacetState): string | null {
  if (!state.entity || !state.entity.trim()) {
    return "Enter an entity to ask about.";
  }
  return null;
}

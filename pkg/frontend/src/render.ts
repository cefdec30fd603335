// Pure view functions: (facets, remote data) -> HTML string. No fetches, no
// derived numbers; everything shown is escaped verbatim from a response.

import { FacetState, PAGE_SIZE, serializeFacets, validateInspire } from "./facets.js";
import type {
  DomainPairRow,
  DomainPairsResponse,
  EdgeView,
  EdgesResponse,
  RemoteData,
  SuggestResponse,
} from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function paperLink(paperId: string): string {
  const id = escapeHtml(paperId);
  return `<a class="paper" href="https://arxiv.org/abs/${id}" target="_blank" rel="noopener">${id}</a>`;
}

function domainBadge(grouped: string): string {
  return `<span class="domain">${escapeHtml(grouped)}</span>`;
}

export function renderEdge(edge: EdgeView): string {
  const arrow = edge.type === "inspiration" ? "&rarr;" : "&harr;";
  const flags = [
    edge.interdisciplinary ? '<span class="flag inter">interdisciplinary</span>' : "",
    edge.self_loop ? '<span class="flag loop">self-loop</span>' : "",
  ].join("");
  return `<li class="edge" data-edge="${escapeHtml(edge.edge_id)}">
  <span class="pair">
    <strong class="entity">${escapeHtml(edge.source.canonical)}</strong>
    ${domainBadge(edge.source.domain.grouped)}
    <span class="arrow">${arrow}</span>
    <strong class="entity">${escapeHtml(edge.target.canonical)}</strong>
    ${domainBadge(edge.target.domain.grouped)}
  </span>
  <span class="meta">
    <span class="type">${escapeHtml(edge.type)}</span>
    ${paperLink(edge.paper_id)}
    <span class="date">${escapeHtml(edge.published ?? "undated")}</span>
    ${flags}
  </span>
</li>`;
}

export function renderPagination(state: FacetState, data: EdgesResponse): string {
  const pages = Math.max(1, Math.ceil(data.total / PAGE_SIZE));
  const prev = state.page > 0
    ? `<button class="page-btn" data-page="${state.page - 1}">&laquo; newer</button>`
    : "";
  const next = (state.page + 1) * PAGE_SIZE < data.total
    ? `<button class="page-btn" data-page="${state.page + 1}">older &raquo;</button>`
    : "";
  return `<nav class="pagination">${prev}<span>page ${state.page + 1} of ${pages}
 (${data.total} total)</span>${next}</nav>`;
}

export function renderEdgeList(state: FacetState, data: EdgesResponse): string {
  if (data.total === 0) {
    return '<p class="empty">No recombinations match these facets.</p>';
  }
  const items = data.edges.map(renderEdge).join("\n");
  return `<ul class="edges">\n${items}\n</ul>\n${renderPagination(state, data)}`;
}

export function renderErrorBanner(message: string): string {
  return `<div class="banner error" role="alert">Service error: ${escapeHtml(message)}
 <button class="retry-btn">retry</button></div>`;
}

export function renderLoading(): string {
  return '<p class="loading">Loading&hellip;</p>';
}

export function renderExplorePanel(state: FacetState,
                                   data: RemoteData<EdgesResponse>): string {
  let body: string;
  switch (data.kind) {
    case "idle":
    case "loading":
      body = renderLoading();
      break;
    case "error":
      body = renderErrorBanner(data.message);
      break;
    case "ok":
      body = renderEdgeList(state, data.data);
      break;
  }
  return `<section class="explore">\n${renderFacetForm(state)}\n${body}\n</section>`;
}

export function renderFacetForm(state: FacetState): string {
  const option = (value: string, label: string, selected?: string) =>
    `<option value="${value}"${value === (selected ?? "") ? " selected" : ""}>${label}</option>`;
  return `<form class="facets" data-role="facets">
  <select name="type">
    ${option("", "any relation", state.type ?? "")}
    ${option("blend", "blend", state.type ?? "")}
    ${option("inspiration", "inspiration", state.type ?? "")}
  </select>
  <input name="source_domain" placeholder="source domain"
         value="${escapeHtml(state.sourceDomain ?? "")}">
  <input name="target_domain" placeholder="target domain"
         value="${escapeHtml(state.targetDomain ?? "")}">
  <input name="year_from" type="number" placeholder="from year"
         value="${state.yearFrom ?? ""}">
  <input name="year_to" type="number" placeholder="to year"
         value="${state.yearTo ?? ""}">
  <input name="q" placeholder="concept text" value="${escapeHtml(state.q ?? "")}">
  <button type="submit">Search</button>
</form>`;
}

export function renderSuggestions(data: SuggestResponse): string {
  if (data.suggestions.length === 0) {
    return '<p class="empty">No suggestions for this query.</p>';
  }
  const cards = data.suggestions
    .map((s, index) => `<li class="suggestion" data-node="${escapeHtml(s.node_id)}">
  <span class="rank">${index + 1}</span>
  <strong class="entity">${escapeHtml(s.canonical)}</strong>
  ${domainBadge(s.domain.grouped)}
  <span class="score">score ${String(s.score)}</span>
  <span class="papers">${s.papers.map(paperLink).join(" ")}</span>
  <button class="promote-btn" data-entity="${escapeHtml(s.canonical)}">ask about this</button>
</li>`)
    .join("\n");
  return `<ol class="suggestions">\n${cards}\n</ol>`;
}

export function renderInspireForm(state: FacetState): string {
  const relation = state.relation;
  return `<form class="inspire-form" data-role="inspire">
  <textarea name="context" placeholder="Describe the problem context"
            rows="3">${escapeHtml(state.context ?? "")}</textarea>
  <input name="entity" placeholder="Entity to recombine"
         value="${escapeHtml(state.entity ?? "")}">
  <select name="relation">
    <option value="inspiration"${relation === "inspiration" ? " selected" : ""}>find an inspiration source</option>
    <option value="blend"${relation === "blend" ? " selected" : ""}>find a blend partner</option>
  </select>
  <button type="submit">Inspire me</button>
</form>`;
}

export function renderInspirePanel(state: FacetState,
                                   data: RemoteData<SuggestResponse>): string {
  const validation = validateInspire(state);
  let body: string;
  if (data.kind === "loading") {
    body = renderLoading();
  } else if (data.kind === "error") {
    body = renderErrorBanner(data.message);
  } else if (data.kind === "ok") {
    body = renderSuggestions(data.data);
  } else {
    body = validation
      ? `<p class="hint">${escapeHtml(validation)}</p>`
      : '<p class="hint">Submit a query to get suggestions.</p>';
  }
  return `<section class="inspire">\n${renderInspireForm(state)}\n${body}\n</section>`;
}

export type PairSortKey = "count" | "source" | "target";

/** Pure sort: descending count, or alphabetic by endpoint; stable input order
 * is preserved on ties so the service's ordering shows through. */
export function sortPairRows(rows: DomainPairRow[], key: PairSortKey): DomainPairRow[] {
  const indexed = rows.map((row, i) => ({ row, i }));
  indexed.sort((a, b) => {
    let cmp = 0;
    if (key === "count") cmp = b.row.count - a.row.count;
    else cmp = a.row[key].localeCompare(b.row[key]);
    return cmp !== 0 ? cmp : a.i - b.i;
  });
  return indexed.map((x) => x.row);
}

export function renderDomainPairsTable(rows: DomainPairRow[], key: PairSortKey): string {
  const header = (k: PairSortKey, label: string) =>
    `<th class="sortable${k === key ? " active" : ""}" data-sort="${k}">${label}</th>`;
  const body = sortPairRows(rows, key)
    .map((r) => `<tr><td>${escapeHtml(r.source)}</td><td>${escapeHtml(r.target)}</td>
<td class="count">${String(r.count)}</td></tr>`)
    .join("\n");
  return `<table class="domain-pairs">
<thead><tr>${header("source", "Source")}${header("target", "Target")}${header("count", "Count")}</tr></thead>
<tbody>\n${body}\n</tbody></table>`;
}

export function renderAnalyticsPanel(state: FacetState,
                                     data: RemoteData<DomainPairsResponse>): string {
  const picker = `<form class="pair-type" data-role="analytics">
  <select name="pair_type">
    <option value="inspiration"${state.pairType === "inspiration" ? " selected" : ""}>inspiration pairs</option>
    <option value="blend"${state.pairType === "blend" ? " selected" : ""}>blend pairs</option>
  </select>
  <button type="submit">Show</button>
</form>`;
  let body: string;
  if (data.kind === "loading" || data.kind === "idle") {
    body = renderLoading();
  } else if (data.kind === "error") {
    body = renderErrorBanner(data.message);
  } else if (data.data.rows.length === 0) {
    body = '<p class="empty">No domain pairs above the quantile.</p>';
  } else {
    body = renderDomainPairsTable(data.data.rows, state.sort);
  }
  return `<section class="analytics">\n${picker}\n${body}\n</section>`;
}

export function renderTabs(state: FacetState): string {
  const tab = (view: FacetState["view"], label: string) => {
    const target = serializeFacets({ ...state, view });
    const active = state.view === view ? " active" : "";
    return `<a class="tab${active}" href="${escapeHtml(target || "?")}" data-view="${view}">${label}</a>`;
  };
  return `<nav class="tabs">${tab("explore", "Explore")}${tab("inspire", "Inspire me")}${tab("analytics", "Analytics")}</nav>`;
}

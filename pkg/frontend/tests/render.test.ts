import { describe, expect, it } from "vitest";
import { defaultFacets } from "../src/facets.js";
import {
  escapeHtml,
  renderDomainPairsTable,
  renderEdgeList,
  renderErrorBanner,
  renderInspirePanel,
  renderSuggestions,
  sortPairRows,
} from "../src/render.js";
import type { DomainPairRow, EdgesResponse, SuggestResponse } from "../src/types.js";
import edgesFixture from "./fixtures/edges_zoology_csro.json";
import emptyFixture from "./fixtures/edges_empty.json";
import pairsFixture from "./fixtures/domain_pairs.json";
import suggestFixture from "./fixtures/suggest_storytelling.json";

const edges = edgesFixture as EdgesResponse;
const suggest = suggestFixture as SuggestResponse;

describe("edge list rendering", () => {
  it("renders exactly the service's edges", () => {
    const html = renderEdgeList(defaultFacets(), edges);
    expect(html.match(/class="edge"/g)).toHaveLength(edges.edges.length);
    expect(html).toContain("the shepherding behavior of herding dogs");
    expect(html).toContain("frontier exploration");
    expect(html).toContain("Zoology");
    expect(html).toContain("cs.ro");
    expect(html).toContain("arxiv.org/abs/p020");
    expect(html).toContain(edges.edges[0].published as string);
  });

  it("renders an explicit empty state", () => {
    const html = renderEdgeList(defaultFacets(), emptyFixture as EdgesResponse);
    expect(html).toContain("No recombinations match these facets.");
    expect(html).not.toContain('class="edge"');
  });

  it("inspiration edges use a directed arrow", () => {
    const html = renderEdgeList(defaultFacets(), edges);
    expect(html).toContain("&rarr;");
  });

  it("error banners carry a retry affordance", () => {
    const html = renderErrorBanner("boom");
    expect(html).toContain("boom");
    expect(html).toContain("retry-btn");
  });
});

describe("suggestion rendering", () => {
  it("keeps the service order, top suggestion first", () => {
    const html = renderSuggestions(suggest);
    const first = html.indexOf(suggest.suggestions[0].canonical);
    const second = html.indexOf(suggest.suggestions[1].canonical);
    expect(first).toBeGreaterThan(-1);
    expect(second).toBeGreaterThan(first);
    expect(suggest.suggestions[0].canonical).toBe("the human storytelling process");
  });

  it("shows scores and provenance verbatim", () => {
    const html = renderSuggestions(suggest);
    for (const s of suggest.suggestions) {
      expect(html).toContain(`score ${String(s.score)}`);
      for (const paper of s.papers) expect(html).toContain(paper);
    }
  });

  it("every suggestion gets a promote button with its entity", () => {
    const html = renderSuggestions(suggest);
    for (const s of suggest.suggestions) {
      expect(html).toContain(`data-entity="${s.canonical}"`);
    }
  });

  it("blank entity renders the validation hint without suggestions", () => {
    const state = { ...defaultFacets(), view: "inspire" as const, entity: "" };
    const html = renderInspirePanel(state, { kind: "idle" });
    expect(html).toContain("Enter an entity to ask about.");
    expect(html).not.toContain('class="suggestion"');
  });
});

describe("domain pair table", () => {
  const rows = (pairsFixture as { rows: DomainPairRow[] }).rows;

  it("sorts by count descending by default", () => {
    const sorted = sortPairRows(rows, "count");
    const counts = sorted.map((r) => r.count);
    expect(counts).toEqual([...counts].sort((a, b) => b - a));
  });

  it("sorting is a permutation", () => {
    for (const key of ["count", "source", "target"] as const) {
      const sorted = sortPairRows(rows, key);
      expect([...sorted].sort()).toEqual([...rows].sort());
    }
  });

  it("renders counts verbatim", () => {
    const html = renderDomainPairsTable(rows, "count");
    for (const row of rows) {
      expect(html).toContain(`<td class="count">${String(row.count)}</td>`);
    }
  });
});

describe("escaping", () => {
  it("escapes markup in service strings", () => {
    expect(escapeHtml('<b>&"x"</b>')).toBe("&lt;b&gt;&amp;&quot;x&quot;&lt;/b&gt;");
  });
});

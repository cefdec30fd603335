// Acceptance round-trip against recorded fixture-service responses: the
// JSON payloads under tests/fixtures/ are captured verbatim from the
// Python service running on the fixture KB.

import { describe, expect, it } from "vitest";
import { parseFacets, promoteSuggestion, serializeFacets } from "../src/facets.js";
import { renderExplorePanel, renderInspirePanel } from "../src/render.js";
import type { EdgesResponse, SuggestResponse } from "../src/types.js";
import edgesFixture from "./fixtures/edges_zoology_csro.json";
import suggestFixture from "./fixtures/suggest_storytelling.json";

const SHARED_URL = "?type=inspiration&source_domain=zoology&target_domain=cs.ro";
const edges = edgesFixture as EdgesResponse;
const suggest = suggestFixture as SuggestResponse;

describe("explorer acceptance round-trip", () => {
  it("zoology -> cs.ro facet shows exactly the herding-dogs edge", () => {
    const state = parseFacets(SHARED_URL);
    const html = renderExplorePanel(state, { kind: "ok", data: edges });
    expect(edges.total).toBe(1);
    expect(html.match(/class="edge"/g)).toHaveLength(1);
    expect(html).toContain("the shepherding behavior of herding dogs");
    expect(html).toContain("frontier exploration");
    expect(html).toContain("p020");
  });

  it("an inspire query renders the fixture's top suggestion first", () => {
    const state = parseFacets(
      "?view=inspire&entity=data-driven+storytelling&context=llms+struggle");
    const html = renderInspirePanel(state, { kind: "ok", data: suggest });
    const positions = suggest.suggestions.map((s) => html.indexOf(s.canonical));
    expect(Math.min(...positions)).toBe(positions[0]);
    expect(suggest.suggestions[0].canonical).toBe("the human storytelling process");
    const firstCard = html.indexOf('class="suggestion"');
    expect(html.indexOf("the human storytelling process")).toBeGreaterThan(firstCard);
  });

  it("reloading the shared URL reproduces the view exactly", () => {
    const once = renderExplorePanel(parseFacets(SHARED_URL), { kind: "ok", data: edges });
    const again = renderExplorePanel(parseFacets(SHARED_URL), { kind: "ok", data: edges });
    expect(again).toBe(once);
    // the serialized state is stable, so the address bar never drifts
    const state = parseFacets(SHARED_URL);
    expect(parseFacets(serializeFacets(state))).toEqual(state);
  });

  it("promoting a suggestion pre-fills the next query", () => {
    const state = parseFacets("?view=inspire&entity=data-driven+storytelling");
    const promoted = promoteSuggestion(state, suggest.suggestions[0].canonical);
    expect(promoted.entity).toBe("the human storytelling process");
    const url = serializeFacets(promoted);
    expect(parseFacets(url).entity).toBe("the human storytelling process");
  });

  it("the rendered numbers all come from the response", () => {
    const html = renderInspirePanel(
      parseFacets("?view=inspire&entity=x"), { kind: "ok", data: suggest });
    const scoreMatches = [...html.matchAll(/score ([-\d.e]+)/g)].map((m) => m[1]);
    expect(scoreMatches).toEqual(suggest.suggestions.map((s) => String(s.score)));
  });
});

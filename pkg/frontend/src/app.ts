// DOM wiring. All state lives in the URL; all content comes from the last
// service responses; rendering is delegated to the pure functions in
// render.ts, so this file only moves strings around.

import { ApiClient, ApiError, LatestWins } from "./api.js";
import {
  FacetState,
  parseFacets,
  promoteSuggestion,
  serializeFacets,
  validateInspire,
  withPage,
} from "./facets.js";
import {
  renderAnalyticsPanel,
  renderExplorePanel,
  renderInspirePanel,
  renderTabs,
} from "./render.js";
import type {
  DomainPairsResponse,
  EdgesResponse,
  RemoteData,
  SuggestResponse,
} from "./types.js";

const SUGGEST_TOP_K = 10;

export class ExplorerApp {
  private facets: FacetState;
  private edges: RemoteData<EdgesResponse> = { kind: "idle" };
  private suggestions: RemoteData<SuggestResponse> = { kind: "idle" };
  private pairs: RemoteData<DomainPairsResponse> = { kind: "idle" };
  private readonly guard = new LatestWins();

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly win: Window,
  ) {
    this.facets = parseFacets(win.location.search);
  }

  start(): void {
    this.win.addEventListener("popstate", () => {
      this.facets = parseFacets(this.win.location.search);
      this.refresh();
    });
    this.root.addEventListener("submit", (event) => this.onSubmit(event));
    this.root.addEventListener("click", (event) => this.onClick(event));
    this.refresh();
  }

  private navigate(next: FacetState): void {
    this.facets = next;
    const url = serializeFacets(next) || this.win.location.pathname;
    this.win.history.pushState(null, "", url);
    this.refresh();
  }

  private refresh(): void {
    if (this.facets.view === "explore") {
      void this.loadEdges();
    } else if (this.facets.view === "analytics") {
      void this.loadPairs();
    } else if (!validateInspire(this.facets)) {
      void this.loadSuggestions();
    } else {
      this.suggestions = { kind: "idle" };
      this.render();
    }
  }

  private async loadEdges(): Promise<void> {
    const token = this.guard.next();
    this.edges = { kind: "loading" };
    this.render();
    try {
      const data = await this.api.fetchEdges(this.facets);
      if (!this.guard.isCurrent(token)) return; // superseded by a newer request
      this.edges = { kind: "ok", data };
    } catch (err) {
      if (!this.guard.isCurrent(token)) return;
      this.edges = { kind: "error", message: messageOf(err) };
    }
    this.render();
  }

  private async loadSuggestions(): Promise<void> {
    const token = this.guard.next();
    this.suggestions = { kind: "loading" };
    this.render();
    try {
      const data = await this.api.suggest({
        context: this.facets.context ?? "",
        entity: this.facets.entity ?? "",
        relation_type: this.facets.relation,
        top_k: SUGGEST_TOP_K,
      });
      if (!this.guard.isCurrent(token)) return;
      this.suggestions = { kind: "ok", data };
    } catch (err) {
      if (!this.guard.isCurrent(token)) return;
      this.suggestions = { kind: "error", message: messageOf(err) };
    }
    this.render();
  }

  private async loadPairs(): Promise<void> {
    const token = this.guard.next();
    this.pairs = { kind: "loading" };
    this.render();
    try {
      const data = await this.api.fetchDomainPairs(this.facets.pairType, 0.9);
      if (!this.guard.isCurrent(token)) return;
      this.pairs = { kind: "ok", data };
    } catch (err) {
      if (!this.guard.isCurrent(token)) return;
      this.pairs = { kind: "error", message: messageOf(err) };
    }
    this.render();
  }

  private onSubmit(event: Event): void {
    const form = event.target as HTMLFormElement;
    if (!form.dataset.role) return;
    event.preventDefault();
    const fields = new FormData(form);
    const text = (name: string) => {
      const value = (fields.get(name) ?? "").toString().trim();
      return value || undefined;
    };
    if (form.dataset.role === "facets") {
      const relation = text("type");
      this.navigate({
        ...this.facets,
        type: relation === "blend" || relation === "inspiration" ? relation : undefined,
        sourceDomain: text("source_domain"),
        targetDomain: text("target_domain"),
        yearFrom: numberOf(text("year_from")),
        yearTo: numberOf(text("year_to")),
        q: text("q"),
        page: 0,
      });
    } else if (form.dataset.role === "analytics") {
      const pairType = text("pair_type");
      this.navigate({
        ...this.facets,
        view: "analytics",
        pairType: pairType === "blend" ? "blend" : "inspiration",
      });
    } else if (form.dataset.role === "inspire") {
      const relation = text("relation");
      this.navigate({
        ...this.facets,
        view: "inspire",
        context: text("context"),
        entity: text("entity"),
        relation: relation === "blend" ? "blend" : "inspiration",
      });
    }
  }

  private onClick(event: Event): void {
    const target = event.target as HTMLElement;
    if (target.classList.contains("page-btn")) {
      this.navigate(withPage(this.facets, Number(target.dataset.page ?? "0")));
    } else if (target.classList.contains("promote-btn")) {
      const entity = target.dataset.entity;
      if (entity) this.navigate(promoteSuggestion(this.facets, entity));
    } else if (target.classList.contains("retry-btn")) {
      this.refresh();
    } else if (target.classList.contains("tab")) {
      event.preventDefault();
      const raw = target.dataset.view;
      const view = raw === "inspire" || raw === "analytics" ? raw : "explore";
      this.navigate({ ...this.facets, view });
    } else if (target.dataset.sort) {
      const key = target.dataset.sort;
      if (key === "count" || key === "source" || key === "target") {
        this.navigate({ ...this.facets, sort: key });
      }
    }
  }

  private render(): void {
    let panel: string;
    if (this.facets.view === "explore") {
      panel = renderExplorePanel(this.facets, this.edges);
    } else if (this.facets.view === "analytics") {
      panel = renderAnalyticsPanel(this.facets, this.pairs);
    } else {
      panel = renderInspirePanel(this.facets, this.suggestions);
    }
    this.root.innerHTML = `${renderTabs(this.facets)}\n${panel}`;
  }
}

function numberOf(value: string | undefined): number | undefined {
  if (value === undefined) return undefined;
  const parsed = Number.parseInt(value, 10);
  return Number.isFinite(parsed) ? parsed : undefined;
}

function messageOf(err: unknown): string {
  if (err instanceof ApiError && err.status === 503) {
    return `${err.message} (the suggestion backend may be warming up)`;
  }
  return err instanceof Error ? err.message : String(err);
}

export function startApp(root: HTMLElement, api: ApiClient, win: Window): ExplorerApp {
  const app = new ExplorerApp(root, api, win);
  app.start();
  return app;
}

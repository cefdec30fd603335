// Typed client for the KB service. All rendering data comes through here;
// the UI adds nothing of its own.

import { FacetState, PAGE_SIZE } from "./facets.js";
import type {
  DomainPairsResponse,
  EdgesResponse,
  HealthResponse,
  RelationType,
  SuggestRequest,
  SuggestResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  edgesUrl(state: FacetState): string {
    const params = new URLSearchParams();
    if (state.type) params.set("type", state.type);
    if (state.sourceDomain) params.set("source_domain", state.sourceDomain);
    if (state.targetDomain) params.set("target_domain", state.targetDomain);
    if (state.yearFrom !== undefined) params.set("year_from", String(state.yearFrom));
    if (state.yearTo !== undefined) params.set("year_to", String(state.yearTo));
    if (state.q) params.set("q", state.q);
    params.set("limit", String(PAGE_SIZE));
    params.set("offset", String(state.page * PAGE_SIZE));
    return `${this.baseUrl}/edges?${params.toString()}`;
  }

  private async getJson<T>(url: string): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(url);
    } catch (err) {
      throw new ApiError(`service unreachable: ${String(err)}`, 0);
    }
    if (!response.ok) {
      throw new ApiError(await safeDetail(response), response.status);
    }
    return (await response.json()) as T;
  }

  fetchHealth(): Promise<HealthResponse> {
    return this.getJson(`${this.baseUrl}/health`);
  }

  fetchEdges(state: FacetState): Promise<EdgesResponse> {
    return this.getJson(this.edgesUrl(state));
  }

  fetchDomainPairs(type: RelationType, quantile: number): Promise<DomainPairsResponse> {
    const params = new URLSearchParams({ type, quantile: String(quantile) });
    return this.getJson(`${this.baseUrl}/analytics/domain-pairs?${params.toString()}`);
  }

  async suggest(request: SuggestRequest): Promise<SuggestResponse> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}/suggest`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(request),
      });
    } catch (err) {
      throw new ApiError(`service unreachable: ${String(err)}`, 0);
    }
    if (!response.ok) {
      throw new ApiError(await safeDetail(response), response.status);
    }
    return (await response.json()) as SuggestResponse;
  }
}

async function safeDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: string };
    if (body && typeof body.detail === "string") return body.detail;
  } catch {
    // fall through to the generic message
  }
  return `request failed with status ${response.status}`;
}

/**
 * Latest-wins guard: a newer request supersedes in-flight ones, so a slow
 * stale response never overwrites a fresher view.
 */
export class LatestWins {
  private current = 0;

  next(): number {
    this.current += 1;
    return this.current;
  }

  isCurrent(token: number): boolean {
    return token === this.current;
  }
}

/** Search state and per-pane request sequencing. */

import type { ApiClient, ItemModality, QueryResponse } from "./api.js";

export interface SearchState {
  query: string;
  k: number;
  itemModality: ItemModality;
  /** Results currently on screen, always matching resultsQuery. */
  results: QueryResponse | null;
  resultsQuery: string | null;
  /** Append-only within the session. */
  history: string[];
}

export function newSearchState(): SearchState {
  return {
    query: "",
    k: 10,
    itemModality: "fused",
    results: null,
    resultsQuery: null,
    history: [],
  };
}

export function recordQuery(state: SearchState, query: string): void {
  state.history.push(query);
}

/**
 * One in-flight query per pane: every submission bumps the sequence number
 * and a response is dropped when a newer submission exists by the time it
 * arrives.
 */
export class QueryPane {
  private seq = 0;

  constructor(private readonly api: ApiClient) {}

  async submit(
    text: string,
    k: number,
    itemModality: ItemModality,
  ): Promise<QueryResponse | null> {
    const mySeq = ++this.seq;
    const response = await this.api.query(text, k, itemModality);
    if (mySeq !== this.seq) {
      return null; // superseded by a newer request
    }
    return response;
  }
}

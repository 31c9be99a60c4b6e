/** Single-page search client wiring: query pane, history, compare view. */

import { ApiClient, ApiError, ItemModality, QueryResponse, ResultItem } from "./api.js";
import { errorBanner, el, modalityColumn, rankMarker, renderResults } from "./render.js";
import { QueryPane, SearchState, newSearchState, recordQuery } from "./state.js";

const MODALITIES: ItemModality[] = ["audio", "symbolic", "fused"];

export class App {
  readonly state: SearchState;
  private readonly singlePane: QueryPane;
  private readonly comparePanes: Record<ItemModality, QueryPane>;

  private readonly input: HTMLInputElement;
  private readonly kInput: HTMLInputElement;
  private readonly modalitySelect: HTMLSelectElement;
  private readonly errorSlot: HTMLElement;
  private readonly historyList: HTMLUListElement;
  private readonly resultsPane: HTMLElement;
  private readonly comparePane: HTMLElement;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
  ) {
    this.state = newSearchState();
    this.singlePane = new QueryPane(api);
    this.comparePanes = {
      audio: new QueryPane(api),
      symbolic: new QueryPane(api),
      fused: new QueryPane(api),
    };

    const form = el("form", "search-form");
    form.id = "search-form";
    this.input = el("input", "query-input");
    this.input.type = "search";
    this.input.placeholder = "Describe the piano music you want...";
    this.kInput = el("input", "k-input");
    this.kInput.type = "number";
    this.kInput.min = "1";
    this.kInput.value = String(this.state.k);
    this.modalitySelect = el("select", "modality-select");
    for (const modality of MODALITIES) {
      const option = el("option", undefined, modality);
      option.value = modality;
      this.modalitySelect.appendChild(option);
    }
    this.modalitySelect.value = this.state.itemModality;
    const searchButton = el("button", "search-button", "Search");
    searchButton.type = "submit";
    const compareButton = el("button", "compare-button", "Compare modalities");
    compareButton.type = "button";
    compareButton.addEventListener("click", () => void this.compareModalities());
    form.append(this.input, this.kInput, this.modalitySelect, searchButton, compareButton);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submit();
    });

    this.errorSlot = el("div", "error-slot");
    this.historyList = el("ul", "history-list");
    this.resultsPane = el("div", "results-pane");
    this.resultsPane.id = "results";
    this.comparePane = el("div", "compare-pane");
    this.comparePane.id = "compare";
    this.comparePane.hidden = true;

    root.append(form, this.errorSlot, this.historyList, this.resultsPane, this.comparePane);

    this.modalitySelect.addEventListener("change", () => {
      this.state.itemModality = this.modalitySelect.value as ItemModality;
      // a toggle re-issues the displayed query under the new modality
      if (this.state.resultsQuery) {
        this.input.value = this.state.resultsQuery;
        void this.submit();
      }
    });
  }

  private readControls(): { text: string; k: number } {
    this.state.k = Math.max(1, Number(this.kInput.value) || 1);
    return { text: this.input.value.trim(), k: this.state.k };
  }

  private showError(message: string, onRetry?: () => void): void {
    this.errorSlot.replaceChildren(errorBanner(message, onRetry));
  }

  private clearError(): void {
    this.errorSlot.replaceChildren();
  }

  private renderHistory(): void {
    this.historyList.replaceChildren();
    for (const past of this.state.history) {
      const item = el("li", "history-item", past);
      item.addEventListener("click", () => {
        this.input.value = past;
        void this.submit();
      });
      this.historyList.appendChild(item);
    }
  }

  async submit(): Promise<void> {
    const { text, k } = this.readControls();
    if (!text) {
      this.showError("Enter a query first.");
      return;
    }
    this.state.query = text;
    this.state.itemModality = this.modalitySelect.value as ItemModality;
    recordQuery(this.state, text);
    this.renderHistory();
    try {
      const response = await this.singlePane.submit(text, k, this.state.itemModality);
      if (response === null) return; // superseded
      this.clearError();
      this.state.results = response;
      this.state.resultsQuery = text;
      this.comparePane.hidden = true;
      this.resultsPane.hidden = false;
      renderResults(this.resultsPane, response.results);
    } catch (error) {
      // prior results stay on screen in both failure modes
      if (error instanceof ApiError) {
        this.showError(error.detail);
      } else {
        this.showError("Service unreachable.", () => void this.submit());
      }
    }
  }

  async compareModalities(): Promise<void> {
    const { text, k } = this.readControls();
    if (!text) {
      this.showError("Enter a query first.");
      return;
    }
    this.state.query = text;
    recordQuery(this.state, text);
    this.renderHistory();

    const settled = await Promise.allSettled(
      MODALITIES.map((modality) => this.comparePanes[modality].submit(text, k, modality)),
    );
    const responses = new Map<ItemModality, QueryResponse>();
    let failure: string | null = null;
    settled.forEach((outcome, index) => {
      const modality = MODALITIES[index]!;
      if (outcome.status === "fulfilled") {
        if (outcome.value !== null) responses.set(modality, outcome.value);
      } else if (outcome.reason instanceof ApiError && outcome.reason.modalityUnavailable) {
        // column simply not rendered
      } else {
        failure = outcome.reason instanceof Error ? outcome.reason.message : String(outcome.reason);
      }
    });
    if (failure !== null && responses.size === 0) {
      this.showError(failure, () => void this.compareModalities());
      return;
    }
    this.clearError();

    const fusedRanks = new Map<string, number>();
    responses.get("fused")?.results.forEach((item, index) => {
      fusedRanks.set(item.id, index + 1);
    });

    this.comparePane.replaceChildren();
    for (const modality of MODALITIES) {
      const response = responses.get(modality);
      if (!response) continue;
      const column = modalityColumn(modality);
      const slot = column.querySelector<HTMLElement>(".column-results")!;
      const markerFor =
        modality === "fused"
          ? undefined
          : (item: ResultItem, rank: number) => rankMarker(rank, fusedRanks.get(item.id));
      renderResults(slot, response.results, markerFor);
      this.comparePane.appendChild(column);
    }
    this.resultsPane.hidden = true;
    this.comparePane.hidden = false;
  }
}

export function mount(root: HTMLElement, api: ApiClient): App {
  return new App(root, api);
}

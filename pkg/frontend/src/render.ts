/** DOM builders. Results render strictly in response order. */

import type { ItemModality, ResultItem } from "./api.js";

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

/** Signed rank difference vs a reference column, e.g. fused. */
export function rankMarker(rankHere: number, rankInReference: number | undefined): string {
  if (rankInReference === undefined) return "";
  const delta = rankInReference - rankHere;
  if (delta === 0) return "=";
  return delta > 0 ? `▼${delta}` : `▲${-delta}`;
}

export function resultCard(
  item: ResultItem,
  rank: number,
  marker = "",
): HTMLElement {
  const card = el("article", "result-card");
  card.dataset.trackId = item.id;

  const head = el("div", "card-head");
  head.appendChild(el("span", "card-rank", `#${rank}`));
  head.appendChild(el("span", "card-id", item.id));
  head.appendChild(el("span", "card-score", item.score.toFixed(6)));
  if (marker) head.appendChild(el("span", "card-marker", marker));
  card.appendChild(head);

  const texts = item.metadata.texts ?? [];
  if (texts.length) {
    card.appendChild(el("p", "card-texts", texts.join(" · ")));
  }
  if (item.metadata.duration_sec !== undefined) {
    card.appendChild(el("p", "card-duration", `${item.metadata.duration_sec.toFixed(1)} s`));
  }
  return card;
}

export function renderResults(
  container: HTMLElement,
  items: ResultItem[],
  markerFor?: (item: ResultItem, rank: number) => string,
): void {
  container.replaceChildren();
  items.forEach((item, index) => {
    const marker = markerFor ? markerFor(item, index + 1) : "";
    container.appendChild(resultCard(item, index + 1, marker));
  });
}

export function modalityColumn(modality: ItemModality): HTMLElement {
  const column = el("section", "compare-column");
  column.dataset.modality = modality;
  column.appendChild(el("h3", "column-title", modality));
  column.appendChild(el("div", "column-results"));
  return column;
}

export function errorBanner(message: string, onRetry?: () => void): HTMLElement {
  const banner = el("div", "error-banner");
  banner.appendChild(el("span", "error-text", message));
  if (onRetry) {
    const button = el("button", "retry-button", "Retry");
    button.type = "button";
    button.addEventListener("click", onRetry);
    banner.appendChild(button);
  }
  return banner;
}

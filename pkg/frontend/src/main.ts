/** Bootstrap: pick the service URL at runtime, mount the app, show health. */

import { ApiClient } from "./api.js";
import { el } from "./render.js";
import { mount } from "./app.js";

function serviceUrl(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("service");
  if (fromQuery) {
    window.localStorage.setItem("tribind-service-url", fromQuery);
    return fromQuery;
  }
  return window.localStorage.getItem("tribind-service-url") ?? "http://127.0.0.1:8000";
}

function boot(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");

  const header = el("header", "app-header");
  header.appendChild(el("h1", undefined, "tribind search"));
  const status = el("span", "health-badge", "connecting...");
  const urlInput = el("input", "service-url-input");
  urlInput.value = serviceUrl();
  urlInput.addEventListener("change", () => {
    window.localStorage.setItem("tribind-service-url", urlInput.value);
    window.location.reload();
  });
  header.append(urlInput, status);
  root.appendChild(header);

  const api = new ApiClient(urlInput.value);
  mount(root, api);

  api
    .health()
    .then((health) => {
      status.textContent = `${health.item_count} tracks · model ${health.model_digest}`;
      status.classList.add("healthy");
    })
    .catch(() => {
      status.textContent = "service offline";
      status.classList.add("offline");
    });
}

boot();

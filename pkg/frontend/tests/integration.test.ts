/**
 * End-to-end round trip against the real retrieval service.
 *
 * The fixture builds a synthetic corpus, trains a tiny checkpoint, embeds
 * item stores and launches `tribind serve` — all through the primary
 * package's CLI — then drives the UI in a DOM against the live HTTP API.
 */

import { execFile, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { promisify } from "node:util";

import { afterAll, beforeAll, beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { App, mount } from "../src/app.js";

const execFileP = promisify(execFile);
const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;

let workDir: string;
let server: ChildProcess | null = null;

async function cli(...args: string[]): Promise<void> {
  await execFileP("python3", ["-m", "tribind.cli", ...args], {
    timeout: 180_000,
  });
}

async function waitForHealth(deadlineMs: number): Promise<void> {
  const deadline = Date.now() + deadlineMs;
  let lastError: unknown = null;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/v1/health`);
      if (response.ok) return;
    } catch (error) {
      lastError = error;
    }
    await new Promise((resolve) => setTimeout(resolve, 500));
  }
  throw new Error(`service did not become healthy: ${lastError}`);
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "tribind-ui-"));
  const corpus = join(workDir, "corpus");
  const manifest = join(corpus, "manifest.jsonl");
  const vocab = join(workDir, "vocab.tsv");

  await cli("synth", "--kind", "overfit", "--out", corpus);
  await cli("build-vocab", "--manifest", manifest, "--size", "128", "--out", vocab);

  const config = join(workDir, "config.json");
  writeFileSync(
    config,
    JSON.stringify({
      strategy: "combined",
      batch_size: 4,
      steps: 2,
      eval_every: 2,
      mixture: [0, 1],
      run_dir: join(workDir, "run"),
    }),
  );
  await cli("train", "--config", config, "--manifest", manifest, "--vocab", vocab);

  const checkpoint = join(workDir, "run", "checkpoints", "step_2");
  const audioStore = join(workDir, "audio.tbnd");
  const symbolicStore = join(workDir, "symbolic.tbnd");
  await cli("embed", "--checkpoint", checkpoint, "--manifest", manifest,
            "--vocab", vocab, "--modality", "audio", "--split", "train",
            "--out", audioStore);
  await cli("embed", "--checkpoint", checkpoint, "--manifest", manifest,
            "--vocab", vocab, "--modality", "symbolic", "--split", "train",
            "--out", symbolicStore);

  server = spawn("python3", [
    "-m", "tribind.cli", "serve",
    "--port", String(PORT),
    "--checkpoint", checkpoint,
    "--vocab", vocab,
    "--audio-store", audioStore,
    "--symbolic-store", symbolicStore,
    "--manifest", manifest,
  ], { stdio: ["ignore", "pipe", "pipe"] });
  server.stderr?.on("data", (chunk) => process.stderr.write(chunk));
  await waitForHealth(60_000);
}, 300_000);

afterAll(() => {
  server?.kill("SIGTERM");
  if (workDir) rmSync(workDir, { recursive: true, force: true });
});

let root: HTMLElement;
let app: App;

beforeEach(() => {
  document.body.innerHTML = '<div id="app"></div>';
  root = document.getElementById("app")!;
  app = mount(root, new ApiClient(BASE));
});

function setQuery(text: string, k: number): void {
  (root.querySelector(".query-input") as HTMLInputElement).value = text;
  (root.querySelector(".k-input") as HTMLInputElement).value = String(k);
}

function renderedIds(selector: string): string[] {
  return Array.from(root.querySelectorAll(`${selector} .result-card`)).map(
    (card) => (card as HTMLElement).dataset.trackId!,
  );
}

async function directQuery(text: string, k: number, modality: string) {
  const response = await fetch(`${BASE}/v1/query`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ text, k, item_modality: modality }),
  });
  expect(response.ok).toBe(true);
  return (await response.json()) as {
    results: Array<{ id: string; score: number }>;
  };
}

describe("UI round trip against the live service", () => {
  it("health endpoint sees the synthetic corpus", async () => {
    const health = await new ApiClient(BASE).health();
    expect(health.status).toBe("ok");
    expect(health.item_count).toBe(16);
  });

  it("submitting a query renders exactly k cards in response order", async () => {
    const k = 5;
    setQuery("amber waltz piano", k);
    await app.submit();

    const direct = await directQuery("amber waltz piano", k, "fused");
    const rendered = renderedIds(".results-pane");
    expect(rendered).toHaveLength(k);
    expect(rendered).toEqual(direct.results.map((r) => r.id));
  });

  it("comparison view columns match three direct API calls", async () => {
    const k = 4;
    setQuery("coral nocturne", k);
    await app.compareModalities();

    expect(root.querySelectorAll(".compare-column")).toHaveLength(3);
    for (const modality of ["audio", "symbolic", "fused"] as const) {
      const direct = await directQuery("coral nocturne", k, modality);
      expect(renderedIds(`[data-modality="${modality}"]`)).toEqual(
        direct.results.map((r) => r.id),
      );
    }
  });

  it("k beyond the corpus clamps to the full item list", async () => {
    setQuery("velvet prelude", 500);
    await app.submit();
    expect(renderedIds(".results-pane")).toHaveLength(16);
  });

  it("scores shown on cards equal the service's six-decimal scores", async () => {
    const k = 3;
    setQuery("ember etude", k);
    await app.submit();
    const direct = await directQuery("ember etude", k, "fused");
    const shown = Array.from(
      root.querySelectorAll(".results-pane .card-score"),
    ).map((node) => Number(node.textContent));
    expect(shown).toEqual(direct.results.map((r) => r.score));
  });
});

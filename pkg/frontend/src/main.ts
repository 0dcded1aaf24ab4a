// Browser entry point. Wires the query form to the tube service, the
// canvas to the WebGL scene, and pointer moves to ring picking.
//
// Flow per submission: validate locally with the shared table, post only
// if clean, parse the returned document into typed arrays, swap the scene
// atomically. A newer submission aborts the one in flight.

import { ServiceClient, QueryRejected, NetworkFailure } from "./client.js";
import { validateQuery } from "./validate.js";
import { parseMeshDocument, sceneHash, type ParsedScene } from "./meshdoc.js";
import { pickRing } from "./picking.js";
import { TubeScene } from "./scene.js";
import type { TubeQuery } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function numberField(id: string): number {
  return Number((el<HTMLInputElement>(id)).value);
}

function buildQuery(): TubeQuery {
  const box = el<HTMLInputElement>("seed-box").value
    .split(",")
    .map((part) => Number(part.trim()));
  const seedBox: number[][] = [];
  for (let i = 0; i + 1 < box.length; i += 2) seedBox.push([box[i], box[i + 1]]);
  const query: TubeQuery = {
    method: el<HTMLSelectElement>("method").value as TubeQuery["method"],
    seed_box: seedBox,
    count: numberField("count"),
    n_steps: numberField("n-steps"),
    rng_seed: numberField("rng-seed"),
    tau: numberField("tau"),
    m: numberField("m"),
  };
  const model = el<HTMLSelectElement>("model").value;
  if (model) query.model = model;
  if (query.method !== "ensemble") query.n_samples = numberField("n-samples");
  return query;
}

function showIssues(issues: { field: string; message: string }[]): void {
  const out = el<HTMLElement>("issues");
  out.textContent = issues.map((i) => `${i.field}: ${i.message}`).join("\n");
  out.hidden = issues.length === 0;
  for (const input of document.querySelectorAll<HTMLElement>("[data-field]")) {
    const field = input.dataset.field ?? "";
    input.classList.toggle(
      "invalid",
      issues.some((i) => i.field === field || i.field.startsWith(`${field}.`)),
    );
  }
}

function main(): void {
  const canvas = el<HTMLCanvasElement>("view");
  const scene = new TubeScene(canvas);
  const client = new ServiceClient("");
  const status = el<HTMLElement>("status");
  const readout = el<HTMLElement>("readout");
  const retry = el<HTMLButtonElement>("retry");
  let parsed: ParsedScene | null = null;

  const fit = () => scene.resize(canvas.clientWidth, canvas.clientHeight);
  window.addEventListener("resize", fit);
  fit();

  client.models().then((models) => {
    const select = el<HTMLSelectElement>("model");
    select.innerHTML = "";
    for (const m of models) {
      const opt = document.createElement("option");
      opt.value = m.name;
      opt.textContent = `${m.name} (${m.kind})`;
      select.appendChild(opt);
    }
  }).catch(() => {
    status.textContent = "model list unavailable";
  });

  const submit = async () => {
    const query = buildQuery();
    const issues = validateQuery(query);
    showIssues(issues);
    if (issues.length > 0) return;
    status.textContent = "querying...";
    retry.hidden = true;
    try {
      const doc = await client.submitQuery(query);
      parsed = parseMeshDocument(doc);
      scene.replaceScene(parsed);
      const rings = parsed.tubes.reduce((n, t) => n + t.nRings, 0);
      status.textContent =
        `${parsed.tubes.length} tubes, ${rings} rings, hash ${sceneHash(parsed)}`;
    } catch (err) {
      if (err instanceof QueryRejected) {
        status.textContent = `rejected: ${err.detail || err.errorKind}`;
        showIssues([{ field: "query", message: err.detail || err.errorKind }]);
      } else if (err instanceof NetworkFailure) {
        status.textContent = "service unreachable";
        retry.hidden = false;
      } else if ((err as Error).name !== "AbortError") {
        status.textContent = `failed: ${(err as Error).message}`;
      }
    }
  };

  el<HTMLFormElement>("query-form").addEventListener("submit", (ev) => {
    ev.preventDefault();
    void submit();
  });
  retry.addEventListener("click", () => void submit());

  // orbit on drag, zoom on wheel
  let dragging = false;
  let last: [number, number] = [0, 0];
  canvas.addEventListener("pointerdown", (ev) => {
    dragging = true;
    last = [ev.clientX, ev.clientY];
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointerup", (ev) => {
    dragging = false;
    canvas.releasePointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (dragging) {
      scene.camera.orbit(
        (ev.clientX - last[0]) * 0.008,
        (ev.clientY - last[1]) * 0.008,
      );
      last = [ev.clientX, ev.clientY];
      scene.draw();
      return;
    }
    if (!parsed) return;
    const rect = canvas.getBoundingClientRect();
    const nx = ((ev.clientX - rect.left) / rect.width) * 2 - 1;
    const ny = 1 - ((ev.clientY - rect.top) / rect.height) * 2;
    const hit = pickRing(parsed, scene.camera.rayFromNdc(nx, ny));
    if (hit) {
      const seed = parsed.tubes[hit.tubeIndex].seed;
      readout.textContent =
        `tube ${hit.tubeIndex} seed (${Array.from(seed, (v) => v.toFixed(3)).join(", ")}) ` +
        `ring ${hit.ringIndex} | magnitude ${hit.magnitude.toExponential(3)} ` +
        `| symmetry ${hit.symmetry.toFixed(3)}`;
    } else {
      readout.textContent = "";
    }
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    scene.camera.zoom(Math.exp(ev.deltaY * 0.001));
    scene.draw();
  });
}

main();

// Single-page console over the allocation service. Hash routes:
//   #/           trial list + creation wizard
//   #/t/<id>     live dashboard for one trial
// Enrollment always waits for the server response (the server draws the
// randomness); the dashboard polls every 1.5 s and rehydrates from the
// GET endpoints whenever the server has units this page has not seen.

import { ApiError, ConsoleApi } from "./api.js";
import { CHART_WINDOW, TrialModel } from "./store.js";
import { horizontalLineY, marginBars, marginTotals, polylinePath, valueRange, type ChartBox } from "./charts.js";
import { validateTrialForm } from "./validate.js";
import type { TrialConfigDoc, PolicyDoc, FeatureMapDoc } from "./types.js";

const POLL_MS = 1500;
const LINE_COLORS = ["#0f8b8d", "#b3541e", "#4f5d9d", "#4f9d69", "#9d4f85", "#7d7a2c"];

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
}

function input(id: string): HTMLInputElement {
  return $(id) as HTMLInputElement;
}

function parseCovariates(raw: string): number[] | null {
  const parts = raw.split(",").map((s) => s.trim()).filter((s) => s !== "");
  if (parts.length === 0) return null;
  const xs = parts.map(Number);
  return xs.some((v) => !Number.isFinite(v)) ? null : xs;
}

function fmtNum(v: number, digits = 4): string {
  return Number.isInteger(v) ? String(v) : v.toFixed(digits);
}

function api(): ConsoleApi {
  const base = sessionStorage.getItem("carlab.baseUrl") || window.location.origin;
  const token = sessionStorage.getItem("carlab.token");
  return new ConsoleApi(base, token && token !== "" ? token : null);
}

// ---------------------------------------------------------------- shell

let poller: number | null = null;
let model: TrialModel | null = null;

function route(): void {
  if (poller !== null) {
    window.clearInterval(poller);
    poller = null;
  }
  model = null;
  const hash = window.location.hash;
  const m = hash.match(/^#\/t\/([0-9a-f]+)$/);
  if (m && m[1]) {
    void showDashboard(m[1]);
  } else {
    void showHome();
  }
}

window.addEventListener("hashchange", route);
window.addEventListener("DOMContentLoaded", () => {
  input("token").value = sessionStorage.getItem("carlab.token") ?? "";
  input("base-url").value = sessionStorage.getItem("carlab.baseUrl") ?? window.location.origin;
  $("connect-form").addEventListener("submit", (e) => {
    e.preventDefault();
    sessionStorage.setItem("carlab.token", input("token").value.trim());
    sessionStorage.setItem("carlab.baseUrl", input("base-url").value.trim().replace(/\/+$/, ""));
    route();
  });
  route();
});

function setStatus(text: string, isError = false): void {
  const el = $("status");
  el.textContent = text;
  el.className = isError ? "status error" : "status";
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) {
    return err.path ? `${err.message} (${err.path})` : err.message;
  }
  return err instanceof Error ? err.message : String(err);
}

// ---------------------------------------------------------------- home

async function showHome(): Promise<void> {
  $("home").hidden = false;
  $("dashboard").hidden = true;
  setStatus("");
  wireWizard();
  try {
    const client = api();
    const health = await client.health();
    setStatus(`service ok, version ${health.version}, ${health.trials} trial(s)`);
    const listing = await client.listTrials();
    const tbody = $("trial-rows");
    tbody.innerHTML = "";
    for (const t of listing.trials) {
      const tr = document.createElement("tr");
      const link = `<a href="#/t/${t.trial_id}">${t.name ?? t.trial_id}</a>`;
      tr.innerHTML = `<td>${link}</td><td>${t.policy}</td><td>${t.n}</td><td><code>${t.trial_id}</code></td>`;
      tbody.appendChild(tr);
    }
  } catch (err) {
    setStatus(describeError(err), true);
  }
}

function wizardDoc(): TrialConfigDoc {
  const kind = (input("w-policy") as unknown as HTMLSelectElement).value as PolicyDoc["kind"];
  const policy: PolicyDoc = { kind };
  const warmupRaw = input("w-warmup").value.trim();
  if (warmupRaw !== "") policy.warmup = Number(warmupRaw);
  if (kind === "shift_free") policy.p = Number(input("w-p").value);
  if (kind === "minimization" || kind === "pocock_simon") policy.rho1 = Number(input("w-rho1").value);

  let feature_map: FeatureMapDoc;
  if (kind === "pocock_simon") {
    const levels = (parseCovariates(input("w-levels").value) ?? []).map((v) => Math.trunc(v));
    feature_map = { kind: "pocock_simon", levels };
    const weightsRaw = input("w-weights").value.trim();
    if (weightsRaw !== "") policy.weights = parseCovariates(weightsRaw) ?? [];
  } else {
    feature_map = { kind: "identity", dim: Number(input("w-dim").value) };
  }

  const rhoRaw = input("w-rho").value.trim();
  return {
    name: input("w-name").value.trim() || null,
    seed: Number(input("w-seed").value),
    rho: rhoRaw,
    feature_map,
    policy,
  };
}

function wireWizard(): void {
  const form = $("wizard-form") as HTMLFormElement;
  const select = $("w-policy") as unknown as HTMLSelectElement;
  const sync = () => {
    const kind = select.value;
    $("w-p-row").hidden = kind !== "shift_free";
    $("w-rho1-row").hidden = kind !== "minimization" && kind !== "pocock_simon";
    $("w-dim-row").hidden = kind === "pocock_simon";
    $("w-levels-row").hidden = kind !== "pocock_simon";
    $("w-weights-row").hidden = kind !== "pocock_simon";
  };
  select.onchange = sync;
  sync();

  form.onsubmit = (e) => {
    e.preventDefault();
    $("wizard-errors").innerHTML = "";
    $("conflict-banner").hidden = true;
    const doc = wizardDoc();
    const errors = validateTrialForm(doc);
    if (errors.length > 0) {
      $("wizard-errors").innerHTML = errors
        .map((fe) => `<li><strong>${fe.field}</strong>: ${fe.message}</li>`)
        .join("");
      return;
    }
    const submit = form.querySelector("button[type=submit]") as HTMLButtonElement;
    submit.disabled = true;
    api()
      .createTrial(doc)
      .then((created) => {
        window.location.hash = `#/t/${created.trial_id}`;
      })
      .catch((err) => {
        if (err instanceof ApiError && err.status === 409) {
          $("conflict-banner").textContent = err.message;
          $("conflict-banner").hidden = false;
        } else {
          $("wizard-errors").innerHTML = `<li>${describeError(err)}</li>`;
        }
      })
      .finally(() => {
        submit.disabled = false;
      });
  };
}

// ------------------------------------------------------------ dashboard

async function showDashboard(trialId: string): Promise<void> {
  $("home").hidden = true;
  $("dashboard").hidden = false;
  setStatus("loading trial…");
  try {
    model = await TrialModel.hydrate(api(), trialId);
  } catch (err) {
    setStatus(describeError(err), true);
    return;
  }
  setStatus("");
  $("d-title").textContent = model.name ?? trialId;
  $("d-id").textContent = trialId;
  wireEnroll(trialId);
  wireWhatif(trialId);
  renderAll();
  poller = window.setInterval(() => void pollOnce(trialId), POLL_MS);
}

async function pollOnce(trialId: string): Promise<void> {
  if (!model) return;
  try {
    const detail = await api().getTrial(trialId);
    model.refreshSnapshot(api().snapshotOf(detail));
    if (model.behindServer()) {
      model = await TrialModel.hydrate(api(), trialId);
    }
    renderAll();
  } catch (err) {
    setStatus(describeError(err), true);
  }
}

function wireEnroll(trialId: string): void {
  const form = $("enroll-form") as HTMLFormElement;
  form.onsubmit = (e) => {
    e.preventDefault();
    if (!model) return;
    const x = parseCovariates(input("e-x").value);
    if (!x) {
      $("enroll-result").innerHTML = `<span class="error">enter covariates as comma-separated numbers</span>`;
      return;
    }
    const submit = form.querySelector("button[type=submit]") as HTMLButtonElement;
    submit.disabled = true;
    const expected = model.snapshot.n + 1;
    const duringWarmup = model.snapshot.warmup_remaining > 0;
    api()
      .enroll(trialId, x, expected)
      .then((resp) => {
        model?.applyEnrollment(x, resp);
        const arm = resp.arm === 1 ? "treatment" : "control";
        $("enroll-result").innerHTML =
          `unit <strong>${resp.unit_index}</strong> → <strong class="arm-${resp.arm}">${arm}</strong>` +
          ` <span class="badge">prob ${fmtNum(resp.prob)}</span>` +
          (duringWarmup ? ` <span class="badge warm">warm-up</span>` : "");
        input("e-x").value = "";
        renderAll();
      })
      .catch((err) => {
        $("enroll-result").innerHTML = `<span class="error">${describeError(err)}</span>`;
        if (err instanceof ApiError && err.status === 409) {
          void pollOnce(trialId);
        }
      })
      .finally(() => {
        submit.disabled = false;
      });
  };
}

function wireWhatif(trialId: string): void {
  const form = $("whatif-form") as HTMLFormElement;
  form.onsubmit = (e) => {
    e.preventDefault();
    if (!model) return;
    const x = parseCovariates(input("wi-x").value);
    if (!x) {
      $("whatif-result").innerHTML = `<span class="error">enter covariates as comma-separated numbers</span>`;
      return;
    }
    api()
      .whatif(trialId, x)
      .then((preview) => {
        model?.setWhatif(x, preview);
        renderWhatif();
      })
      .catch((err) => {
        $("whatif-result").innerHTML = `<span class="error">${describeError(err)}</span>`;
      });
  };
  ($("whatif-clear") as HTMLButtonElement).onclick = () => {
    model?.clearWhatif();
    (form as HTMLFormElement).reset();
    renderWhatif();
  };
}

function renderAll(): void {
  if (!model) return;
  const snap = model.snapshot;
  $("d-n").textContent = String(snap.n);
  $("d-arms").textContent = `${snap.n_treat} / ${snap.n_control}`;
  $("d-rho").textContent = fmtNum(snap.rho);
  $("d-policy").textContent = snap.policy;
  const warm = $("d-warmup");
  if (snap.warmup_remaining > 0) {
    warm.hidden = false;
    warm.textContent = `warm-up: ${snap.warmup_remaining} unit(s) left, prob = ${fmtNum(snap.rho)}`;
  } else {
    warm.hidden = true;
  }
  renderLambdaChart();
  renderFractionChart();
  renderMargins();
  renderFeed();
  renderWhatif();
}

const BOX: ChartBox = { width: 640, height: 240, padding: 28 };

function renderLambdaChart(): void {
  if (!model) return;
  const dim = model.dim();
  const series = [];
  for (let c = 0; c < dim; c += 1) series.push(model.lambdaSeries(c));
  const nMax = Math.max(model.snapshot.n, 1);
  const range = valueRange(series);
  const paths = series
    .map((s, c) => `<path d="${polylinePath(s, BOX, range, nMax)}" fill="none" stroke="${LINE_COLORS[c % LINE_COLORS.length]}" stroke-width="1.6"/>`)
    .join("");
  const zeroY = horizontalLineY(0, BOX, range).toFixed(2);
  const legend = Array.from({ length: dim }, (_, c) =>
    `<tspan fill="${LINE_COLORS[c % LINE_COLORS.length]}">Λ${c + 1}</tspan> `).join("");
  $("lambda-chart").innerHTML =
    `<line x1="${BOX.padding}" y1="${zeroY}" x2="${BOX.width - BOX.padding}" y2="${zeroY}" stroke="#bbb" stroke-dasharray="4 3"/>` +
    paths +
    `<text x="${BOX.padding}" y="14" class="legend">${legend}(last ${CHART_WINDOW} units)</text>`;
}

function renderFractionChart(): void {
  if (!model) return;
  const series = model.treatmentFractionSeries();
  const nMax = Math.max(model.snapshot.n, 1);
  const range: [number, number] = [0, 1];
  const rhoY = horizontalLineY(model.snapshot.rho, BOX, range).toFixed(2);
  $("fraction-chart").innerHTML =
    `<line x1="${BOX.padding}" y1="${rhoY}" x2="${BOX.width - BOX.padding}" y2="${rhoY}" stroke="#b3541e" stroke-dasharray="5 3"/>` +
    `<text x="${BOX.width - BOX.padding - 60}" y="${Number(rhoY) - 5}" class="legend" fill="#b3541e">target ρ</text>` +
    `<path d="${polylinePath(series, BOX, range, nMax)}" fill="none" stroke="#0f8b8d" stroke-width="1.6"/>`;
}

function renderMargins(): void {
  if (!model) return;
  const card = $("margins-card");
  const margins = model.snapshot.margins;
  if (!margins) {
    card.hidden = true;
    return;
  }
  card.hidden = false;
  const bars = marginBars(margins, BOX);
  const totals = marginTotals(margins).map((t) => fmtNum(t, 3)).join(" = ");
  $("margin-chart").innerHTML = bars
    .map(
      (b) =>
        `<rect x="${b.x.toFixed(2)}" y="${b.y.toFixed(2)}" width="${b.width.toFixed(2)}" height="${b.height.toFixed(2)}" fill="#4f5d9d"/>` +
        `<text x="${(b.x + b.width / 2).toFixed(2)}" y="${BOX.height - 6}" text-anchor="middle" class="legend">${b.label}</text>`,
    )
    .join("");
  $("margin-totals").textContent = `per-covariate totals: ${totals}`;
}

function renderFeed(): void {
  if (!model) return;
  const rows = [...model.feed].reverse().map((ev) => {
    const arm = ev.arm === 1 ? "treatment" : "control";
    return `<tr><td>${ev.unit_index}</td><td>[${ev.x.map((v) => fmtNum(v, 2)).join(", ")}]</td>` +
      `<td class="arm-${ev.arm}">${arm}</td><td>${fmtNum(ev.prob)}</td></tr>`;
  });
  $("feed-rows").innerHTML = rows.join("");
}

function renderWhatif(): void {
  if (!model) return;
  const out = $("whatif-result");
  if (!model.whatif) {
    out.innerHTML = `<p class="muted">no preview yet</p>`;
    $("whatif-gauge").innerHTML = "";
    return;
  }
  const { x, preview } = model.whatif;
  const fmtVec = (v: number[]) => `[${v.map((c) => fmtNum(c, 3)).join(", ")}]`;
  out.innerHTML =
    `<p>for x = ${fmtVec(x)}:</p>` +
    `<table class="mini"><tr><th></th><th>if treatment</th><th>if control</th></tr>` +
    `<tr><td>Λ after</td><td>${fmtVec(preview.lambda_if_treat)}</td><td>${fmtVec(preview.lambda_if_control)}</td></tr></table>`;
  const pct = Math.round(preview.prob_treatment * 100);
  $("whatif-gauge").innerHTML =
    `<div class="gauge"><div class="gauge-fill" style="width:${pct}%"></div></div>` +
    `<p>treatment probability <strong>${fmtNum(preview.prob_treatment)}</strong></p>`;
}

// Thin typed client over the allocation service. All requests go through
// request() so the bearer token and the error shape are handled once.

import type {
  AllocationEvent,
  ApiErrorBody,
  CreatedTrial,
  EnrollResponse,
  HealthResponse,
  Snapshot,
  TrialConfigDoc,
  TrialDetail,
  TrialSummary,
  WhatifResponse,
} from "./types.js";

export class ApiError extends Error {
  status: number;
  code: string;
  path: string;

  constructor(status: number, body: ApiErrorBody) {
    super(body.message);
    this.status = status;
    this.code = body.code;
    this.path = body.path;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ConsoleApi {
  baseUrl: string;
  token: string | null;
  private fetchImpl: FetchLike;

  constructor(baseUrl: string, token: string | null = null, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.token = token;
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["Content-Type"] = "application/json";
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const resp = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) {
      const fallback: ApiErrorBody = { code: "http", message: `HTTP ${resp.status}`, path: "" };
      const parsed = await resp.json().catch(() => fallback);
      throw new ApiError(resp.status, normalizeError(parsed, fallback));
    }
    return (await resp.json()) as T;
  }

  health(): Promise<HealthResponse> {
    return this.request("GET", "/health");
  }

  createTrial(doc: TrialConfigDoc): Promise<CreatedTrial> {
    return this.request("POST", "/trials", doc);
  }

  listTrials(): Promise<{ trials: TrialSummary[] }> {
    return this.request("GET", "/trials");
  }

  getTrial(trialId: string): Promise<TrialDetail> {
    return this.request("GET", `/trials/${trialId}`);
  }

  enroll(trialId: string, x: number[], expectedUnitIndex?: number): Promise<EnrollResponse> {
    const body: Record<string, unknown> = { x };
    if (expectedUnitIndex !== undefined) body["expected_unit_index"] = expectedUnitIndex;
    return this.request("POST", `/trials/${trialId}/units`, body);
  }

  whatif(trialId: string, x: number[]): Promise<WhatifResponse> {
    return this.request("POST", `/trials/${trialId}/whatif`, { x });
  }

  snapshotOf(detail: TrialDetail): Snapshot {
    const { n, n_treat, n_control, rho, lambda, policy, warmup_remaining, margins, theta } = detail;
    const snap: Snapshot = { n, n_treat, n_control, rho, lambda, policy, warmup_remaining };
    if (margins !== undefined) snap.margins = margins;
    if (theta !== undefined) snap.theta = theta;
    return snap;
  }

  // The event feed is newline-delimited JSON, one allocation per line.
  async events(trialId: string, from: number, limit: number): Promise<AllocationEvent[]> {
    const headers: Record<string, string> = {};
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const url = `${this.baseUrl}/trials/${trialId}/events?from=${from}&limit=${limit}`;
    const resp = await this.fetchImpl(url, { method: "GET", headers });
    if (!resp.ok) {
      const fallback: ApiErrorBody = { code: "http", message: `HTTP ${resp.status}`, path: "" };
      const parsed = await resp.json().catch(() => fallback);
      throw new ApiError(resp.status, normalizeError(parsed, fallback));
    }
    const text = await resp.text();
    return text
      .split("\n")
      .filter((line) => line.trim() !== "")
      .map((line) => {
        const raw = JSON.parse(line) as Record<string, unknown>;
        return {
          unit_index: raw["unit_index"],
          x_origin: raw["x_origin"],
          x: raw["x"],
          prob: raw["prob"],
          u: raw["u"],
          arm: raw["arm"],
          lambda: raw["lambda"],
          ts: raw["ts"],
        } as AllocationEvent;
      });
  }

  // Page through the whole feed; used when reconstructing after a reload.
  async allEvents(trialId: string, pageSize = 500): Promise<AllocationEvent[]> {
    const out: AllocationEvent[] = [];
    for (;;) {
      const page = await this.events(trialId, out.length, pageSize);
      out.push(...page);
      if (page.length < pageSize) return out;
    }
  }
}

function normalizeError(parsed: unknown, fallback: ApiErrorBody): ApiErrorBody {
  if (parsed !== null && typeof parsed === "object") {
    const maybe = parsed as Record<string, unknown>;
    const inner = (maybe["error"] ?? maybe) as Record<string, unknown>;
    if (typeof inner["message"] === "string") {
      return {
        code: typeof inner["code"] === "string" ? inner["code"] : fallback.code,
        message: inner["message"],
        path: typeof inner["path"] === "string" ? inner["path"] : "",
      };
    }
  }
  return fallback;
}

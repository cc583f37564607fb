// Replay recorded service exchanges as a fetch implementation. Tests
// drive the real client code against the recorded responses; a request
// the recording never saw, or one whose body differs from what was
// actually sent to the live service, fails the test immediately.

import { readFileSync } from "node:fs";
import type { FetchLike } from "../src/api.js";

export interface Exchange {
  name: string;
  method: string;
  path: string;
  request: unknown;
  status: number;
  response: unknown;
  response_text: string | null;
}

export interface RecordedCall {
  method: string;
  path: string;
  headers: Record<string, string>;
  body: unknown;
}

export function loadFixture(name: string): Exchange[] {
  const url = new URL(`./fixtures/${name}`, import.meta.url);
  const doc = JSON.parse(readFileSync(url, "utf-8")) as { exchanges: Exchange[] };
  return doc.exchanges;
}

export function byName(exchanges: Exchange[], name: string): Exchange {
  const found = exchanges.find((e) => e.name === name);
  if (!found) throw new Error(`no exchange named ${name}`);
  return found;
}

function deepEqual(a: unknown, b: unknown): boolean {
  return JSON.stringify(a) === JSON.stringify(b);
}

export interface FixtureServerOptions {
  // Serve this exchange's response for GET /trials/{id} instead of
  // consuming the queue, so one recorded snapshot can back many reloads.
  detailExchange?: string;
}

export class FixtureServer {
  calls: RecordedCall[] = [];
  readonly fetch: FetchLike;
  private queues = new Map<string, Exchange[]>();
  private eventsLines: string[] = [];
  private detail: Exchange | null = null;

  constructor(exchanges: Exchange[], opts: FixtureServerOptions = {}) {
    for (const ex of exchanges) {
      const key = `${ex.method} ${ex.path.split("?")[0]}`;
      const queue = this.queues.get(key) ?? [];
      queue.push(ex);
      this.queues.set(key, queue);
      if (ex.name === "events_all" && ex.response_text !== null) {
        this.eventsLines = ex.response_text.split("\n").filter((l) => l.trim() !== "");
      }
    }
    if (opts.detailExchange) {
      this.detail = byName(exchanges, opts.detailExchange);
    }
    this.fetch = (url, init) => this.respond(url, init);
  }

  private async respond(url: string, init?: RequestInit): Promise<Response> {
    const u = new URL(url);
    const method = init?.method ?? "GET";
    const body = typeof init?.body === "string" ? JSON.parse(init.body) : undefined;
    this.calls.push({
      method,
      path: u.pathname,
      headers: (init?.headers as Record<string, string>) ?? {},
      body,
    });

    if (/^\/trials\/[^/]+\/events$/.test(u.pathname)) {
      const from = Number(u.searchParams.get("from") ?? "0");
      const limit = Number(u.searchParams.get("limit") ?? "100");
      const page = this.eventsLines.slice(from, from + limit);
      const text = page.length ? page.join("\n") + "\n" : "";
      return new Response(text, { status: 200, headers: { "content-type": "text/plain" } });
    }

    if (this.detail && method === "GET" && /^\/trials\/[^/]+$/.test(u.pathname)) {
      return jsonResponse(this.detail);
    }

    const key = `${method} ${u.pathname}`;
    const queue = this.queues.get(key);
    const ex = queue?.shift();
    if (!ex) throw new Error(`no recorded exchange left for ${key}`);
    if (ex.request !== null && !deepEqual(body, ex.request)) {
      throw new Error(
        `request body for ${ex.name} differs from recording:\nsent     ${JSON.stringify(body)}\nrecorded ${JSON.stringify(ex.request)}`,
      );
    }
    return jsonResponse(ex);
  }
}

function jsonResponse(ex: Exchange): Response {
  return new Response(JSON.stringify(ex.response), {
    status: ex.status,
    headers: { "content-type": "application/json" },
  });
}

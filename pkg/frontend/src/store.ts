// View model for one trial. Holds the numbers the dashboard renders:
// the server snapshot, the imbalance trajectory, the running arm counts,
// the event feed tail, and the current what-if preview. Every value is
// copied from a server response; nothing is recomputed beyond counting
// server-assigned arms and windowing series for the charts.

import type {
  AllocationEvent,
  EnrollResponse,
  Snapshot,
  TrialDetail,
  WhatifResponse,
} from "./types.js";
import type { ConsoleApi } from "./api.js";

export const CHART_WINDOW = 2000;
export const FEED_WINDOW = 50;

export interface TrajectoryPoint {
  n: number;
  lambda: number[];
  treatedSoFar: number;
}

export interface WhatifState {
  x: number[];
  preview: WhatifResponse;
}

export class TrialModel {
  trialId: string;
  name: string | null;
  snapshot: Snapshot;
  points: TrajectoryPoint[] = [];
  feed: AllocationEvent[] = [];
  whatif: WhatifState | null = null;
  lastError: string | null = null;

  constructor(trialId: string, name: string | null, snapshot: Snapshot) {
    this.trialId = trialId;
    this.name = name;
    this.snapshot = snapshot;
  }

  // Rebuild the whole model from GET responses only, so a page reload
  // (or a poll that noticed missed units) lands in the same state as a
  // session that watched every enrollment live.
  static async hydrate(api: ConsoleApi, trialId: string): Promise<TrialModel> {
    const detail: TrialDetail = await api.getTrial(trialId);
    const model = new TrialModel(trialId, detail.name, api.snapshotOf(detail));
    const events = await api.allEvents(trialId);
    let treated = 0;
    for (const ev of events) {
      treated += ev.arm;
      model.pushPoint({ n: ev.unit_index, lambda: ev.lambda, treatedSoFar: treated });
      model.pushFeed(ev);
    }
    return model;
  }

  applyEnrollment(x: number[], resp: EnrollResponse): void {
    const prev = this.points[this.points.length - 1];
    const treated = (prev ? prev.treatedSoFar : this.snapshot.n_treat) + resp.arm;
    this.pushPoint({ n: resp.unit_index, lambda: resp.lambda, treatedSoFar: treated });
    this.pushFeed({
      unit_index: resp.unit_index,
      x_origin: x,
      x,
      prob: resp.prob,
      u: NaN,
      arm: resp.arm,
      lambda: resp.lambda,
      ts: Date.now() / 1000,
    });
    this.snapshot = {
      ...this.snapshot,
      n: resp.unit_index,
      n_treat: this.snapshot.n_treat + resp.arm,
      n_control: this.snapshot.n_control + (1 - resp.arm),
      lambda: resp.lambda,
      warmup_remaining: resp.warmup_remaining,
      theta: resp.theta_summary ?? this.snapshot.theta,
    };
  }

  setWhatif(x: number[], preview: WhatifResponse): void {
    this.whatif = { x, preview };
  }

  clearWhatif(): void {
    this.whatif = null;
  }

  refreshSnapshot(snapshot: Snapshot): void {
    this.snapshot = snapshot;
  }

  // True when the local trajectory no longer matches the server count
  // (another coordinator enrolled someone); the poller rehydrates then.
  behindServer(): boolean {
    const last = this.points[this.points.length - 1];
    const localN = last ? last.n : 0;
    return this.snapshot.n !== localN;
  }

  lambdaSeries(coordinate: number): Array<{ n: number; value: number }> {
    return this.points.map((pt) => ({ n: pt.n, value: pt.lambda[coordinate] ?? 0 }));
  }

  treatmentFractionSeries(): Array<{ n: number; value: number }> {
    return this.points.map((pt) => ({ n: pt.n, value: pt.treatedSoFar / pt.n }));
  }

  dim(): number {
    return this.snapshot.lambda.length;
  }

  private pushPoint(pt: TrajectoryPoint): void {
    this.points.push(pt);
    if (this.points.length > CHART_WINDOW) {
      this.points.splice(0, this.points.length - CHART_WINDOW);
    }
  }

  private pushFeed(ev: AllocationEvent): void {
    this.feed.push(ev);
    if (this.feed.length > FEED_WINDOW) {
      this.feed.splice(0, this.feed.length - FEED_WINDOW);
    }
  }
}

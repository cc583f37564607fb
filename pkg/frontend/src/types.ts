// Shapes of the allocation service API. Every numeric field here comes
// from the server; the console renders them and never recomputes any
// allocation probability on its own.

export type RatioInput = string | number;

export interface FeatureMapDoc {
  kind: string;
  dim?: number;
  levels?: number[];
  weights?: number[];
  [key: string]: unknown;
}

export interface PolicyDoc {
  kind: "complete" | "minimization" | "pocock_simon" | "shift_free";
  warmup?: number;
  p?: number;
  rho1?: number;
  imbalance?: "square" | "abs";
  weights?: number[];
}

export interface TrialConfigDoc {
  name: string | null;
  seed: number;
  rho: RatioInput;
  feature_map: FeatureMapDoc;
  policy: PolicyDoc;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  path: string;
}

export interface CreatedTrial {
  trial_id: string;
  name: string | null;
  created_at: number;
}

export interface TrialSummary {
  trial_id: string;
  name: string | null;
  n: number;
  policy: string;
  created_at: number;
}

export interface ThetaSummary {
  columns: number[][];
  epsilon: number;
}

export interface Snapshot {
  n: number;
  n_treat: number;
  n_control: number;
  rho: number;
  lambda: number[];
  policy: string;
  warmup_remaining: number;
  margins?: number[][];
  theta?: ThetaSummary;
}

export interface TrialDetail extends Snapshot {
  trial_id: string;
  name: string | null;
  created_at: number;
  config: TrialConfigDoc;
}

export interface EnrollResponse {
  unit_index: number;
  arm: 0 | 1;
  prob: number;
  lambda: number[];
  theta_summary: ThetaSummary | null;
  warmup_remaining: number;
}

export interface WhatifResponse {
  prob_treatment: number;
  lambda_if_treat: number[];
  lambda_if_control: number[];
}

export interface AllocationEvent {
  unit_index: number;
  x_origin: number[];
  x: number[];
  prob: number;
  u: number;
  arm: 0 | 1;
  lambda: number[];
  ts: number;
}

export interface HealthResponse {
  status: string;
  version: string;
  trials: number;
}

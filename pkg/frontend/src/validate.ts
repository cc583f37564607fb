// Client-side mirror of the server's trial config constraints, so the
// wizard can flag a bad field before the request leaves the browser.
// The server stays the authority: anything that slips through is shown
// from its 400 response instead.

import { parseRatio } from "./ratio.js";
import type { TrialConfigDoc } from "./types.js";

export interface FieldError {
  field: string;
  message: string;
}

export function validateTrialForm(doc: TrialConfigDoc): FieldError[] {
  const errors: FieldError[] = [];

  if (!Number.isInteger(doc.seed)) {
    errors.push({ field: "seed", message: "seed must be an integer" });
  }

  const ratio = parseRatio(doc.rho);
  if (ratio === null) {
    errors.push({ field: "rho", message: "ratio must be a number or a fraction like 2/3" });
  } else if (!(ratio.value > 0 && ratio.value < 1)) {
    errors.push({ field: "rho", message: "allocation ratio must lie strictly between 0 and 1" });
  }

  const fm = doc.feature_map;
  if (fm.kind === "identity" || fm.kind === "polynomial_moments") {
    if (!Number.isInteger(fm.dim) || (fm.dim as number) < 1) {
      errors.push({ field: "feature_map.dim", message: "dimension must be a positive integer" });
    }
  }
  if (fm.kind === "pocock_simon" || fm.kind === "stratified" || fm.kind === "hu_hu") {
    const levels = fm.levels;
    if (!Array.isArray(levels) || levels.length === 0 || levels.some((l) => !Number.isInteger(l) || l < 2)) {
      errors.push({ field: "feature_map.levels", message: "levels must list at least 2 categories per covariate" });
    }
  }

  const pol = doc.policy;
  const warmup = pol.warmup;
  if (warmup !== undefined && (!Number.isInteger(warmup) || warmup < 0)) {
    errors.push({ field: "policy.warmup", message: "warmup must be a non-negative integer" });
  }

  if (ratio !== null && ratio.value > 0 && ratio.value < 1) {
    const rho = ratio.value;
    if (pol.kind === "shift_free") {
      const cap = Math.min(rho, 1 - rho);
      if (typeof pol.p !== "number" || !(pol.p > 0 && pol.p < cap)) {
        errors.push({
          field: "policy.p",
          message: `adjustment budget must satisfy 0 < p < min(ρ, 1-ρ) = ${fmt(cap)}`,
        });
      }
    }
    if (pol.kind === "minimization" || pol.kind === "pocock_simon") {
      const floor = Math.max(rho, 1 - rho);
      if (typeof pol.rho1 !== "number" || !(pol.rho1 > 0 && pol.rho1 < 1)) {
        errors.push({ field: "policy.rho1", message: "tilt probability must lie strictly between 0 and 1" });
      } else if (pol.rho1 <= floor) {
        errors.push({
          field: "policy.rho1",
          message: `tilt probability must exceed max(ρ, 1-ρ) = ${fmt(floor)}`,
        });
      }
    }
  }

  if (pol.kind === "pocock_simon") {
    const levels = fm.levels;
    if (pol.weights !== undefined && Array.isArray(levels) && pol.weights.length !== levels.length) {
      errors.push({ field: "policy.weights", message: "one weight per covariate is required" });
    }
    if (fm.kind !== "pocock_simon" && fm.kind !== "stratified" && fm.kind !== "hu_hu") {
      errors.push({ field: "feature_map.kind", message: "margin minimization needs a categorical feature map" });
    }
  }

  return errors;
}

function fmt(v: number): string {
  return String(Math.round(v * 1e6) / 1e6);
}

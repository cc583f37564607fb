"""Empirical dynamics diagnostics for allocation rules.

Two questions get answered here, both about the imbalance process a rule
induces rather than any single trial:

* drift_check: far from the origin, does the expected one-step movement of
  the imbalance point back toward it in every reachable direction?  Radii
  and directions are sampled; the verdict is conservative (a radius passes
  only when every sampled direction's estimate plus three standard errors
  stays below zero).

* rho_tilde_estimate: along one long allocation chain, what probability
  would a hypothetical unit with a fixed probe covariate receive on
  average?  For rules built to be shift-free this long-run average returns
  to the target ratio; for hard minimization it need not.

Models bundle a rule (with any learned parameter frozen), the target ratio,
and the covariate source.  Probabilities are evaluated in closed form row
by row; nothing here reuses trial state.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core import RngStream
from ..errors import InvalidInput
from ..policies import ParameterMatrix, epsilon_of_theta
from .generators import CategoricalGenerator, ContinuousGenerator
from .kernels import batched_alpha

__all__ = [
    "CategoricalDriftModel",
    "ContinuousDriftModel",
    "drift_check",
    "drift_model_complete",
    "drift_model_minimization",
    "drift_model_pocock_simon",
    "drift_model_shift_free",
    "rho_tilde_estimate",
]

_BASIS_DRAWS = 4096
_BASIS_RTOL = 1e-9


class ContinuousDriftModel:
    """A continuous-covariate rule viewed as a field over imbalance states.

    ``prob_rows(state, X)`` returns the allocation probability the rule
    would give each row of X at the frozen imbalance ``state``.
    """

    def __init__(
        self,
        generator: ContinuousGenerator,
        rho: float,
        prob_rows: Callable[[np.ndarray, np.ndarray], np.ndarray],
    ):
        self.generator = generator
        self.rho = float(rho)
        self.prob_rows = prob_rows
        self.state_dim = generator.dim

    def reachable_basis(self, gen: np.random.Generator) -> np.ndarray:
        """Orthonormal basis (d, k) of the span of sampled step vectors."""
        x = self.generator.sample(_BASIS_DRAWS, gen)
        _, s, vt = np.linalg.svd(x, full_matrices=False)
        keep = s > (s[0] * _BASIS_RTOL if s.size else 0.0)
        return vt[keep].T

    def drift(
        self, state: np.ndarray, gen: np.random.Generator, mc_draws: int
    ) -> Tuple[float, float]:
        """Estimate the expected step projected onto the state's direction."""
        norm = float(np.linalg.norm(state))
        if norm == 0.0:
            raise InvalidInput("drift direction undefined at the origin")
        u = state / norm
        x = self.generator.sample(mc_draws, gen)
        probs = self.prob_rows(state, x)
        vals = (probs - self.rho) * (x @ u)
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(mc_draws))


class CategoricalDriftModel:
    """Margin-count dynamics of a categorical rule, integrated exactly.

    The state lives on the margin-cell axis; each stratum's step vector is
    its 0/1 cell-incidence row.  The covariate distribution has finite
    support, so drift is a weighted sum over strata with zero MC error.
    """

    def __init__(
        self,
        generator: CategoricalGenerator,
        rho: float,
        rho1: float,
        weights: Sequence[float],
        imb_kind: str = "square",
    ):
        if imb_kind not in ("square", "abs"):
            raise InvalidInput("imbalance kind must be 'square' or 'abs'")
        self.generator = generator
        self.rho = float(rho)
        self.rho1 = float(rho1)
        self.imb_kind = imb_kind
        levels = generator.levels
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(levels),):
            raise InvalidInput("one weight per discrete covariate is required")
        offsets = np.concatenate([[0], np.cumsum(levels)[:-1]]).astype(np.int64)
        n_cells = int(sum(levels))
        grids = generator.strata_as_levels() - 1  # 0-based
        cells = grids + offsets[None, :]
        n_strata = generator.n_strata
        self.incidence = np.zeros((n_strata, n_cells), dtype=np.float64)
        self.weighted_incidence = np.zeros((n_strata, n_cells), dtype=np.float64)
        self.squared_weight_incidence = np.zeros((n_strata, n_cells), dtype=np.float64)
        for s in range(n_strata):
            self.incidence[s, cells[s]] = 1.0
            self.weighted_incidence[s, cells[s]] = w
            self.squared_weight_incidence[s, cells[s]] = w * w
        self.stratum_probs = generator.stratum_probs
        self.state_dim = n_cells

    def reachable_basis(self, gen: np.random.Generator) -> np.ndarray:
        _, s, vt = np.linalg.svd(self.incidence, full_matrices=False)
        keep = s > s[0] * _BASIS_RTOL
        return vt[keep].T

    def drift(
        self, state: np.ndarray, gen: np.random.Generator, mc_draws: int
    ) -> Tuple[float, float]:
        norm = float(np.linalg.norm(state))
        if norm == 0.0:
            raise InvalidInput("drift direction undefined at the origin")
        u = state / norm
        up, down = 1.0 - self.rho, self.rho
        if self.imb_kind == "square":
            delta = self.squared_weight_incidence @ (2.0 * state + (up - down))
        else:
            pot = np.abs(state + up) - np.abs(state - down)
            delta = self.weighted_incidence @ pot
        probs = np.where(
            delta < 0.0, self.rho1, np.where(delta > 0.0, 1.0 - self.rho1, self.rho)
        )
        vals = (probs - self.rho) * (self.incidence @ u)
        return float((self.stratum_probs * vals).sum()), 0.0


def drift_model_complete(generator: ContinuousGenerator, rho: float) -> ContinuousDriftModel:
    """Constant-coin rule; drift is identically zero."""
    rho = float(rho)

    def prob_rows(state, x):
        return np.full(x.shape[0], rho)

    return ContinuousDriftModel(generator, rho, prob_rows)


def drift_model_minimization(
    generator: ContinuousGenerator, rho: float, rho1: float
) -> ContinuousDriftModel:
    """Hard-tilt continuous minimization."""
    rho = float(rho)
    rho1 = float(rho1)

    def prob_rows(state, x):
        diff = 2.0 * (x @ state) + (1.0 - 2.0 * rho) * (x * x).sum(axis=1)
        return np.where(diff < 0.0, rho1, np.where(diff > 0.0, 1.0 - rho1, rho))

    return ContinuousDriftModel(generator, rho, prob_rows)


def drift_model_shift_free(
    generator: ContinuousGenerator,
    rho: float,
    p: float,
    theta: ParameterMatrix,
    alpha_kind: str = "sign",
    epsilon_mode: str = "computed",
) -> ContinuousDriftModel:
    """Bounded-adjustment rule with a frozen parameter matrix."""
    rho = float(rho)
    p = float(p)
    d = theta.dim
    cols = theta.columns
    norms = theta.column_norms()
    zero_cols = theta.zero_columns()
    safe_norms = np.where(zero_cols, 1.0, norms)
    eps = 0.0 if epsilon_mode == "fixed_zero" else epsilon_of_theta(theta)
    eps_sq = eps * eps
    half_pi = math.pi / 2.0

    def prob_rows(state, x):
        lam_sq = float(state @ state)
        scale = math.sqrt(1.0 + eps_sq) / math.sqrt(1.0 + eps_sq * lam_sq)
        taus = scale * (state @ cols) / safe_norms
        v = half_pi * taus
        betas = np.where(np.abs(v) <= half_pi, -np.sin(v), -np.sign(v))
        betas = np.where(zero_cols, 0.0, betas)
        a = batched_alpha(x, alpha_kind)
        return rho + (p / d) * (a @ betas)

    return ContinuousDriftModel(generator, rho, prob_rows)


def drift_model_pocock_simon(
    generator: CategoricalGenerator,
    rho: float,
    rho1: float,
    weights: Sequence[float],
    imb_kind: str = "square",
) -> CategoricalDriftModel:
    """Margin-count minimization over a finite-support covariate source."""
    return CategoricalDriftModel(generator, rho, rho1, weights, imb_kind)


def drift_check(
    model,
    radii: Sequence[float] = (10.0, 20.0, 50.0),
    directions: int = 128,
    mc_draws: int = 100_000,
    base_seed: int = 0,
) -> dict:
    """Worst-case directional drift of the imbalance process, per radius.

    Directions are unit vectors drawn inside the reachable subspace (the
    span of possible step vectors); states outside it can never be visited,
    so their field values carry no meaning for the dynamics.  A radius gets
    ``negative: true`` only when every sampled direction satisfies
    estimate + 3 * SE < 0.
    """
    if directions < 100:
        raise InvalidInput("need at least 100 directions")
    if mc_draws < 100:
        raise InvalidInput("need at least 100 draws per direction")
    radii = [float(r) for r in radii]
    if any(r <= 0 for r in radii):
        raise InvalidInput("radii must be positive")
    gen = RngStream(base_seed, 0).generator()
    basis = model.reachable_basis(gen)  # (d, k)
    k = basis.shape[1]
    raw = gen.standard_normal((directions, k))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    dirs = raw @ basis.T  # (directions, d), unit norm

    report: dict = {
        "subspace_dim": int(k),
        "directions": int(directions),
        "mc_draws": int(mc_draws),
        "radii": [],
    }
    all_negative = True
    for radius in radii:
        worst_upper = -math.inf
        worst = None
        max_mean = -math.inf
        for u in dirs:
            mean, se = model.drift(radius * u, gen, mc_draws)
            max_mean = max(max_mean, mean)
            upper = mean + 3.0 * se
            if upper > worst_upper:
                worst_upper = upper
                worst = (mean, se, u)
        negative = worst_upper < 0.0
        all_negative = all_negative and negative
        report["radii"].append(
            {
                "radius": radius,
                "max_drift": float(max_mean),
                "worst_upper_bound": float(worst_upper),
                "worst_direction_drift": float(worst[0]),
                "worst_direction_se": float(worst[1]),
                "worst_direction": [float(v) for v in worst[2]],
                "negative": bool(negative),
            }
        )
    report["all_negative"] = bool(all_negative)
    return report


def rho_tilde_estimate(
    model: ContinuousDriftModel,
    probes: Sequence[Sequence[float]],
    chain_length: int = 200_000,
    burn_in: int = 10_000,
    base_seed: int = 0,
    n_batches: int = 50,
) -> dict:
    """Long-run mean allocation probability at fixed probe covariates.

    One chain is advanced for ``chain_length`` units under the model's rule
    and covariate source; at every step each probe's would-be probability is
    recorded.  Post-burn-in means come with batch-means standard errors.
    """
    if chain_length - burn_in < 10_000:
        raise InvalidInput("need at least 10000 post-burn-in steps")
    if n_batches < 10:
        raise InvalidInput("need at least 10 batches")
    probe_arr = np.asarray(probes, dtype=np.float64)
    if probe_arr.ndim != 2 or probe_arr.shape[1] != model.state_dim:
        raise InvalidInput(
            f"probes must be rows of length {model.state_dim}, got shape {probe_arr.shape}"
        )
    gen = RngStream(base_seed, 0).generator()
    x = model.generator.sample(chain_length, gen)
    coins = gen.random(chain_length)
    d = model.state_dim
    lam = np.zeros(d, dtype=np.float64)
    rec = np.empty((chain_length, probe_arr.shape[0]), dtype=np.float64)
    rho = model.rho
    for t in range(chain_length):
        rec[t] = model.prob_rows(lam, probe_arr)
        own = float(model.prob_rows(lam, x[t : t + 1])[0])
        arm = 1.0 if coins[t] < own else 0.0
        lam += (arm - rho) * x[t]
    tail = rec[burn_in:]
    usable = (tail.shape[0] // n_batches) * n_batches
    batches = tail[:usable].reshape(n_batches, -1, probe_arr.shape[0]).mean(axis=1)
    est = batches.mean(axis=0)
    se = batches.std(ddof=1, axis=0) / math.sqrt(n_batches)
    return {
        "chain_length": int(chain_length),
        "burn_in": int(burn_in),
        "n_batches": int(n_batches),
        "rho": rho,
        "probes": [
            {
                "x": [float(v) for v in probe_arr[j]],
                "estimate": float(est[j]),
                "se": float(se[j]),
            }
            for j in range(probe_arr.shape[0])
        ],
    }

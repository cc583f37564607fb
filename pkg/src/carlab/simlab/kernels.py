"""Vectorized replication kernels for the simulation lab.

Each kernel advances a block of independent replications through the same
sequential allocation logic the live engine applies one unit at a time,
carrying per-replication state as stacked arrays.  A dedicated test drives
both routes on shared data and checks they agree.

Determinism contract: given the same inputs, every kernel reduces in a
fixed order using elementwise numpy operations (einsum with the default
non-optimizing path, closed-form eigenvalues for small matrices), so reruns
and worker processes reproduce results bit for bit.

Per-replication draw order (one counter-based stream per replication):
    1. the covariate block, in the generator's documented order
    2. one allocation uniform per unit, as a single block
    3. one noise block per derived quantity that needs one, in config order
"""

from __future__ import annotations

import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core import RngStream
from ..errors import InvalidInput
from ..policies import SINGULAR_SMIN, ZERO_COLUMN_RTOL
from .generators import (
    AdditionalCovariate,
    CategoricalGenerator,
    ContinuousGenerator,
    CsvResample,
    FixedSequence,
)

__all__ = [
    "batched_alpha",
    "batched_epsilon",
    "generate_continuous_block",
    "generate_categorical_block",
    "run_continuous_block",
    "run_categorical_block",
]


def batched_alpha(x: np.ndarray, kind: str) -> np.ndarray:
    """Direction weights for a (B, d) block of covariate rows."""
    if kind == "sign":
        return np.sign(x)
    if kind == "linf_normalized":
        m = np.abs(x).max(axis=1, keepdims=True)
        safe = np.where(m == 0.0, 1.0, m)
        return np.where(m == 0.0, 0.0, x / safe)
    raise InvalidInput(f"alpha kind must be 'sign' or 'linf_normalized', got {kind!r}")


def _sym_eigmin(g: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of each symmetric matrix in a (B, d, d) stack.

    Closed forms for d <= 3 keep the hot path off LAPACK; larger d falls
    back to eigvalsh.
    """
    d = g.shape[1]
    if d == 1:
        return g[:, 0, 0].copy()
    if d == 2:
        a, b, c = g[:, 0, 0], g[:, 0, 1], g[:, 1, 1]
        mid = 0.5 * (a + c)
        half = np.sqrt((0.5 * (a - c)) ** 2 + b * b)
        return mid - half
    if d == 3:
        a00, a11, a22 = g[:, 0, 0], g[:, 1, 1], g[:, 2, 2]
        a01, a02, a12 = g[:, 0, 1], g[:, 0, 2], g[:, 1, 2]
        q = (a00 + a11 + a22) / 3.0
        p1 = a01 * a01 + a02 * a02 + a12 * a12
        p2 = (a00 - q) ** 2 + (a11 - q) ** 2 + (a22 - q) ** 2 + 2.0 * p1
        p = np.sqrt(np.maximum(p2, 0.0) / 6.0)
        safe_p = np.where(p > 0.0, p, 1.0)
        b00, b11, b22 = (a00 - q) / safe_p, (a11 - q) / safe_p, (a22 - q) / safe_p
        b01, b02, b12 = a01 / safe_p, a02 / safe_p, a12 / safe_p
        det_b = (
            b00 * (b11 * b22 - b12 * b12)
            - b01 * (b01 * b22 - b12 * b02)
            + b02 * (b01 * b12 - b11 * b02)
        )
        r = np.clip(det_b / 2.0, -1.0, 1.0)
        phi = np.arccos(r) / 3.0
        eig_min = q + 2.0 * p * np.cos(phi + 2.0 * math.pi / 3.0)
        return np.where(p > 0.0, eig_min, q)
    return np.linalg.eigvalsh(g)[:, 0]


def batched_epsilon(theta: np.ndarray) -> np.ndarray:
    """Curvature constants for a (B, d, d) stack of parameter matrices.

    Matches the scalar rule: smallest singular value of the column-normalized
    matrix over sqrt(d + 1), exactly 0 for any effectively-zero column or a
    singular value below the floor.
    """
    b, d, _ = theta.shape
    norms = np.sqrt((theta**2).sum(axis=1))  # (B, d) column norms
    max_norm = norms.max(axis=1)
    tol = ZERO_COLUMN_RTOL * (1.0 + max_norm)
    zero_any = (norms < tol[:, None]).any(axis=1)
    safe = np.where(norms < tol[:, None], 1.0, norms)
    normalized = theta / safe[:, None, :]
    gram = np.einsum("bij,bik->bjk", normalized, normalized)
    eig_min = _sym_eigmin(gram)
    smin = np.sqrt(np.clip(eig_min, 0.0, None))
    eps = smin / math.sqrt(d + 1)
    eps[smin < SINGULAR_SMIN] = 0.0
    eps[zero_any] = 0.0
    return eps


def generate_continuous_block(
    generator: ContinuousGenerator,
    extras: Sequence[AdditionalCovariate],
    base_seed: int,
    rep_start: int,
    rep_stop: int,
    horizon: int,
) -> Tuple[np.ndarray, np.ndarray, Dict[str, np.ndarray]]:
    """Pregenerate data for replications [rep_start, rep_stop).

    Returns covariates (B, n, d), allocation uniforms (B, n), and the
    derived per-unit quantities, each (B, n), keyed by name.
    """
    n_reps = rep_stop - rep_start
    d = generator.dim
    x = np.empty((n_reps, horizon, d), dtype=np.float64)
    u = np.empty((n_reps, horizon), dtype=np.float64)
    noisy = [e for e in extras if e.needs_noise]
    noise = {e.name: np.empty((n_reps, horizon), dtype=np.float64) for e in noisy}
    raw: Dict[str, np.ndarray] = {}
    resample = isinstance(generator, CsvResample) and generator.extra_columns
    fixed_cols = isinstance(generator, FixedSequence) and generator.extra_columns
    if resample or fixed_cols:
        raw = {
            k: np.empty((n_reps, horizon), dtype=np.float64)
            for k in generator.extra_columns
        }
    for i, rep in enumerate(range(rep_start, rep_stop)):
        gen = RngStream(base_seed, rep).generator()
        if resample:
            idx = generator.sample_indices(horizon, gen)
            x[i] = generator.rows[idx]
            for k, col in generator.extra_columns.items():
                raw[k][i] = col[idx]
        else:
            x[i] = generator.sample(horizon, gen)
            if fixed_cols:
                for k, col in generator.extra_columns.items():
                    raw[k][i] = col[:horizon]
        u[i] = gen.random(horizon)
        for e in noisy:
            noise[e.name][i] = gen.standard_normal(horizon)
    flat_x = x.reshape(-1, d)
    flat_raw = {k: v.reshape(-1) for k, v in raw.items()} or None
    values: Dict[str, np.ndarray] = {}
    for e in extras:
        flat_noise = noise[e.name].reshape(-1) if e.needs_noise else None
        values[e.name] = e.evaluate(flat_x, noise=flat_noise, raw_columns=flat_raw).reshape(
            n_reps, horizon
        )
    return x, u, values


def generate_categorical_block(
    generator: CategoricalGenerator,
    base_seed: int,
    rep_start: int,
    rep_stop: int,
    horizon: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """Pregenerate stratum indices (B, n) and allocation uniforms (B, n)."""
    n_reps = rep_stop - rep_start
    strata = np.empty((n_reps, horizon), dtype=np.int64)
    u = np.empty((n_reps, horizon), dtype=np.float64)
    for i, rep in enumerate(range(rep_start, rep_stop)):
        gen = RngStream(base_seed, rep).generator()
        strata[i] = generator.sample_strata(horizon, gen)
        u[i] = gen.random(horizon)
    return strata, u


def _checkpoint_dict(sizes: Sequence[int]) -> Dict[int, dict]:
    return {int(n): {} for n in sizes}


def run_continuous_block(
    kind: str,
    rho: float,
    warmup: int,
    sizes: Sequence[int],
    x: np.ndarray,
    u: np.ndarray,
    extras: Dict[str, np.ndarray],
    rho1: Optional[float] = None,
    p: Optional[float] = None,
    alpha_kind: str = "sign",
    epsilon_mode: str = "computed",
    theta_mode: str = "running_mean",
    theta_fixed: Optional[np.ndarray] = None,
) -> Dict[int, dict]:
    """Advance a block of replications under one continuous-covariate rule.

    ``kind`` is one of complete / minimization / shift_free.  Returns, per
    checkpoint size, the imbalance vectors (B, d), treated counts (B,), and
    signed accumulations (assignment minus target ratio, times value) of
    each derived quantity (B,).
    """
    n_reps, horizon, d = x.shape
    want = set(int(n) for n in sizes)
    if max(want) > horizon:
        raise InvalidInput("checkpoint beyond generated horizon")
    out = _checkpoint_dict(sizes)

    lam = np.zeros((n_reps, d), dtype=np.float64)
    n_treat = np.zeros(n_reps, dtype=np.int64)
    acc = {name: np.zeros(n_reps, dtype=np.float64) for name in extras}

    shift_free = kind == "shift_free"
    running = shift_free and theta_mode == "running_mean"
    theta = np.zeros((n_reps, d, d), dtype=np.float64) if running else None

    fixed_eps = 0.0
    fixed_norms = None
    fixed_zero_cols = None
    if shift_free and not running:
        if theta_fixed is None:
            raise InvalidInput("fixed theta mode requires a parameter matrix")
        fixed_norms = np.sqrt((theta_fixed**2).sum(axis=0))
        tol = ZERO_COLUMN_RTOL * (1.0 + (fixed_norms.max() if d else 0.0))
        fixed_zero_cols = fixed_norms < tol
        if epsilon_mode == "computed":
            fixed_eps = float(batched_epsilon(theta_fixed[None, :, :])[0])

    half_pi = math.pi / 2.0
    for t in range(horizon):
        xt = x[:, t, :]
        if t < warmup:
            prob = np.full(n_reps, rho)
        elif kind == "complete":
            prob = np.full(n_reps, rho)
        elif kind == "minimization":
            diff = 2.0 * (xt * lam).sum(axis=1) + (1.0 - 2.0 * rho) * (xt * xt).sum(axis=1)
            prob = np.where(diff < 0.0, rho1, np.where(diff > 0.0, 1.0 - rho1, rho))
        else:
            a = batched_alpha(xt, alpha_kind)
            if running:
                norms = np.sqrt((theta**2).sum(axis=1))  # (B, d)
                tol = ZERO_COLUMN_RTOL * (1.0 + norms.max(axis=1, keepdims=True))
                zero_cols = norms < tol
                if epsilon_mode == "computed":
                    eps = batched_epsilon(theta)
                else:
                    eps = np.zeros(n_reps)
                dots = (theta * lam[:, :, None]).sum(axis=1)  # (B, d) of xi_i . lam
            else:
                norms = np.broadcast_to(fixed_norms, (n_reps, d))
                zero_cols = np.broadcast_to(fixed_zero_cols, (n_reps, d))
                eps = np.full(n_reps, fixed_eps)
                dots = (lam[:, :, None] * theta_fixed[None, :, :]).sum(axis=1)
            safe_norms = np.where(zero_cols, 1.0, norms)
            lam_sq = (lam * lam).sum(axis=1)
            eps_sq = eps * eps
            scale = np.sqrt(1.0 + eps_sq) / np.sqrt(1.0 + eps_sq * lam_sq)
            tau = scale[:, None] * (dots / safe_norms)
            v = half_pi * tau
            beta = np.where(np.abs(v) <= half_pi, -np.sin(v), -np.sign(v))
            beta = np.where(zero_cols, 0.0, beta)
            prob = rho + (p / d) * (a * beta).sum(axis=1)

        arm = u[:, t] < prob
        w = arm.astype(np.float64) - rho
        lam += w[:, None] * xt
        n_treat += arm
        for name, vals in extras.items():
            acc[name] += w * vals[:, t]
        if running:
            a_upd = batched_alpha(xt, alpha_kind)
            contrib = xt[:, :, None] * a_upd[:, None, :]
            theta += (contrib - theta) / (t + 1)

        done = t + 1
        if done in want:
            out[done] = {
                "lambda": lam.copy(),
                "n_treat": n_treat.copy(),
                "extras": {name: acc[name].copy() for name in acc},
            }
    return out


def run_categorical_block(
    kind: str,
    rho_value: float,
    rho_exact: Optional[Tuple[int, int]],
    warmup: int,
    sizes: Sequence[int],
    levels_per_cov: Sequence[int],
    strata: np.ndarray,
    u: np.ndarray,
    rho1: Optional[float] = None,
    imb_kind: str = "square",
    weights: Optional[Sequence[float]] = None,
) -> Dict[int, dict]:
    """Advance a block of replications under a categorical-covariate rule.

    ``kind`` is complete or pocock_simon.  ``strata`` holds lexicographic
    stratum indices (B, n).  When the target ratio is an exact fraction
    num/den, margin counts live on an integer lattice in units of 1/den so
    tie detection is exact.  Returns per-checkpoint stratum imbalance sums
    (B, n_strata) and treated counts (B,).
    """
    n_reps, horizon = strata.shape
    want = set(int(n) for n in sizes)
    if max(want) > horizon:
        raise InvalidInput("checkpoint beyond generated horizon")
    out = _checkpoint_dict(sizes)

    levels_per_cov = tuple(int(lv) for lv in levels_per_cov)
    n_cov = len(levels_per_cov)
    n_strata = int(np.prod(levels_per_cov))
    offsets = np.concatenate([[0], np.cumsum(levels_per_cov)[:-1]]).astype(np.int64)
    n_cells = int(sum(levels_per_cov))

    # (n_strata, n_cov) margin-cell ids per stratum, lexicographic order
    grids = np.indices(levels_per_cov).reshape(n_cov, -1).T  # 0-based levels
    stratum_cells = (grids + offsets[None, :]).astype(np.int64)

    minimize = kind == "pocock_simon"
    if minimize and (rho1 is None or weights is None):
        raise InvalidInput("pocock_simon kernel needs rho1 and weights")
    w_arr = np.asarray(weights, dtype=np.float64) if weights is not None else None

    exact = rho_exact is not None
    if exact:
        num, den = rho_exact
        pot_up, pot_down = float(den - num), float(num)
        up_treat, up_control = float(den - num), float(-num)
        margins = np.zeros((n_reps, n_cells), dtype=np.int64)
    else:
        pot_up, pot_down = 1.0 - rho_value, rho_value
        up_treat, up_control = 1.0 - rho_value, -rho_value
        margins = np.zeros((n_reps, n_cells), dtype=np.float64)

    stratum_acc = np.zeros((n_reps, n_strata), dtype=np.float64)
    n_treat = np.zeros(n_reps, dtype=np.int64)
    rows = np.arange(n_reps)

    for t in range(horizon):
        st = strata[:, t]  # (B,)
        cells_t = stratum_cells[st]  # (B, n_cov)
        if minimize and t >= warmup:
            d_vals = margins[rows[:, None], cells_t].astype(np.float64)  # (B, n_cov)
            # Candidate potentials use the actual increments +pot_up / -pot_down;
            # weights scale the cells before the imbalance, so square sees w^2.
            if imb_kind == "square":
                w2 = w_arr * w_arr
                delta = (w2[None, :] * (2.0 * d_vals + pot_up - pot_down)).sum(axis=1)
            else:
                delta = (
                    w_arr[None, :]
                    * (np.abs(d_vals + pot_up) - np.abs(d_vals - pot_down))
                ).sum(axis=1)
            prob = np.where(delta < 0.0, rho1, np.where(delta > 0.0, 1.0 - rho1, rho_value))
        else:
            prob = np.full(n_reps, rho_value)

        arm = u[:, t] < prob
        if exact:
            upd = np.where(arm, np.int64(den - num), np.int64(-num))
        else:
            upd = np.where(arm, up_treat, up_control)
        for j in range(n_cov):
            margins[rows, cells_t[:, j]] += upd
        w_f = arm.astype(np.float64) - rho_value
        np.add.at(stratum_acc, (rows, st), w_f)
        n_treat += arm

        done = t + 1
        if done in want:
            out[done] = {
                "strata": stratum_acc.copy(),
                "n_treat": n_treat.copy(),
            }
    return out

"""Allocation rules: classical comparators and the shift-free adjustment.

Every rule maps (state, next unit's covariates) to a treatment probability.

``complete``        ignores state entirely and always returns rho.
``minimization``    compares the two candidate imbalances after a hypothetical
                    treatment/control assignment and tilts the coin hard
                    (rho1 vs 1 - rho1) toward the smaller one.
``discrete PS``     same idea on weighted per-margin counts of categorical
                    covariates, scoring each candidate arm by the margin
                    values it would leave on the unit's own cells.
``shift-free``      returns rho plus a bounded adjustment

                        rho + (p / d) * sum_i alpha_i(x) * beta_i(state)

                    where each alpha_i in [-1, 1] reads only the new unit and
                    each beta_i in [-1, 1] reads only the running imbalance.
                    The product form is what keeps the long-run treatment
                    fraction at rho conditional on any covariate value, while
                    the beta components still push the imbalance back toward
                    the origin.

The beta component squashes the imbalance through a clipped sine:

    cutsin(v) = -sin(v) on [-pi/2, pi/2], else -sign(v)
    tau       = sqrt(1 + eps^2) * (unit(xi) . lam) / sqrt(1 + eps^2 |lam|^2)
    beta      = cutsin(pi/2 * tau)

``eps`` trades responsiveness near the origin against early saturation far
from it; it is derived from the parameter matrix so that, whatever direction
the imbalance escapes in, at least one beta component is saturated at -1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .core import as_vector
from .errors import InvalidInput

# Below this, a parameter column is treated as exactly zero (its beta term
# is dropped) and the matrix is reported singular.
ZERO_COLUMN_RTOL = 1e-12
# Smallest singular value that still counts as nonsingular.
SINGULAR_SMIN = 1e-10

ALPHA_KINDS = ("sign", "linf_normalized")
IMBALANCE_KINDS = ("square", "abs")


@dataclass(frozen=True)
class ParameterMatrix:
    """Square matrix whose column i steers the i-th adjustment component."""

    columns: np.ndarray  # shape (d, d); columns[:, i] is direction i

    def __post_init__(self):
        cols = self.columns
        if cols.ndim != 2 or cols.shape[0] != cols.shape[1]:
            raise InvalidInput(f"parameter matrix must be square, got shape {cols.shape}")
        if not np.all(np.isfinite(cols)):
            raise InvalidInput("parameter matrix has non-finite entries")

    @classmethod
    def zero(cls, dim: int) -> "ParameterMatrix":
        return cls(columns=np.zeros((dim, dim), dtype=np.float64))

    @classmethod
    def from_columns(cls, cols: Sequence[Sequence[float]]) -> "ParameterMatrix":
        arr = np.array(cols, dtype=np.float64).T  # caller lists columns row-wise
        return cls(columns=arr)

    @property
    def dim(self) -> int:
        return self.columns.shape[0]

    def column(self, i: int) -> np.ndarray:
        return self.columns[:, i]

    def column_norms(self) -> np.ndarray:
        return np.sqrt((self.columns**2).sum(axis=0))

    def zero_columns(self) -> np.ndarray:
        """Boolean mask of columns treated as exactly zero."""
        norms = self.column_norms()
        tol = ZERO_COLUMN_RTOL * (1.0 + (norms.max() if norms.size else 0.0))
        return norms < tol


@dataclass(frozen=True)
class MinimizationConfig:
    """Settings for the hard-tilt minimization rules."""

    rho1: float
    imb_kind: str = "square"
    weights: Optional[tuple] = None  # discrete rule only; one weight per covariate

    def __post_init__(self):
        if not (0.0 < self.rho1 < 1.0):
            raise InvalidInput(f"rho1 must lie in (0, 1), got {self.rho1}")
        if self.imb_kind not in IMBALANCE_KINDS:
            raise InvalidInput(f"imbalance kind must be one of {IMBALANCE_KINDS}")

    def check_against(self, rho: float) -> None:
        if self.rho1 <= max(rho, 1.0 - rho):
            raise InvalidInput(
                f"rho1 must exceed max(rho, 1-rho) = {max(rho, 1.0 - rho):.6g}, got {self.rho1}"
            )


@dataclass(frozen=True)
class FeasibleConfig:
    """Settings for the shift-free adjustment rule."""

    p: float
    alpha_kind: str = "sign"
    epsilon_mode: str = "computed"  # or "fixed_zero"
    warmup_threshold: int = 10

    def __post_init__(self):
        if self.alpha_kind not in ALPHA_KINDS:
            raise InvalidInput(f"alpha kind must be one of {ALPHA_KINDS}")
        if self.epsilon_mode not in ("computed", "fixed_zero"):
            raise InvalidInput("epsilon mode must be 'computed' or 'fixed_zero'")
        if self.warmup_threshold < 0:
            raise InvalidInput("warmup threshold must be nonnegative")

    def check_against(self, rho: float) -> None:
        cap = min(rho, 1.0 - rho)
        if not (0.0 < self.p < cap):
            raise InvalidInput(
                f"adjustment budget violates 0 < p < min(rho, 1-rho) = {cap:.6g}: got p = {self.p}"
            )


def cr_prob(rho: float) -> float:
    """Complete randomization: the state-free coin."""
    return float(rho)


def rmm_prob(lam: np.ndarray, x: np.ndarray, rho: float, rho1: float) -> float:
    """Tilt toward whichever arm leaves the smaller squared imbalance.

    The sign of  2 x.lam + (1 - 2 rho) x.x  decides; zero is an exact tie
    and falls back to rho.
    """
    x = np.asarray(x, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if x.shape != lam.shape:
        raise InvalidInput(f"covariate shape {x.shape} does not match imbalance {lam.shape}")
    decision = 2.0 * float(x @ lam) + (1.0 - 2.0 * rho) * float(x @ x)
    if decision < 0.0:
        return float(rho1)
    if decision > 0.0:
        return float(1.0 - rho1)
    return float(rho)


def ps_margin_deltas(
    own_cells: np.ndarray,
    weights: np.ndarray,
    imb_kind: str,
    up: float,
    down: float,
) -> float:
    """Difference of potential margin imbalances, treatment minus control.

    ``own_cells`` holds the current values of the unit's own margin cells,
    one per discrete covariate; potentials replace each value v by its value
    after the candidate assignment, v + up (treat) or v - down (control).
    In margin units up = 1 - rho and down = rho; with integer-lattice
    bookkeeping everything is scaled by the ratio denominator and the sign
    is exact.

    Weights scale the cell values before the imbalance is taken, so the
    square kind responds to w^2 while the abs kind responds to w.
    """
    v = np.asarray(own_cells)
    w = np.asarray(weights)
    if v.shape != w.shape:
        raise InvalidInput("one weight per margin cell is required")
    if imb_kind == "square":
        # (v+up)^2 - (v-down)^2 = (up+down) (2v + up - down)
        return float((up + down) * (w * w * (2.0 * v + up - down)).sum())
    if imb_kind == "abs":
        return float((w * (np.abs(v + up) - np.abs(v - down))).sum())
    raise InvalidInput(f"imbalance kind must be one of {IMBALANCE_KINDS}")


def ps_discrete_prob(
    own_cells: Sequence[float],
    cfg: MinimizationConfig,
    rho: float,
    up: Optional[float] = None,
    down: Optional[float] = None,
) -> float:
    """Discrete minimization coin from the unit's own margin cells."""
    if cfg.weights is None:
        raise InvalidInput("discrete minimization requires per-covariate weights")
    delta = ps_margin_deltas(
        np.asarray(own_cells, dtype=np.float64),
        np.asarray(cfg.weights, dtype=np.float64),
        cfg.imb_kind,
        up=(1.0 - rho) if up is None else up,
        down=rho if down is None else down,
    )
    if delta < 0.0:
        return float(cfg.rho1)
    if delta > 0.0:
        return float(1.0 - cfg.rho1)
    return float(rho)


def alpha(x: np.ndarray, kind: str = "sign") -> np.ndarray:
    """Per-coordinate direction weights read off the incoming unit.

    ``sign``             +1 / -1 by coordinate sign, exactly 0 at 0.
    ``linf_normalized``  x / max|x|, the zero vector mapping to zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    if kind == "sign":
        return np.sign(x)
    if kind == "linf_normalized":
        m = np.max(np.abs(x)) if x.size else 0.0
        if m == 0.0:
            return np.zeros_like(x)
        return x / m
    raise InvalidInput(f"alpha kind must be one of {ALPHA_KINDS}")


def epsilon_of_theta(theta: ParameterMatrix) -> float:
    """Curvature constant derived from the normalized parameter columns.

    Equals s_min / sqrt(d + 1) where s_min is the smallest singular value of
    the column-normalized matrix.  Any effectively zero column, or s_min
    below the singularity floor, yields exactly 0.
    """
    d = theta.dim
    zero_cols = theta.zero_columns()
    if zero_cols.any():
        return 0.0
    norms = theta.column_norms()
    normalized = theta.columns / norms[np.newaxis, :]
    smin = float(np.linalg.svd(normalized, compute_uv=False)[-1])
    if smin < SINGULAR_SMIN:
        return 0.0
    return smin / math.sqrt(d + 1)


def cutsin(v: float) -> float:
    """Negated sine, clipped to +-1 outside [-pi/2, pi/2]."""
    if v > math.pi / 2:
        return -1.0
    if v < -math.pi / 2:
        return 1.0
    return -math.sin(v)


def tau(xi: np.ndarray, eps: float, lam: np.ndarray) -> float:
    """Damped projection of the imbalance onto a parameter direction."""
    xi = np.asarray(xi, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if xi.shape != lam.shape:
        raise InvalidInput(f"direction shape {xi.shape} does not match imbalance {lam.shape}")
    if eps < 0:
        raise InvalidInput("eps must be nonnegative")
    norm_xi = float(np.linalg.norm(xi))
    if norm_xi == 0.0:
        raise InvalidInput("direction vector must be nonzero")
    proj = float(xi @ lam) / norm_xi
    lam_sq = float(lam @ lam)
    return math.sqrt(1.0 + eps * eps) * proj / math.sqrt(1.0 + eps * eps * lam_sq)


def beta(xi: np.ndarray, eps: float, lam: np.ndarray) -> float:
    """Bounded pushback along one parameter direction; odd in lam."""
    return cutsin(math.pi / 2.0 * tau(xi, eps, lam))


def feasible_prob(
    theta: ParameterMatrix,
    lam: np.ndarray,
    x: np.ndarray,
    rho: float,
    cfg: FeasibleConfig,
) -> float:
    """Shift-free allocation probability rho + (p/d) sum_i alpha_i beta_i."""
    lam = np.asarray(lam, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    d = theta.dim
    if x.shape != (d,) or lam.shape != (d,):
        raise InvalidInput(
            f"expected covariate and imbalance of length {d}, got {x.shape} and {lam.shape}"
        )
    eps = 0.0 if cfg.epsilon_mode == "fixed_zero" else epsilon_of_theta(theta)
    a = alpha(x, cfg.alpha_kind)
    zero_cols = theta.zero_columns()
    acc = 0.0
    for i in range(d):
        if zero_cols[i] or a[i] == 0.0:
            continue
        acc += a[i] * beta(theta.column(i), eps, lam)
    return float(rho + (cfg.p / d) * acc)


def update_parameter(
    theta: ParameterMatrix, x_next: np.ndarray, n: int, alpha_kind: str = "sign"
) -> ParameterMatrix:
    """Fold one more unit into the running-mean parameter estimate.

    ``n`` is the number of units already folded in; column i becomes the
    mean of alpha_i(x_j) * x_j over the first n + 1 units.  Reads only the
    covariates, never the assignment.
    """
    if n < 0:
        raise InvalidInput("n must be nonnegative")
    x = as_vector(x_next, dim=theta.dim)
    a = alpha(x, alpha_kind)
    contrib = x[:, np.newaxis] * a[np.newaxis, :]  # column i = alpha_i(x) * x
    cols = theta.columns + (contrib - theta.columns) / (n + 1)
    return ParameterMatrix(columns=cols)


def oracle_parameter(
    sample: Callable[[int, np.random.Generator], np.ndarray],
    alpha_kind: str,
    n_mc: int,
    rng: np.random.Generator,
) -> Tuple[ParameterMatrix, np.ndarray]:
    """Monte Carlo estimate of the population parameter matrix.

    ``sample(n, rng)`` must return an (n, d) block of independent covariate
    draws.  Returns the estimated matrix and per-entry standard errors.
    """
    if n_mc < 10_000:
        raise InvalidInput("oracle estimation needs at least 10000 draws")
    block = 65536
    d = None
    total = np.zeros(0)
    total_sq = np.zeros(0)
    seen = 0
    while seen < n_mc:
        take = min(block, n_mc - seen)
        xs = np.asarray(sample(take, rng), dtype=np.float64)
        if d is None:
            d = xs.shape[1]
            total = np.zeros((d, d))
            total_sq = np.zeros((d, d))
        if alpha_kind == "sign":
            a = np.sign(xs)
        elif alpha_kind == "linf_normalized":
            m = np.max(np.abs(xs), axis=1, keepdims=True)
            a = np.where(m == 0.0, 0.0, xs / np.where(m == 0.0, 1.0, m))
        else:
            raise InvalidInput(f"alpha kind must be one of {ALPHA_KINDS}")
        contrib = xs[:, :, np.newaxis] * a[:, np.newaxis, :]
        total += contrib.sum(axis=0)
        total_sq += (contrib**2).sum(axis=0)
        seen += take
    mean = total / seen
    var = np.maximum(total_sq / seen - mean**2, 0.0)
    se = np.sqrt(var / seen)
    return ParameterMatrix(columns=mean), se

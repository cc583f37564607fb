"""Feature maps from raw covariates to the vectors the engine balances.

Continuous kinds pass numbers through (optionally rescaled or raised to
powers).  Discrete kinds encode level tuples: per-margin indicators weighted
by the square roots of user weights, a one-hot stratum indicator, or the
combined form with an overall coordinate plus margin and stratum blocks.
Balancing the per-margin encoding controls every marginal level count;
balancing the stratum encoding controls every cell of the cross table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .core import as_vector
from .errors import InvalidInput

MAP_KINDS = (
    "identity",
    "scaled_identity",
    "polynomial_moments",
    "stratified",
    "pocock_simon",
    "hu_hu",
)


@dataclass(frozen=True)
class DiscreteScheme:
    """Level counts for p discrete covariates, with per-covariate weights."""

    levels: tuple
    weights: tuple

    def __post_init__(self):
        if len(self.levels) == 0:
            raise InvalidInput("discrete scheme needs at least one covariate")
        if any(int(lv) < 2 for lv in self.levels):
            raise InvalidInput("each discrete covariate needs at least 2 levels")
        if len(self.weights) != len(self.levels):
            raise InvalidInput("weights and levels must have the same length")
        if any(w < 0 for w in self.weights):
            raise InvalidInput("margin weights must be nonnegative")

    @classmethod
    def make(cls, levels: Sequence[int], weights: Optional[Sequence[float]] = None) -> "DiscreteScheme":
        levels_t = tuple(int(lv) for lv in levels)
        if weights is None:
            weights = [1.0] * len(levels_t)
        return cls(levels=levels_t, weights=tuple(float(w) for w in weights))

    @property
    def n_covariates(self) -> int:
        return len(self.levels)

    @property
    def n_margin_cells(self) -> int:
        return int(sum(self.levels))

    @property
    def n_strata(self) -> int:
        return int(np.prod(self.levels))

    def check_levels(self, levels: Sequence[int]) -> tuple:
        """Validate a unit's level tuple (1-based) against the scheme."""
        if len(levels) != len(self.levels):
            raise InvalidInput(
                f"unit has {len(levels)} discrete covariates, scheme expects {len(self.levels)}"
            )
        out = []
        for t, (k, cap) in enumerate(zip(levels, self.levels)):
            ki = int(k)
            if ki != k:
                raise InvalidInput(f"covariate {t + 1}: level must be an integer, got {k!r}")
            if not (1 <= ki <= cap):
                raise InvalidInput(f"covariate {t + 1}: level {ki} outside 1..{cap}")
            out.append(ki)
        return tuple(out)

    def stratum_index(self, levels: Sequence[int]) -> int:
        """Lexicographic rank of a level tuple, first covariate most significant."""
        ks = self.check_levels(levels)
        idx = 0
        for k, cap in zip(ks, self.levels):
            idx = idx * cap + (k - 1)
        return idx

    def margin_cell_offsets(self) -> List[int]:
        """Start offset of each covariate's cell block in the flat margin layout."""
        offsets, acc = [], 0
        for cap in self.levels:
            offsets.append(acc)
            acc += cap
        return offsets


@dataclass(frozen=True)
class FeatureMap:
    """A named transformation from raw covariates to balanced coordinates."""

    kind: str
    dim_in: int
    scheme: Optional[DiscreteScheme] = None
    scale: Optional[tuple] = None
    offset: Optional[tuple] = None
    degree: int = 1
    overall_weight: float = 0.0
    stratum_weight: float = 0.0
    _offsets: tuple = field(default=(), repr=False)

    @classmethod
    def identity(cls, dim: int) -> "FeatureMap":
        if dim < 1:
            raise InvalidInput("identity map needs a positive dimension")
        return cls(kind="identity", dim_in=dim)

    @classmethod
    def scaled_identity(
        cls, scale: Sequence[float], offset: Optional[Sequence[float]] = None
    ) -> "FeatureMap":
        scale_t = tuple(float(s) for s in scale)
        if offset is None:
            offset = [0.0] * len(scale_t)
        offset_t = tuple(float(o) for o in offset)
        if len(offset_t) != len(scale_t):
            raise InvalidInput("scale and offset must have the same length")
        return cls(kind="scaled_identity", dim_in=len(scale_t), scale=scale_t, offset=offset_t)

    @classmethod
    def polynomial_moments(cls, dim: int, degree: int) -> "FeatureMap":
        if degree < 1:
            raise InvalidInput("polynomial degree must be at least 1")
        return cls(kind="polynomial_moments", dim_in=dim, degree=int(degree))

    @classmethod
    def stratified(cls, scheme: DiscreteScheme) -> "FeatureMap":
        return cls(kind="stratified", dim_in=scheme.n_covariates, scheme=scheme)

    @classmethod
    def pocock_simon(cls, scheme: DiscreteScheme) -> "FeatureMap":
        return cls(
            kind="pocock_simon",
            dim_in=scheme.n_covariates,
            scheme=scheme,
            _offsets=tuple(scheme.margin_cell_offsets()),
        )

    @classmethod
    def hu_hu(
        cls, scheme: DiscreteScheme, overall_weight: float, stratum_weight: float
    ) -> "FeatureMap":
        if overall_weight < 0 or stratum_weight < 0:
            raise InvalidInput("overall and stratum weights must be nonnegative")
        return cls(
            kind="hu_hu",
            dim_in=scheme.n_covariates,
            scheme=scheme,
            overall_weight=float(overall_weight),
            stratum_weight=float(stratum_weight),
            _offsets=tuple(scheme.margin_cell_offsets()),
        )

    @property
    def dim_out(self) -> int:
        if self.kind in ("identity", "scaled_identity"):
            return self.dim_in
        if self.kind == "polynomial_moments":
            return self.dim_in * self.degree
        if self.kind == "stratified":
            return self.scheme.n_strata
        if self.kind == "pocock_simon":
            return self.scheme.n_margin_cells
        if self.kind == "hu_hu":
            return 1 + self.scheme.n_margin_cells + self.scheme.n_strata
        raise InvalidInput(f"unknown feature map kind {self.kind!r}")

    def apply(self, x_origin: Sequence[float]) -> np.ndarray:
        return apply_map(self, x_origin)


def _pocock_simon_vector(scheme: DiscreteScheme, ks: tuple, offsets: Sequence[int]) -> np.ndarray:
    out = np.zeros(scheme.n_margin_cells, dtype=np.float64)
    for t, k in enumerate(ks):
        out[offsets[t] + (k - 1)] = math.sqrt(scheme.weights[t])
    return out


def apply_map(fmap: FeatureMap, x_origin: Sequence[float]) -> np.ndarray:
    """Evaluate a feature map on one unit's raw covariates."""
    if fmap.kind == "identity":
        return as_vector(x_origin, dim=fmap.dim_in)
    if fmap.kind == "scaled_identity":
        x = as_vector(x_origin, dim=fmap.dim_in)
        return x * np.asarray(fmap.scale) + np.asarray(fmap.offset)
    if fmap.kind == "polynomial_moments":
        x = as_vector(x_origin, dim=fmap.dim_in)
        return np.concatenate([x**q for q in range(1, fmap.degree + 1)])
    if fmap.kind == "stratified":
        scheme = fmap.scheme
        out = np.zeros(scheme.n_strata, dtype=np.float64)
        out[scheme.stratum_index(x_origin)] = 1.0
        return out
    if fmap.kind == "pocock_simon":
        ks = fmap.scheme.check_levels(x_origin)
        return _pocock_simon_vector(fmap.scheme, ks, fmap._offsets)
    if fmap.kind == "hu_hu":
        scheme = fmap.scheme
        ks = scheme.check_levels(x_origin)
        head = np.array([math.sqrt(fmap.overall_weight)])
        margins = _pocock_simon_vector(scheme, ks, fmap._offsets)
        strata = np.zeros(scheme.n_strata, dtype=np.float64)
        strata[scheme.stratum_index(ks)] = math.sqrt(fmap.stratum_weight)
        return np.concatenate([head, margins, strata])
    raise InvalidInput(f"unknown feature map kind {fmap.kind!r}")


@dataclass
class MarginReport:
    """Per-margin imbalances of an assignment history.

    ``weighted[t][k-1]`` holds sum(arm_i - rho) over units whose covariate t
    sits at level k.  ``integer`` holds the classical treated-minus-control
    count, reported only under equal allocation (rho = 1/2) where the two
    conventions order states identically.
    """

    weighted: List[np.ndarray]
    integer: Optional[List[np.ndarray]]


def margin_imbalances(
    level_rows: Sequence[Sequence[int]],
    arms: Sequence[int],
    scheme: DiscreteScheme,
    rho: float,
) -> MarginReport:
    if len(level_rows) != len(arms):
        raise InvalidInput("level_rows and arms must have equal length")
    weighted = [np.zeros(cap, dtype=np.float64) for cap in scheme.levels]
    classical = [np.zeros(cap, dtype=np.int64) for cap in scheme.levels]
    for levels, arm in zip(level_rows, arms):
        if arm not in (0, 1):
            raise InvalidInput(f"arm must be 0 or 1, got {arm}")
        ks = scheme.check_levels(levels)
        for t, k in enumerate(ks):
            weighted[t][k - 1] += arm - rho
            classical[t][k - 1] += 1 if arm == 1 else -1
    return MarginReport(
        weighted=weighted,
        integer=classical if rho == 0.5 else None,
    )

"""Primitive types shared by the allocation engine and the simulation lab.

The running imbalance after n assignments is

    sum_{i<=n} (arm_i - rho) * x_i

where x_i is the mapped covariate vector of unit i and rho is the targeted
treatment fraction.  Everything downstream (policies, diagnostics, the live
service) reads and writes this state through the helpers here, so the update
rule lives in exactly one place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from .errors import InvalidInput

_MASK64 = (1 << 64) - 1


def as_vector(values: Union[Sequence[float], np.ndarray], dim: Optional[int] = None) -> np.ndarray:
    """Validate and coerce a covariate vector to a float64 array.

    Rejects non-finite entries and, when ``dim`` is given, any length
    mismatch.  Returns a fresh 1-d array; callers may mutate it freely.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidInput(f"covariate vector must be 1-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidInput("covariate vector must have at least one coordinate")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("covariate vector has non-finite entries")
    if dim is not None and arr.size != dim:
        raise InvalidInput(f"covariate vector has length {arr.size}, expected {dim}")
    return arr.copy()


@dataclass(frozen=True)
class AllocationRatio:
    """Targeted treatment fraction, strictly inside (0, 1).

    ``numerator``/``denominator`` are kept when the ratio was given exactly
    (e.g. the string ``"2/3"``).  The discrete minimization policy uses the
    exact pair to do its margin bookkeeping on an integer lattice, so ties
    are hit exactly instead of being lost to rounding.
    """

    value: float
    numerator: Optional[int] = None
    denominator: Optional[int] = None

    def __post_init__(self):
        if not (0.0 < self.value < 1.0):
            raise InvalidInput(f"allocation ratio must lie strictly in (0, 1), got {self.value}")
        if (self.numerator is None) != (self.denominator is None):
            raise InvalidInput("numerator and denominator must be given together")

    @classmethod
    def parse(cls, raw: Union[str, float, int, Sequence[int], "AllocationRatio"]) -> "AllocationRatio":
        """Accepts a float, a string like ``"2/3"``, or an integer pair."""
        if isinstance(raw, AllocationRatio):
            return raw
        if isinstance(raw, str):
            frac = Fraction(raw.strip())
            return cls(float(frac), frac.numerator, frac.denominator)
        if isinstance(raw, (list, tuple)):
            if len(raw) != 2:
                raise InvalidInput(f"ratio pair must have two entries, got {raw!r}")
            num, den = int(raw[0]), int(raw[1])
            if den <= 0:
                raise InvalidInput("ratio denominator must be positive")
            return cls(num / den, num, den)
        if isinstance(raw, (int, float)):
            return cls(float(raw))
        raise InvalidInput(f"cannot parse allocation ratio from {raw!r}")

    @property
    def exact(self) -> Optional[Fraction]:
        if self.numerator is None:
            return None
        return Fraction(self.numerator, self.denominator)


@dataclass(frozen=True)
class Assignment:
    """Outcome of one randomized assignment.

    ``arm`` is 1 for treatment, 0 for control.  The uniform draw is retained
    so a logged trial can be replayed bit-for-bit.
    """

    arm: int
    prob_used: float
    uniform_draw: float


@dataclass
class ImbalanceState:
    """Running weighted imbalance plus enrollment counters."""

    lam: np.ndarray
    n: int = 0
    n_treat: int = 0

    @classmethod
    def zero(cls, dim: int) -> "ImbalanceState":
        return cls(lam=np.zeros(dim, dtype=np.float64))

    def copy(self) -> "ImbalanceState":
        return ImbalanceState(lam=self.lam.copy(), n=self.n, n_treat=self.n_treat)


def imbalance_update(state: ImbalanceState, arm: int, x: np.ndarray, rho: float) -> ImbalanceState:
    """Fold one assignment into the running imbalance.

    Returns a new state; the input is not mutated.  ``x`` must match the
    dimension of the existing imbalance vector.
    """
    if arm not in (0, 1):
        raise InvalidInput(f"arm must be 0 or 1, got {arm}")
    if x.shape != state.lam.shape:
        raise InvalidInput(f"covariate dimension {x.shape} does not match state {state.lam.shape}")
    return ImbalanceState(
        lam=state.lam + (arm - rho) * x,
        n=state.n + 1,
        n_treat=state.n_treat + arm,
    )


@dataclass
class RngStream:
    """Counter-based random stream addressed by (base_seed, stream_index).

    Streams with distinct indices under one base seed are statistically
    independent, and a given pair always reproduces the same sequence, on
    any machine and in any interleaving with other streams.  That is what
    makes replication-parallel simulation schedule-independent.
    """

    base_seed: int
    stream_index: int = 0
    _gen: Optional[np.random.Generator] = field(default=None, repr=False, compare=False)

    def generator(self) -> np.random.Generator:
        if self._gen is None:
            key = np.array(
                [self.base_seed & _MASK64, self.stream_index & _MASK64], dtype=np.uint64
            )
            self._gen = np.random.Generator(np.random.Philox(key=key))
        return self._gen

    def uniform(self) -> float:
        """One draw from U[0, 1)."""
        return float(self.generator().random())

    def skip(self, count: int) -> None:
        """Discard ``count`` uniform draws (used when resuming a logged trial)."""
        if count < 0:
            raise InvalidInput("skip count must be nonnegative")
        if count:
            self.generator().random(count)


def draw_assignment(prob: float, rng: RngStream) -> Assignment:
    """Draw one arm: treatment exactly when the uniform falls below ``prob``."""
    if not (isinstance(prob, (int, float)) and math.isfinite(prob)):
        raise InvalidInput(f"allocation probability must be a finite number, got {prob!r}")
    if not (0.0 <= prob <= 1.0):
        raise InvalidInput(f"allocation probability must lie in [0, 1], got {prob}")
    u = rng.uniform()
    return Assignment(arm=1 if u < prob else 0, prob_used=float(prob), uniform_draw=u)

"""Sequential trial state machine.

One enrollment step, in this exact order:

    1. map the unit's raw covariates
    2. compute the allocation probability from the state as of BEFORE
       this unit (warm-up units get plain rho)
    3. draw the arm with one uniform
    4. fold the unit into the imbalance, the margin table, and the
       running parameter estimate

The parameter estimate reads only covariates, never the drawn arm, so two
trials fed the same covariate sequence carry identical parameter
trajectories no matter how their coins land.  Step 2 before step 4 is the
invariant everything else leans on; resist any refactor that reorders them.

Events are serialized one JSON object per line with fixed field names
(unit_index, x_origin, x, prob, u, arm, lambda, ts) and carry the uniform
draw, so a log replays bit-for-bit and any edit to a logged probability or
imbalance is detected.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from .core import (
    AllocationRatio,
    Assignment,
    ImbalanceState,
    RngStream,
    draw_assignment,
)
from .errors import CorruptLog, InvalidInput
from .feature_maps import DiscreteScheme, FeatureMap
from .policies import (
    FeasibleConfig,
    MinimizationConfig,
    ParameterMatrix,
    cr_prob,
    feasible_prob,
    ps_discrete_prob,
    rmm_prob,
    update_parameter,
)

# Margin lattices with denominators beyond this fall back to float cells.
MAX_EXACT_DENOMINATOR = 1_000_000


@dataclass(frozen=True)
class AllocationEvent:
    """One enrollment, as recorded in the append-only trial log."""

    unit_index: int
    x_origin: tuple
    x: tuple
    prob: float
    u: float
    arm: int
    lam: tuple
    ts: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "unit_index": self.unit_index,
                "x_origin": list(self.x_origin),
                "x": list(self.x),
                "prob": self.prob,
                "u": self.u,
                "arm": self.arm,
                "lambda": list(self.lam),
                "ts": self.ts,
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "AllocationEvent":
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptLog(f"unparseable event line: {exc}") from exc
        missing = {"unit_index", "x_origin", "x", "prob", "u", "arm", "lambda", "ts"} - set(raw)
        if missing:
            raise CorruptLog(f"event missing fields {sorted(missing)}")
        return cls(
            unit_index=int(raw["unit_index"]),
            x_origin=tuple(raw["x_origin"]),
            x=tuple(raw["x"]),
            prob=float(raw["prob"]),
            u=float(raw["u"]),
            arm=int(raw["arm"]),
            lam=tuple(raw["lambda"]),
            ts=float(raw["ts"]),
        )


class Policy:
    """Interface each allocation rule implements for the engine."""

    kind: str = "?"
    warmup_threshold: int = 0

    def prob(self, trial: "TrialState", x: np.ndarray, x_origin: Sequence[float]) -> float:
        raise NotImplementedError


class CompletePolicy(Policy):
    kind = "complete"

    def prob(self, trial, x, x_origin):
        return cr_prob(trial.rho.value)


class MinimizationPolicy(Policy):
    """Continuous imbalance minimization with a hard-tilted coin."""

    kind = "minimization"

    def __init__(self, cfg: MinimizationConfig, warmup_threshold: int = 1):
        self.cfg = cfg
        self.warmup_threshold = warmup_threshold

    def prob(self, trial, x, x_origin):
        return rmm_prob(trial.imbalance.lam, x, trial.rho.value, self.cfg.rho1)


class DiscreteMinimizationPolicy(Policy):
    """Margin-count minimization for categorical covariates."""

    kind = "pocock_simon"

    def __init__(self, cfg: MinimizationConfig, scheme: DiscreteScheme, warmup_threshold: int = 1):
        if cfg.weights is None:
            raise InvalidInput("discrete minimization requires per-covariate weights")
        if len(cfg.weights) != scheme.n_covariates:
            raise InvalidInput("one weight per discrete covariate is required")
        self.cfg = cfg
        self.scheme = scheme
        self.warmup_threshold = warmup_threshold

    def own_cell_indices(self, x_origin) -> np.ndarray:
        ks = self.scheme.check_levels(x_origin)
        offsets = self.scheme.margin_cell_offsets()
        return np.array([offsets[t] + (k - 1) for t, k in enumerate(ks)], dtype=np.int64)

    def prob(self, trial, x, x_origin):
        cells = self.own_cell_indices(x_origin)
        return ps_discrete_prob(
            trial.margin_cells[cells],
            self.cfg,
            trial.rho.value,
            up=trial.margin_up,
            down=trial.margin_down,
        )


class ShiftFreePolicy(Policy):
    """Bounded adjustment rule; parameter either learned online or fixed."""

    kind = "shift_free"

    def __init__(
        self,
        cfg: FeasibleConfig,
        theta_mode: str = "running_mean",
        fixed_theta: Optional[ParameterMatrix] = None,
    ):
        if theta_mode not in ("running_mean", "fixed"):
            raise InvalidInput("theta mode must be 'running_mean' or 'fixed'")
        if theta_mode == "fixed" and fixed_theta is None:
            raise InvalidInput("fixed theta mode requires a parameter matrix")
        self.cfg = cfg
        self.theta_mode = theta_mode
        self.fixed_theta = fixed_theta
        self.warmup_threshold = cfg.warmup_threshold

    def current_theta(self, trial: "TrialState") -> ParameterMatrix:
        return self.fixed_theta if self.theta_mode == "fixed" else trial.theta

    def prob(self, trial, x, x_origin):
        return feasible_prob(self.current_theta(trial), trial.imbalance.lam, x, trial.rho.value, self.cfg)


@dataclass
class TrialState:
    """Everything a live trial carries between enrollments."""

    rho: AllocationRatio
    fmap: FeatureMap
    policy: Policy
    rng: RngStream
    imbalance: ImbalanceState
    theta: Optional[ParameterMatrix] = None
    margin_cells: Optional[np.ndarray] = None
    margin_up: float = 0.0
    margin_down: float = 0.0
    margin_denominator: Optional[int] = None
    events: List[AllocationEvent] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.imbalance.n

    def in_warmup(self) -> bool:
        return self.imbalance.n < self.policy.warmup_threshold


def new_trial(
    rho: Union[AllocationRatio, str, float],
    fmap: FeatureMap,
    policy: Policy,
    base_seed: int,
    stream_index: int = 0,
) -> TrialState:
    ratio = AllocationRatio.parse(rho)
    _validate_policy(ratio, fmap, policy)
    state = TrialState(
        rho=ratio,
        fmap=fmap,
        policy=policy,
        rng=RngStream(base_seed=base_seed, stream_index=stream_index),
        imbalance=ImbalanceState.zero(fmap.dim_out),
    )
    if isinstance(policy, ShiftFreePolicy) and policy.theta_mode == "running_mean":
        state.theta = ParameterMatrix.zero(fmap.dim_out)
    if isinstance(policy, DiscreteMinimizationPolicy):
        _init_margin_lattice(state, policy)
    return state


def _validate_policy(ratio: AllocationRatio, fmap: FeatureMap, policy: Policy) -> None:
    if isinstance(policy, (MinimizationPolicy, DiscreteMinimizationPolicy)):
        policy.cfg.check_against(ratio.value)
    if isinstance(policy, ShiftFreePolicy):
        policy.cfg.check_against(ratio.value)
        if policy.theta_mode == "fixed" and policy.fixed_theta.dim != fmap.dim_out:
            raise InvalidInput(
                f"fixed parameter matrix is {policy.fixed_theta.dim}-dimensional, "
                f"feature map yields {fmap.dim_out}"
            )


def _init_margin_lattice(state: TrialState, policy: DiscreteMinimizationPolicy) -> None:
    n_cells = policy.scheme.n_margin_cells
    exact = state.rho.exact
    if exact is not None and exact.denominator <= MAX_EXACT_DENOMINATOR:
        # Cells hold denominator-scaled sums of (arm - rho): +den-num on a
        # treated unit, -num on a control.  Candidate potentials use the
        # same increments, so tie detection is exact integer arithmetic.
        state.margin_cells = np.zeros(n_cells, dtype=np.int64)
        state.margin_denominator = exact.denominator
        state.margin_up = float(exact.denominator - exact.numerator)
        state.margin_down = float(exact.numerator)
    else:
        state.margin_cells = np.zeros(n_cells, dtype=np.float64)
        state.margin_denominator = None
        state.margin_up = 1.0 - state.rho.value
        state.margin_down = state.rho.value


def _compute_prob(trial: TrialState, x: np.ndarray, x_origin) -> float:
    if trial.in_warmup():
        return trial.rho.value
    return trial.policy.prob(trial, x, x_origin)


def _apply_updates(trial: TrialState, x: np.ndarray, x_origin, arm: int) -> None:
    from .core import imbalance_update

    n_before = trial.imbalance.n
    trial.imbalance = imbalance_update(trial.imbalance, arm, x, trial.rho.value)
    if isinstance(trial.policy, DiscreteMinimizationPolicy):
        cells = trial.policy.own_cell_indices(x_origin)
        if trial.margin_denominator is not None:
            den = trial.margin_denominator
            num = trial.rho.numerator
            trial.margin_cells[cells] += (den - num) if arm == 1 else -num
        else:
            trial.margin_cells[cells] += arm - trial.rho.value
    if trial.theta is not None:
        trial.theta = update_parameter(
            trial.theta, x, n_before, getattr(trial.policy, "cfg").alpha_kind
        )


def enroll(trial: TrialState, x_origin: Sequence[float], ts: Optional[float] = None) -> AllocationEvent:
    """Allocate one unit and append the event to the trial's in-memory log."""
    x = trial.fmap.apply(x_origin)
    prob = _compute_prob(trial, x, x_origin)
    assignment = draw_assignment(prob, trial.rng)
    _apply_updates(trial, x, x_origin, assignment.arm)
    event = AllocationEvent(
        unit_index=trial.imbalance.n,
        x_origin=tuple(float(v) for v in x_origin),
        x=tuple(float(v) for v in x),
        prob=assignment.prob_used,
        u=assignment.uniform_draw,
        arm=assignment.arm,
        lam=tuple(float(v) for v in trial.imbalance.lam),
        ts=time.time() if ts is None else float(ts),
    )
    trial.events.append(event)
    return event


def whatif(trial: TrialState, x_origin: Sequence[float]) -> dict:
    """Preview an enrollment without consuming randomness or mutating state."""
    x = trial.fmap.apply(x_origin)
    prob = _compute_prob(trial, x, x_origin)
    lam = trial.imbalance.lam
    rho = trial.rho.value
    return {
        "prob_treatment": prob,
        "lambda_if_treat": (lam + (1.0 - rho) * x).tolist(),
        "lambda_if_control": (lam - rho * x).tolist(),
    }


def replay(
    events: Sequence[Union[AllocationEvent, str]],
    rho: Union[AllocationRatio, str, float],
    fmap: FeatureMap,
    policy: Policy,
    base_seed: int = 0,
    stream_index: int = 0,
    strict: bool = True,
) -> TrialState:
    """Rebuild a trial from its log, verifying every recorded step.

    Uses each event's logged uniform draw, so arms come out identical.  In
    strict mode any divergence between a recomputed probability, arm, or
    imbalance and the logged one raises CorruptLog, as does a gap in unit
    numbering.
    """
    trial = new_trial(rho, fmap, policy, base_seed=base_seed, stream_index=stream_index)
    consumed = 0
    for raw in events:
        ev = AllocationEvent.from_json(raw) if isinstance(raw, str) else raw
        expected_index = trial.imbalance.n + 1
        if ev.unit_index != expected_index:
            raise CorruptLog(f"event has unit_index {ev.unit_index}, expected {expected_index}")
        x = trial.fmap.apply(ev.x_origin)
        prob = _compute_prob(trial, x, ev.x_origin)
        if strict and prob != ev.prob:
            raise CorruptLog(
                f"unit {ev.unit_index}: recomputed probability {prob!r} "
                f"differs from logged {ev.prob!r}"
            )
        arm = 1 if ev.u < prob else 0
        if strict and arm != ev.arm:
            raise CorruptLog(f"unit {ev.unit_index}: logged arm {ev.arm} inconsistent with draw")
        _apply_updates(trial, x, ev.x_origin, arm)
        if strict and tuple(float(v) for v in trial.imbalance.lam) != tuple(ev.lam):
            raise CorruptLog(f"unit {ev.unit_index}: recomputed imbalance differs from logged")
        trial.events.append(ev)
        consumed += 1
    # One uniform was spent per enrollment; realign the stream so a resumed
    # trial continues exactly where an uninterrupted one would be.
    trial.rng.skip(consumed)
    return trial


def snapshot(trial: TrialState) -> dict:
    """Read-only summary of a trial's current state."""
    out = {
        "n": trial.imbalance.n,
        "n_treat": trial.imbalance.n_treat,
        "n_control": trial.imbalance.n - trial.imbalance.n_treat,
        "rho": trial.rho.value,
        "lambda": trial.imbalance.lam.tolist(),
        "policy": trial.policy.kind,
        "warmup_remaining": max(0, trial.policy.warmup_threshold - trial.imbalance.n),
    }
    if trial.margin_cells is not None:
        scheme = trial.policy.scheme
        offsets = scheme.margin_cell_offsets()
        den = trial.margin_denominator
        flat = trial.margin_cells / den if den is not None else trial.margin_cells
        out["margins"] = [
            [float(v) for v in flat[offsets[t] : offsets[t] + cap]]
            for t, cap in enumerate(scheme.levels)
        ]
    if isinstance(trial.policy, ShiftFreePolicy):
        theta = trial.policy.current_theta(trial)
        from .policies import epsilon_of_theta

        out["theta"] = {
            "columns": [theta.column(i).tolist() for i in range(theta.dim)],
            "epsilon": epsilon_of_theta(theta),
        }
    return out

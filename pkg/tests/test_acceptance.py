"""Acceptance gate: one test per pinned criterion, reference values frozen.

The full tier replays each benchmark with R=10,000 replications.  Setting
CARLAB_SMOKE=1 switches to R=2,000 with every numeric tolerance widened by
1.5x (interval half-widths and ratio margins scale; significance margins
scale the same way).  Reference numbers are hard-coded on purpose: they are
the contract, not something recomputed.
"""

import json
import os

import numpy as np
import pytest

from carlab.config import parse_experiment_config
from carlab.core import RngStream
from carlab.engine import enroll, new_trial, replay
from carlab.feature_maps import FeatureMap
from carlab.policies import (
    FeasibleConfig,
    ParameterMatrix,
    beta,
    epsilon_of_theta,
    feasible_prob,
)
from carlab.engine import ShiftFreePolicy
from carlab.simlab import (
    analytic_oracle_parameter,
    drift_check,
    drift_model_minimization,
    drift_model_pocock_simon,
    drift_model_shift_free,
    make_generator,
    normality_check,
    rho_tilde_estimate,
    run_experiment,
)
from carlab.simlab.generators import CategoricalGenerator

SMOKE = os.environ.get("CARLAB_SMOKE", "") not in ("", "0")
R = 2_000 if SMOKE else 10_000
TOL = 1.5 if SMOKE else 1.0

RHO = 2.0 / 3.0

# pinned reference table: continuous benchmark
COMPLETE_SD_REF = {200: 9.39, 3200: 37.65}
MINIMIZATION_SD800_REF = (0.99, 0.90, 1.18)
MINIMIZATION_SHIFT3200_REF = {"root_abs_sum": -134.47, "sum_of_squares": 243.73}
# pinned reference table: discrete benchmark, stratum order (1,1)..(2,3)
SQUARE_MEANS_1600_REF = (0.73, -1.41, 0.70, -0.72, 1.42, -0.70)
ABS_MEAN_3200_STRATUM_1_2_REF = -4.29

STRATA = (
    "stratum_1_1",
    "stratum_1_2",
    "stratum_1_3",
    "stratum_2_1",
    "stratum_2_2",
    "stratum_2_3",
)


def _bundled(name):
    from importlib import resources

    text = resources.files("carlab.configs").joinpath(f"{name}.json").read_text("utf-8")
    return json.loads(text)


@pytest.fixture(scope="module")
def continuous_result():
    config = parse_experiment_config(_bundled("continuous_benchmark"))
    return run_experiment(config, reps_override=R)


@pytest.fixture(scope="module")
def discrete_result():
    config = parse_experiment_config(_bundled("discrete_benchmark"))
    return run_experiment(config, reps_override=R)


def within(value, reference, rel):
    return abs(value - reference) <= abs(reference) * rel


def test_complete_randomization_spread_scales_with_sqrt_n(continuous_result):
    res = continuous_result
    sd200 = res.mean_sd("complete", 200, "X1")[1]
    sd3200 = res.mean_sd("complete", 3200, "X1")[1]
    assert within(sd200, COMPLETE_SD_REF[200], 0.05 * TOL), (sd200, COMPLETE_SD_REF[200])
    assert within(sd3200, COMPLETE_SD_REF[3200], 0.05 * TOL), (sd3200, COMPLETE_SD_REF[3200])
    ratio = sd3200 / sd200
    assert 4.0 - 0.2 * TOL <= ratio <= 4.0 + 0.2 * TOL, ratio


def test_minimization_keeps_coordinate_spreads_bounded(continuous_result):
    res = continuous_result
    for stat, ref in zip(("X1", "X2", "X3"), MINIMIZATION_SD800_REF):
        sd = res.mean_sd("minimization", 800, stat)[1]
        assert within(sd, ref, 0.15 * TOL), (stat, sd, ref)
    for stat in ("X1", "X2", "X3"):
        sd400 = res.mean_sd("minimization", 400, stat)[1]
        sd3200 = res.mean_sd("minimization", 3200, stat)[1]
        assert sd3200 <= (1.0 + 0.3 * TOL) * sd400, (stat, sd400, sd3200)


def test_minimization_shifts_unmodeled_covariates_linearly(continuous_result):
    res = continuous_result
    for stat, ref in MINIMIZATION_SHIFT3200_REF.items():
        mean3200 = res.mean_sd("minimization", 3200, stat)[0]
        assert within(mean3200, ref, 0.10 * TOL), (stat, mean3200, ref)
        mean1600 = res.mean_sd("minimization", 1600, stat)[0]
        growth = mean3200 / mean1600
        assert 2.0 - 0.2 * TOL <= growth <= 2.0 + 0.2 * TOL, (stat, growth)


def test_bounded_adaptive_rule_is_shift_free(continuous_result):
    res = continuous_result
    for n in res.sizes:
        for stat in ("root_abs_sum", "sum_of_squares"):
            mean, sd = res.mean_sd("bounded_adaptive", n, stat)
            margin = 3.0 * TOL * sd / np.sqrt(R)
            assert abs(mean) < margin, (n, stat, mean, margin)
    for stat in ("X1", "X2", "X3"):
        sd800 = res.mean_sd("bounded_adaptive", 800, stat)[1]
        sd3200 = res.mean_sd("bounded_adaptive", 3200, stat)[1]
        assert sd3200 <= (1.0 + 0.25 * TOL) * sd800, (stat, sd800, sd3200)


def test_oracle_parameter_matches_adaptive_estimation(continuous_result):
    res = continuous_result
    for n in (800, 3200):
        for stat in ("X1", "X2", "X3"):
            sd_adaptive = res.mean_sd("bounded_adaptive", n, stat)[1]
            sd_oracle = res.mean_sd("bounded_oracle", n, stat)[1]
            assert within(sd_oracle, sd_adaptive, 0.06 * TOL), (n, stat, sd_oracle, sd_adaptive)


def test_discrete_minimization_shifts_stratum_sums(discrete_result):
    res = discrete_result
    for stat, ref in zip(STRATA, SQUARE_MEANS_1600_REF):
        mean = res.mean_sd("margins_square", 1600, stat)[0]
        assert np.sign(mean) == np.sign(ref), (stat, mean, ref)
        assert within(mean, ref, 0.30 * TOL), (stat, mean, ref)
    mean_abs = res.mean_sd("margins_abs", 3200, "stratum_1_2")[0]
    assert within(mean_abs, ABS_MEAN_3200_STRATUM_1_2_REF, 0.15 * TOL), mean_abs


def test_drift_strictly_negative_far_from_origin():
    directions = 100 if SMOKE else 128
    mc_draws = 20_000 if SMOKE else 100_000
    gen = make_generator("coupled_normal_exponential")
    theta = analytic_oracle_parameter(gen, "sign")
    models = {
        "bounded_oracle_parameter": drift_model_shift_free(
            gen, RHO, p=0.2, theta=theta, alpha_kind="sign"
        ),
        "minimization": drift_model_minimization(gen, RHO, 0.9),
    }
    cat = CategoricalGenerator.make([2, 3], [1, 4, 1, 3, 1, 3])
    # the abs variant is excluded: it contracts a weighted abs potential
    # rather than the euclidean norm, and provably admits directions with
    # positive projected drift (see the escape-direction test in the
    # simulation suite)
    models["margins_square"] = drift_model_pocock_simon(
        cat, RHO, 0.99, weights=(1.0, 2.0), imb_kind="square"
    )
    for name, model in models.items():
        report = drift_check(
            model, radii=(50.0,), directions=directions, mc_draws=mc_draws, base_seed=7
        )
        entry = report["radii"][0]
        assert entry["negative"] is True, (name, entry)
        assert report["all_negative"] is True, name


def test_longrun_allocation_fraction_at_fixed_covariates():
    gen = make_generator("coupled_normal_exponential")
    theta = analytic_oracle_parameter(gen, "sign")
    bounded = drift_model_shift_free(gen, RHO, p=0.2, theta=theta, alpha_kind="sign")
    report = rho_tilde_estimate(
        bounded,
        probes=np.array([[1.0, 1.0, 1.0], [2.0, 0.0, 1.0], [0.0, -1.0, 3.0]]),
        chain_length=200_000,
        burn_in=10_000,
        base_seed=11,
    )
    for probe in report["probes"]:
        assert abs(probe["estimate"] - RHO) < 0.02 * TOL, probe

    minimization = drift_model_minimization(gen, RHO, 0.9)
    report = rho_tilde_estimate(
        minimization,
        probes=np.array([[5.0, 5.0, 5.0]]),
        chain_length=200_000,
        burn_in=10_000,
        base_seed=11,
    )
    probe = report["probes"][0]
    assert probe["estimate"] - RHO > 3.0 * probe["se"], probe


def test_allocation_function_properties():
    rng = RngStream(202, 0).generator()
    d = 3
    cfg = FeasibleConfig(p=0.2)

    # output always stays inside the adjustment band, and is exactly the
    # target ratio at zero imbalance
    for _ in range(200):
        theta = ParameterMatrix(columns=rng.normal(size=(d, d)))
        for _ in range(50):
            lam = rng.normal(size=d) * rng.choice([0.1, 1.0, 10.0, 1000.0])
            x = rng.normal(size=d)
            g = feasible_prob(theta, lam, x, RHO, cfg)
            assert RHO - 0.2 - 1e-12 <= g <= RHO + 0.2 + 1e-12
        assert feasible_prob(theta, np.zeros(d), rng.normal(size=d), RHO, cfg) == RHO

    # pointwise properties of the bounded response curve
    for _ in range(2_000):
        xi = rng.normal(size=d)
        lam = rng.normal(size=d) * rng.choice([0.5, 2.0, 20.0])
        eps = float(rng.uniform(0.0, 0.9))
        b = beta(xi, eps, lam)
        assert -1.0 <= b <= 1.0
        assert abs(b + beta(xi, eps, -lam)) < 1e-13          # antisymmetry in state
        assert abs(b + beta(-xi, eps, lam)) < 1e-13          # antisymmetry in direction
        c = float(rng.uniform(0.1, 30.0))
        assert abs(b - beta(c * xi, eps, lam)) < 1e-12       # direction scale invariance
        if float(xi @ lam) >= 0.0:
            assert b <= 0.0                                   # pushes against alignment

    # saturation: aligned enough and far enough out clips to exactly -1
    for _ in range(500):
        d_uni = float(rng.uniform(0.15, 0.85))
        eps = float(rng.uniform(d_uni, 0.999))
        xi = rng.normal(size=d)
        xi_hat = xi / np.linalg.norm(xi)
        w = rng.normal(size=d)
        w -= (w @ xi_hat) * xi_hat
        w_norm = np.linalg.norm(w)
        if w_norm < 1e-9:
            continue
        cos = float(rng.uniform(eps + 1e-6, 1.0))
        direction = cos * xi_hat + np.sqrt(max(0.0, 1.0 - cos * cos)) * (w / w_norm)
        radius = max(1.0, 1.0 / d_uni**2) * float(rng.uniform(1.0, 3.0))
        assert beta(xi, eps, radius * direction) == -1.0

    # parameter-quality score: identity case and singular case
    for dim in range(1, 7):
        eps = epsilon_of_theta(ParameterMatrix(columns=np.eye(dim)))
        assert eps == pytest.approx(1.0 / np.sqrt(dim + 1.0), abs=1e-14)
    collinear = np.array([[1.0, 2.0, 0.3], [2.0, 4.0, -1.0], [-1.0, -2.0, 0.8]]).T
    assert epsilon_of_theta(ParameterMatrix(columns=collinear)) == 0.0

    # cone coverage: every direction is seen by some column at strength eps
    n_dirs = 10_000
    for _ in range(100):
        cols = rng.normal(size=(d, d))
        theta = ParameterMatrix(columns=cols)
        eps = epsilon_of_theta(theta)
        if eps == 0.0:
            continue
        dirs = rng.normal(size=(n_dirs, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        unit_cols = cols / np.linalg.norm(cols, axis=0, keepdims=True)
        cosines = np.abs(dirs @ unit_cols)
        assert (cosines.max(axis=1) > eps).all()

    # replaying a logged trial reproduces the imbalance vector exactly and
    # re-serializes to the identical byte sequence
    def fresh_policy():
        return ShiftFreePolicy(FeasibleConfig(p=0.2, warmup_threshold=10))

    trial = new_trial(rho="2/3", fmap=FeatureMap.identity(3), policy=fresh_policy(), base_seed=5)
    data_rng = RngStream(303, 0).generator()
    for t in range(200):
        enroll(trial, data_rng.normal(size=3).tolist(), ts=float(t))
    lines = [ev.to_json() for ev in trial.events]
    rebuilt = replay(lines, rho="2/3", fmap=FeatureMap.identity(3), policy=fresh_policy(), base_seed=5)
    assert np.array_equal(rebuilt.imbalance.lam, trial.imbalance.lam)
    assert [ev.to_json() for ev in rebuilt.events] == lines


def test_imbalance_statistic_is_asymptotically_normal(continuous_result):
    values = continuous_result.values("bounded_adaptive", 3200, "sum_of_squares")
    standardized = (values - values.mean()) / values.std(ddof=1)
    report = normality_check(standardized, skew_limit=0.15 * TOL, kurt_limit=0.3 * TOL)
    assert report["passes"], report

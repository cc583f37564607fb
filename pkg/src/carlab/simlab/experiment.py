"""Replicated allocation experiments and their summaries.

run_experiment drives every configured policy over a shared set of
replication streams (common random numbers, so policy contrasts are tighter
than independent runs would give) and records, at each checkpoint size, the
per-replication imbalance summaries.  Replications are processed in fixed
blocks; the CAR_THREADS environment variable (or the ``threads`` argument)
fans blocks out across worker processes without changing any result byte.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import (
    ExperimentConfig,
    PolicyDef,
    parse_experiment_config,
    policy_def_to_doc,
    resolve_fixed_theta,
)
from ..errors import InvalidInput
from .generators import CategoricalGenerator, CsvResample
from .kernels import (
    generate_categorical_block,
    generate_continuous_block,
    run_categorical_block,
    run_continuous_block,
)

BLOCK_REPS = 1000  # fixed partition: results never depend on worker count

CSV_HEADER = "policy,n,stat,mean,sd"


def _fmt(v: float) -> str:
    return f"{v:.8g}"


def generator_to_doc(generator) -> dict:
    if generator.kind == "coupled_normal_exponential":
        return {"kind": generator.kind}
    if generator.kind == "gaussian_mixture":
        return {
            "kind": generator.kind,
            "weights": generator.weights.tolist(),
            "means": generator.means.tolist(),
            "scales": generator.scales.tolist(),
        }
    if generator.kind in ("csv_resample", "fixed_sequence"):
        doc = {"kind": generator.kind, "rows": generator.rows.tolist()}
        if generator.extra_columns:
            doc["extra_columns"] = {k: v.tolist() for k, v in generator.extra_columns.items()}
        return doc
    if generator.kind == "categorical_joint":
        return {
            "kind": generator.kind,
            "levels": list(generator.levels),
            "stratum_weights": generator.stratum_probs.tolist(),
        }
    raise InvalidInput(f"cannot serialize generator kind {generator.kind!r}")


def config_to_doc(config: ExperimentConfig) -> dict:
    """Canonical JSON-ready form of a parsed config (parse of it round-trips)."""
    rho = config.rho
    rho_doc = f"{rho.numerator}/{rho.denominator}" if rho.exact is not None else rho.value
    extras = []
    for e in config.extras:
        doc = {"name": e.name, "kind": e.kind}
        if e.kind == "indicator_norm_ge":
            doc["threshold"] = e.threshold
        if e.kind == "noisy_last_square":
            doc["noise_sd"] = e.noise_sd
        if e.kind == "csv_column":
            doc["column"] = e.column
            if e.power != 1.0:
                doc["power"] = e.power
        extras.append(doc)
    out = {
        "base_seed": config.base_seed,
        "replications": config.replications,
        "sizes": list(config.sizes),
        "rho": rho_doc,
        "generator": generator_to_doc(config.generator),
        "policies": [policy_def_to_doc(p) for p in config.policies],
    }
    if extras:
        out["additional_covariates"] = extras
    if config.coordinate_names is not None:
        out["coordinate_names"] = list(config.coordinate_names)
    return out


def _resolve_policies(config: ExperimentConfig) -> ExperimentConfig:
    """Materialize analytic / Monte Carlo fixed thetas into explicit values
    so worker processes never re-derive them."""
    resolved = []
    for pdef in config.policies:
        if pdef.kind == "shift_free" and pdef.theta_mode == "fixed" and pdef.theta_source != "values":
            theta = resolve_fixed_theta(pdef, config.generator, config.base_seed)
            values = tuple(tuple(float(v) for v in theta.columns[:, i]) for i in range(theta.dim))
            pdef = replace(pdef, theta_source="values", theta_values=values)
        resolved.append(pdef)
    return replace(config, policies=tuple(resolved))


def _run_block(doc: dict, rep_start: int, rep_stop: int) -> Dict[str, Dict[int, dict]]:
    """Advance replications [rep_start, rep_stop) under every policy.

    Top-level so process pools can pickle it.  All randomness comes from the
    per-replication streams, so blocks are independent of scheduling.
    """
    config = parse_experiment_config(doc)
    sizes = config.sizes
    horizon = sizes[-1]
    rho = config.rho
    results: Dict[str, Dict[int, dict]] = {}
    if config.categorical:
        gen = config.generator
        strata, u = generate_categorical_block(
            gen, config.base_seed, rep_start, rep_stop, horizon
        )
        exact = None
        if rho.exact is not None and rho.denominator <= 1_000_000:
            exact = (rho.numerator, rho.denominator)
        for pdef in config.policies:
            results[pdef.name] = run_categorical_block(
                pdef.kind,
                rho.value,
                exact,
                pdef.warmup,
                sizes,
                gen.levels,
                strata,
                u,
                rho1=pdef.rho1,
                imb_kind=pdef.imb_kind,
                weights=pdef.weights,
            )
        return results

    x, u, extras = generate_continuous_block(
        config.generator, config.extras, config.base_seed, rep_start, rep_stop, horizon
    )
    for pdef in config.policies:
        theta_fixed = None
        if pdef.kind == "shift_free" and pdef.theta_mode == "fixed":
            theta_fixed = resolve_fixed_theta(pdef, config.generator, config.base_seed).columns
        results[pdef.name] = run_continuous_block(
            pdef.kind,
            rho.value,
            pdef.warmup,
            sizes,
            x,
            u,
            extras,
            rho1=pdef.rho1,
            p=pdef.p,
            alpha_kind=pdef.alpha_kind,
            epsilon_mode=pdef.epsilon_mode,
            theta_mode=pdef.theta_mode,
            theta_fixed=theta_fixed,
        )
    return results


@dataclass
class ExperimentResult:
    """Per-replication summaries for every (policy, checkpoint) pair."""

    config_doc: dict
    policy_names: Tuple[str, ...]
    sizes: Tuple[int, ...]
    stat_names: Tuple[str, ...]
    # samples[(policy, n)][stat] is a length-R vector across replications
    samples: Dict[Tuple[str, int], Dict[str, np.ndarray]]
    n_treat: Dict[Tuple[str, int], np.ndarray]

    def values(self, policy: str, n: int, stat: str) -> np.ndarray:
        key = (policy, int(n))
        if key not in self.samples:
            raise KeyError(f"no records for policy {policy!r} at size {n}")
        stats = self.samples[key]
        if stat not in stats:
            raise KeyError(f"unknown statistic {stat!r}; have {sorted(stats)}")
        return stats[stat]

    def mean_sd(self, policy: str, n: int, stat: str) -> Tuple[float, float]:
        v = self.values(policy, n, stat)
        return float(v.mean()), float(v.std(ddof=1))

    def rows(self) -> List[Tuple[str, int, str, float, float]]:
        out = []
        for policy in self.policy_names:
            for n in self.sizes:
                for stat in self.stat_names:
                    m, s = self.mean_sd(policy, n, stat)
                    out.append((policy, n, stat, m, s))
        return out

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for policy, n, stat, m, s in self.rows():
            lines.append(f"{policy},{n},{stat},{_fmt(m)},{_fmt(s)}")
        return "\n".join(lines) + "\n"


def _stat_names(config: ExperimentConfig) -> Tuple[str, ...]:
    if config.categorical:
        rows = config.generator.strata_as_levels()
        return tuple("stratum_" + "_".join(str(k) for k in row) for row in rows)
    if config.coordinate_names is not None:
        names = list(config.coordinate_names)
    else:
        names = [f"X{i + 1}" for i in range(config.generator.dim)]
    names.extend(e.name for e in config.extras)
    return tuple(names)


def run_experiment(
    config: ExperimentConfig,
    reps_override: Optional[int] = None,
    threads: Optional[int] = None,
) -> ExperimentResult:
    """Run every policy of a config over shared replication streams.

    ``reps_override`` substitutes the replication count; ``threads`` defaults
    to the CAR_THREADS environment variable (1 when unset).  The replication
    partition is fixed, so results are identical for any worker count.
    """
    if reps_override is not None:
        if reps_override < 1:
            raise InvalidInput("replication override must be positive")
        config = replace(config, replications=int(reps_override))
    if config.replications < 2:
        raise InvalidInput("need at least 2 replications to report spreads")
    config = _resolve_policies(config)
    doc = config_to_doc(config)
    if threads is None:
        threads = int(os.environ.get("CAR_THREADS", "1") or "1")
    threads = max(1, threads)

    n_reps = config.replications
    blocks = [(r0, min(r0 + BLOCK_REPS, n_reps)) for r0 in range(0, n_reps, BLOCK_REPS)]
    if threads == 1 or len(blocks) == 1:
        block_results = [_run_block(doc, r0, r1) for r0, r1 in blocks]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, len(blocks))) as pool:
            futures = [pool.submit(_run_block, doc, r0, r1) for r0, r1 in blocks]
            block_results = [f.result() for f in futures]

    stat_names = _stat_names(config)
    samples: Dict[Tuple[str, int], Dict[str, np.ndarray]] = {}
    n_treat: Dict[Tuple[str, int], np.ndarray] = {}
    for pdef in config.policies:
        for n in config.sizes:
            per_stat: Dict[str, List[np.ndarray]] = {s: [] for s in stat_names}
            treat_parts: List[np.ndarray] = []
            for block in block_results:
                rec = block[pdef.name][n]
                treat_parts.append(rec["n_treat"])
                if config.categorical:
                    strata = rec["strata"]
                    for j, s in enumerate(stat_names):
                        per_stat[s].append(strata[:, j])
                else:
                    lam = rec["lambda"]
                    dim = lam.shape[1]
                    for j in range(dim):
                        per_stat[stat_names[j]].append(lam[:, j])
                    for e in config.extras:
                        per_stat[e.name].append(rec["extras"][e.name])
            samples[(pdef.name, n)] = {s: np.concatenate(parts) for s, parts in per_stat.items()}
            n_treat[(pdef.name, n)] = np.concatenate(treat_parts)
    return ExperimentResult(
        config_doc=doc,
        policy_names=tuple(p.name for p in config.policies),
        sizes=config.sizes,
        stat_names=stat_names,
        samples=samples,
        n_treat=n_treat,
    )


def run_discrete_shift_study(
    config: ExperimentConfig,
    reps_override: Optional[int] = None,
    threads: Optional[int] = None,
) -> ExperimentResult:
    """Per-stratum imbalance study over a categorical covariate source.

    Same machinery as run_experiment, but insists the config is the
    categorical kind so every reported statistic is a stratum sum.
    """
    if not config.categorical:
        raise InvalidInput("discrete shift study needs a categorical generator")
    if not any(p.kind == "pocock_simon" for p in config.policies):
        raise InvalidInput("discrete shift study needs at least one pocock_simon policy")
    return run_experiment(config, reps_override=reps_override, threads=threads)


def shift_statistic(values: np.ndarray) -> dict:
    """Mean with its Monte Carlo standard error, for directional-shift calls."""
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    if n < 2:
        raise InvalidInput("need at least 2 replications")
    sd = float(v.std(ddof=1))
    return {"mean": float(v.mean()), "sd": sd, "se": sd / float(np.sqrt(n)), "n": int(n)}


def normality_check(
    values: np.ndarray, skew_limit: float = 0.15, kurt_limit: float = 0.3
) -> dict:
    """Sample skewness and excess kurtosis against symmetric limits."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 8:
        raise InvalidInput("need at least 8 values for moment checks")
    centered = v - v.mean()
    m2 = float((centered**2).mean())
    if m2 == 0.0:
        raise InvalidInput("degenerate sample: zero variance")
    skew = float((centered**3).mean() / m2**1.5)
    kurt = float((centered**4).mean() / m2**2 - 3.0)
    return {
        "skew": skew,
        "excess_kurtosis": kurt,
        "skew_limit": float(skew_limit),
        "kurt_limit": float(kurt_limit),
        "passes": bool(abs(skew) < skew_limit and abs(kurt) < kurt_limit),
    }

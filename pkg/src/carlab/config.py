"""Parsing and validation of JSON configuration documents.

Two document shapes live here: experiment configs (replicated studies for
the lab) and trial configs (one live sequential trial for the allocation
commands and the HTTP service).  Validation failures raise ConfigError with
a dotted path to the offending key so command-line users and API clients
get told exactly which field to fix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .core import AllocationRatio, RngStream
from .engine import (
    CompletePolicy,
    DiscreteMinimizationPolicy,
    MinimizationPolicy,
    Policy,
    ShiftFreePolicy,
)
from .errors import ConfigError, InvalidInput
from .feature_maps import DiscreteScheme, FeatureMap
from .policies import (
    ALPHA_KINDS,
    FeasibleConfig,
    IMBALANCE_KINDS,
    MinimizationConfig,
    ParameterMatrix,
    oracle_parameter,
)

# simlab modules import this one, so their names are pulled in lazily
# inside the functions that need them.

POLICY_KINDS = ("complete", "minimization", "pocock_simon", "shift_free")
DEFAULT_WARMUP = {"complete": 0, "minimization": 1, "pocock_simon": 1, "shift_free": 10}

# Stream indices reserved for non-replication draws; replication indices
# stay in [0, 2^40).
THETA_STREAM = 1 << 41


def _need(doc: dict, key: str, path: str):
    if key not in doc:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required key")
    return doc[key]


def _as_int(value, path: str, minimum: Optional[int] = None) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be at least {minimum}, got {value}")
    return value


def parse_ratio(value, path: str) -> AllocationRatio:
    try:
        return AllocationRatio.parse(value)
    except (InvalidInput, ValueError, ZeroDivisionError) as exc:
        raise ConfigError(path, str(exc)) from exc


@dataclass(frozen=True)
class PolicyDef:
    """Parsed, validated description of one allocation rule."""

    name: str
    kind: str
    warmup: int
    # minimization family
    rho1: Optional[float] = None
    imb_kind: str = "square"
    weights: Optional[Tuple[float, ...]] = None
    # shift-free family
    p: Optional[float] = None
    alpha_kind: str = "sign"
    epsilon_mode: str = "computed"
    theta_mode: str = "running_mean"
    theta_source: Optional[str] = None
    theta_values: Optional[Tuple[Tuple[float, ...], ...]] = None
    theta_mc_draws: int = 1_000_000


_POLICY_KEYS = {
    "complete": {"name", "kind", "warmup"},
    "minimization": {"name", "kind", "warmup", "rho1", "imbalance"},
    "pocock_simon": {"name", "kind", "warmup", "rho1", "imbalance", "weights"},
    "shift_free": {"name", "kind", "warmup", "p", "alpha", "epsilon", "theta"},
}


def parse_policy(doc: dict, path: str, rho: AllocationRatio) -> PolicyDef:
    if not isinstance(doc, dict):
        raise ConfigError(path, "policy must be an object")
    kind = _need(doc, "kind", path)
    if kind not in POLICY_KINDS:
        raise ConfigError(f"{path}.kind", f"must be one of {POLICY_KINDS}, got {kind!r}")
    unknown = sorted(set(doc) - _POLICY_KEYS[kind])
    if unknown:
        raise ConfigError(
            f"{path}.{unknown[0]}",
            f"unknown key for kind {kind!r}; allowed: {sorted(_POLICY_KEYS[kind])}",
        )
    name = doc.get("name", kind)
    warmup = _as_int(doc.get("warmup", DEFAULT_WARMUP[kind]), f"{path}.warmup", minimum=0)

    if kind == "complete":
        return PolicyDef(name=name, kind=kind, warmup=warmup)

    if kind in ("minimization", "pocock_simon"):
        rho1 = _need(doc, "rho1", path)
        if not isinstance(rho1, (int, float)) or not (0 < rho1 < 1):
            raise ConfigError(f"{path}.rho1", f"must lie in (0, 1), got {rho1!r}")
        if rho1 <= max(rho.value, 1 - rho.value):
            raise ConfigError(
                f"{path}.rho1",
                f"must exceed max(rho, 1-rho) = {max(rho.value, 1 - rho.value):.6g}",
            )
        imb_kind = doc.get("imbalance", "square")
        if imb_kind not in IMBALANCE_KINDS:
            raise ConfigError(f"{path}.imbalance", f"must be one of {IMBALANCE_KINDS}")
        weights = None
        if kind == "pocock_simon":
            w = _need(doc, "weights", path)
            if not isinstance(w, (list, tuple)) or not w:
                raise ConfigError(f"{path}.weights", "must be a nonempty list")
            if any((not isinstance(v, (int, float))) or v < 0 for v in w):
                raise ConfigError(f"{path}.weights", "entries must be nonnegative numbers")
            weights = tuple(float(v) for v in w)
        elif imb_kind != "square":
            raise ConfigError(
                f"{path}.imbalance", "continuous minimization supports the square kind only"
            )
        return PolicyDef(
            name=name, kind=kind, warmup=warmup, rho1=float(rho1), imb_kind=imb_kind,
            weights=weights,
        )

    # shift_free
    p = _need(doc, "p", path)
    cap = min(rho.value, 1 - rho.value)
    if not isinstance(p, (int, float)) or not (0 < p < cap):
        raise ConfigError(
            f"{path}.p",
            f"adjustment budget violates 0 < p < min(rho, 1-rho) = {cap:.6g}: got {p!r}",
        )
    alpha_kind = doc.get("alpha", "sign")
    if alpha_kind not in ALPHA_KINDS:
        raise ConfigError(f"{path}.alpha", f"must be one of {ALPHA_KINDS}")
    epsilon_mode = doc.get("epsilon", "computed")
    if epsilon_mode not in ("computed", "fixed_zero"):
        raise ConfigError(f"{path}.epsilon", "must be 'computed' or 'fixed_zero'")
    theta_doc = doc.get("theta", {"mode": "running_mean"})
    if not isinstance(theta_doc, dict):
        raise ConfigError(f"{path}.theta", "must be an object")
    unknown = sorted(set(theta_doc) - {"mode", "source", "columns", "mc_draws"})
    if unknown:
        raise ConfigError(f"{path}.theta.{unknown[0]}", "unknown key")
    theta_mode = theta_doc.get("mode", "running_mean")
    if theta_mode not in ("running_mean", "fixed"):
        raise ConfigError(f"{path}.theta.mode", "must be 'running_mean' or 'fixed'")
    theta_source = None
    theta_values = None
    theta_mc = _as_int(theta_doc.get("mc_draws", 1_000_000), f"{path}.theta.mc_draws", minimum=10_000)
    if theta_mode == "fixed":
        theta_source = theta_doc.get("source", "values" if "columns" in theta_doc else None)
        if theta_source not in ("analytic", "mc", "values"):
            raise ConfigError(
                f"{path}.theta.source", "fixed theta needs source 'analytic', 'mc', or 'values'"
            )
        if theta_source == "values":
            cols = _need(theta_doc, "columns", f"{path}.theta")
            try:
                arr = np.array(cols, dtype=np.float64)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}.theta.columns", f"not a numeric matrix: {exc}")
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                raise ConfigError(f"{path}.theta.columns", "must be a square matrix (list of columns)")
            theta_values = tuple(tuple(float(v) for v in col) for col in cols)
    return PolicyDef(
        name=name, kind=kind, warmup=warmup, p=float(p), alpha_kind=alpha_kind,
        epsilon_mode=epsilon_mode, theta_mode=theta_mode, theta_source=theta_source,
        theta_values=theta_values, theta_mc_draws=theta_mc,
    )


def resolve_fixed_theta(
    pdef: PolicyDef, generator, base_seed: int
) -> Optional[ParameterMatrix]:
    """Materialize the fixed parameter matrix for a shift-free policy.

    Analytic sources use the generator's closed form when one exists; the
    Monte Carlo source uses a reserved stream so the estimate does not
    depend on how replications are scheduled.
    """
    from .simlab.generators import analytic_oracle_parameter

    if pdef.kind != "shift_free" or pdef.theta_mode != "fixed":
        return None
    if pdef.theta_source == "values":
        return ParameterMatrix(columns=np.array(pdef.theta_values, dtype=np.float64).T)
    if pdef.theta_source == "analytic":
        theta = analytic_oracle_parameter(generator, pdef.alpha_kind)
        if theta is None:
            raise ConfigError(
                "policy.theta.source",
                f"no closed form for generator {generator.kind!r} with alpha {pdef.alpha_kind!r}",
            )
        return theta
    if pdef.theta_source == "mc":
        gen = RngStream(base_seed, THETA_STREAM).generator()
        theta, _ = oracle_parameter(
            lambda n, g: generator.sample(n, g), pdef.alpha_kind, pdef.theta_mc_draws, gen
        )
        return theta
    raise ConfigError("policy.theta.source", f"unsupported source {pdef.theta_source!r}")


def policy_def_to_doc(pdef: PolicyDef) -> dict:
    """Inverse of parse_policy, used to ship resolved configs to workers."""
    doc = {"name": pdef.name, "kind": pdef.kind, "warmup": pdef.warmup}
    if pdef.kind in ("minimization", "pocock_simon"):
        doc["rho1"] = pdef.rho1
        doc["imbalance"] = pdef.imb_kind
        if pdef.weights is not None:
            doc["weights"] = list(pdef.weights)
    if pdef.kind == "shift_free":
        doc["p"] = pdef.p
        doc["alpha"] = pdef.alpha_kind
        doc["epsilon"] = pdef.epsilon_mode
        theta = {"mode": pdef.theta_mode}
        if pdef.theta_mode == "fixed":
            theta["source"] = pdef.theta_source
            if pdef.theta_values is not None:
                theta["columns"] = [list(c) for c in pdef.theta_values]
            theta["mc_draws"] = pdef.theta_mc_draws
        doc["theta"] = theta
    return doc


def parse_generator(doc: dict, path: str):
    from .simlab.generators import make_generator

    if not isinstance(doc, dict):
        raise ConfigError(path, "generator must be an object")
    kind = _need(doc, "kind", path)
    try:
        if kind == "coupled_normal_exponential":
            return make_generator(kind)
        if kind == "gaussian_mixture":
            return make_generator(
                kind,
                weights=_need(doc, "weights", path),
                means=_need(doc, "means", path),
                scales=_need(doc, "scales", path),
            )
        if kind in ("csv_resample", "fixed_sequence"):
            rows = np.array(_need(doc, "rows", path), dtype=np.float64)
            return make_generator(kind, rows=rows, extra_columns=doc.get("extra_columns"))
        if kind == "categorical_joint":
            return make_generator(
                kind,
                levels=_need(doc, "levels", path),
                stratum_weights=_need(doc, "stratum_weights", path),
            )
    except InvalidInput as exc:
        raise ConfigError(path, str(exc)) from exc
    raise ConfigError(f"{path}.kind", f"unknown generator kind {kind!r}")


def parse_additional_covariates(docs, path: str) -> Tuple["AdditionalCovariate", ...]:
    from .simlab.generators import AdditionalCovariate

    if docs is None:
        return ()
    if not isinstance(docs, list):
        raise ConfigError(path, "must be a list")
    out = []
    seen = set()
    for i, doc in enumerate(docs):
        here = f"{path}[{i}]"
        if not isinstance(doc, dict):
            raise ConfigError(here, "must be an object")
        kind = _need(doc, "kind", here)
        name = doc.get("name", kind)
        if name in seen:
            raise ConfigError(f"{here}.name", f"duplicate name {name!r}")
        seen.add(name)
        kwargs = {}
        for key, cast in (("threshold", float), ("noise_sd", float), ("power", float)):
            if key in doc:
                kwargs[key] = cast(doc[key])
        if "column" in doc:
            kwargs["column"] = doc["column"]
        try:
            out.append(AdditionalCovariate(name=name, kind=kind, **kwargs))
        except InvalidInput as exc:
            raise ConfigError(here, str(exc)) from exc
    return tuple(out)


@dataclass
class ExperimentConfig:
    """A replicated study: generator, policies, sizes, tracked quantities."""

    base_seed: int
    replications: int
    sizes: Tuple[int, ...]
    rho: AllocationRatio
    generator: object
    policies: Tuple[PolicyDef, ...]
    extras: tuple
    coordinate_names: Optional[Tuple[str, ...]] = None
    doc: dict = field(repr=False, default_factory=dict)

    @property
    def categorical(self) -> bool:
        from .simlab.generators import CategoricalGenerator

        return isinstance(self.generator, CategoricalGenerator)


def parse_experiment_config(doc: dict) -> ExperimentConfig:
    from .simlab.generators import CategoricalGenerator

    if not isinstance(doc, dict):
        raise ConfigError("", "experiment config must be a JSON object")
    base_seed = _as_int(_need(doc, "base_seed", ""), "base_seed")
    replications = _as_int(_need(doc, "replications", ""), "replications", minimum=1)
    sizes_raw = _need(doc, "sizes", "")
    if not isinstance(sizes_raw, list) or not sizes_raw:
        raise ConfigError("sizes", "must be a nonempty list of checkpoint sizes")
    sizes = []
    for i, s in enumerate(sizes_raw):
        sizes.append(_as_int(s, f"sizes[{i}]", minimum=1))
    if sorted(set(sizes)) != sizes:
        raise ConfigError("sizes", "must be strictly increasing")
    rho = parse_ratio(_need(doc, "rho", ""), "rho")
    generator = parse_generator(_need(doc, "generator", ""), "generator")
    pol_docs = _need(doc, "policies", "")
    if not isinstance(pol_docs, list) or not pol_docs:
        raise ConfigError("policies", "must be a nonempty list")
    policies = tuple(
        parse_policy(p, f"policies[{i}]", rho) for i, p in enumerate(pol_docs)
    )
    names = [p.name for p in policies]
    if len(set(names)) != len(names):
        raise ConfigError("policies", "policy names must be unique")
    extras = parse_additional_covariates(doc.get("additional_covariates"), "additional_covariates")

    categorical = isinstance(generator, CategoricalGenerator)
    for i, p in enumerate(policies):
        if categorical and p.kind in ("minimization", "shift_free"):
            raise ConfigError(
                f"policies[{i}].kind",
                f"{p.kind!r} needs a continuous generator, got {generator.kind!r}",
            )
        if not categorical and p.kind == "pocock_simon":
            raise ConfigError(
                f"policies[{i}].kind",
                f"'pocock_simon' needs a categorical generator, got {generator.kind!r}",
            )
        if categorical and p.kind == "pocock_simon":
            if len(p.weights) != len(generator.levels):
                raise ConfigError(
                    f"policies[{i}].weights",
                    f"need one weight per discrete covariate ({len(generator.levels)})",
                )
    if categorical and extras:
        raise ConfigError(
            "additional_covariates", "not supported with a categorical generator"
        )
    coord_names = None
    if "coordinate_names" in doc:
        raw_names = doc["coordinate_names"]
        if categorical:
            raise ConfigError("coordinate_names", "not supported with a categorical generator")
        if (
            not isinstance(raw_names, list)
            or len(raw_names) != generator.dim
            or any(not isinstance(nm, str) or not nm for nm in raw_names)
        ):
            raise ConfigError(
                "coordinate_names",
                f"must be {generator.dim} nonempty strings (one per covariate coordinate)",
            )
        taken = {e.name for e in extras}
        for nm in raw_names:
            if nm in taken:
                raise ConfigError("coordinate_names", f"name {nm!r} collides")
            taken.add(nm)
        coord_names = tuple(raw_names)
    return ExperimentConfig(
        base_seed=base_seed,
        replications=replications,
        sizes=tuple(sizes),
        rho=rho,
        generator=generator,
        policies=policies,
        extras=extras,
        coordinate_names=coord_names,
        doc=doc,
    )


def parse_feature_map(doc: dict, path: str) -> FeatureMap:
    if not isinstance(doc, dict):
        raise ConfigError(path, "feature map must be an object")
    kind = _need(doc, "kind", path)
    try:
        if kind == "identity":
            return FeatureMap.identity(_as_int(_need(doc, "dim", path), f"{path}.dim", 1))
        if kind == "scaled_identity":
            return FeatureMap.scaled_identity(_need(doc, "scale", path), doc.get("offset"))
        if kind == "polynomial_moments":
            return FeatureMap.polynomial_moments(
                _as_int(_need(doc, "dim", path), f"{path}.dim", 1),
                _as_int(_need(doc, "degree", path), f"{path}.degree", 1),
            )
        scheme = DiscreteScheme.make(_need(doc, "levels", path), doc.get("weights"))
        if kind == "stratified":
            return FeatureMap.stratified(scheme)
        if kind == "pocock_simon":
            return FeatureMap.pocock_simon(scheme)
        if kind == "hu_hu":
            return FeatureMap.hu_hu(
                scheme,
                overall_weight=float(doc.get("overall_weight", 1.0)),
                stratum_weight=float(doc.get("stratum_weight", 1.0)),
            )
    except InvalidInput as exc:
        raise ConfigError(path, str(exc)) from exc
    raise ConfigError(f"{path}.kind", f"unknown feature map kind {kind!r}")


@dataclass
class TrialConfig:
    """One live sequential trial, as created by the CLI or the service."""

    name: Optional[str]
    seed: int
    rho: AllocationRatio
    fmap: FeatureMap
    policy_def: PolicyDef
    doc: dict = field(repr=False, default_factory=dict)

    def build_policy(self) -> Policy:
        pdef = self.policy_def
        if pdef.kind == "complete":
            pol = CompletePolicy()
            pol.warmup_threshold = pdef.warmup
            return pol
        if pdef.kind == "minimization":
            return MinimizationPolicy(
                MinimizationConfig(rho1=pdef.rho1, imb_kind="square"),
                warmup_threshold=pdef.warmup,
            )
        if pdef.kind == "pocock_simon":
            if self.fmap.scheme is None:
                raise ConfigError(
                    "feature_map.kind",
                    "a discrete feature map is required with the pocock_simon policy",
                )
            scheme = DiscreteScheme.make(self.fmap.scheme.levels, pdef.weights)
            return DiscreteMinimizationPolicy(
                MinimizationConfig(rho1=pdef.rho1, imb_kind=pdef.imb_kind, weights=pdef.weights),
                scheme,
                warmup_threshold=pdef.warmup,
            )
        # shift_free
        fixed = None
        if pdef.theta_mode == "fixed":
            if pdef.theta_source != "values":
                raise ConfigError(
                    "policy.theta.source", "live trials require explicit theta columns"
                )
            fixed = ParameterMatrix(columns=np.array(pdef.theta_values, dtype=np.float64).T)
        return ShiftFreePolicy(
            FeasibleConfig(
                p=pdef.p,
                alpha_kind=pdef.alpha_kind,
                epsilon_mode=pdef.epsilon_mode,
                warmup_threshold=pdef.warmup,
            ),
            theta_mode=pdef.theta_mode,
            fixed_theta=fixed,
        )


def parse_trial_config(doc: dict) -> TrialConfig:
    if not isinstance(doc, dict):
        raise ConfigError("", "trial config must be a JSON object")
    name = doc.get("name")
    if name is not None and (not isinstance(name, str) or not name.strip()):
        raise ConfigError("name", "must be a nonempty string when given")
    seed = _as_int(_need(doc, "seed", ""), "seed")
    rho = parse_ratio(_need(doc, "rho", ""), "rho")
    fmap = parse_feature_map(_need(doc, "feature_map", ""), "feature_map")
    pdef = parse_policy(_need(doc, "policy", ""), "policy", rho)
    cfg = TrialConfig(name=name, seed=seed, rho=rho, fmap=fmap, policy_def=pdef, doc=doc)
    # Build a throwaway trial to surface construction and compatibility
    # errors (dimension checks etc.) at parse time rather than first use.
    from .engine import new_trial

    try:
        new_trial(rho=rho, fmap=fmap, policy=cfg.build_policy(), base_seed=seed)
    except InvalidInput as exc:
        raise ConfigError("policy", str(exc)) from exc
    return cfg

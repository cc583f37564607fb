"""Command line front end: simulate, diagnose, redesign, allocate, serve.

Every subcommand reads JSON configs, writes machine-parsable output, and
exits 0 on success, 2 on a configuration problem, 1 on anything else.
Worker count for replicated runs comes from --threads or the CAR_THREADS
environment variable (default 1); results are identical either way.
"""

from __future__ import annotations

import json
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

import click
import numpy as np

from .config import (
    ExperimentConfig,
    parse_experiment_config,
    parse_trial_config,
    resolve_fixed_theta,
)
from .engine import enroll, new_trial, replay
from .errors import CarlabError, ConfigError, CorruptLog, InvalidInput
from .simlab import (
    drift_check,
    drift_model_complete,
    drift_model_minimization,
    drift_model_pocock_simon,
    drift_model_shift_free,
    normality_check,
    redesign_from_csv,
    rho_tilde_estimate,
    run_experiment,
)

EXIT_CONFIG = 2
EXIT_RUNTIME = 1


def _fail(code: str, message: str, exit_code: int) -> None:
    click.echo(json.dumps({"error": {"code": code, "message": message}}), err=True)
    sys.exit(exit_code)


def _load_doc(path: str) -> dict:
    # "bundled:NAME" resolves against the configs shipped inside the package
    if path.startswith("bundled:"):
        name = path[len("bundled:") :]
        ref = resources.files("carlab.configs").joinpath(f"{name}.json")
        try:
            text = ref.read_text(encoding="utf-8")
        except (FileNotFoundError, OSError):
            _fail("io", f"no bundled config named {name!r}", EXIT_RUNTIME)
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            _fail("io", f"cannot read {path}: {exc}", EXIT_RUNTIME)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        _fail("schema", f"{path} is not valid JSON: {exc}", EXIT_CONFIG)
    if not isinstance(doc, dict):
        _fail("schema", f"{path} must hold a JSON object", EXIT_CONFIG)
    return doc


def _write_text(out: Optional[str], text: str) -> None:
    if out is None:
        click.echo(text, nl=False)
        return
    try:
        Path(out).write_text(text, encoding="utf-8")
    except OSError as exc:
        _fail("io", f"cannot write {out}: {exc}", EXIT_RUNTIME)


@click.group()
def main() -> None:
    """Covariate-adaptive randomization: simulation lab and live allocation."""


@main.command()
@click.argument("config_path")
@click.option("--out", default=None, help="Write the CSV here instead of stdout.")
@click.option("--reps-override", type=int, default=None, help="Substitute replication count.")
@click.option("--seed", type=int, default=None, help="Override the config's base_seed.")
@click.option("--threads", type=int, default=None, help="Worker processes (default CAR_THREADS).")
def simulate(config_path, out, reps_override, seed, threads):
    """Run a replicated experiment config and emit the mean/SD table as CSV.

    CONFIG_PATH is a JSON file, or bundled:NAME for a packaged config
    (bundled:continuous_benchmark, bundled:discrete_benchmark).
    """
    doc = _load_doc(config_path)
    if seed is not None:
        doc["base_seed"] = seed
    try:
        config = parse_experiment_config(doc)
        result = run_experiment(config, reps_override=reps_override, threads=threads)
    except ConfigError as exc:
        _fail("config", str(exc), EXIT_CONFIG)
    except (InvalidInput, CarlabError) as exc:
        _fail("config", str(exc), EXIT_CONFIG)
    _write_text(out, result.to_csv())


def _drift_model_for(pdef, config: ExperimentConfig):
    """Imbalance-field model for one policy, or None when drift is undefined.

    Adaptive-parameter rules are scored at the parameter they converge to,
    resolved analytically when the generator has a closed form and by Monte
    Carlo otherwise.
    """
    gen = config.generator
    rho = config.rho.value
    if pdef.kind == "pocock_simon":
        return drift_model_pocock_simon(
            gen, rho, pdef.rho1, weights=pdef.weights, imb_kind=pdef.imb_kind
        )
    if config.categorical:
        return None
    if pdef.kind == "complete":
        return drift_model_complete(gen, rho)
    if pdef.kind == "minimization":
        return drift_model_minimization(gen, rho, pdef.rho1)
    if pdef.kind == "shift_free":
        if pdef.theta_mode == "fixed":
            theta = resolve_fixed_theta(pdef, gen, config.base_seed)
        else:
            from dataclasses import replace

            probe = replace(pdef, theta_mode="fixed", theta_source="analytic")
            try:
                theta = resolve_fixed_theta(probe, gen, config.base_seed)
            except ConfigError:
                probe = replace(probe, theta_source="mc")
                theta = resolve_fixed_theta(probe, gen, config.base_seed)
        return drift_model_shift_free(
            gen, rho, p=pdef.p, theta=theta,
            alpha_kind=pdef.alpha_kind, epsilon_mode=pdef.epsilon_mode,
        )
    return None


def _select_policies(config: ExperimentConfig, names):
    if not names:
        return list(config.policies)
    by_name = {p.name: p for p in config.policies}
    missing = [n for n in names if n not in by_name]
    if missing:
        _fail("config", f"no policy named {missing[0]!r} in config", EXIT_CONFIG)
    return [by_name[n] for n in names]


@main.command()
@click.argument("config_path")
@click.option(
    "--mode",
    type=click.Choice(["drift", "rhotilde", "normality"]),
    required=True,
    help="Which diagnostic to run.",
)
@click.option("--out", default=None, help="Write the JSON report here instead of stdout.")
@click.option("--policy", "policy_names", multiple=True, help="Restrict to these policy names.")
@click.option("--radius", "radii", multiple=True, type=float, help="drift: state radii to probe.")
@click.option("--directions", type=int, default=128, help="drift: sampled directions per radius.")
@click.option("--mc-draws", type=int, default=100_000, help="drift: covariate draws per direction.")
@click.option("--probe", "probes", multiple=True, help="rhotilde: covariate point 'v1,v2,...'.")
@click.option("--chain-length", type=int, default=200_000, help="rhotilde: chain steps.")
@click.option("--burn-in", type=int, default=10_000, help="rhotilde: discarded initial steps.")
@click.option("--stat", default=None, help="normality: statistic name (default: last one).")
@click.option("--size", type=int, default=None, help="normality: checkpoint (default: largest).")
@click.option("--reps-override", type=int, default=None, help="normality: replication count.")
@click.option("--threads", type=int, default=None, help="Worker processes (default CAR_THREADS).")
@click.option("--seed", type=int, default=None, help="Override the config's base_seed.")
def diagnose(
    config_path, mode, out, policy_names, radii, directions, mc_draws,
    probes, chain_length, burn_in, stat, size, reps_override, threads, seed,
):
    """Run a balance diagnostic over an experiment config, report JSON.

    Modes: drift (worst-case directional drift of the imbalance process per
    radius), rhotilde (long-run allocation fraction at fixed covariate
    probes), normality (moment checks of a replicated imbalance statistic).
    """
    doc = _load_doc(config_path)
    if seed is not None:
        doc["base_seed"] = seed
    try:
        config = parse_experiment_config(doc)
    except ConfigError as exc:
        _fail("config", str(exc), EXIT_CONFIG)
    selected = _select_policies(config, policy_names)
    report = {"mode": mode, "rho": config.rho.value, "policies": []}
    try:
        if mode == "drift":
            radii = tuple(radii) if radii else (10.0, 20.0, 50.0)
            for pdef in selected:
                model = _drift_model_for(pdef, config)
                if model is None:
                    report["policies"].append(
                        {"name": pdef.name, "kind": pdef.kind, "skipped": "no drift model"}
                    )
                    continue
                rep = drift_check(
                    model, radii=radii, directions=directions,
                    mc_draws=mc_draws, base_seed=config.base_seed,
                )
                report["policies"].append({"name": pdef.name, "kind": pdef.kind, "report": rep})
        elif mode == "rhotilde":
            if config.categorical:
                _fail("config", "rhotilde diagnostics need a continuous generator", EXIT_CONFIG)
            if probes:
                try:
                    probe_arr = np.array(
                        [[float(v) for v in s.split(",")] for s in probes], dtype=np.float64
                    )
                except ValueError as exc:
                    _fail("config", f"bad --probe value: {exc}", EXIT_CONFIG)
            else:
                probe_arr = np.ones((1, config.generator.dim))
            for pdef in selected:
                model = _drift_model_for(pdef, config)
                if model is None:
                    report["policies"].append(
                        {"name": pdef.name, "kind": pdef.kind, "skipped": "no chain model"}
                    )
                    continue
                rep = rho_tilde_estimate(
                    model, probe_arr, chain_length=chain_length,
                    burn_in=burn_in, base_seed=config.base_seed,
                )
                report["policies"].append({"name": pdef.name, "kind": pdef.kind, "report": rep})
        else:  # normality
            result = run_experiment(config, reps_override=reps_override, threads=threads)
            stat_name = stat if stat is not None else result.stat_names[-1]
            n = size if size is not None else max(result.sizes)
            report["stat"] = stat_name
            report["n"] = n
            for pdef in selected:
                values = result.values(pdef.name, n, stat_name)
                rep = normality_check(values)
                rep["mean"] = float(values.mean())
                rep["sd"] = float(values.std(ddof=1))
                report["policies"].append({"name": pdef.name, "kind": pdef.kind, "report": rep})
    except ConfigError as exc:
        _fail("config", str(exc), EXIT_CONFIG)
    except (KeyError, InvalidInput) as exc:
        _fail("config", str(exc), EXIT_CONFIG)
    _write_text(out, json.dumps(report, indent=2) + "\n")


@main.command()
@click.argument("config_path")
@click.option("--csv", "csv_override", default=None, help="Cohort CSV (overrides csv_path).")
@click.option("--out", default=None, help="Write the CSV here instead of stdout.")
@click.option("--reps-override", type=int, default=None, help="Substitute replication count.")
@click.option("--seed", type=int, default=None, help="Override the config's base_seed.")
@click.option("--threads", type=int, default=None, help="Worker processes (default CAR_THREADS).")
def redesign(config_path, csv_override, out, reps_override, seed, threads):
    """Re-randomize an enrolled cohort from a CSV file many times.

    CONFIG_PATH is a JSON file with csv_path, columns, policies and options
    (see bundled:redesign_template for the shape).
    """
    doc = _load_doc(config_path)
    csv_path = csv_override or doc.get("csv_path")
    if not csv_path:
        _fail("config", "csv_path: required (or pass --csv)", EXIT_CONFIG)
    known = {
        "csv_path", "columns", "policies", "rho", "sizes", "replications",
        "base_seed", "scaling", "mode", "additional_covariates",
    }
    unknown = sorted(set(doc) - known)
    if unknown:
        _fail("config", f"{unknown[0]}: unknown key; allowed: {sorted(known)}", EXIT_CONFIG)
    try:
        result = redesign_from_csv(
            csv_path,
            columns=doc.get("columns", []),
            policies=doc.get("policies", []),
            rho=doc.get("rho", "2/3"),
            sizes=doc.get("sizes"),
            replications=(
                reps_override if reps_override is not None else doc.get("replications", 1000)
            ),
            base_seed=(seed if seed is not None else doc.get("base_seed", 0)),
            scaling=doc.get("scaling", "unit_variance"),
            mode=doc.get("mode", "fixed_order"),
            additional_covariates=doc.get("additional_covariates"),
            threads=threads,
        )
    except ConfigError as exc:
        _fail("config", str(exc), EXIT_CONFIG)
    except InvalidInput as exc:
        _fail("config", str(exc), EXIT_CONFIG)
    _write_text(out, result.to_csv())


@main.command()
@click.argument("trial_config_path")
@click.option("--log", "log_path", default=None, help="Append-only event log (resumed if present).")
def allocate(trial_config_path, log_path):
    """Interactive allocation loop over stdin.

    Each input line is one unit's raw covariates, either a JSON array or
    {"x": [...]}.  Each output line is the JSON allocation record
    {unit_index, arm, prob, lambda}.  A malformed line yields an error line
    and the loop continues with state unchanged.  With --log, every event is
    appended (and fsynced) before it is printed, and an existing log is
    replayed first so a restarted trial continues exactly where it stopped.
    """
    doc = _load_doc(trial_config_path)
    try:
        cfg = parse_trial_config(doc)
        trial = new_trial(
            rho=cfg.rho, fmap=cfg.fmap, policy=cfg.build_policy(), base_seed=cfg.seed
        )
    except ConfigError as exc:
        _fail("config", str(exc), EXIT_CONFIG)

    log_file = None
    if log_path is not None:
        path = Path(log_path)
        if path.exists() and path.stat().st_size > 0:
            try:
                lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
                trial = replay(
                    lines, rho=cfg.rho, fmap=cfg.fmap, policy=cfg.build_policy(),
                    base_seed=cfg.seed,
                )
            except CorruptLog as exc:
                _fail("corrupt_log", f"{log_path}: {exc}", EXIT_RUNTIME)
            except OSError as exc:
                _fail("io", f"cannot read {log_path}: {exc}", EXIT_RUNTIME)
        try:
            log_file = open(path, "a", encoding="utf-8")
        except OSError as exc:
            _fail("io", f"cannot open {log_path} for append: {exc}", EXIT_RUNTIME)

    try:
        for line in sys.stdin:
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                click.echo(json.dumps({"error": {"code": "schema", "message": str(exc)}}))
                continue
            if isinstance(record, dict):
                record = record.get("x")
            if not isinstance(record, list):
                click.echo(
                    json.dumps(
                        {"error": {"code": "schema", "message": "expected [x1,...] or {'x': [...]}"}}
                    )
                )
                continue
            try:
                event = enroll(trial, [float(v) for v in record])
            except (InvalidInput, TypeError, ValueError) as exc:
                click.echo(json.dumps({"error": {"code": "invalid", "message": str(exc)}}))
                continue
            if log_file is not None:
                log_file.write(event.to_json() + "\n")
                log_file.flush()
                os.fsync(log_file.fileno())
            click.echo(
                json.dumps(
                    {
                        "unit_index": event.unit_index,
                        "arm": event.arm,
                        "prob": event.prob,
                        "lambda": list(event.lam),
                    }
                )
            )
    finally:
        if log_file is not None:
            log_file.close()


@main.command()
@click.option("--host", default="127.0.0.1", help="Bind address.")
@click.option("--port", type=int, default=8000, help="Listen port.")
@click.option("--data-dir", default="./carlab_data", help="Trial event-log directory.")
def serve(host, port, data_dir):
    """Start the HTTP allocation service (persists trials under --data-dir)."""
    try:
        import uvicorn

        from .service import create_app

        app = create_app(data_dir)
    except CarlabError as exc:
        _fail("config", str(exc), EXIT_CONFIG)
    except OSError as exc:
        _fail("io", str(exc), EXIT_RUNTIME)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except (OSError, SystemExit) as exc:
        _fail("io", f"server failed: {exc}", EXIT_RUNTIME)


if __name__ == "__main__":
    main()

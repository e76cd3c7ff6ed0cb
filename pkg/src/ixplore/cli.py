"""Configuration loading, experiment subcommands, and result emission.

Config files are JSON documents validated key-by-key before any run;
unknown keys are rejected so typos fail loudly. Outputs are written to a
temp file and atomically renamed, so no result file is ever partially
written. CSV numbers use shortest round-trip formatting, which makes
byte-level determinism checks meaningful.

Exit codes: 0 success, 2 config error, 3 runtime error.
Seed precedence: --seed flag, then IXPLORE_SEED, then the config file.
"""

import argparse
import hashlib
import json
import os
import sys
import tempfile

import numpy as np

from .audit import audit_bic, compute_thresholds, estimate_primitives, _message_str
from .domain import AgentType, Instance
from .engine import (
    Explicit,
    ExperimentConfig,
    FlsPolicy,
    FpsPolicy,
    Homogeneous,
    IIDSampler,
    UcbPolicy,
    distinct_types,
    regret,
    run_replicates,
    validate_config,
)
from .errors import ConfigError, IxploreError, UndefinedThresholdError
from .policies import FixedSequence, NearUniform, RoundRobin
from .priors import (
    DiscretePrior,
    GaussianPrior,
    UniformBallPrior,
    UniformBoxPrior,
)
from .semantics import (
    ArgmaxDirect,
    FullReveal,
    HypercubeCover,
    Ranking,
    SignMap,
    VoronoiCover,
    build_voronoi_cover,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CSV_COLUMNS = [
    "replicate",
    "t",
    "stage",
    "type_id",
    "message",
    "arm",
    "reward",
    "expected_reward",
    "regret",
    "lambda_min",
    "lambda_diag",
]


# ---------------------------------------------------------------------------
# Schema helpers


def _check_keys(obj, path, required, optional=()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    allowed = set(required) | set(optional)
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path}: unknown key {key!r}")
    for key in required:
        if key not in obj:
            raise ConfigError(f"{path}: missing required key {key!r}")


def _parse_instance(raw) -> Instance:
    _check_keys(raw, "instance", ["d", "K", "C_U", "C_X", "s", "R", "T", "T0"], ["feedback"])
    try:
        return Instance(
            d=int(raw["d"]),
            K=int(raw["K"]),
            C_U=float(raw["C_U"]),
            C_X=float(raw["C_X"]),
            s=int(raw["s"]),
            R=float(raw["R"]),
            T=int(raw["T"]),
            T0=int(raw["T0"]),
            feedback=raw.get("feedback", "bandit"),
        )
    except ValueError as exc:
        raise ConfigError(f"instance: {exc}") from exc


def _parse_prior(raw):
    _check_keys(raw, "prior", ["kind"], ["models", "weights", "mean", "cov", "radius", "dim", "lo", "hi"])
    kind = raw["kind"]
    try:
        if kind == "discrete":
            return DiscretePrior(np.array(raw["models"], dtype=float), np.array(raw["weights"], dtype=float))
        if kind == "gaussian":
            return GaussianPrior(np.array(raw["mean"], dtype=float), np.array(raw["cov"], dtype=float))
        if kind == "uniform_ball":
            return UniformBallPrior(float(raw["radius"]), int(raw["dim"]))
        if kind == "uniform_box":
            return UniformBoxPrior(np.array(raw["lo"], dtype=float), np.array(raw["hi"], dtype=float))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"prior: {exc}") from exc
    raise ConfigError(f"prior: unknown kind {kind!r}")


def _parse_types(raw, inst: Instance):
    _check_keys(raw, "types", ["kind", "matrices"], ["regime", "weights", "sequence"])
    regime = raw.get("regime", "private")
    if regime not in ("private", "public"):
        raise ConfigError(f"types: unknown regime {regime!r}")
    matrices = raw["matrices"]
    if not matrices:
        raise ConfigError("types: matrices must be nonempty")
    built = tuple(
        AgentType(rows=np.array(m, dtype=float), public_id=(i if regime == "public" else 0))
        for i, m in enumerate(matrices)
    )
    kind = raw["kind"]
    if kind == "homogeneous":
        if len(built) != 1:
            raise ConfigError("types: homogeneous expects exactly one matrix")
        return Homogeneous(built[0])
    if kind == "iid":
        weights = raw.get("weights")
        if weights is None:
            weights = [1.0 / len(built)] * len(built)
        return IIDSampler(built, np.array(weights, dtype=float))
    if kind == "explicit":
        seq = raw.get("sequence")
        if seq is None:
            raise ConfigError("types: explicit needs a sequence of type indices")
        try:
            return Explicit(tuple(built[int(i)] for i in seq))
        except IndexError as exc:
            raise ConfigError("types: sequence index out of range") from exc
    raise ConfigError(f"types: unknown kind {kind!r}")


def _representatives(type_source):
    if isinstance(type_source, Homogeneous):
        types = (type_source.x0,)
    elif isinstance(type_source, IIDSampler):
        types = type_source.types
    else:
        types = type_source.sequence
    reps = {}
    for x in types:
        reps.setdefault(x.public_id, x)
    return tuple(reps[label] for label in sorted(reps))


def _parse_smap(raw, inst: Instance, prior, type_source):
    _check_keys(
        raw,
        "semantic_map",
        ["kind"],
        ["centers", "domain", "radius", "origin", "cell_radius", "grid_extents"],
    )
    kind = raw["kind"]
    if kind == "argmax":
        return ArgmaxDirect(representatives=_representatives(type_source))
    if kind == "ranking":
        fiber = prior.models if isinstance(prior, DiscretePrior) else None
        return Ranking(num_arms=inst.K, fiber_models=fiber)
    if kind == "voronoi":
        if "centers" in raw:
            return VoronoiCover(np.array(raw["centers"], dtype=float))
        if "domain" not in raw or "radius" not in raw:
            raise ConfigError("semantic_map: voronoi needs centers, or a domain plus radius")
        dom = raw["domain"]
        _check_keys(dom, "semantic_map.domain", ["kind"], ["lo", "hi", "radius", "dim"])
        if dom["kind"] == "box":
            domain = ("box", np.array(dom["lo"], dtype=float), np.array(dom["hi"], dtype=float))
        elif dom["kind"] == "ball":
            domain = ("ball", float(dom["radius"]), int(dom["dim"]))
        else:
            raise ConfigError(f"semantic_map.domain: unknown kind {dom['kind']!r}")
        return VoronoiCover(build_voronoi_cover(domain, float(raw["radius"])))
    if kind == "hypercube":
        for key in ("origin", "cell_radius", "grid_extents"):
            if key not in raw:
                raise ConfigError(f"semantic_map: hypercube needs {key!r}")
        return HypercubeCover(
            origin=np.array(raw["origin"], dtype=float),
            cell_radius=float(raw["cell_radius"]),
            grid_extents=tuple(int(n) for n in raw["grid_extents"]),
        )
    if kind == "sign":
        if inst.d != 1:
            raise ConfigError("semantic_map: sign map requires d = 1")
        return SignMap()
    if kind == "full_reveal":
        if not isinstance(prior, DiscretePrior):
            raise ConfigError("semantic_map: full_reveal needs a discrete prior")
        return FullReveal(models=prior.models)
    raise ConfigError(f"semantic_map: unknown kind {kind!r}")


def _parse_policy(raw):
    _check_keys(raw, "policy", ["kind"], ["rho"])
    kind = raw["kind"]
    if kind == "fps":
        return FpsPolicy()
    if kind == "fls":
        return FlsPolicy()
    if kind == "ucb":
        return UcbPolicy(rho=float(raw.get("rho", 0.0)))
    raise ConfigError(f"policy: unknown kind {kind!r}")


def _parse_warmup(raw):
    _check_keys(raw, "warmup", ["kind"], ["per_arm", "per_atom", "epsilon", "rounds", "arms"])
    kind = raw["kind"]
    try:
        if kind == "round_robin":
            return RoundRobin(
                per_arm=None if raw.get("per_arm") is None else int(raw["per_arm"]),
                per_atom=None if raw.get("per_atom") is None else int(raw["per_atom"]),
            )
        if kind == "near_uniform":
            return NearUniform(epsilon=float(raw["epsilon"]), rounds=int(raw["rounds"]))
        if kind == "fixed":
            return FixedSequence(arms=tuple(int(a) for a in raw["arms"]))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"warmup: {exc}") from exc
    raise ConfigError(f"warmup: unknown kind {kind!r}")


TOP_REQUIRED = ["instance", "prior", "semantic_map", "policy", "warmup", "types", "seed", "replicates"]
TOP_OPTIONAL = ["agent_model", "audit", "output"]
AUDIT_KEYS = [
    "round",
    "epsilon",
    "c_cal",
    "scenario",
    "replicates",
    "mode",
    "n_samples",
    "eps_grid",
    "alpha_margin",
    "rho",
    "gap_convention",
]


def load_config(path: str, overrides=(), seed_flag=None):
    """Parse, override, and validate a config file into runnable pieces."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    for item in overrides:
        raw = _apply_override(raw, item)
    _check_keys(raw, "config", TOP_REQUIRED, TOP_OPTIONAL)
    inst = _parse_instance(raw["instance"])
    prior = _parse_prior(raw["prior"])
    type_source = _parse_types(raw["types"], inst)
    smap = _parse_smap(raw["semantic_map"], inst, prior, type_source)
    policy = _parse_policy(raw["policy"])
    warmup = _parse_warmup(raw["warmup"])
    agent_model = raw.get("agent_model", "compliant")
    seed = int(raw["seed"])
    env_seed = os.environ.get("IXPLORE_SEED")
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"IXPLORE_SEED must be an integer, got {env_seed!r}") from exc
    if seed_flag is not None:
        seed = int(seed_flag)
    config = ExperimentConfig(
        instance=inst,
        prior=prior,
        smap=smap,
        policy=policy,
        warmup=warmup,
        type_source=type_source,
        agent_model=agent_model,
        seed=seed,
        replicates=int(raw["replicates"]),
    )
    try:
        validate_config(config)
    except IxploreError as exc:
        raise ConfigError(str(exc)) from exc
    audit_block = raw.get("audit")
    if audit_block is not None:
        _check_keys(audit_block, "audit", [], AUDIT_KEYS)
    output_block = raw.get("output", {})
    _check_keys(output_block, "output", [], ["dir", "formats"])
    digest = hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()[:16]
    return config, audit_block, output_block, digest


def _apply_override(raw, item: str):
    if "=" not in item:
        raise ConfigError(f"--set expects key.path=value, got {item!r}")
    key_path, value = item.split("=", 1)
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    node = raw
    parts = key_path.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = parsed
    return raw


# ---------------------------------------------------------------------------
# Output helpers


def _fmt(value) -> str:
    """Shortest round-trip decimal form, stable across runs and platforms."""
    return repr(float(value))


def atomic_write(path: str, data: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-ixplore-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _rounds_csv(logs, inst: Instance) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for log in logs:
        curves = regret(log)
        snap = {t: (lmin, ldiag) for t, lmin, ldiag in log.lambda_snapshots}
        for k, rec in enumerate(log.records):
            stage = "warmup" if rec.t <= inst.T0 else "main"
            lam = snap.get(rec.t)
            lines.append(
                ",".join(
                    [
                        str(log.replicate),
                        str(rec.t),
                        stage,
                        str(log.type_ids[k]),
                        "" if rec.message is None else _message_str(rec.message),
                        str(rec.arm),
                        _fmt(rec.reward),
                        _fmt(log.expected_rewards[k]),
                        _fmt(curves.per_round[k]),
                        "" if lam is None else _fmt(lam[0]),
                        "" if lam is None else _fmt(lam[1]),
                    ]
                )
            )
    return "\n".join(lines) + "\n"


def _summary_json(logs, config: ExperimentConfig, digest: str) -> dict:
    per_rep = []
    for log in logs:
        curves = regret(log)
        final_lambda = log.lambda_snapshots[-1] if log.lambda_snapshots else (0, 0.0, 0.0)
        per_rep.append(
            {
                "replicate": log.replicate,
                "total_reward": float(sum(r.reward for r in log.records)),
                "cumulative_regret": float(curves.cumulative[-1]) if len(curves.cumulative) else 0.0,
                "lambda_min_final": float(final_lambda[1]),
                "lambda_diag_final": float(final_lambda[2]),
                "compliant_rounds": int(log.compliance.sum()),
            }
        )
    mean_regret = float(np.mean([r["cumulative_regret"] for r in per_rep]))
    return {
        "schema": "ixplore.summary/1",
        "config_digest": digest,
        "seed": config.seed,
        "replicates": config.replicates,
        "T": config.instance.T,
        "T0": config.instance.T0,
        "policy": type(config.policy).__name__,
        "mean_cumulative_regret": mean_regret,
        "per_replicate": per_rep,
    }


def validate_summary_json(obj):
    for key in ("schema", "config_digest", "seed", "replicates", "T", "T0", "policy",
                "mean_cumulative_regret", "per_replicate"):
        if key not in obj:
            raise ConfigError(f"summary JSON missing key {key!r}")
    if obj["schema"] != "ixplore.summary/1":
        raise ConfigError(f"unexpected summary schema {obj['schema']!r}")


def validate_audit_json(obj):
    for key in ("t", "eps_verdict", "replicates", "mode", "cells", "verdict", "provenance"):
        if key not in obj:
            raise ConfigError(f"audit JSON missing key {key!r}")


def validate_primitives_json(obj):
    for key in ("schema", "delta_TS", "eps_TS", "gap_convention", "mode", "cells", "thresholds"):
        if key not in obj:
            raise ConfigError(f"primitives JSON missing key {key!r}")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_run(args) -> int:
    config, _audit, output, digest = load_config(args.config, args.set or (), args.seed)
    logs = run_replicates(config, workers=args.workers)
    out_dir = output.get("dir", "out")
    formats = output.get("formats", ["csv", "json"])
    if "csv" in formats:
        atomic_write(os.path.join(out_dir, "rounds.csv"), _rounds_csv(logs, config.instance))
    if "json" in formats:
        summary = _summary_json(logs, config, digest)
        validate_summary_json(summary)
        atomic_write(os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=2) + "\n")
    print(f"run complete: {config.replicates} replicates, T={config.instance.T}, output in {out_dir}")
    return EXIT_OK


def cmd_audit(args) -> int:
    config, audit_block, output, digest = load_config(args.config, args.set or (), args.seed)
    if audit_block is None:
        raise ConfigError("config has no 'audit' block")
    for key in ("round", "epsilon"):
        if key not in audit_block:
            raise ConfigError(f"audit: missing required key {key!r}")
    report = audit_bic(
        config,
        t=int(audit_block["round"]),
        replicates=int(audit_block.get("replicates", config.replicates)),
        eps_verdict=float(audit_block["epsilon"]),
        mode=audit_block.get("mode", "mc"),
        workers=args.workers,
        provenance={
            "config_digest": digest,
            "seed": config.seed,
            "c_cal": audit_block.get("c_cal", 1.0),
            "mode": audit_block.get("mode", "mc"),
            "warmup_marginalized": True,
        },
    )
    payload = report.to_json()
    validate_audit_json(payload)
    out_dir = output.get("dir", "out")
    atomic_write(os.path.join(out_dir, "audit.json"), json.dumps(payload, indent=2) + "\n")
    gap = "n/a" if report.min_gap_cell is None else f"{report.min_gap_cell.mean:.6g}"
    lo = "n/a" if report.min_gap_cell is None else f"{report.min_gap_cell.ci_lo:.6g}"
    print(f"verdict={report.verdict} min_gap={gap} ci_lo={lo} t={report.t} replicates={report.replicates}")
    return EXIT_OK


def cmd_primitives(args) -> int:
    config, audit_block, output, digest = load_config(args.config, args.set or (), args.seed)
    audit_block = audit_block or {}
    n_samples = audit_block.get("n_samples")
    types = distinct_types(config.type_source)
    est = estimate_primitives(
        config.prior,
        config.smap,
        types,
        n_samples=None if n_samples is None else int(n_samples),
        gap_convention=audit_block.get("gap_convention", "auto"),
        seed=config.seed,
    )
    thresholds_payload = None
    note = None
    try:
        thresholds = compute_thresholds(
            est,
            config.instance,
            scenario=int(audit_block.get("scenario", 1)),
            c_cal=float(audit_block.get("c_cal", 1.0)),
            alpha_margin=float(audit_block.get("alpha_margin", 1.0)),
            rho=float(audit_block.get("rho", 0.0)),
            eps_grid=audit_block.get("eps_grid"),
        )
        thresholds_payload = {
            "scenario": thresholds.scenario,
            "c_cal": thresholds.c_cal,
            "D": thresholds.D,
            "N_TS": thresholds.N_TS,
            "N_TS_ceil": thresholds.N_TS_ceil,
            "eps_UCB": thresholds.eps_UCB,
            "N_UCB": thresholds.N_UCB,
            "eta": thresholds.eta,
            "eta_note": thresholds.eta_note,
            "lambda_grid": thresholds.lambda_grid,
        }
    except UndefinedThresholdError as exc:
        note = str(exc)
    payload = {
        "schema": "ixplore.primitives/1",
        "config_digest": digest,
        "delta_TS": est.delta_TS,
        "eps_TS": est.eps_TS,
        "gap_convention": est.gap_convention,
        "mode": est.mode,
        "n_samples": est.n_samples,
        "cells": [
            {
                "type_index": c.type_index,
                "message": _message_str(c.message),
                "i": c.i,
                "prob": c.prob,
                "gaps": [float(g) for g in c.gaps],
                "gaps_pos": None if c.gaps_pos is None else [float(g) for g in c.gaps_pos],
                "ci_half": None if c.ci_half is None else [float(g) for g in c.ci_half],
                "n": c.n,
            }
            for c in est.cells.values()
        ],
        "zero_probability_messages": [
            {"type_index": ti, "message": _message_str(m)} for ti, m in est.zero_probability_messages
        ],
        "unestimated": [
            {"type_index": ti, "message": _message_str(m)} for ti, m in est.unestimated
        ],
        "thresholds": thresholds_payload,
        "threshold_note": note,
    }
    validate_primitives_json(payload)
    out_dir = output.get("dir", "out")
    atomic_write(os.path.join(out_dir, "primitives.json"), json.dumps(payload, indent=2) + "\n")
    print(
        f"delta_TS={est.delta_TS:.6g} eps_TS={'n/a' if est.eps_TS is None else f'{est.eps_TS:.6g}'}"
        f" mode={est.mode} cells={len(est.cells)}"
    )
    return EXIT_OK


def cmd_diversity(args) -> int:
    from dataclasses import replace

    config, _audit, _output, _digest = load_config(args.config, args.set or (), args.seed)
    warm_only = replace(config, instance=replace(config.instance, T=config.instance.T0))
    logs = run_replicates(warm_only, workers=args.workers)
    lam_min = []
    lam_diag = []
    print("replicate,lambda_min,lambda_diag")
    for log in logs:
        final = log.lambda_snapshots[-1] if log.lambda_snapshots else (0, 0.0, 0.0)
        lam_min.append(final[1])
        lam_diag.append(final[2])
        print(f"{log.replicate},{_fmt(final[1])},{_fmt(final[2])}")
    print(f"mean,{_fmt(np.mean(lam_min))},{_fmt(np.mean(lam_diag))}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ixplore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, text in (
        ("run", cmd_run, "run replicated episodes and emit CSV/JSON results"),
        ("audit", cmd_audit, "run the incentive audit and emit a report"),
        ("primitives", cmd_primitives, "estimate primitives and thresholds"),
        ("diversity", cmd_diversity, "report warm-up spectral diversity only"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="path to a JSON config file")
        p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                       help="override a config entry (repeatable)")
        p.add_argument("--workers", type=int, default=1, help="parallel replicate workers")
        p.add_argument("--seed", type=int, default=None, help="override the seed (beats IXPLORE_SEED)")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IxploreError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

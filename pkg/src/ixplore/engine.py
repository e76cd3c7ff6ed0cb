"""The full game-protocol simulator: warm start, main stage, agent
behavior, and per-round instrumentation.

Replicates are independent tasks over counter-based random streams, so the
result of `run_replicates` is identical for any worker count and any
execution order. Within a replicate, rounds are strictly sequential.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .domain import AgentType, Feedback, Instance, RoundRecord, expected_reward, realize_outcome
from .errors import ConfigError, UnsupportedOperationError
from .policies import (
    FlsState,
    FpsState,
    RoundRobin,
    UcbState,
    fls_step,
    fps_step,
    generate_warmup,
    policy_update,
    ucb_step,
    warmup_length,
)
from .priors import DiscretePrior, make_posterior, sample_prior
from .semantics import ArgmaxDirect, HypercubeCover, menu
from .spectral import GramAccumulator
from .streams import AGENT, MODEL_DRAW, NOISE, POLICY, TYPE_DRAW, StreamFamily, spawn_seed, stream

ORACLE_INNER_DRAWS = 1000  # nested simulations behind one best-response call


# ---------------------------------------------------------------------------
# Configuration pieces


@dataclass(frozen=True)
class Homogeneous:
    x0: AgentType


@dataclass(frozen=True)
class IIDSampler:
    types: tuple
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.types),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("type weights must be a probability vector over the types")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class Explicit:
    sequence: tuple

    def __post_init__(self):
        object.__setattr__(self, "sequence", tuple(self.sequence))


TypeSource = Homogeneous | IIDSampler | Explicit


@dataclass(frozen=True)
class FpsPolicy:
    pass


@dataclass(frozen=True)
class FlsPolicy:
    pass


@dataclass(frozen=True)
class UcbPolicy:
    rho: float = 0.0

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be >= 0")


COMPLIANT = "compliant"
ORACLE_BEST_RESPONSE = "oracle_best_response"


@dataclass(frozen=True)
class ExperimentConfig:
    instance: Instance
    prior: object
    smap: object
    policy: object
    warmup: object
    type_source: object
    agent_model: str = COMPLIANT
    seed: int = 0
    replicates: int = 1


def distinct_types(source) -> tuple:
    if isinstance(source, Homogeneous):
        return (source.x0,)
    if isinstance(source, IIDSampler):
        return source.types
    if isinstance(source, Explicit):
        seen = []
        for x in source.sequence:
            if not any(y is x for y in seen):
                seen.append(x)
        return tuple(seen)
    raise TypeError(f"unknown type source {type(source).__name__}")


def _is_identity_embedding(types, inst: Instance) -> bool:
    if inst.d != inst.K:
        return False
    eye = np.eye(inst.K)
    return all(np.array_equal(x.rows, eye) for x in types)


def validate_config(config: ExperimentConfig):
    """Reject structurally inconsistent configurations before any run."""
    inst = config.instance
    types = distinct_types(config.type_source)
    for x in types:
        if x.rows.shape != (inst.K, inst.d):
            raise ConfigError(
                f"type shape {x.rows.shape} does not match (K, d) = ({inst.K}, {inst.d})"
            )
    if inst.feedback is Feedback.SEMIBANDIT:
        for ti, x in enumerate(types):
            if not np.isin(x.rows, (0.0, 1.0)).all():
                raise ConfigError(f"semi-bandit feedback requires binary rows (type {ti})")
    if isinstance(config.policy, FlsPolicy) and not isinstance(config.smap, HypercubeCover):
        raise ConfigError("the least-squares policy requires a hypercube map")
    if isinstance(config.policy, UcbPolicy):
        if not isinstance(config.smap, ArgmaxDirect):
            raise ConfigError("the index policy requires direct (argmax) messages")
        if not _is_identity_embedding(types, inst):
            raise ConfigError("the index policy requires the K-armed identity embedding")
    if config.agent_model not in (COMPLIANT, ORACLE_BEST_RESPONSE):
        raise ConfigError(f"unknown agent model {config.agent_model!r}")
    if config.agent_model == ORACLE_BEST_RESPONSE and not isinstance(config.prior, DiscretePrior):
        raise UnsupportedOperationError(
            "the oracle best-response agent needs a discrete prior"
        )
    if isinstance(config.type_source, Explicit) and len(config.type_source.sequence) < inst.T:
        raise ConfigError("explicit type sequence is shorter than the horizon")
    if (
        isinstance(config.warmup, RoundRobin)
        and config.warmup.per_atom is not None
        and not isinstance(config.type_source, Homogeneous)
    ):
        raise ConfigError("per-atom warm-up plans need a homogeneous type source")
    expected = warmup_length(config.warmup, inst, lambda t: _type_fn(config, 0)(t)[1])
    if expected != inst.T0:
        raise ConfigError(
            f"warm-up plan occupies {expected} rounds but T0 = {inst.T0}"
        )
    if config.replicates < 1:
        raise ConfigError("replicates must be >= 1")


# ---------------------------------------------------------------------------
# Episode logs


@dataclass
class RunLog:
    replicate: int
    u_star: np.ndarray
    records: list
    type_ids: list
    expected_rewards: np.ndarray
    compliance: np.ndarray
    lambda_snapshots: list            # (t, lambda_min, lambda_diag)
    sampled_models: "list | None"     # posterior draws per main round (FPS)
    clamp_flags: "list | None"        # estimator clamping per main round (FLS)


def _type_fn(config: ExperimentConfig, replicate: int, family: "StreamFamily | None" = None):
    source = config.type_source
    types = distinct_types(source)
    if isinstance(source, Homogeneous):
        return lambda t: (0, source.x0)
    if isinstance(source, Explicit):
        index = {id(x): i for i, x in enumerate(types)}
        seq = source.sequence
        return lambda t: (index[id(seq[t - 1])], seq[t - 1])
    if isinstance(source, IIDSampler):
        def draw(t):
            if family is not None:
                rng = family.at(t, TYPE_DRAW)
            else:
                rng = stream(config.seed, replicate, t, TYPE_DRAW)
            k = int(rng.choice(len(source.types), p=source.weights))
            return k, source.types[k]

        return draw
    raise TypeError(f"unknown type source {type(source).__name__}")


def _fresh_policy_state(config: ExperimentConfig):
    if isinstance(config.policy, FpsPolicy):
        return FpsState(posterior=make_posterior(config.prior), smap=config.smap)
    if isinstance(config.policy, FlsPolicy):
        return FlsState(smap=config.smap)
    if isinstance(config.policy, UcbPolicy):
        return UcbState.fresh(config.instance.K, config.policy.rho)
    raise TypeError(f"unknown policy {type(config.policy).__name__}")


def _snapshot_rounds(inst: Instance):
    step = max(1, inst.T // 100)
    due = {t for t in range(step, inst.T + 1, step)}
    if inst.T0 >= 1:
        due.add(inst.T0)
    if inst.T >= 1:
        due.add(inst.T)
    return due


def run_episode(config: ExperimentConfig, replicate: int) -> RunLog:
    """Play one full episode: draw the model, realize the warm-up, then run
    the main stage with the configured policy and agent behavior."""
    inst = config.instance
    family = StreamFamily(config.seed, replicate)
    u_star = sample_prior(config.prior, family.at(0, MODEL_DRAW))
    type_of = _type_fn(config, replicate, family)
    type_cache = {}

    def type_at(t):
        if t not in type_cache:
            type_cache[t] = type_of(t)
        return type_cache[t][1]

    policy_state = _fresh_policy_state(config)
    gram = GramAccumulator(inst.d)
    due = _snapshot_rounds(inst)
    snapshots = []
    records = []
    type_ids = []
    expected = []
    compliance = []
    sampled_models = [] if isinstance(config.policy, FpsPolicy) else None
    clamp_flags = [] if isinstance(config.policy, FlsPolicy) else None

    def absorb_and_log(record):
        policy_update(policy_state, record, inst)
        gram.absorb(record.type.rows[record.arm])
        records.append(record)
        type_ids.append(type_cache[record.t][0])
        expected.append(expected_reward(u_star, record.type, record.arm))
        if record.t in due:
            snapshots.append((record.t, gram.min_eigen(), gram.diag_min()))

    warm = generate_warmup(config.warmup, inst, type_at, u_star, family.at)
    for record in warm:
        compliance.append(True)  # exogenous rounds are compliant by definition
        absorb_and_log(record)

    for t in range(inst.T0 + 1, inst.T + 1):
        x = type_at(t)
        if isinstance(policy_state, FpsState):
            message, u_t = fps_step(policy_state, x.public_id, family.at(t, POLICY))
            sampled_models.append(u_t)
        elif isinstance(policy_state, FlsState):
            message, _, clamped = fls_step(policy_state, x.public_id)
            clamp_flags.append(clamped)
        else:
            message = ucb_step(policy_state, t)
        recommended = menu(config.smap, x, message)
        if config.agent_model == COMPLIANT:
            arm = recommended
        else:
            arm = _oracle_best_response(config, replicate, t, x, message)
        compliance.append(arm == recommended)
        reward, aux = realize_outcome(u_star, x, arm, family.at(t, NOISE), inst)
        absorb_and_log(RoundRecord(t=t, type=x, message=message, arm=arm, reward=reward, aux=aux))

    return RunLog(
        replicate=replicate,
        u_star=u_star,
        records=records,
        type_ids=type_ids,
        expected_rewards=np.asarray(expected),
        compliance=np.asarray(compliance, dtype=bool),
        lambda_snapshots=snapshots,
        sampled_models=sampled_models,
        clamp_flags=clamp_flags,
    )


def _oracle_best_response(config: ExperimentConfig, replicate: int, t: int, x: AgentType, message):
    """Exact-prior best response to a message.

    The agent knows the prior and the announced policy, so it estimates the
    joint law of (model, round-t message) by nested simulation of the
    principal's process with compliant predecessors, conditions on the
    received message, and best-responds to the implied model posterior.
    """
    prior = config.prior
    inner_seed = spawn_seed(config.seed, replicate, t, AGENT)
    inner = replace(
        config,
        instance=replace(config.instance, T=t),
        agent_model=COMPLIANT,
        seed=inner_seed,
        replicates=ORACLE_INNER_DRAWS,
    )
    weights = np.zeros(len(prior.models))
    for j in range(ORACLE_INNER_DRAWS):
        log = run_episode(inner, j)
        if log.records[t - 1].message == message:
            k = int(np.argmin(np.linalg.norm(prior.models - log.u_star, axis=1)))
            weights[k] += 1.0
    if weights.sum() == 0:
        weights = prior.weights.copy()  # message never seen: fall back to the prior
    else:
        weights /= weights.sum()
    values = x.rows @ (weights @ prior.models)
    return int(np.argmax(values))


def run_replicates(config: ExperimentConfig, workers: int = 1) -> list:
    """All replicates, in replicate order, independent of scheduling."""
    validate_config(config)
    if config.replicates == 1:
        return [run_episode(config, 0)]
    if workers <= 1:
        return [run_episode(config, r) for r in range(config.replicates)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda r: run_episode(config, r), range(config.replicates)))


# ---------------------------------------------------------------------------
# Regret


@dataclass(frozen=True)
class RegretCurves:
    per_round: np.ndarray
    cumulative: np.ndarray


def regret(logs) -> RegretCurves:
    """Per-round and cumulative regret of one log, or the mean curves over a
    list of logs (Bayesian regret)."""
    if isinstance(logs, RunLog):
        per_round = np.array(
            [
                float(np.max(rec.type.rows @ logs.u_star)) - exp_r
                for rec, exp_r in zip(logs.records, logs.expected_rewards)
            ]
        )
        return RegretCurves(per_round=per_round, cumulative=np.cumsum(per_round))
    curves = [regret(log) for log in logs]
    per_round = np.mean([c.per_round for c in curves], axis=0)
    return RegretCurves(per_round=per_round, cumulative=np.cumsum(per_round))

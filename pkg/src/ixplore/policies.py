"""Messaging policies and warm-start generators.

Policy states absorb every observed round, warm-up included, before the
main stage begins. Each state is owned by a single replicate.
"""

import math
from dataclasses import dataclass

import numpy as np

from .domain import AgentType, Feedback, Instance, RoundRecord, WarmupData, realize_outcome
from .errors import InfeasiblePlanError, UninitializedArmError
from .priors import posterior_sample, posterior_update
from .semantics import HypercubeCover, apply_map
from .streams import NOISE, POLICY


# ---------------------------------------------------------------------------
# Policy states


@dataclass
class FpsState:
    """Filtered posterior sampling: a posterior plus the announced map."""

    posterior: "PosteriorState"
    smap: object


@dataclass
class FlsState:
    """Filtered least squares: ridge statistics plus a hypercube map."""

    smap: HypercubeCover
    gram: np.ndarray = None
    moment: np.ndarray = None

    def __post_init__(self):
        d = self.smap.dim
        if self.gram is None:
            self.gram = np.zeros((d, d))
        if self.moment is None:
            self.moment = np.zeros(d)


@dataclass
class UcbState:
    """Index policy over K arms (the d = K embedding with direct messages)."""

    rho: float
    counts: np.ndarray
    means: np.ndarray

    @classmethod
    def fresh(cls, K: int, rho: float) -> "UcbState":
        return cls(rho=float(rho), counts=np.zeros(K, dtype=int), means=np.zeros(K))


def fps_step(state: FpsState, x_pub: int, rng):
    """Sample a model from the posterior and pass it through the map."""
    u = posterior_sample(state.posterior, rng)
    return apply_map(state.smap, x_pub, u), u


def fls_step(state: FlsState, x_pub: int):
    """Ridge estimate, clamped into the map's box if it escaped, then mapped.

    Returns (message, estimate, clamped). The estimator itself stays
    unconstrained; only the cell lookup sees the clamped point.
    """
    d = state.smap.dim
    u_hat = np.linalg.solve(np.eye(d) + state.gram, state.moment)
    lo, hi = state.smap.box()
    clipped = np.clip(u_hat, lo, hi)
    clamped = bool(np.any(clipped != u_hat))
    return apply_map(state.smap, x_pub, clipped), u_hat, clamped


def ucb_step(state: UcbState, t: int) -> int:
    """Arm with the highest index at round t; ties go to the lowest arm.

    The bonus uses the natural log of t - 1 and is treated as zero whenever
    log(t - 1) <= 0, which only happens before the warm-up has ended.
    """
    if np.any(state.counts < 1):
        missing = int(np.argmax(state.counts < 1))
        raise UninitializedArmError(f"arm {missing} has no samples; warm it up first")
    log_term = math.log(t - 1) if t >= 2 else 0.0
    bonus = np.sqrt(state.rho * max(log_term, 0.0) / state.counts)
    return int(np.argmax(state.means + bonus))


def policy_update(state, record: RoundRecord, inst: Instance):
    """Absorb one observed round into the policy state."""
    if isinstance(state, FpsState):
        state.posterior = posterior_update(state.posterior, record, inst)
        return state
    if isinstance(state, FlsState):
        feat = np.asarray(record.type.rows[record.arm], dtype=float)
        state.gram += np.outer(feat, feat)
        state.moment += feat * record.reward
        return state
    if isinstance(state, UcbState):
        i = record.arm
        state.counts[i] += 1
        state.means[i] += (record.reward - state.means[i]) / state.counts[i]
        return state
    raise TypeError(f"unknown policy state {type(state).__name__}")


# ---------------------------------------------------------------------------
# Warm-start plans


@dataclass(frozen=True)
class RoundRobin:
    """Non-adaptive schedule: either N plays of every arm in arm order, or a
    greedy arm schedule until every atom has N semi-bandit observations."""

    per_arm: "int | None" = None
    per_atom: "int | None" = None

    def __post_init__(self):
        if (self.per_arm is None) == (self.per_atom is None):
            raise ValueError("set exactly one of per_arm / per_atom")
        n = self.per_arm if self.per_arm is not None else self.per_atom
        if n < 0:
            raise ValueError("warm-up counts must be >= 0")


@dataclass(frozen=True)
class NearUniform:
    """Uniform-random arms for a fixed number of rounds. `epsilon` is the
    certified exploration floor quoted by downstream diversity checks."""

    epsilon: float
    rounds: int

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")


@dataclass(frozen=True)
class FixedSequence:
    arms: tuple

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(int(a) for a in self.arms))


WarmstartPlan = RoundRobin | NearUniform | FixedSequence


def _per_atom_schedule(plan: RoundRobin, inst: Instance, x: AgentType):
    """Greedy cover: repeatedly play the arm covering the most deficient
    atoms until every atom has per_atom observations."""
    if inst.feedback is not Feedback.SEMIBANDIT:
        raise InfeasiblePlanError("per-atom warm-up requires semi-bandit feedback")
    rows = x.rows
    covered_somewhere = rows.any(axis=0)
    if not covered_somewhere.all():
        orphan = int(np.argmin(covered_somewhere))
        raise InfeasiblePlanError(f"atom {orphan} appears in no arm")
    deficits = np.full(inst.d, plan.per_atom, dtype=int)
    schedule = []
    cap = plan.per_atom * inst.d * inst.K + inst.K
    while np.any(deficits > 0):
        gains = rows @ (deficits > 0)
        arm = int(np.argmax(gains))
        if gains[arm] == 0:
            raise InfeasiblePlanError("no arm covers the remaining deficient atoms")
        schedule.append(arm)
        deficits -= rows[arm].astype(int)
        if len(schedule) > cap:
            raise InfeasiblePlanError("per-atom schedule failed to terminate")
    return schedule


def warmup_length(plan, inst: Instance, type_at=None) -> int:
    """Number of rounds the plan will occupy (T0 must match)."""
    if isinstance(plan, RoundRobin):
        if plan.per_arm is not None:
            return plan.per_arm * inst.K
        if type_at is None:
            raise InfeasiblePlanError("per-atom length needs the warm-up type")
        return len(_per_atom_schedule(plan, inst, type_at(1)))
    if isinstance(plan, NearUniform):
        return plan.rounds
    if isinstance(plan, FixedSequence):
        return len(plan.arms)
    raise TypeError(f"unknown warm-up plan {type(plan).__name__}")


def generate_warmup(plan, inst: Instance, type_at, u_star, rng_at) -> "WarmupData":
    """Realize the warm-up rounds.

    `type_at(t)` yields the round-t agent type and `rng_at(t, purpose)` the
    round's random stream. Returns the records for rounds 1..T0; messages
    are None because these rounds are exogenous.
    """
    if isinstance(plan, RoundRobin) and plan.per_arm is not None:
        arms = [i for i in range(inst.K) for _ in range(plan.per_arm)]
    elif isinstance(plan, RoundRobin):
        arms = _per_atom_schedule(plan, inst, type_at(1))
    elif isinstance(plan, NearUniform):
        arms = [int(rng_at(t, POLICY).integers(inst.K)) for t in range(1, plan.rounds + 1)]
    elif isinstance(plan, FixedSequence):
        arms = [a for a in plan.arms]
        if any(not 0 <= a < inst.K for a in arms):
            raise InfeasiblePlanError("fixed sequence contains an out-of-range arm")
    else:
        raise TypeError(f"unknown warm-up plan {type(plan).__name__}")
    records = []
    for t, arm in enumerate(arms, start=1):
        x = type_at(t)
        reward, aux = realize_outcome(u_star, x, arm, rng_at(t, NOISE), inst)
        records.append(RoundRecord(t=t, type=x, message=None, arm=arm, reward=reward, aux=aux))
    return WarmupData(records=tuple(records))

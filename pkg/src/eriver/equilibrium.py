"""Best response by backward induction and the mixture fixed-point iteration."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .flows import FlowField, propagate_forward
from .mdp import OFFLINE, TERMINAL, ZONE, State, StateSpace, transition_support
from .policy import MeanPolicy
from .scenario import ScenarioConfig

logger = logging.getLogger(__name__)

TIE_TOL = 1e-10
POSITIVE_FLOW = 1e-14
DEFAULT_CERTIFICATE = 1e-2


@dataclass
class ValueTable:
    horizon: int
    V: dict[State, float]
    Q: dict[State, np.ndarray]
    offline_penalty: float

    def value(self, s: State) -> float:
        if s.t >= self.horizon or s.kind in (OFFLINE, TERMINAL):
            return 0.0
        if s.kind == ZONE and s.soc == 0:
            return self.offline_penalty
        return self.V[s]


@dataclass
class SolveDiagnostics:
    policy_gaps: list[float] = field(default_factory=list)
    policy_gaps_raw: list[float] = field(default_factory=list)
    value_gaps: list[float] = field(default_factory=list)
    conservation_errors: list[float] = field(default_factory=list)
    step_sizes: list[float] = field(default_factory=list)
    wall_times: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    final_value_gap: float = math.nan
    certificate_threshold: float = DEFAULT_CERTIFICATE

    @property
    def is_equilibrium(self) -> bool:
        return self.final_value_gap <= self.certificate_threshold

    @property
    def final_policy_gap(self) -> float:
        return self.policy_gaps[-1] if self.policy_gaps else math.nan

    def rows(self) -> list[tuple[int, float, float, float, float, float]]:
        return list(zip(range(1, self.iterations + 1), self.step_sizes, self.policy_gaps,
                        self.policy_gaps_raw, self.value_gaps, self.conservation_errors))


@dataclass
class SolveResult:
    policy: MeanPolicy
    flows: FlowField
    table: ValueTable
    diagnostics: SolveDiagnostics


def backward_dp(flows: FlowField, cfg: ScenarioConfig,
                space: StateSpace | None = None) -> tuple[MeanPolicy, ValueTable]:
    """Optimal single-vehicle values against fixed flows, and the greedy policy.

    Ties within ``TIE_TOL`` of the maximum share probability uniformly.
    """
    space = space or StateSpace(cfg)
    T = cfg.horizon
    table = ValueTable(T, {}, {}, cfg.offline_penalty)
    probs: dict[State, np.ndarray] = {}
    for t in range(T - 1, -1, -1):
        for s in space.at(t):
            acts = space.actions[s]
            q = np.empty(len(acts))
            for k, a in enumerate(acts):
                total = 0.0
                for e in transition_support(s, a, flows, cfg):
                    total += e.prob * (e.reward + table.value(e.next))
                q[k] = total
            best = q.max()
            if not math.isfinite(best):
                raise FloatingPointError(f"non-finite action value at {s}: {q}")
            table.Q[s] = q
            table.V[s] = float(best)
            ties = q >= best - TIE_TOL
            probs[s] = ties / ties.sum()
    return MeanPolicy(space.actions, probs), table


def policy_gap_raw(p1: MeanPolicy, p2: MeanPolicy) -> float:
    p1._check_same_space(p2)
    return float(sum(np.abs(p1.probs[s] - p2.probs[s]).sum() for s in p1.actions))


def policy_gap(p1: MeanPolicy, p2: MeanPolicy) -> float:
    """L1 distance between two mean policies, averaged over decision states."""
    return policy_gap_raw(p1, p2) / len(p1)


def value_gap(flows: FlowField, table: ValueTable, policy: MeanPolicy) -> float:
    """Flow-weighted optimality slack of ``policy``, normalized by flow-weighted |V|."""
    num = den = 0.0
    for s, _, p in policy.items():
        x = flows.mass(s)
        if x <= POSITIVE_FLOW:
            continue
        v = table.V[s]
        num += x * float(np.dot(p, v - table.Q[s]))
        den += x * max(abs(v), 1.0)
    return num / den if den > 0 else 0.0


def solve_mfe(cfg: ScenarioConfig, tol: float = 1e-3, max_iter: int = 500, seed: int = 0, *,
              initial: MeanPolicy | None = None, certificate: float = DEFAULT_CERTIFICATE,
              callback=None) -> SolveResult:
    """Mixture iteration with step 1/(n+1) until the normalized policy gap drops below ``tol``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    space = StateSpace(cfg)
    policy = initial.copy() if initial is not None else MeanPolicy.random(space, seed)
    diag = SolveDiagnostics(certificate_threshold=certificate)
    start = time.perf_counter()
    for n in range(max_iter):
        flows = propagate_forward(policy, cfg)
        best, table = backward_dp(flows, cfg, space)
        eta = 1.0 / (n + 1)
        nxt = policy.mix(best, eta)
        errors = nxt.validate(1e-9)
        if errors:
            raise FloatingPointError("mixture left the simplex: " + errors[0])
        diag.step_sizes.append(eta)
        diag.policy_gaps_raw.append(policy_gap_raw(nxt, policy))
        diag.policy_gaps.append(diag.policy_gaps_raw[-1] / len(space))
        diag.value_gaps.append(value_gap(flows, table, policy))
        diag.conservation_errors.append(flows.conservation_error())
        diag.wall_times.append(time.perf_counter() - start)
        diag.iterations = n + 1
        policy = nxt
        if callback is not None:
            callback(n, diag)
        if n % 50 == 0:
            logger.info("iter %d: policy gap %.3e, value gap %.3e", n, diag.policy_gaps[-1], diag.value_gaps[-1])
        if diag.policy_gaps[-1] < tol:
            diag.converged = True
            break
    flows = propagate_forward(policy, cfg)
    _, table = backward_dp(flows, cfg, space)
    diag.final_value_gap = value_gap(flows, table, policy)
    return SolveResult(policy, flows, table, diag)

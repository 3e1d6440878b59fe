"""Single-vehicle MDP: states, feasible actions and flow-dependent transitions."""

from __future__ import annotations

from typing import NamedTuple, Protocol

import numpy as np

from .scenario import ScenarioConfig, charge_steps

ZONE, STATION, OFFLINE, TERMINAL = "zone", "station", "offline", "terminal"
CRUISE, CHARGE, STAY_OFFLINE = "cruise", "charge", "offline"


class State(NamedTuple):
    t: int
    kind: str
    index: int = 0
    soc: int = 0


class Action(NamedTuple):
    kind: str
    target: int = -1

    def __str__(self) -> str:
        return self.kind if self.kind == STAY_OFFLINE else f"{self.kind}:{self.target}"

    @classmethod
    def parse(cls, text: str) -> "Action":
        kind, _, target = text.partition(":")
        return cls(kind, int(target) if target else -1)


class TransitionEntry(NamedTuple):
    next: State
    prob: float
    reward: float


class FlowConditions(Protocol):
    """What a transition needs from the aggregate flows."""

    def meeting(self, t: int, zone: int) -> float: ...

    def wait_at(self, t: int, station: int): ...


def offline(t: int) -> State:
    return State(t, OFFLINE)


def zone_state(t: int, i: int, b: int) -> State:
    return State(t, ZONE, i, b)


def station_state(t: int, l: int, cfg: ScenarioConfig) -> State:
    return State(t, STATION, l, cfg.battery_capacity)


STAY = Action(STAY_OFFLINE)


def feasible_actions(s: State, cfg: ScenarioConfig) -> tuple[Action, ...]:
    """Actions available at ``s``; empty at or beyond the horizon."""
    if s.t >= cfg.horizon or s.kind == TERMINAL:
        return ()
    if s.t < 0:
        raise ValueError(f"invalid state {s}")
    return _actions(cfg, s.kind, s.index, s.soc)


def _actions(cfg: ScenarioConfig, kind: str, index: int, soc: int) -> tuple[Action, ...]:
    cache = cfg.__dict__.get("_action_cache")
    if cache is None:
        cache = {}
        object.__setattr__(cfg, "_action_cache", cache)
    key = (kind, index, soc)
    acts = cache.get(key)
    if acts is None:
        acts = cache[key] = _build_actions(cfg, kind, index, soc)
    return acts


def _build_actions(cfg: ScenarioConfig, kind: str, index: int, soc: int) -> tuple[Action, ...]:
    if kind == OFFLINE:
        return (STAY,)
    if kind == ZONE:
        if not 0 <= index < cfg.num_zones or not 0 <= soc <= cfg.battery_capacity:
            raise ValueError(f"invalid zone state ({index}, soc={soc})")
        if soc == 0:
            return (STAY,)
        acts = [Action(CRUISE, j) for j in cfg.zone_neighbors[index]]
        acts += [Action(CHARGE, l) for l in range(cfg.num_stations)
                 if soc >= cfg.consumption * cfg.travel_time_station[index, l]]
        return tuple(acts)
    if kind == STATION:
        if not 0 <= index < cfg.num_stations or soc != cfg.battery_capacity:
            raise ValueError(f"invalid station state ({index}, soc={soc})")
        return tuple(Action(CRUISE, j) for j in cfg.station_neighbors[index])
    raise ValueError(f"unknown location kind {kind!r}")


def _clamp(s: State, horizon: int) -> State:
    return State(horizon, TERMINAL) if s.t > horizon else s


def _cruise(t: int, j: int, b: int, flows: FlowConditions, cfg: ScenarioConfig) -> dict:
    xi, kappa = cfg.consumption, cfg.offline_penalty
    m = flows.meeting(t, j)
    out: dict[tuple[State, float], float] = {}

    def add(nxt: State, reward: float, p: float) -> None:
        if p > 0:
            key = (nxt, reward)
            out[key] = out.get(key, 0.0) + p

    left = b - xi
    add(zone_state(t + 1, j, left) if left > 0 else offline(t + 1), 0.0 if left > 0 else kappa, 1.0 - m)
    if m > 0:
        alpha = cfg.od_shares[t, j]
        for k in np.flatnonzero(alpha):
            tau = int(cfg.travel_time_zone[j, k])
            left = b - xi * (1 + tau)
            p = m * float(alpha[k])
            fare = float(cfg.fare[j, k])
            if left > 0:
                add(zone_state(t + 1 + tau, int(k), left), fare, p)
            elif left == 0:
                add(offline(t + 1 + tau), fare + kappa, p)
            else:
                add(offline(t + 1), kappa, p)
    return out


def transition_support(s: State, a: Action, flows: FlowConditions, cfg: ScenarioConfig) -> list[TransitionEntry]:
    """Next states, probabilities and rewards of taking ``a`` at ``s``.

    Next states past the horizon collapse to a terminal marker at ``T`` that
    keeps the transition reward.
    """
    if a not in feasible_actions(s, cfg):
        raise ValueError(f"action {a} infeasible at {s}")
    T = cfg.horizon
    if a.kind == STAY_OFFLINE:
        reward = cfg.offline_penalty if s.kind == ZONE else 0.0
        return [TransitionEntry(_clamp(offline(s.t + 1), T), 1.0, reward)]
    if a.kind == CRUISE:
        raw = _cruise(s.t, a.target, s.soc, flows, cfg)
    else:
        l = a.target
        tau = int(cfg.travel_time_station[s.index, l])
        arrival_soc = s.soc - cfg.consumption * tau
        dur = charge_steps(arrival_soc, cfg.battery_capacity, cfg.charge_rate)
        reward = -float(cfg.charging_price[l]) * dur
        wait = flows.wait_at(s.t + tau, l)
        raw = {}
        for omega, p in enumerate(wait.pmf):
            if p > 0:
                nxt = State(s.t + tau + omega + dur, STATION, l, cfg.battery_capacity)
                raw[(nxt, reward)] = raw.get((nxt, reward), 0.0) + float(p)
    merged: dict[tuple[State, float], float] = {}
    for (nxt, reward), p in raw.items():
        key = (_clamp(nxt, T), reward)
        merged[key] = merged.get(key, 0.0) + p
    return [TransitionEntry(nxt, p, reward) for (nxt, reward), p in merged.items()]


class StateSpace:
    """Decision states (zone states with charge left, station departures) for t < T."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        states: list[State] = []
        for t in range(cfg.horizon):
            for i in range(cfg.num_zones):
                for b in range(1, cfg.battery_capacity + 1):
                    states.append(zone_state(t, i, b))
            for l in range(cfg.num_stations):
                states.append(station_state(t, l, cfg))
        self.states = tuple(states)
        self.actions = {s: feasible_actions(s, cfg) for s in self.states}

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __contains__(self, s: object) -> bool:
        return s in self.actions

    def at(self, t: int) -> list[State]:
        return [s for s in self.states if s.t == t]

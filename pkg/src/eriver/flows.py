"""Fluid vehicle flows induced by a mean policy.

:func:`propagate_forward` walks the extended horizon once. Within a step,
trip completions and station departures are assembled first, the policy then
splits pre-decision mass into cruising and station-bound mass, matching is
evaluated on the assembled idle supply, and finally each station admits the
cohort arriving at that step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matching import meeting_probability
from .mdp import CHARGE, CRUISE, STATION, ZONE, State
from .policy import MeanPolicy
from .scenario import ScenarioConfig
from .station_queue import QueueLedger, WaitDistribution

FLUSH_THRESHOLD = 1e-14
CONSERVATION_RTOL = 1e-6


class ConservationError(RuntimeError):
    pass


def extended_horizon(cfg: ScenarioConfig) -> int:
    """Ledger length: room for the longest trip, station trip, wait and charge after ``T``."""
    longest_move = int(cfg.travel_time_zone.max())
    if cfg.num_stations:
        longest_move = max(longest_move, int(cfg.travel_time_station.max()))
    omega_max = cfg.horizon if cfg.omega_max is None else cfg.omega_max
    return cfg.horizon + longest_move + 1 + omega_max + cfg.max_charge_duration


@dataclass
class FlowField:
    """Fluid aggregates over ``[0, ext_horizon]``.

    Compartments at each step: pre-decision mass (``x_zone``, ``x_station``),
    mid-trip, travelling to a station, queueing, charging, offline.
    """

    horizon: int
    fleet_size: float
    x_zone: np.ndarray  # [t, zone, soc]
    x_station: np.ndarray  # [t, station] (all at full battery)
    y: np.ndarray  # [t, zone, soc] idle cruising mass, t < T
    z: np.ndarray  # [t, station, soc] arrivals
    m: np.ndarray  # [t, zone] meeting probability, t < T
    demand: np.ndarray  # [t, zone]
    wait: list[list[WaitDistribution]]  # [t][station]
    offline: np.ndarray  # cumulative offline mass
    in_service: np.ndarray
    to_station: np.ndarray
    waiting: np.ndarray  # [t, station]
    charging: np.ndarray  # [t, station]
    occupancy: np.ndarray  # [t, station] booked spots
    capacity: float
    ledgers: list[QueueLedger] = field(default_factory=list, repr=False)

    @property
    def ext_horizon(self) -> int:
        return self.z.shape[0]

    def meeting(self, t: int, zone: int) -> float:
        if not 0 <= t < self.m.shape[0]:
            raise KeyError(f"no meeting probability at t={t}")
        return float(self.m[t, zone])

    def wait_at(self, t: int, station: int) -> WaitDistribution:
        if not 0 <= t < len(self.wait):
            raise KeyError(f"no waiting-time distribution at t={t}")
        return self.wait[t][station]

    def idle(self) -> np.ndarray:
        """Idle supply per zone, ``[t, zone]``."""
        return self.y[:, :, 1:].sum(axis=2)

    def arrivals(self) -> np.ndarray:
        """Total station arrivals, ``[t, station]``."""
        return self.z.sum(axis=2)

    def mass(self, s: State) -> float:
        if s.kind == ZONE:
            return float(self.x_zone[s.t, s.index, s.soc])
        if s.kind == STATION:
            return float(self.x_station[s.t, s.index])
        raise KeyError(s)

    def compartments(self) -> dict[str, np.ndarray]:
        n = self.horizon + 1
        return {
            "predecision": self.x_zone[:n].sum(axis=(1, 2)) + self.x_station[:n].sum(axis=1),
            "in_service": self.in_service[:n],
            "to_station": self.to_station[:n],
            "waiting": self.waiting[:n].sum(axis=1),
            "charging": self.charging[:n].sum(axis=1),
            "offline": self.offline[:n],
        }

    def totals(self) -> np.ndarray:
        return sum(self.compartments().values())

    def conservation_error(self) -> float:
        return float(np.abs(self.totals() - self.fleet_size).max())

    def free_spots(self) -> np.ndarray:
        return self.capacity - self.occupancy


def _scheduled(diff: np.ndarray, start: int, end: int, mass: float) -> None:
    """Add ``mass`` on steps ``start..end-1`` of a difference array."""
    if end > start:
        diff[start] += mass
        diff[end] -= mass


def propagate_forward(policy: MeanPolicy, cfg: ScenarioConfig, *, check: bool = True,
                      flush: float = FLUSH_THRESHOLD) -> FlowField:
    """Load all fluid flows of ``policy`` starting from ``M * rho``."""
    T, N, L, B = cfg.horizon, cfg.num_zones, cfg.num_stations, cfg.battery_capacity
    xi, M = cfg.consumption, cfg.fleet_size
    ext = extended_horizon(cfg)
    n = ext + 1

    x_zone = np.zeros((n, N, B + 1))
    x_station = np.zeros((n, L))
    y = np.zeros((T, N, B + 1))
    z = np.zeros((ext, L, B + 1))
    m = np.zeros((T, N))
    offline_in = np.zeros(n + 1)
    d_service = np.zeros(n + 1)
    d_travel = np.zeros(n + 1)
    ledgers = [QueueLedger.for_station(cfg, l, ext) for l in range(L)]
    wait: list[list[WaitDistribution]] = []

    for init in cfg.initial_distribution:
        if init.location == ZONE:
            x_zone[0, init.index, init.soc] += M * init.prob
        else:
            x_station[0, init.index] += M * init.prob

    tz, ts, od = cfg.travel_time_zone, cfg.travel_time_station, cfg.od_shares
    for t in range(ext):
        for l in range(L):
            x_station[t, l] += ledgers[l].departures[t]

        if t < T:
            # Policy application.
            for i in range(N):
                stranded = x_zone[t, i, 0]
                if stranded > 0:
                    offline_in[t + 1] += stranded
                for b in range(1, B + 1):
                    mass = x_zone[t, i, b]
                    if mass <= flush:
                        continue
                    s = State(t, ZONE, i, b)
                    if s not in policy:
                        raise KeyError(f"policy missing reachable state {s}")
                    for a, p in zip(policy.actions[s], policy.probs[s]):
                        if p <= 0:
                            continue
                        if a.kind == CRUISE:
                            y[t, a.target, b] += mass * p
                        elif a.kind == CHARGE:
                            tau = int(ts[i, a.target])
                            z[t + tau, a.target, b - xi * tau] += mass * p
                            _scheduled(d_travel, t + 1, t + tau, mass * p)
            for l in range(L):
                mass = x_station[t, l]
                if mass <= flush:
                    continue
                s = State(t, STATION, l, B)
                if s not in policy:
                    raise KeyError(f"policy missing reachable state {s}")
                for a, p in zip(policy.actions[s], policy.probs[s]):
                    if p > 0:
                        y[t, a.target, B] += mass * p

            # Matching and trip scheduling.
            for j in range(N):
                supply = y[t, j, 1:].sum()
                mj = meeting_probability(float(cfg.demand[t, j]), float(supply), cfg.matching_params(t, j))
                m[t, j] = mj
                for b in range(1, B + 1):
                    mass = y[t, j, b]
                    if mass <= flush:
                        continue
                    stay = (1.0 - mj) * mass
                    if b - xi > 0:
                        x_zone[t + 1, j, b - xi] += stay
                    else:
                        offline_in[t + 1] += stay
                    if mj == 0:
                        continue
                    for k in np.flatnonzero(od[t, j]):
                        tau = int(tz[j, k])
                        moved = mj * od[t, j, k] * mass
                        left = b - xi * (1 + tau)
                        if left < 0:
                            offline_in[t + 1] += moved
                            continue
                        _scheduled(d_service, t + 1, t + 1 + tau, moved)
                        if left > 0:
                            x_zone[t + 1 + tau, k, left] += moved
                        else:
                            offline_in[t + 1 + tau] += moved

        wait.append([ledgers[l].admit(t, z[t, l]) for l in range(L)])

    def stations(attr: str) -> np.ndarray:
        out = np.zeros((n, L))
        for l, led in enumerate(ledgers):
            out[:ext, l] = getattr(led, attr)
        return out

    flows = FlowField(
        horizon=T,
        fleet_size=M,
        x_zone=x_zone,
        x_station=x_station,
        y=y,
        z=z,
        m=m,
        demand=np.asarray(cfg.demand),
        wait=wait,
        offline=np.cumsum(offline_in)[:n],
        in_service=np.cumsum(d_service)[:n],
        to_station=np.cumsum(d_travel)[:n],
        waiting=stations("waiting"),
        charging=stations("charging"),
        occupancy=stations("occupancy")[:ext],
        capacity=cfg.station_capacity,
        ledgers=ledgers,
    )
    if check:
        err = flows.conservation_error()
        if err > CONSERVATION_RTOL * M:
            raise ConservationError(f"fluid mass drifted by {err:.3g} (fleet {M})")
    return flows


def reference_propagate(policy: MeanPolicy, flows: FlowField, cfg: ScenarioConfig):
    """Push mass through ``transition_support`` using the meeting and waiting
    conditions stored in ``flows``.

    Slow; used to cross-check :func:`propagate_forward`. Returns
    ``(x_zone, x_station, y, z)`` restricted to ``t <= T``.
    """
    from .mdp import transition_support, zone_state

    T, N, L, B = cfg.horizon, cfg.num_zones, cfg.num_stations, cfg.battery_capacity
    x_zone = np.zeros((T + 1, N, B + 1))
    x_station = np.zeros((T + 1, L))
    y = np.zeros((T, N, B + 1))
    z = np.zeros((T + 1, L, B + 1))
    M = cfg.fleet_size
    for init in cfg.initial_distribution:
        if init.location == ZONE:
            x_zone[0, init.index, init.soc] += M * init.prob
        else:
            x_station[0, init.index] += M * init.prob
    for t in range(T):
        pending: list[tuple[State, float]] = []
        for i in range(N):
            if x_zone[t, i, 0] > 0:
                pending.append((zone_state(t, i, 0), x_zone[t, i, 0]))
            for b in range(1, B + 1):
                pending.append((zone_state(t, i, b), x_zone[t, i, b]))
        for l in range(L):
            pending.append((State(t, STATION, l, B), x_station[t, l]))
        for s, mass in pending:
            if mass <= 0:
                continue
            if s.kind == ZONE and s.soc == 0:
                continue
            for a, p in zip(policy.actions[s], policy.probs[s]):
                if p <= 0:
                    continue
                if a.kind == CRUISE:
                    y[t, a.target, s.soc] += mass * p
                else:
                    tau = int(cfg.travel_time_station[s.index, a.target])
                    if t + tau <= T:
                        z[t + tau, a.target, s.soc - cfg.consumption * tau] += mass * p
                for e in transition_support(s, a, flows, cfg):
                    if e.next.t > T:
                        continue
                    if e.next.kind == ZONE:
                        x_zone[e.next.t, e.next.index, e.next.soc] += mass * p * e.prob
                    elif e.next.kind == STATION:
                        x_station[e.next.t, e.next.index] += mass * p * e.prob
    return x_zone, x_station, y, z


__all__ = ["FlowField", "propagate_forward", "extended_horizon", "reference_propagate",
           "ConservationError"]

"""Fluid charging-station queue.

Each station keeps a :class:`QueueLedger` of occupied spots over an extended
horizon. Arrival cohorts are processed in time order; a cohort's waiting-time
pmf is filled greedily from the free spots left by everything booked before
it, so admission is first-come-first-served across cohorts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .scenario import ScenarioConfig, charge_steps

# Remaining cohort fraction below which the pmf is closed off.
RESIDUAL_TOL = 1e-12
CAPACITY_TOL = 1e-9


class LedgerError(RuntimeError):
    """Occupancy left [0, C]; indicates a bookkeeping bug."""


def charge_duration(b: int, cfg: ScenarioConfig) -> int:
    """Steps needed to charge from SOC ``b`` to full."""
    if not 0 <= b <= cfg.battery_capacity:
        raise ValueError(f"soc {b} outside [0, {cfg.battery_capacity}]")
    return charge_steps(b, cfg.battery_capacity, cfg.charge_rate)


@dataclass(frozen=True)
class WaitDistribution:
    pmf: np.ndarray  # pmf[omega] for omega = 0..len-1

    def __getitem__(self, omega: int) -> float:
        return float(self.pmf[omega]) if 0 <= omega < len(self.pmf) else 0.0

    def __len__(self) -> int:
        return len(self.pmf)

    def support(self) -> list[tuple[int, float]]:
        return [(w, float(p)) for w, p in enumerate(self.pmf) if p > 0]

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.pmf)), self.pmf))

    def is_valid(self, tol: float = 1e-9) -> bool:
        return bool((self.pmf >= -tol).all() and (self.pmf <= 1 + tol).all()
                    and abs(self.pmf.sum() - 1.0) <= tol)


IMMEDIATE = WaitDistribution(np.array([1.0]))


class CohortRecord(NamedTuple):
    t: int
    masses: np.ndarray  # arrival mass per SOC class
    pmf: np.ndarray
    booked: np.ndarray  # pmf share actually booked at each omega
    overflow: float  # mass pushed past the end of the ledger


@dataclass
class QueueLedger:
    station: int
    capacity: float
    length: int
    durations: np.ndarray  # charge duration per arrival SOC class
    epsilon: float = 1e-6
    avg_duration: bool = False
    occupancy: np.ndarray = field(init=False)
    charging: np.ndarray = field(init=False)
    waiting: np.ndarray = field(init=False)
    departures: np.ndarray = field(init=False)
    cohorts: list[CohortRecord] = field(init=False, default_factory=list)

    def __post_init__(self) -> None:
        self.durations = np.asarray(self.durations, dtype=int)
        self.occupancy = np.zeros(self.length)
        self.charging = np.zeros(self.length)
        self.waiting = np.zeros(self.length)
        self.departures = np.zeros(self.length)

    @classmethod
    def for_station(cls, cfg: ScenarioConfig, station: int, length: int) -> "QueueLedger":
        durations = [charge_steps(b, cfg.battery_capacity, cfg.charge_rate)
                     for b in range(cfg.battery_capacity + 1)]
        return cls(station, cfg.station_capacity, length, np.array(durations), cfg.queue_epsilon,
                   cfg.queue_avg_duration)

    @property
    def free(self) -> np.ndarray:
        return self.capacity - self.occupancy

    def admit(self, t: int, masses: np.ndarray) -> WaitDistribution:
        """Waiting-time pmf of the cohort arriving at ``t``; books its admissions.

        ``masses[b]`` is the arriving mass with SOC ``b``. A zero-mass cohort
        books nothing and gets the pmf a marginal vehicle would face.
        """
        masses = np.asarray(masses, dtype=float)
        if (masses < 0).any():
            raise ValueError(f"negative arrival mass at station {self.station}, t={t}")
        if not 0 <= t < self.length:
            raise IndexError(f"t={t} outside ledger of length {self.length}")
        z = float(masses.sum())
        present = masses > 0
        span = max(int(self.durations[present].max()), 1) if present.any() else 1
        pmf: list[float] = []
        booked: list[float] = []
        remaining = 1.0
        overflow = 0.0
        s = t
        while True:
            # Admitted mass holds its spot for up to `span` steps; taking the
            # tightest of those keeps the epsilon slivers left by earlier
            # cohorts from overfilling later steps.
            free = max(self.capacity - self.occupancy[s:s + span].max(), 0.0)
            w = min(free / (z + self.epsilon), max(0.0, remaining))
            remaining -= w
            at_end = s == self.length - 1
            if remaining < RESIDUAL_TOL and remaining > 0:
                w += remaining
                remaining = 0.0
            if z > 0 and w > 0:
                self._book(t, s, masses, w)
            pmf.append(w)
            booked.append(w)
            if remaining <= 0.0:
                break
            if at_end:
                # Past the ledger: assign the rest to the last step unbooked.
                overflow = z * remaining
                pmf[-1] += remaining
                if z > 0:
                    self.waiting[t:] += overflow
                break
            s += 1
        dist = WaitDistribution(np.array(pmf))
        if z > 0:
            self.cohorts.append(CohortRecord(t, masses.copy(), dist.pmf, np.array(booked), overflow))
        return dist

    def _book(self, t: int, s: int, masses: np.ndarray, w: float) -> None:
        n = self.length
        admitted = masses * w
        self.waiting[t:s] += admitted.sum()
        for b in np.flatnonzero(admitted):
            d = int(self.durations[b])
            self.charging[s:s + d] += admitted[b]
            if s + d < n:
                self.departures[s + d] += admitted[b]
            if not self.avg_duration:
                self.occupancy[s:s + d] += admitted[b]
        if self.avg_duration:
            total = admitted.sum()
            mean = float(np.dot(masses, self.durations) / masses.sum())
            whole = math.floor(mean)
            self.occupancy[s:s + whole] += total
            if s + whole < n:
                self.occupancy[s + whole] += total * (mean - whole)
        span = self.occupancy[s:s + int(self.durations.max()) + 1]
        if (span > self.capacity + CAPACITY_TOL).any():
            raise LedgerError(f"station {self.station}: occupancy {span.max()} exceeds "
                              f"capacity {self.capacity} after admission at t={s}")

    def replay(self) -> "QueueLedger":
        """Rebuild a fresh ledger from the cohort records alone."""
        fresh = QueueLedger(self.station, self.capacity, self.length, self.durations, self.epsilon,
                            self.avg_duration)
        for rec in self.cohorts:
            for omega, w in enumerate(rec.booked):
                if w > 0:
                    fresh._book(rec.t, rec.t + omega, rec.masses, w)
            if rec.overflow > 0:
                fresh.waiting[rec.t:] += rec.overflow
            fresh.cohorts.append(rec)
        return fresh

    def rows(self, horizon: int | None = None) -> list[tuple[int, int, float, float]]:
        end = self.length if horizon is None else min(horizon, self.length)
        return [(self.station, t, float(self.occupancy[t]), float(self.capacity - self.occupancy[t]))
                for t in range(end)]


def wait_time_distribution(ledger: QueueLedger, t: int, arrivals: np.ndarray,
                           cfg: ScenarioConfig | None = None) -> tuple[WaitDistribution, QueueLedger]:
    """Functional wrapper over :meth:`QueueLedger.admit`; the ledger is updated in place."""
    if cfg is not None and len(arrivals) != cfg.battery_capacity + 1:
        raise ValueError(f"expected {cfg.battery_capacity + 1} SOC classes, got {len(arrivals)}")
    return ledger.admit(t, arrivals), ledger

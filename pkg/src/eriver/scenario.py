"""Market description: network, fleet, economics, demand and initial state.

A :class:`ScenarioConfig` is immutable once built. Documents are JSON with the
sections ``network``, ``fleet``, ``economics``, ``demand``, ``matching``,
``queue`` and ``initial_distribution`` (see ``scenario.schema.json``).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, NamedTuple

import jsonschema
import numpy as np

DEFAULT_EPSILON = 1e-6
DEFAULT_THETA1 = 2.0
DEFAULT_THETA2 = 2.0
DEFAULT_PHI_THRESHOLD = 1.0

# Two-peak stand-in for the peak/offpeak profile (one value per step, all zones).
PEAK_OFFPEAK_PROFILE = (10.0, 20.0, 40.0, 40.0, 20.0, 10.0, 10.0, 20.0, 40.0, 40.0, 20.0, 10.0)
DEMAND_PROFILES = ("uniform", "peak_offpeak", "central_peripheral")

_SIMPLEX_TOL = 1e-9


class ScenarioError(ValueError):
    """Raised when a scenario document cannot be parsed or fails validation."""

    def __init__(self, message: str, violations: list[str] | None = None):
        self.violations = list(violations or [])
        if self.violations:
            message = message + ":\n  - " + "\n  - ".join(self.violations)
        super().__init__(message)


class InitialMass(NamedTuple):
    location: str  # "zone" or "station"
    index: int
    soc: int
    prob: float


def _frozen(a: Any, dtype: Any = float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    num_zones: int
    num_stations: int
    horizon: int
    fleet_size: float
    battery_capacity: int
    charge_rate: int
    station_capacity: float
    zone_neighbors: tuple[tuple[int, ...], ...]
    boundary_stations: tuple[tuple[int, ...], ...]
    station_neighbors: tuple[tuple[int, ...], ...]
    travel_time_zone: np.ndarray
    travel_time_station: np.ndarray
    fare: np.ndarray
    charging_price: np.ndarray
    offline_penalty: float
    demand: np.ndarray
    od_shares: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    phi_threshold: np.ndarray
    initial_distribution: tuple[InitialMass, ...]
    step_length: float = 0.25
    consumption: int = 1
    queue_epsilon: float = DEFAULT_EPSILON
    queue_avg_duration: bool = False
    omega_max: int | None = None
    station_labels: tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self) -> None:
        L, N, T = self.num_stations, self.num_zones, self.horizon
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("travel_time_zone", _frozen(self.travel_time_zone, int).reshape(N, N))
        set_("travel_time_station", _frozen(self.travel_time_station, int).reshape(N, L))
        set_("fare", _frozen(self.fare).reshape(N, N))
        set_("charging_price", _frozen(np.broadcast_to(np.asarray(self.charging_price, float), (L,))))
        set_("demand", _frozen(self.demand).reshape(T, N))
        set_("od_shares", _frozen(self.od_shares).reshape(T, N, N))
        for name in ("theta1", "theta2", "phi_threshold"):
            set_(name, _frozen(np.broadcast_to(np.asarray(getattr(self, name), float), (T, N))))
        set_("zone_neighbors", tuple(tuple(int(j) for j in nb) for nb in self.zone_neighbors))
        set_("boundary_stations", tuple(tuple(int(j) for j in nb) for nb in self.boundary_stations))
        set_("station_neighbors", tuple(tuple(int(j) for j in nb) for nb in self.station_neighbors))
        set_("initial_distribution", tuple(
            InitialMass(str(m[0]), int(m[1]), int(m[2]), float(m[3])) for m in self.initial_distribution))
        if not self.station_labels:
            set_("station_labels", tuple(_default_label(l) for l in range(L)))
        else:
            set_("station_labels", tuple(self.station_labels))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScenarioConfig):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if a.shape != b.shape or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None  # type: ignore[assignment]

    @property
    def max_charge_duration(self) -> int:
        return charge_steps(0, self.battery_capacity, self.charge_rate)

    def matching_params(self, t: int, i: int):
        from .matching import MatchingParams

        return MatchingParams(float(self.theta1[t, i]), float(self.theta2[t, i]),
                              float(self.phi_threshold[t, i]))

    def replace(self, **changes: Any) -> "ScenarioConfig":
        cfg = replace(self, **changes)
        violations = validate(cfg)
        if violations:
            raise ScenarioError("invalid scenario", violations)
        return cfg


def charge_steps(b: int, capacity: int, rate: int) -> int:
    return -(-(capacity - b) // rate)


def _default_label(l: int) -> str:
    return chr(ord("A") + l) if l < 26 else f"S{l}"


def demand_at(cfg: ScenarioConfig, t: int, i: int) -> float:
    """Passenger arrivals in zone ``i`` at step ``t``."""
    if not 0 <= t < cfg.horizon:
        raise IndexError(f"t={t} out of range [0, {cfg.horizon})")
    if not 0 <= i < cfg.num_zones:
        raise IndexError(f"zone {i} out of range [0, {cfg.num_zones})")
    return float(cfg.demand[t, i])


# --------------------------------------------------------------------------- validation


def validate(cfg: ScenarioConfig, *, warn: bool = True) -> list[str]:
    """Return the list of violated invariants (empty when valid).

    Soft conditions (matching continuity, station reachability identity) are
    emitted as warnings instead.
    """
    v: list[str] = []
    N, L, T, B = cfg.num_zones, cfg.num_stations, cfg.horizon, cfg.battery_capacity
    if N < 1:
        v.append("num_zones must be >= 1")
    if L < 0:
        v.append("num_stations must be >= 0")
    if T < 1:
        v.append("horizon must be >= 1")
    if not cfg.fleet_size > 0:
        v.append("fleet_size must be > 0")
    if B < 1:
        v.append("battery_capacity must be >= 1")
    if cfg.charge_rate < 1:
        v.append("charge_rate must be >= 1")
    if cfg.consumption < 1:
        v.append("consumption must be >= 1")
    if not cfg.station_capacity > 0:
        v.append("station_capacity must be > 0")
    if not cfg.queue_epsilon > 0:
        v.append("queue epsilon must be > 0")
    if cfg.omega_max is not None and cfg.omega_max < 0:
        v.append("omega_max must be >= 0")
    if v:
        return v

    if len(cfg.zone_neighbors) != N:
        v.append(f"zone_neighbors has {len(cfg.zone_neighbors)} rows, expected {N}")
    if len(cfg.boundary_stations) != N:
        v.append(f"boundary_stations has {len(cfg.boundary_stations)} rows, expected {N}")
    if len(cfg.station_neighbors) != L:
        v.append(f"station_neighbors has {len(cfg.station_neighbors)} rows, expected {L}")
    if len(cfg.station_labels) != L:
        v.append(f"{len(cfg.station_labels)} station labels for {L} stations")
    if v:
        return v

    for i, nb in enumerate(cfg.zone_neighbors):
        if i not in nb:
            v.append(f"zone {i} missing from its own neighbor set")
        for j in nb:
            if not 0 <= j < N:
                v.append(f"zone {i} neighbor {j} out of range")
            elif i not in cfg.zone_neighbors[j]:
                v.append(f"zone adjacency not symmetric: {j} in N_{i} but {i} not in N_{j}")
    for i, ls in enumerate(cfg.boundary_stations):
        for l in ls:
            if not 0 <= l < L:
                v.append(f"zone {i} boundary station {l} out of range")
            elif cfg.travel_time_station[i, l] != 1:
                v.append(f"station {l} on boundary of zone {i} but tau={cfg.travel_time_station[i, l]}")
    for l, nb in enumerate(cfg.station_neighbors):
        if not nb:
            v.append(f"station {l} has no departure zones")
        for j in nb:
            if not 0 <= j < N:
                v.append(f"station {l} neighbor zone {j} out of range")
    if (cfg.travel_time_zone < 1).any():
        v.append("travel_time_zone entries must be >= 1")
    if L and (cfg.travel_time_station < 1).any():
        v.append("travel_time_station entries must be >= 1")
    if (cfg.fare < 0).any():
        v.append("fares must be non-negative")
    if (cfg.charging_price < 0).any():
        v.append("charging prices must be non-negative")
    if (cfg.demand < 0).any() or not np.isfinite(cfg.demand).all():
        v.append("demand must be finite and non-negative")
    for name in ("theta1", "theta2", "phi_threshold"):
        if not (getattr(cfg, name) > 0).all():
            v.append(f"{name} must be > 0")

    if (cfg.od_shares < 0).any():
        t, i, j = np.argwhere(cfg.od_shares < 0)[0]
        v.append(f"od_shares[{t}][{i}][{j}] is negative")
    sums = cfg.od_shares.sum(axis=2)
    for t, i in np.argwhere(np.abs(sums - 1.0) > _SIMPLEX_TOL):
        v.append(f"od_shares[{t}][{i}] sums to {sums[t, i]:.12g}, expected 1")

    total = 0.0
    for m in cfg.initial_distribution:
        if m.location == "zone":
            if not 0 <= m.index < N:
                v.append(f"initial mass at zone {m.index} out of range")
            if not 0 <= m.soc <= B:
                v.append(f"initial soc {m.soc} outside [0, {B}]")
        elif m.location == "station":
            if not 0 <= m.index < L:
                v.append(f"initial mass at station {m.index} out of range")
            if m.soc != B:
                v.append("initial station mass must have a full battery")
        else:
            v.append(f"unknown initial location {m.location!r}")
        if m.prob < 0:
            v.append(f"negative initial probability at {m}")
        total += m.prob
    if abs(total - 1.0) > _SIMPLEX_TOL:
        v.append(f"initial_distribution sums to {total:.12g}, expected 1")

    if warn and not v:
        _soft_checks(cfg)
    return v


def _soft_checks(cfg: ScenarioConfig) -> None:
    gap = np.abs(cfg.theta2 - cfg.theta1 * cfg.phi_threshold)
    if (gap > 1e-12 * np.maximum(1.0, cfg.theta2)).any():
        warnings.warn("matching function is discontinuous: theta2 != theta1 * phi_threshold",
                      stacklevel=3)
    for l, nb in enumerate(cfg.station_neighbors):
        boundary = {i for i in range(cfg.num_zones) if l in cfg.boundary_stations[i]}
        if set(nb) != boundary:
            warnings.warn(f"station {l}: departure zones {sorted(nb)} differ from boundary "
                          f"zones {sorted(boundary)}; departure zones are used", stacklevel=3)


# --------------------------------------------------------------------------- documents

_SCHEMA: dict | None = None


def _schema() -> dict:
    global _SCHEMA
    if _SCHEMA is None:
        _SCHEMA = json.loads(resources.files("eriver").joinpath("scenario.schema.json").read_text())
    return _SCHEMA


def load_scenario(source: str | Path | dict) -> ScenarioConfig:
    """Build a validated scenario from a JSON document, a path to one, or a parsed dict."""
    if isinstance(source, dict):
        doc = source
    else:
        text = source
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            try:
                text = Path(source).read_text()
            except OSError as exc:
                raise ScenarioError(f"cannot read scenario: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"malformed scenario document: {exc}") from exc
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"malformed scenario document at {where}: {exc.message}") from exc

    try:
        cfg = _from_document(doc)
    except (ValueError, TypeError, IndexError) as exc:
        raise ScenarioError(f"inconsistent scenario document: {exc}") from exc
    violations = validate(cfg)
    if violations:
        raise ScenarioError("scenario failed validation", violations)
    return cfg


def _from_document(doc: dict) -> ScenarioConfig:
    net, fleet, econ, dem = doc["network"], doc["fleet"], doc["economics"], doc["demand"]
    match = doc.get("matching", {})
    queue = doc.get("queue", {})
    N = net["num_zones"]
    stations = net["stations"]
    L = len(stations)
    T = dem["horizon"]
    passengers = np.asarray(dem["passengers"], float)
    if passengers.shape != (T, N):
        raise ValueError(f"demand.passengers has shape {passengers.shape}, expected {(T, N)}")
    if "od_shares" in dem:
        od = np.asarray(dem["od_shares"], float)
        if od.shape != (T, N, N):
            raise ValueError(f"demand.od_shares has shape {od.shape}, expected {(T, N, N)}")
    else:
        od = np.full((T, N, N), 1.0 / N)
    tz = np.asarray(net["travel_time_zone"], int)
    ts = np.asarray(net["travel_time_station"], int).reshape(N, L)
    if tz.shape != (N, N):
        raise ValueError(f"travel_time_zone has shape {tz.shape}, expected {(N, N)}")
    fare = np.asarray(econ["fare"], float)
    if fare.shape != (N, N):
        raise ValueError(f"fare has shape {fare.shape}, expected {(N, N)}")
    price = np.asarray(econ["charging_price"], float)
    if price.ndim == 1 and price.shape != (L,):
        raise ValueError(f"charging_price has {price.size} entries for {L} stations")

    def grid(key: str, default: float) -> np.ndarray:
        val = np.asarray(match.get(key, default), float)
        if val.ndim and val.shape != (T, N):
            raise ValueError(f"matching.{key} has shape {val.shape}, expected {(T, N)}")
        return np.broadcast_to(val, (T, N))

    boundary = tuple(tuple(l for l in range(L) if i in stations[l]["boundary_zones"]) for i in range(N))
    return ScenarioConfig(
        num_zones=N,
        num_stations=L,
        horizon=T,
        fleet_size=float(fleet["fleet_size"]),
        battery_capacity=fleet["battery_capacity"],
        charge_rate=fleet["charge_rate"],
        consumption=fleet.get("consumption", 1),
        station_capacity=float(fleet["station_capacity"]),
        zone_neighbors=tuple(tuple(nb) for nb in net["zone_neighbors"]),
        boundary_stations=boundary,
        station_neighbors=tuple(tuple(s.get("neighbors", s["boundary_zones"])) for s in stations),
        travel_time_zone=tz,
        travel_time_station=ts,
        fare=fare,
        charging_price=price,
        offline_penalty=float(econ["offline_penalty"]),
        demand=passengers,
        od_shares=od,
        theta1=grid("theta1", DEFAULT_THETA1),
        theta2=grid("theta2", DEFAULT_THETA2),
        phi_threshold=grid("phi_threshold", DEFAULT_PHI_THRESHOLD),
        initial_distribution=tuple(
            InitialMass(m["location"], m["index"], m["soc"], m["prob"]) for m in doc["initial_distribution"]),
        step_length=float(dem.get("step_length", 0.25)),
        queue_epsilon=float(queue.get("epsilon", DEFAULT_EPSILON)),
        queue_avg_duration=bool(queue.get("avg_duration", False)),
        omega_max=queue.get("omega_max"),
        station_labels=tuple(s["label"] for s in stations),
        name=doc.get("name", ""),
    )


def to_document(cfg: ScenarioConfig) -> dict:
    """Inverse of :func:`load_scenario`; the result is JSON-serializable."""
    stations = []
    for l in range(cfg.num_stations):
        boundary = [i for i in range(cfg.num_zones) if l in cfg.boundary_stations[i]]
        stations.append({"label": cfg.station_labels[l], "boundary_zones": boundary,
                         "neighbors": list(cfg.station_neighbors[l])})
    return {
        "name": cfg.name,
        "network": {
            "num_zones": cfg.num_zones,
            "zone_neighbors": [list(nb) for nb in cfg.zone_neighbors],
            "stations": stations,
            "travel_time_zone": cfg.travel_time_zone.tolist(),
            "travel_time_station": cfg.travel_time_station.tolist(),
        },
        "fleet": {
            "fleet_size": cfg.fleet_size,
            "battery_capacity": cfg.battery_capacity,
            "charge_rate": cfg.charge_rate,
            "consumption": cfg.consumption,
            "station_capacity": cfg.station_capacity,
        },
        "economics": {
            "fare": cfg.fare.tolist(),
            "charging_price": cfg.charging_price.tolist(),
            "offline_penalty": cfg.offline_penalty,
        },
        "demand": {
            "horizon": cfg.horizon,
            "step_length": cfg.step_length,
            "passengers": cfg.demand.tolist(),
            "od_shares": cfg.od_shares.tolist(),
        },
        "matching": {
            "theta1": cfg.theta1.tolist(),
            "theta2": cfg.theta2.tolist(),
            "phi_threshold": cfg.phi_threshold.tolist(),
        },
        "queue": {
            "epsilon": cfg.queue_epsilon,
            "avg_duration": cfg.queue_avg_duration,
            "omega_max": cfg.omega_max,
        },
        "initial_distribution": [
            {"location": m.location, "index": m.index, "soc": m.soc, "prob": m.prob}
            for m in cfg.initial_distribution
        ],
    }


def dump_scenario(cfg: ScenarioConfig, path: str | Path | None = None) -> str:
    text = json.dumps(to_document(cfg), indent=1)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


# --------------------------------------------------------------------------- benchmark

# Peripheral zones 0-5 form a ring around zone 6. Station l sits on the radial
# boundary between zones l and l+1 (mod 6); even stations at the outer end,
# odd stations at the inner end where the boundary also touches zone 6.
_CENTER = 6


def _stylized_network() -> tuple[list[tuple[int, ...]], list[tuple[int, ...]]]:
    neighbors = [tuple(sorted({i, (i + 1) % 6, (i - 1) % 6, _CENTER})) for i in range(6)]
    neighbors.append(tuple(range(7)))
    station_zones = []
    for l in range(6):
        zones = {l, (l + 1) % 6}
        if l % 2 == 1:
            zones.add(_CENTER)
        station_zones.append(tuple(sorted(zones)))
    return neighbors, station_zones


def build_stylized_scenario(demand_profile: str = "uniform", *,
                            peak_profile: tuple[float, ...] | None = None) -> ScenarioConfig:
    """The seven-zone, six-station benchmark with the default parameter table."""
    if demand_profile not in DEMAND_PROFILES:
        raise ValueError(f"unknown demand profile {demand_profile!r}; expected one of {DEMAND_PROFILES}")
    N, L, T, B = 7, 6, 12, 4
    neighbors, station_zones = _stylized_network()
    boundary = [tuple(l for l in range(L) if i in station_zones[l]) for i in range(N)]

    tz = np.array([[1 if j in neighbors[i] else 2 for j in range(N)] for i in range(N)])
    ts = np.empty((N, L), dtype=int)
    for i in range(N):
        near = {l for j in neighbors[i] for l in boundary[j]}
        for l in range(L):
            ts[i, l] = 1 if l in boundary[i] else 2 if l in near else 3
    fare = np.where(tz == 1, 1.0, 2.0)

    if demand_profile == "uniform":
        q = np.full((T, N), 20.0)
    elif demand_profile == "central_peripheral":
        q = np.full((T, N), 15.0)
        q[:, _CENTER] = 40.0
    else:
        profile = np.asarray(peak_profile if peak_profile is not None else PEAK_OFFPEAK_PROFILE, float)
        if profile.shape != (T,):
            raise ValueError(f"peak profile needs {T} values, got {profile.size}")
        q = np.repeat(profile[:, None], N, axis=1)

    cfg = ScenarioConfig(
        num_zones=N,
        num_stations=L,
        horizon=T,
        fleet_size=500.0,
        battery_capacity=B,
        charge_rate=3,
        station_capacity=20.0,
        zone_neighbors=tuple(neighbors),
        boundary_stations=tuple(boundary),
        station_neighbors=tuple(station_zones),
        travel_time_zone=tz,
        travel_time_station=ts,
        fare=fare,
        charging_price=np.full(L, 0.5),
        offline_penalty=-10.0,
        demand=q,
        od_shares=np.full((T, N, N), 1.0 / N),
        theta1=DEFAULT_THETA1,
        theta2=DEFAULT_THETA2,
        phi_threshold=DEFAULT_PHI_THRESHOLD,
        initial_distribution=tuple(InitialMass("zone", i, B, 1.0 / N) for i in range(N)),
        step_length=0.25,
        name=f"stylized-{demand_profile}",
    )
    assert not validate(cfg)
    return cfg


def outer_stations(cfg: ScenarioConfig) -> list[int]:
    """Stations whose boundary does not touch the central zone (benchmark only)."""
    return [l for l in range(cfg.num_stations) if l not in cfg.boundary_stations[_CENTER]]


def inner_stations(cfg: ScenarioConfig) -> list[int]:
    return list(cfg.boundary_stations[_CENTER])


def with_random_initial_soc(cfg: ScenarioConfig, seed: int, *, low: int = 1) -> ScenarioConfig:
    """Zones stay evenly loaded; each of the M vehicles draws its SOC uniformly from {low..B}.

    The empirical SOC histogram of the draw becomes the initial distribution.
    """
    rng = np.random.default_rng(seed)
    B, N = cfg.battery_capacity, cfg.num_zones
    draws = rng.integers(low, B + 1, size=int(round(cfg.fleet_size)))
    hist = np.bincount(draws, minlength=B + 1) / draws.size
    rho = [InitialMass("zone", i, b, float(hist[b]) / N) for i in range(N) for b in range(B + 1) if hist[b] > 0]
    return cfg.replace(initial_distribution=tuple(rho), name=f"{cfg.name}-random-soc-{seed}")


def with_random_initial_location(cfg: ScenarioConfig, seed: int) -> ScenarioConfig:
    """Full batteries; each vehicle draws its starting zone uniformly."""
    rng = np.random.default_rng(seed)
    N, B = cfg.num_zones, cfg.battery_capacity
    draws = rng.integers(0, N, size=int(round(cfg.fleet_size)))
    hist = np.bincount(draws, minlength=N) / draws.size
    rho = [InitialMass("zone", i, B, float(hist[i])) for i in range(N) if hist[i] > 0]
    return cfg.replace(initial_distribution=tuple(rho), name=f"{cfg.name}-random-location-{seed}")


def builtin_scenario(name: str) -> ScenarioConfig:
    return build_stylized_scenario(name)


__all__ = [
    "ScenarioConfig", "ScenarioError", "InitialMass", "load_scenario", "to_document", "dump_scenario",
    "build_stylized_scenario", "demand_at", "validate", "with_random_initial_soc",
    "with_random_initial_location", "outer_stations", "inner_stations", "charge_steps",
    "DEMAND_PROFILES", "PEAK_OFFPEAK_PROFILE", "builtin_scenario",
]

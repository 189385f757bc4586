"""Scenario state: vehicles, edge servers, mobility traces and RSU topology."""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geo import GeoPoint, haversine_km, local_bearing

RSU = "rsu"
SATELLITE = "satellite"
KM_PER_DEGREE = math.pi * 6371.0 / 180.0


class ScenarioError(ValueError):
    pass


class TraceFormatError(ScenarioError):
    pass


@dataclass(frozen=True)
class BBox:
    lon_min: float
    lat_min: float
    lon_max: float
    lat_max: float

    def __post_init__(self):
        if not (self.lon_min < self.lon_max and self.lat_min < self.lat_max):
            raise ScenarioError(f"degenerate bounding box {self}")

    def contains(self, p: GeoPoint) -> bool:
        return (self.lon_min <= p.lon <= self.lon_max
                and self.lat_min <= p.lat <= self.lat_max)

    @property
    def center(self) -> GeoPoint:
        return GeoPoint(0.5 * (self.lon_min + self.lon_max), 0.5 * (self.lat_min + self.lat_max))

    def normalize(self, lon, lat):
        return ((lon - self.lon_min) / (self.lon_max - self.lon_min),
                (lat - self.lat_min) / (self.lat_max - self.lat_min))


@dataclass(frozen=True)
class EdgeServer:
    id: int
    kind: str
    position: GeoPoint | None
    cpu_freq: float
    up_bandwidth: float
    down_bandwidth: float
    tx_power: float
    coverage_radius_km: float = 0.0
    source_id: str = ""

    def __post_init__(self):
        if self.kind not in (RSU, SATELLITE):
            raise ValueError(f"unknown server kind {self.kind!r}")
        if self.kind == RSU and self.position is None:
            raise ValueError("RSU requires a position")
        if self.cpu_freq <= 0 or self.up_bandwidth <= 0 or self.down_bandwidth <= 0:
            raise ValueError(f"server {self.id}: cpu_freq and bandwidths must be positive")

    @property
    def is_rsu(self) -> bool:
        return self.kind == RSU


@dataclass(frozen=True)
class ServerDefaults:
    """Hardware constants applied to every RSU loaded or synthesised."""
    rsu_cpu_freq: float = 1e10
    sat_cpu_freq: float = 5e9
    up_bandwidth: float = 1e6
    down_bandwidth: float = 1e6
    rsu_tx_power: float = 1.0
    coverage_radius_km: float = 2.5

    def rsu(self, idx, pos, source_id=""):
        return EdgeServer(idx, RSU, pos, self.rsu_cpu_freq, self.up_bandwidth,
                          self.down_bandwidth, self.rsu_tx_power,
                          self.coverage_radius_km, str(source_id))

    def satellite(self, idx):
        return EdgeServer(idx, SATELLITE, None, self.sat_cpu_freq, self.up_bandwidth,
                          self.down_bandwidth, 0.0, 0.0, "sat")


@dataclass(frozen=True)
class TracePoint:
    t: float
    pos: GeoPoint
    heading: float


@dataclass(frozen=True)
class Vehicle:
    id: int
    trajectory: tuple
    tx_power: float = 0.2
    cycles_per_bit: float = 100.0
    agent_model_size: float = 1e7

    def __post_init__(self):
        ts = [p.t for p in self.trajectory]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ScenarioError(f"vehicle {self.id}: timestamps not strictly increasing")


@dataclass(frozen=True)
class RadioParams:
    antenna_gain: float = 1.0
    carrier_freq: float = 2.4e9
    path_loss_exp: float = 2.0
    noise_power: float = 1e-13
    sat_up_rate: float = 5e6
    sat_down_rate: float = 2e7
    wired_rate: float = 1e9
    backhaul_coef: float = 0.005
    migration_coef: float = 0.02
    task_factor: float = 1.0
    max_radius: float = 0.015
    min_distance_km: float = 0.001
    sat_distance_km: float = 550.0

    def __post_init__(self):
        for name in ("antenna_gain", "carrier_freq", "noise_power", "sat_up_rate",
                     "sat_down_rate", "wired_rate", "backhaul_coef", "migration_coef",
                     "task_factor", "max_radius", "min_distance_km", "sat_distance_km"):
            if not getattr(self, name) > 0:
                raise ValueError(f"radio parameter {name} must be positive")
        if self.path_loss_exp < 1:
            raise ValueError("path_loss_exp must be >= 1")


class Topology:
    """Hop counts on the wired RSU graph (links between RSUs within ``link_radius_km``)."""

    def __init__(self, servers, link_radius_km=2.0, disconnected_hops=50):
        self.servers = list(servers)
        self.link_radius_km = link_radius_km
        self.disconnected_hops = disconnected_hops
        rsus = [s for s in self.servers if s.is_rsu]
        n = len(self.servers)
        adj = {s.id: [] for s in rsus}
        for i, a in enumerate(rsus):
            for b in rsus[i + 1:]:
                if haversine_km(a.position, b.position) <= link_radius_km:
                    adj[a.id].append(b.id)
                    adj[b.id].append(a.id)
        self._hops = np.full((n, n), disconnected_hops, dtype=np.int64)
        for s in rsus:
            dist = {s.id: 0}
            queue = deque([s.id])
            while queue:
                u = queue.popleft()
                for v in adj[u]:
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        queue.append(v)
            for v, d in dist.items():
                self._hops[s.id, v] = d

    def hop_count(self, a: int, b: int) -> int:
        if not (self.servers[a].is_rsu and self.servers[b].is_rsu):
            raise ValueError(f"hop_count is defined between RSUs only (got {a}, {b})")
        return int(self._hops[a, b])


def hop_count(a: int, b: int, topology: Topology) -> int:
    return topology.hop_count(a, b)


def connected_server(pos: GeoPoint, servers) -> int:
    """Nearest covering RSU (lowest id on ties); the satellite when none covers ``pos``."""
    if not servers:
        raise ScenarioError("empty server list")
    best, best_d = None, math.inf
    sat = None
    for s in servers:
        if not s.is_rsu:
            sat = s.id
            continue
        d = haversine_km(pos, s.position)
        if d <= s.coverage_radius_km and (d < best_d or (d == best_d and s.id < best)):
            best, best_d = s.id, d
    if best is None:
        if sat is None:
            raise ScenarioError("no covering RSU and no satellite")
        return sat
    return best


def _sort_key(value: str):
    try:
        return (0, float(value), value)
    except ValueError:
        return (1, 0.0, value)


def _read_rows(path, expected):
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"file not found: {path}")
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise TraceFormatError(f"{path}:1: expected header {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(expected):
                raise TraceFormatError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
            try:
                numeric = [float(c) for c in row[1:]]
            except ValueError:
                raise TraceFormatError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
            if not all(math.isfinite(v) for v in numeric):
                raise TraceFormatError(f"{path}:{lineno}: non-finite field in {row!r}")
            rows.append((lineno, row[0].strip(), *numeric))
    return rows


def _headings(lons, lats):
    out = np.zeros(len(lons))
    for i in range(1, len(lons)):
        if lons[i] == lons[i - 1] and lats[i] == lats[i - 1]:
            out[i] = out[i - 1]
        else:
            out[i] = local_bearing(GeoPoint(lons[i - 1], lats[i - 1]), GeoPoint(lons[i], lats[i]))
    return out


def _build_trajectory(times, lons, lats):
    heads = _headings(lons, lats)
    return tuple(TracePoint(float(t), GeoPoint(float(x), float(y)), float(h))
                 for t, x, y, h in zip(times, lons, lats, heads))


def resample(times, lons, lats, slot_seconds):
    """Linear resampling onto ``t0 + k * slot``; the final sample is always kept."""
    times = np.asarray(times, dtype=np.float64)
    t0, t1 = times[0], times[-1]
    n = int(math.floor((t1 - t0) / slot_seconds + 1e-9))
    grid = t0 + slot_seconds * np.arange(n + 1)
    if t1 - grid[-1] > 1e-9 * slot_seconds:
        grid = np.append(grid, t1)
    else:
        grid[-1] = t1
    return grid, np.interp(grid, times, lons), np.interp(grid, times, lats)


def load_traces(path, bbox: BBox, slot_seconds: float = 30.0, **vehicle_kw):
    """Read ``vehicle_id,unix_ts,lon,lat`` rows into resampled vehicles."""
    per_vehicle = {}
    for lineno, vid, ts, lon, lat in _read_rows(path, ["vehicle_id", "unix_ts", "lon", "lat"]):
        if not (-180 <= lon <= 180 and -90 <= lat <= 90):
            raise TraceFormatError(f"{path}:{lineno}: coordinate out of range")
        if not bbox.contains(GeoPoint(lon, lat)):
            continue
        per_vehicle.setdefault(vid, []).append((ts, lon, lat, lineno))
    vehicles = []
    for idx, vid in enumerate(sorted(per_vehicle, key=_sort_key)):
        rows = sorted(per_vehicle[vid])
        for a, b in zip(rows, rows[1:]):
            if b[0] == a[0]:
                raise TraceFormatError(f"{path}:{b[3]}: duplicate timestamp for vehicle {vid}")
        ts, lons, lats = (np.array([r[i] for r in rows]) for i in range(3))
        grid, glon, glat = resample(ts, lons, lats, slot_seconds)
        vehicles.append(Vehicle(idx, _build_trajectory(grid, glon, glat), **vehicle_kw))
    if not vehicles:
        raise ScenarioError(f"{path}: no trace rows inside {bbox}")
    return vehicles


def load_servers(path, bbox: BBox, k: int, seed: int = 0, defaults: ServerDefaults | None = None):
    """Read ``server_id,lon,lat`` rows; keep ``k`` RSUs in the box plus one satellite."""
    defaults = defaults or ServerDefaults()
    rows = [r for r in _read_rows(path, ["server_id", "lon", "lat"])
            if bbox.contains(GeoPoint(r[2], r[3]))]
    if len(rows) < k:
        raise ScenarioError(f"{path}: need {k} RSUs inside the box, only {len(rows)} available")
    rows.sort(key=lambda r: _sort_key(r[1]))
    if len(rows) > k:
        pick = np.random.default_rng(seed).choice(len(rows), size=k, replace=False)
        rows = [rows[i] for i in sorted(pick)]
    servers = [defaults.rsu(i, GeoPoint(r[2], r[3]), r[1]) for i, r in enumerate(rows)]
    servers.append(defaults.satellite(len(servers)))
    return servers


def synth_servers(k: int, bbox: BBox, rng: np.random.Generator, defaults: ServerDefaults | None = None):
    """``k`` RSUs on a jittered grid over the box, plus the satellite."""
    defaults = defaults or ServerDefaults()
    cols = int(math.ceil(math.sqrt(k * (bbox.lon_max - bbox.lon_min) / (bbox.lat_max - bbox.lat_min))))
    cols = max(1, min(k, cols))
    rows = int(math.ceil(k / cols))
    w = (bbox.lon_max - bbox.lon_min) / cols
    h = (bbox.lat_max - bbox.lat_min) / rows
    servers = []
    for i in range(k):
        r, c = divmod(i, cols)
        lon = bbox.lon_min + (c + 0.5 + rng.uniform(-0.2, 0.2)) * w
        lat = bbox.lat_min + (r + 0.5 + rng.uniform(-0.2, 0.2)) * h
        servers.append(defaults.rsu(i, GeoPoint(lon, lat), str(i)))
    servers.append(defaults.satellite(k))
    return servers


def synth_traces(n_vehicles: int, bbox: BBox, slots: int, speed_kmh, rng: np.random.Generator,
                 slot_seconds: float = 30.0, t0: float = 0.0, **vehicle_kw):
    """Random-waypoint trajectories; every slot covers ``speed * slot`` of path length."""
    lo, hi = speed_kmh
    if not 0 <= lo <= hi:
        raise ScenarioError(f"bad speed range {speed_kmh}")

    def uniform_point():
        return np.array([rng.uniform(bbox.lon_min, bbox.lon_max),
                         rng.uniform(bbox.lat_min, bbox.lat_max)])

    vehicles = []
    for vid in range(n_vehicles):
        pos = uniform_point()
        target = uniform_point()
        speed = rng.uniform(lo, hi)
        lons, lats = [pos[0]], [pos[1]]
        for _ in range(slots - 1):
            budget = speed * slot_seconds / 3600.0
            for _hop in range(1000):
                scale = np.array([KM_PER_DEGREE * math.cos(math.radians(pos[1])), KM_PER_DEGREE])
                gap_km = float(np.hypot(*((target - pos) * scale)))
                if gap_km > budget:
                    pos = pos + (target - pos) * (budget / gap_km)
                    break
                budget -= gap_km
                pos = target
                target = uniform_point()
                speed = rng.uniform(lo, hi)
            pos = np.clip(pos, [bbox.lon_min, bbox.lat_min], [bbox.lon_max, bbox.lat_max])
            lons.append(pos[0])
            lats.append(pos[1])
        times = t0 + slot_seconds * np.arange(slots)
        vehicles.append(Vehicle(vid, _build_trajectory(times, np.array(lons), np.array(lats)), **vehicle_kw))
    return vehicles


def write_traces_csv(path, vehicles):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["vehicle_id", "unix_ts", "lon", "lat"])
        for v in vehicles:
            for p in v.trajectory:
                w.writerow([v.id, repr(p.t), repr(p.pos.lon), repr(p.pos.lat)])


def write_servers_csv(path, servers):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["server_id", "lon", "lat"])
        for s in servers:
            if s.is_rsu:
                w.writerow([s.source_id or s.id, repr(s.position.lon), repr(s.position.lat)])


@dataclass(frozen=True)
class TrafficProfile:
    up_bits: float = 1e6
    down_bits: float = 2e6

    def __post_init__(self):
        if self.up_bits < 0 or self.down_bits < 0:
            raise ValueError("traffic volumes must be non-negative")

    def task_bits(self, task_factor: float) -> float:
        return task_factor * self.up_bits


@dataclass
class Scenario:
    """An immutable-by-convention world shared by environments and rollouts."""
    vehicles: list
    servers: list
    radio: RadioParams = field(default_factory=RadioParams)
    traffic: TrafficProfile = field(default_factory=TrafficProfile)
    bbox: BBox | None = None
    link_radius_km: float = 2.0
    disconnected_hops: int = 50

    def __post_init__(self):
        sats = [s for s in self.servers if not s.is_rsu]
        if len(sats) != 1:
            raise ScenarioError(f"exactly one satellite required, found {len(sats)}")
        if [s.id for s in self.servers] != list(range(len(self.servers))):
            raise ScenarioError("server ids must equal their list positions")
        if not self.vehicles:
            raise ScenarioError("scenario has no vehicles")
        if self.bbox is not None:
            for v in self.vehicles:
                if not all(self.bbox.contains(p.pos) for p in v.trajectory):
                    raise ScenarioError(f"vehicle {v.id} leaves the bounding box")
        self.topology = Topology(self.servers, self.link_radius_km, self.disconnected_hops)
        self.satellite = sats[0].id
        self.server_xy = np.array([s.position.as_tuple() if s.is_rsu else (0.0, 0.0)
                                   for s in self.servers], dtype=np.float64)
        self.server_is_rsu = np.array([s.is_rsu for s in self.servers], dtype=np.uint8)

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicles)

    @property
    def n_servers(self) -> int:
        return len(self.servers)

    @property
    def horizon(self) -> int:
        return min(len(v.trajectory) for v in self.vehicles)


@dataclass(frozen=True)
class VehicleSnapshot:
    """Per-slot view of one vehicle: true and reported position plus server indices."""
    true_pos: GeoPoint
    heading: float
    connected_server: int
    prev_agent_server: int
    cur_agent_server: int
    perturbed_pos: GeoPoint | None = None

"""Service response latency (communication, migration, computation) and QoS loss."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .geo import GeoPoint, haversine_km
from .world import RadioParams, Scenario, TrafficProfile, Vehicle, VehicleSnapshot

SPEED_OF_LIGHT = 3e8


@dataclass(frozen=True)
class LatencyBreakdown:
    uplink: float
    downlink: float
    backhaul: float
    migration: float
    computation: float

    @property
    def total(self) -> float:
        return self.uplink + self.downlink + self.backhaul + self.migration + self.computation

    def as_dict(self):
        d = asdict(self)
        d["total"] = self.total
        return d


def channel_gain(d_km: float, params: RadioParams) -> float:
    d_m = max(d_km, params.min_distance_km) * 1000.0
    return params.antenna_gain * (SPEED_OF_LIGHT / (4.0 * math.pi * params.carrier_freq * d_m)) ** params.path_loss_exp


def shannon_rate(bandwidth: float, power: float, gain: float, noise: float) -> float:
    return bandwidth * math.log2(1.0 + power * gain / noise)


def uplink_rate(veh: Vehicle, server, d_km: float, params: RadioParams) -> float:
    if not server.is_rsu:
        raise ValueError("uplink_rate applies to RSU links; the satellite uses sat_up_rate")
    return shannon_rate(server.up_bandwidth, veh.tx_power, channel_gain(d_km, params), params.noise_power)


def downlink_rate(server, d_km: float, params: RadioParams) -> float:
    if not server.is_rsu:
        raise ValueError("downlink_rate applies to RSU links; the satellite uses sat_down_rate")
    return shannon_rate(server.down_bandwidth, server.tx_power, channel_gain(d_km, params), params.noise_power)


def comm_latency(veh: Vehicle, snap: VehicleSnapshot, traffic: TrafficProfile, scenario: Scenario):
    """Return ``(uplink, downlink, backhaul)`` seconds.

    Radio distances use the true position; the reported one never touches the channel.
    """
    params = scenario.radio
    conn = scenario.servers[snap.connected_server]
    agent = scenario.servers[snap.cur_agent_server]
    if conn.is_rsu:
        d_km = haversine_km(snap.true_pos, conn.position)
        up = traffic.up_bits / uplink_rate(veh, conn, d_km, params)
        down = traffic.down_bits / downlink_rate(conn, d_km, params)
    else:
        up = traffic.up_bits / params.sat_up_rate
        down = traffic.down_bits / params.sat_down_rate
    back = 0.0
    if agent.is_rsu and conn.id != agent.id:
        back = (traffic.up_bits + traffic.down_bits) / params.wired_rate
        if conn.is_rsu:
            back += 2.0 * params.backhaul_coef * scenario.topology.hop_count(conn.id, agent.id)
    return up, down, back


def migration_latency(prev: int, cur: int, model_bits: float, scenario: Scenario) -> float:
    if prev == cur:
        return 0.0
    params = scenario.radio
    a, b = scenario.servers[prev], scenario.servers[cur]
    if a.is_rsu and b.is_rsu:
        return model_bits / params.wired_rate + params.migration_coef * scenario.topology.hop_count(prev, cur)
    if a.is_rsu:
        return model_bits / params.sat_up_rate
    return model_bits / params.sat_down_rate


def computation_latency(cycles_per_bit: float, task_bits: float, cpu_freq: float) -> float:
    if cpu_freq <= 0:
        raise ValueError("cpu_freq must be positive")
    return cycles_per_bit * task_bits / cpu_freq


def total_latency(veh: Vehicle, snap: VehicleSnapshot, traffic: TrafficProfile,
                  scenario: Scenario) -> LatencyBreakdown:
    up, down, back = comm_latency(veh, snap, traffic, scenario)
    mig = migration_latency(snap.prev_agent_server, snap.cur_agent_server, veh.agent_model_size, scenario)
    comp = computation_latency(veh.cycles_per_bit, traffic.task_bits(scenario.radio.task_factor),
                               scenario.servers[snap.cur_agent_server].cpu_freq)
    return LatencyBreakdown(up, down, back, mig, comp)


def qos_loss(true_pos: GeoPoint, perturbed_pos: GeoPoint) -> float:
    return math.log1p(haversine_km(true_pos, perturbed_pos))

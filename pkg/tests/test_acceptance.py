"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line for the terminal summary."""
import dataclasses
import json
import math
import time

import numpy as np
import pytest
from scipy import stats

from conftest import CRITERIA, make_toy_scenario
from test_adversary import brute_force_posterior
from crosspriv.adversary import AdversaryModel, compute_posterior, cross_reality_entropy
from crosspriv.cli import main
from crosspriv.config import build_env, dump_config, load_config, tiny_config_path, with_overrides
from crosspriv.credibility import credibility_report, intensity_sweep
from crosspriv.env import action_violations
from crosspriv.geo import GeoPoint, sample_planar_laplace_batch
from crosspriv.policy import HybridPolicy, make_schedule
from crosspriv.radio import total_latency
from crosspriv.tensor import Adam, no_grad
from crosspriv.trainer import (GeoIController, PolicyController, RandomController, TrainConfig, aux_diffusion_loss,
                               compute_gae, entropy_loss, evaluate, geo_i_eps, importance_ratio, onehot_servers,
                               ppo_clip_loss, ppo_update, run_episode, total_loss, train, value_loss)
from crosspriv.world import VehicleSnapshot

# executed-action and negative-latency violations seen by every acceptance run
VIOLATIONS = {}


def record(key, ok, detail):
    CRITERIA[key] = (bool(ok), detail)
    print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


def note_violations(label, count):
    VIOLATIONS[label] = VIOLATIONS.get(label, 0) + int(count)


# ---------------------------------------------------------------- 1
def test_criterion_1_entropy_oracle():
    start = time.perf_counter()
    sc = make_toy_scenario()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 26))
        obs = GeoPoint(121.44 + rng.uniform(-0.01, 0.01), 31.22 + rng.uniform(-0.01, 0.01))
        cands = np.column_stack([obs.lon + rng.uniform(-0.02, 0.02, n), obs.lat + rng.uniform(-0.02, 0.02, n)])
        pri = rng.dirichlet(np.ones(n))
        model = AdversaryModel(server_affinity_temp=float(rng.uniform(0.005, 0.05)),
                               sat_offset=float(rng.uniform(0.005, 0.05)))
        agent = int(rng.integers(0, len(sc.servers)))
        eps = float(rng.uniform(20.0, 400.0))
        got = compute_posterior(cands, pri, obs, agent, model, sc, eps=eps)
        ref = np.array(brute_force_posterior([tuple(c) for c in cands], obs, agent, eps, sc, model, pri))
        h_ref = -sum(p * math.log2(p) for p in ref if p > 0)
        worst = max(worst, float(np.max(np.abs(got.probs - ref))), abs(cross_reality_entropy(got) - h_ref))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 10
    record(1, ok, f"max abs error {worst:.2e} over 200 cases in {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------- 2
def test_criterion_2_planar_laplace_sampler():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    n = 100_000
    details, ok = [], True
    for eps in (1.0, 5.0, 20.0):
        r, theta = sample_planar_laplace_batch(eps, n, rng)
        ks = stats.kstest(r, lambda x: 1 - (1 + eps * x) * np.exp(-eps * x)).statistic
        counts = np.bincount(np.minimum((theta / (2 * math.pi) * 8).astype(int), 7), minlength=8)
        sigma = math.sqrt(n * (1 / 8) * (7 / 8))
        z = float(np.max(np.abs(counts - n / 8)) / sigma)
        ok &= ks < 0.01 and z <= 3.0
        details.append(f"eps={eps:g}: KS {ks:.4f}, max bin z {z:.2f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30
    record(2, ok, "; ".join(details) + f" ({elapsed:.1f} s)")
    assert ok


# ---------------------------------------------------------------- 3
def _hav_km(a, b):
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    dp, dl = p2 - p1, math.radians(b.lon - a.lon)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * 6371.0 * math.asin(math.sqrt(h))


def _hand_latency(pos, conn, prev, cur):
    # toy world: RSU 0 and RSU 1 one hop apart, server 2 is the satellite
    rsu = {0: GeoPoint(121.43, 31.22), 1: GeoPoint(121.456, 31.22)}
    up_bits, down_bits, model_bits = 1e6, 2e6, 1e7
    cpu = {0: 1e10, 1: 1e10, 2: 5e9}
    if conn in rsu:
        d_m = max(_hav_km(pos, rsu[conn]), 0.001) * 1000
        g = (3e8 / (4 * math.pi * 2.4e9 * d_m)) ** 2
        up = up_bits / (1e6 * math.log2(1 + 0.2 * g / 1e-13))
        down = down_bits / (1e6 * math.log2(1 + 1.0 * g / 1e-13))
    else:
        up, down = up_bits / 5e6, down_bits / 2e7
    back = 0.0
    if cur in rsu and cur != conn:
        back = (up_bits + down_bits) / 1e9 + (2 * 0.005 * 1 if conn in rsu else 0.0)
    if prev == cur:
        mig = 0.0
    elif prev in rsu and cur in rsu:
        mig = model_bits / 1e9 + 0.02 * 1
    elif prev in rsu:
        mig = model_bits / 5e6
    else:
        mig = model_bits / 2e7
    comp = 100 * up_bits / cpu[cur]
    return [up, down, back, mig, comp]


def test_criterion_3_latency_worked_scenario():
    sc = make_toy_scenario()
    veh = sc.vehicles[0]
    cases = [(0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 0, 2), (0, 2, 1), (1, 1, 0), (1, 2, 2),
             (2, 2, 2), (2, 0, 1), (2, 2, 0), (2, 1, 2), (0, 1, 1)]
    migration_kinds = set()
    worst = 0.0
    for k, (conn, prev, cur) in enumerate(cases):
        pos = veh.trajectory[k % len(veh.trajectory)].pos
        got = total_latency(veh, VehicleSnapshot(pos, 0.0, conn, prev, cur, pos), sc.traffic, sc)
        want = _hand_latency(pos, conn, prev, cur)
        parts = [got.uplink, got.downlink, got.backhaul, got.migration, got.computation]
        for g, w in zip(parts + [got.total], want + [sum(want)]):
            worst = max(worst, abs(g - w) / abs(w) if w else abs(g))
        migration_kinds.add("none" if prev == cur else f"{'rsu' if prev < 2 else 'sat'}->{'rsu' if cur < 2 else 'sat'}")
    ok = worst <= 1e-9 and migration_kinds == {"none", "rsu->rsu", "rsu->sat", "sat->rsu"}
    record(3, ok, f"max relative error {worst:.2e} over {len(cases)} slots, migration cases {sorted(migration_kinds)}")
    assert ok


# ---------------------------------------------------------------- 4
def test_criterion_4_full_loss_gradient():
    start = time.perf_counter()
    rng = np.random.default_rng(99)
    policy = HybridPolicy(14, 2, 3, 0.015, make_schedule(2), (8, 8), -0.5, seed=5)
    n = 8
    states = rng.uniform(0, 1, (n, 14))
    decs = [policy.act(s, rng) for s in states]
    z = np.array([d.z for d in decs])
    servers = np.array([d.servers for d in decs])
    lp_old = np.array([d.logprob for d in decs]) + rng.normal(0, 0.05, n)
    v_old = rng.normal(0, 1, n)
    ret = v_old + rng.normal(0, 0.5, n)
    adv = rng.normal(0, 1, n)
    x0 = onehot_servers(servers, 3)

    def loss():
        lp, table, v, recon = policy.evaluate(states, z, servers)
        return total_loss(ppo_clip_loss(importance_ratio(lp, lp_old), adv, 0.2), value_loss(v, v_old, ret, 0.2),
                          entropy_loss(table, 0.05), aux_diffusion_loss(recon, x0, adv, 3), 0.5, 0.1)

    params = policy.parameters()
    loss().backward()
    h = 1e-6
    groups = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        an = p.grad.reshape(-1) if p.grad is not None else np.zeros(flat.size)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            with no_grad():
                up = loss().item()
            flat[i] = keep - h
            with no_grad():
                down = loss().item()
            flat[i] = keep
            groups.setdefault(name, []).append(((up - down) / (2 * h), an[i]))
    rel = {}
    for name, pairs in groups.items():
        fd, an = np.array(pairs).T
        rel[name] = float(np.linalg.norm(fd - an) / max(np.linalg.norm(fd), np.linalg.norm(an), 1e-12))
    elapsed = time.perf_counter() - start
    worst = max(rel, key=rel.get)
    ok = max(rel.values()) < 1e-3 and elapsed < 120 and {k.split(".")[0] for k in rel} == {"cont", "disc", "critic"}
    record(4, ok, f"{len(rel)} parameter groups, worst {worst} at {rel[worst]:.2e} ({elapsed:.1f} s)")
    assert ok


# ---------------------------------------------------------------- 5
def _gae_double_sum(r, v, d, gamma, lam):
    T = len(r)
    delta = [r[t] + gamma * v[t + 1] * (1 - d[t]) - v[t] for t in range(T)]
    out = []
    for t in range(T):
        total, coef = 0.0, 1.0
        for k in range(t, T):
            total += coef * delta[k]
            if d[k]:
                break
            coef *= gamma * lam
        out.append(total)
    return np.array(out)


def test_criterion_5_ppo_identities(tiny_env):
    rng = np.random.default_rng(5)
    policy = HybridPolicy(tiny_env.state_dim, tiny_env.n_vehicles, tiny_env.n_servers, tiny_env.r_max,
                          make_schedule(5), (32, 32), -0.5, seed=3)
    roll = run_episode(tiny_env, PolicyController(policy), rng)
    note_violations("criterion 5 rollout", roll.violations)
    n = len(roll.rewards)
    adv = rng.normal(size=n)
    rec = []
    cfg = TrainConfig(epochs=1, minibatch=64, hidden=(32, 32))
    ppo_update(policy, Adam(policy.parameters(), 1e-4), roll, adv, np.zeros(n), np.zeros(n), cfg, 0, rng, rec)
    ratio, a = rec[0]
    ratio_err = float(np.max(np.abs(ratio - 1.0)))
    clip_err = abs(ppo_clip_loss(ratio, a, 0.2).item() + float(np.mean(a)))
    raw = rng.normal(size=16)
    clip_raw_err = abs(ppo_clip_loss(np.ones(16), raw, 0.2).item() + float(np.mean(raw)))
    gae_err = 0.0
    for _ in range(400):
        T = int(rng.integers(1, 17))
        r, v = rng.normal(size=T), rng.normal(size=T + 1)
        d = rng.random(T) < 0.2
        gamma, lam = rng.uniform(0, 1, 2)
        got, _ = compute_gae(r, v, d, gamma, lam)
        gae_err = max(gae_err, float(np.max(np.abs(got - _gae_double_sum(r, v, d, gamma, lam)))))
    ok = ratio_err <= 1e-10 and max(clip_err, clip_raw_err) <= 1e-10 and gae_err <= 1e-12
    record(5, ok, f"ratio error {ratio_err:.1e}, clip-loss error {max(clip_err, clip_raw_err):.1e}, "
                  f"GAE error {gae_err:.1e}")
    assert ok


# ---------------------------------------------------------------- 6
@pytest.mark.slow
def test_criterion_6_learning_progress(tiny_cfg, tiny_scenario):
    start = time.perf_counter()
    seeds = range(5)
    improved, beats = [], []
    lines = []
    for seed in seeds:
        res = train(lambda: build_env(tiny_cfg, tiny_scenario), tiny_cfg.train, seed=seed)
        rewards = [m["mean_reward"] for m in res.metrics]
        note_violations(f"train seed {seed}", sum(m["violations"] for m in res.metrics))
        first, last = float(np.mean(rewards[:100])), float(np.mean(rewards[-100:]))
        env = build_env(tiny_cfg, tiny_scenario)
        ours = evaluate(env, PolicyController(res.policy, tiny_cfg.train.eval_deterministic),
                        tiny_cfg.train.eval_episodes, seed=1000 + seed)
        geo = evaluate(env, GeoIController(geo_i_eps(env.r_max), env.n_vehicles, env.n_servers),
                       tiny_cfg.train.eval_episodes, seed=1000 + seed)
        note_violations(f"eval seed {seed}", sum(e["violations"] for e in ours + geo))
        u_ours = float(np.mean([e["objective"] for e in ours]))
        u_geo = float(np.mean([e["objective"] for e in geo]))
        improved.append(last > first)
        beats.append(u_ours > u_geo)
        lines.append(f"seed {seed}: reward {first:.3f}->{last:.3f}, utility {u_ours:.3f} vs geo_i {u_geo:.3f}")
        print(lines[-1])
    elapsed = time.perf_counter() - start
    ok = sum(improved) >= 4 and sum(beats) >= 4 and elapsed < 30 * 60
    record(6, ok, f"improved on {sum(improved)}/5 seeds, beat geo_i on {sum(beats)}/5 ({elapsed / 60:.1f} min)")
    assert ok


# ---------------------------------------------------------------- 7
def test_criterion_7_metric_credibility(tiny_env):
    rows = intensity_sweep(tiny_env, levels=10, seed=0)
    for row in rows:
        note_violations("intensity sweep", int(not 0 <= row.radius <= tiny_env.r_max))
    rep = credibility_report(rows)
    cross, phys = rep["spearman_cross"], rep["spearman_physical"]
    ok = cross <= -0.8 and abs(phys) < abs(cross)
    record(7, ok, f"Spearman(entropy, confidence) cross {cross:.3f}, physical-only {phys:.3f}")
    assert ok


# ---------------------------------------------------------------- 8
def test_criterion_8_determinism(tmp_path, capsys):
    cfg = with_overrides(load_config(tiny_config_path()), train={"iterations": 6, "eval_episodes": 2})
    ini = tmp_path / "run.ini"
    ini.write_text(dump_config(cfg))
    names = ("metrics.jsonl", "eval_lhdppo.jsonl", "steps_lhdppo.jsonl", "summary_lhdppo.json",
             "eval_geo_i.jsonl", "steps_geo_i.jsonl", "summary_geo_i.json")
    blobs = []
    for run in ("first", "second"):
        out = tmp_path / run
        assert main(["train", "--config", str(ini), "--out", str(out)]) == 0
        assert main(["eval", "--config", str(ini), "--out", str(out), "--checkpoint", str(out / "checkpoint.npz")]) == 0
        assert main(["eval", "--config", str(ini), "--out", str(out), "--policy", "geo_i"]) == 0
        blobs.append({n: (out / n).read_bytes() for n in names})
        for n in ("summary_lhdppo.json", "summary_geo_i.json"):
            note_violations(f"cli eval {run} {n}", json.loads(blobs[-1][n])["violations"])
    capsys.readouterr()
    same = [n for n in names if blobs[0][n] == blobs[1][n]]
    ok = len(same) == len(names)
    record(8, ok, f"{len(same)}/{len(names)} train and eval logs byte-identical across two runs")
    assert ok


# ---------------------------------------------------------------- 9
def test_criterion_9_constraint_soundness(tiny_env):
    rng = np.random.default_rng(9)
    for label, ctl in (("random", RandomController()),
                       ("geo_i", GeoIController(geo_i_eps(tiny_env.r_max), tiny_env.n_vehicles,
                                                tiny_env.n_servers))):
        for ep in range(2):
            roll = run_episode(tiny_env, ctl, rng, seed=ep)
            bad = roll.violations
            for o in roll.outcomes:
                bad += action_violations(o.executed, tiny_env.r_max, tiny_env.n_servers)
                bad += sum(int(v < 0) for p in o.latency_parts for v in dataclasses.asdict(p).values())
            note_violations(f"{label} episodes", bad)
    total = sum(VIOLATIONS.values())
    bad_runs = sorted(k for k, v in VIOLATIONS.items() if v)
    ok = total == 0
    record(9, ok, f"{total} violations across {len(VIOLATIONS)} checked runs" + (f" in {bad_runs}" if bad_runs else ""))
    assert ok

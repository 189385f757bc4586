import numpy as np
import pytest

from crosspriv.config import build_env, build_scenario, load_config, tiny_config_path
from crosspriv.env import Env
from crosspriv.geo import GeoPoint
from crosspriv.world import (BBox, RadioParams, Scenario, ServerDefaults, TracePoint, TrafficProfile, Vehicle)

CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(CRITERIA):
        ok, detail = CRITERIA[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def tiny_cfg():
    return load_config(tiny_config_path())


@pytest.fixture(scope="session")
def tiny_scenario(tiny_cfg):
    return build_scenario(tiny_cfg)


@pytest.fixture
def tiny_env(tiny_cfg, tiny_scenario):
    return build_env(tiny_cfg, tiny_scenario)


def straight_vehicle(vid, start, step, n, t0=0.0, slot=30.0, **kw):
    pts = []
    for k in range(n):
        p = GeoPoint(start[0] + step[0] * k, start[1] + step[1] * k)
        pts.append(TracePoint(t0 + slot * k, p, 0.0))
    return Vehicle(vid, tuple(pts), **kw)


def make_toy_scenario():
    """One vehicle drifting east past two RSUs 2.5 km apart, plus the satellite."""
    d = ServerDefaults()
    bbox = BBox(121.40, 31.18, 121.50, 31.26)
    servers = [d.rsu(0, GeoPoint(121.43, 31.22)), d.rsu(1, GeoPoint(121.456, 31.22)), d.satellite(2)]
    veh = straight_vehicle(0, (121.428, 31.221), (0.002, 0.0), 12)
    return Scenario([veh], servers, RadioParams(), TrafficProfile(), bbox, link_radius_km=3.0)


@pytest.fixture
def toy_scenario():
    return make_toy_scenario()


@pytest.fixture
def toy_env(toy_scenario):
    return Env(toy_scenario)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

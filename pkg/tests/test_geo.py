import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from crosspriv.geo import (EARTH_RADIUS_KM, GeoPoint, ParameterError, PolarOffset, apply_polar_offset,
                           haversine_km, included_angle, local_bearing, planar_laplace_pdf, radial_cdf,
                           radial_inverse_cdf, sample_planar_laplace, sample_planar_laplace_batch, wrap_angle)

lons = st.floats(min_value=-179.0, max_value=179.0)
lats = st.floats(min_value=-80.0, max_value=80.0)


def test_geopoint_validates():
    with pytest.raises(ValueError):
        GeoPoint(200.0, 0.0)
    with pytest.raises(ValueError):
        GeoPoint(0.0, -91.0)


def test_polar_offset_validates():
    with pytest.raises(ValueError):
        PolarOffset(-0.1, 0.0)
    with pytest.raises(ValueError):
        PolarOffset(0.1, 2 * math.pi)


def test_haversine_known_values():
    assert haversine_km(GeoPoint(0, 0), GeoPoint(0, 1)) == pytest.approx(EARTH_RADIUS_KM * math.pi / 180, rel=1e-12)
    assert haversine_km(GeoPoint(0, 0), GeoPoint(90, 0)) == pytest.approx(EARTH_RADIUS_KM * math.pi / 2, rel=1e-12)
    # Shanghai People's Square to Pudong airport, about 40 km
    assert haversine_km(GeoPoint(121.4737, 31.2304), GeoPoint(121.8083, 31.1443)) == pytest.approx(33.2, abs=0.5)


@given(lons, lats, lons, lats)
@settings(max_examples=200, deadline=None)
def test_haversine_symmetric_nonnegative(a, b, c, d):
    p, q = GeoPoint(a, b), GeoPoint(c, d)
    assert haversine_km(p, q) == pytest.approx(haversine_km(q, p), abs=1e-9)
    assert haversine_km(p, q) >= 0.0
    assert haversine_km(p, p) == 0.0


@given(st.floats(min_value=-100.0, max_value=100.0, allow_nan=False))
def test_wrap_angle_range(x):
    w = wrap_angle(x)
    assert 0.0 <= w < 2 * math.pi
    assert math.isclose(math.cos(w), math.cos(x), abs_tol=1e-9)


def test_pdf_normalizes():
    eps = 7.0
    total, _ = integrate.quad(lambda r: 2 * math.pi * planar_laplace_pdf(eps, r), 0, np.inf)
    assert total == pytest.approx(1.0, abs=1e-10)


def test_pdf_values():
    assert planar_laplace_pdf(2.0, 0.0) == 0.0
    assert planar_laplace_pdf(2.0, 1.0) == pytest.approx(4 / (2 * math.pi) * math.exp(-2))
    with pytest.raises(ParameterError):
        planar_laplace_pdf(0.0, 1.0)


@given(st.floats(min_value=0.1, max_value=100.0), st.floats(min_value=1e-9, max_value=1 - 1e-9))
@settings(max_examples=200, deadline=None)
def test_inverse_cdf_round_trip(eps, p):
    r = float(radial_inverse_cdf(eps, p))
    assert r >= 0.0
    assert float(radial_cdf(eps, r)) == pytest.approx(p, abs=1e-9)


def test_cdf_matches_integral():
    eps, r = 3.0, 0.8
    num, _ = integrate.quad(lambda x: 2 * math.pi * planar_laplace_pdf(eps, x), 0, r)
    assert float(radial_cdf(eps, r)) == pytest.approx(num, abs=1e-12)


def test_sampler_errors_and_types(rng):
    with pytest.raises(ParameterError):
        sample_planar_laplace(-1.0, rng)
    off = sample_planar_laplace(5.0, rng)
    assert isinstance(off, PolarOffset)
    r, th = sample_planar_laplace_batch(5.0, 1000, rng)
    assert r.shape == th.shape == (1000,)
    assert np.all(r >= 0) and np.all((th >= 0) & (th < 2 * math.pi))


def test_sampler_mean_radius(rng):
    r, _ = sample_planar_laplace_batch(10.0, 200_000, rng)
    assert r.mean() == pytest.approx(2 / 10.0, rel=0.01)


def test_apply_polar_offset_in_degrees():
    p = apply_polar_offset(GeoPoint(121.0, 31.0), PolarOffset(0.01, math.pi / 2))
    assert p.lon == pytest.approx(121.0, abs=1e-15)
    assert p.lat == pytest.approx(31.01, abs=1e-12)
    q = apply_polar_offset(GeoPoint(179.999, 0.0), PolarOffset(0.01, 0.0))
    assert q.lon == 180.0


def test_local_bearing_cardinal():
    o = GeoPoint(121.0, 31.0)
    assert local_bearing(o, GeoPoint(121.1, 31.0)) == pytest.approx(0.0, abs=1e-12)
    assert local_bearing(o, GeoPoint(121.0, 31.1)) == pytest.approx(math.pi / 2)
    assert local_bearing(o, GeoPoint(120.9, 31.0)) == pytest.approx(math.pi)


def test_included_angle():
    o = GeoPoint(121.0, 31.0)
    east = GeoPoint(121.1, 31.0)
    assert included_angle(o, east, 0.0) == (pytest.approx(0.0, abs=1e-12), False)
    assert included_angle(o, east, math.pi)[0] == pytest.approx(math.pi)
    assert included_angle(o, east, 3 * math.pi / 2)[0] == pytest.approx(math.pi / 2)
    assert included_angle(o, o, 1.0) == (0.0, True)


@given(lons, lats, st.floats(min_value=0.001, max_value=0.5), st.floats(min_value=0.0, max_value=6.28))
@settings(max_examples=100, deadline=None)
def test_included_angle_range(lon, lat, dist, theta):
    a, _ = included_angle(GeoPoint(lon, lat), GeoPoint(lon + dist, lat + dist / 2), theta)
    assert 0.0 <= a <= math.pi

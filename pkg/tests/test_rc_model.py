import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal

from _util import random_admissible
from spdir.errors import DomainError, PreconditionError
from spdir.rc_model import (CHANNELS, PRESETS, SIGN_PATTERN, RcParams, build_state_space, char_poly,
                            continuous_dc_gains, sampling_bound, transform_disturbance,
                            tustin_disturbance_coeffs, tustin_plant_params)

UNIT = RcParams(1.0, 1.0, 1.0, 1.0, 1.0)


def test_unit_state_space():
    ss = build_state_space(UNIT)
    np.testing.assert_array_equal(ss.F, [[-1, 1], [1, -2]])
    np.testing.assert_array_equal(ss.G, [[1, 0, 1], [0, 1, 0]])
    np.testing.assert_array_equal(ss.H, [[1], [0]])
    np.testing.assert_array_equal(ss.J, [[1, 0]])


def test_substituted_state_space():
    ss = build_state_space(RcParams(Cz=2, Cw=4, Rz=0.5, Rw=1, Ae=3))
    # 1/(CzRz) = 1, 1/(CwRz) = 0.5, (1/Rw + 1/Rz)/Cw = 0.75, Ae/Cz = 1.5, 1/(CwRw) = 0.25
    np.testing.assert_allclose(ss.F, [[-1, 1], [0.5, -0.75]], rtol=0, atol=1e-15)
    np.testing.assert_allclose(ss.G, [[0.5, 0, 1.5], [0, 0.25, 0]], rtol=0, atol=1e-15)
    assert np.trace(ss.F) < 0 and np.linalg.det(ss.F) > 0


def test_tiny_solar_area_zeroes_column():
    ss = build_state_space(RcParams(1, 1, 1, 1, 1e-300))
    assert np.all(np.abs(ss.G[:, 2]) <= 1e-300)


@pytest.mark.parametrize("field", ["Cz", "Cw", "Rz", "Rw", "Ae"])
@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
def test_nonpositive_parameter_named(field, bad):
    kw = UNIT.to_dict()
    kw[field] = bad
    with pytest.raises(DomainError, match=field):
        RcParams(**kw)


def test_json_round_trip():
    p = PRESETS["light_wall"]
    assert RcParams.from_json(p.to_json()) == p
    with pytest.raises(DomainError, match="Ae"):
        RcParams.from_dict({"Cz": 1, "Cw": 1, "Rz": 1, "Rw": 1})


def test_sampling_bound_unit():
    assert sampling_bound(UNIT) == pytest.approx(2 / 3, rel=1e-15)


@given(st.floats(0.01, 100))
def test_sampling_bound_homogeneous_in_capacitance(k):
    p = PRESETS["light_wall"]
    q = RcParams(p.Cz * k, p.Cw * k, p.Rz, p.Rw, p.Ae)
    assert sampling_bound(q) == pytest.approx(k * sampling_bound(p), rel=1e-12)
    assert sampling_bound(q) > 0


def test_ts_out_of_range():
    b = sampling_bound(UNIT)
    for ts in (0.0, -0.1, b, 2 * b):
        with pytest.raises(PreconditionError):
            tustin_plant_params(UNIT, ts)
        with pytest.raises(PreconditionError):
            tustin_disturbance_coeffs(UNIT, ts)


def _scipy_tf(p, ts, j):
    ss = build_state_space(p)
    A, B, C, D, _ = signal.cont2discrete((ss.F, ss.G[:, [j]], ss.J, np.zeros((1, 1))), ts,
                                         method="bilinear")
    num, den = signal.ss2tf(A, B, C, D)
    return num.ravel() / den[0], den / den[0]


@pytest.mark.parametrize("seed", range(20))
def test_matches_scipy_bilinear(seed):
    rng = np.random.default_rng(seed)
    p, ts = random_admissible(rng)
    th = tustin_plant_params(p, ts).theta
    for j, ch in enumerate(CHANNELS):
        num, den = _scipy_tf(p, ts, j)
        np.testing.assert_allclose(den, [1, -th[0], -th[1]], rtol=1e-9, atol=1e-12)
        # scipy orders by powers of z: [z^2, z, 1] <-> [u[k], u[k-1], u[k-2]]
        c, b, a = num
        scale = np.abs(num).max()
        np.testing.assert_allclose([a, b, c], tustin_plant_params(p, ts).numerator(ch),
                                   rtol=1e-8, atol=1e-10 * scale)


@pytest.mark.parametrize("seed", range(20))
def test_poles_are_bilinear_images(seed):
    rng = np.random.default_rng(100 + seed)
    p, ts = random_admissible(rng)
    th = tustin_plant_params(p, ts).theta
    d1, d2 = char_poly(p)
    s = np.roots([1, d1, d2])
    z_expected = np.sort_complex((1 + s * ts / 2) / (1 - s * ts / 2))
    z = np.sort_complex(np.roots([1, -th[0], -th[1]]))
    np.testing.assert_allclose(z, z_expected, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("seed", range(20))
def test_dc_gain_preserved(seed):
    rng = np.random.default_rng(200 + seed)
    p, ts = random_admissible(rng)
    th = tustin_plant_params(p, ts).theta
    g = continuous_dc_gains(p)
    ss = build_state_space(p)
    d1, d2 = char_poly(p)
    assert g[0] == pytest.approx(-ss.F[1, 1] * ss.G[0, 0] / d2, rel=1e-12)
    den = 1 - th[0] - th[1]
    for j in range(3):
        assert th[2 + 3 * j: 5 + 3 * j].sum() / den == pytest.approx(g[j], rel=1e-8)


def test_light_wall_dc_gain_is_series_resistance():
    p = PRESETS["light_wall"]
    assert continuous_dc_gains(p)[0] == pytest.approx(p.Rz + p.Rw, rel=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sign_theorem_and_structure(seed):
    p, ts = random_admissible(np.random.default_rng(seed))
    th = tustin_plant_params(p, ts).theta
    assert np.all(np.sign(th) == SIGN_PATTERN)
    assert abs(th[6] - 2 * th[5]) <= 1e-12 * abs(th[6])
    assert th[7] == th[5]


def test_solar_channel_scales_with_area():
    base = RcParams(2, 5, 1, 5, 1.0)
    th1 = tustin_plant_params(base, 0.1).theta
    tiny = RcParams(2, 5, 1, 5, 1e-200)
    th2 = tustin_plant_params(tiny, 0.1).theta
    np.testing.assert_allclose(th2[8:], th1[8:] * 1e-200, rtol=1e-12)
    assert np.all(np.abs(th2[8:]) < 1e-200)
    np.testing.assert_array_equal(th1[:8], th2[:8])


def test_disturbance_coefficients_hand_values():
    c = tustin_disturbance_coeffs(UNIT, 0.1)
    assert c.eps0 == pytest.approx(0.2, rel=1e-14)
    np.testing.assert_allclose(c.beta, 0.1 / 4.61 * np.array([2.2, 0.4, -1.8]), rtol=1e-13)
    assert c.gain == pytest.approx(0.1 / 4.61, rel=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_disturbance_coefficient_identities(seed):
    p, ts = random_admissible(np.random.default_rng(300 + seed))
    c = tustin_disturbance_coeffs(p, ts)
    k = c.gain
    assert c.beta0 - c.beta2 == pytest.approx(4 * k, rel=1e-12)
    assert c.beta0 + c.beta2 == pytest.approx(c.beta1, rel=1e-12)
    assert c.beta.sum() == pytest.approx(4 * c.eps0 * k, rel=1e-10)
    assert c.eps0 > 0 and c.beta0 > 0
    if c.eps0 < 2:
        assert c.beta2 < 0


def test_heavy_wall_limit_shrinks_eps0():
    e = [tustin_disturbance_coeffs(RcParams(2, cw, 1, 5, 10), 0.1) for cw in (1e1, 1e3, 1e5)]
    assert e[0].eps0 > e[1].eps0 > e[2].eps0
    assert e[2].eps0 < 1e-5 and abs(e[2].beta1) < 1e-6


def test_transform_constant_and_impulse():
    c = tustin_disturbance_coeffs(PRESETS["light_wall"], 1 / 12)
    wb = transform_disturbance(np.full(10, 0.7), c)
    np.testing.assert_allclose(wb, 0.7 * c.beta.sum(), rtol=1e-12)
    imp = np.zeros(8)
    imp[2] = 1.0
    np.testing.assert_allclose(transform_disturbance(imp, c)[:4], [c.beta0, c.beta1, c.beta2, 0.0],
                               rtol=1e-12, atol=1e-18)
    with pytest.raises(DomainError):
        transform_disturbance([1.0, 2.0], c)


def test_transform_grouped_form_is_plus_eps0():
    # beta0 w[k] + beta1 w[k-1] + beta2 w[k-2] expands to
    # gain * (2 (w[k] - w[k-2]) + eps0 (w[k] + 2 w[k-1] + w[k-2]))
    rng = np.random.default_rng(5)
    p = PRESETS["light_wall"]
    c = tustin_disturbance_coeffs(p, 1 / 12)
    w = rng.normal(size=50)
    direct = c.beta0 * w[2:] + c.beta1 * w[1:-1] + c.beta2 * w[:-2]
    plus = c.gain * (2 * (w[2:] - w[:-2]) + c.eps0 * (w[2:] + 2 * w[1:-1] + w[:-2]))
    minus = c.gain * (2 * (w[2:] - w[:-2]) - c.eps0 * (w[2:] + 2 * w[1:-1] + w[:-2]))
    np.testing.assert_allclose(transform_disturbance(w, c), direct, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(plus, direct, rtol=1e-12, atol=1e-15)
    assert not np.allclose(minus, direct, rtol=1e-3)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-10, 10), st.floats(-10, 10))
def test_transform_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    c = tustin_disturbance_coeffs(PRESETS["light_wall"], 1 / 12)
    w1, w2 = rng.normal(size=(2, 40))
    lhs = transform_disturbance(a * w1 + b * w2, c)
    rhs = a * transform_disturbance(w1, c) + b * transform_disturbance(w2, c)
    scale = (abs(a) + abs(b) + 1) * np.abs(c.beta).sum() * 10
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-14 * scale)

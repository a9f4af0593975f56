import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anosovlab import families
from anosovlab.conjugacy import (VERDICT_RULES, PeriodicField, _term_count, _verdict, conjugacy_offset,
                                 foliation_image_check, functional_residual, leafwise_regularity_probe,
                                 series_plan, solve_conjugacy, verify_semiconjugacy)
from anosovlab.errors import ScaleBelowResolution, SeriesStall
from anosovlab.torus_core import _lattice, torus_displacement

X0 = np.array([0.1234, 0.5678, 0.3141])


@pytest.fixture(scope="module")
def smooth():
    f = families.smooth_conjugate(0.05)
    return f, solve_conjugacy(f, 8, 1e-10)


@pytest.fixture(scope="module")
def generic7():
    f = families.generic(7, 0.08)
    return f, solve_conjugacy(f, 8, 1e-10)


def test_linear_offset_is_exactly_zero():
    f = families.linear()
    H = solve_conjugacy(f, 8)
    assert np.all(H.u.values == 0.0) and H.residual == 0.0
    assert all(v == 0 for v in H.terms.values())
    assert np.all(H.offset(np.random.default_rng(0).random((10, 3))) == 0.0)


def test_translation_recovered():
    c = np.array([0.1, 0.2, 0.3])
    f = families.translation_conjugate(c)
    H = solve_conjugacy(f, 8, 1e-9)
    x = np.random.default_rng(1).random((500, 3))
    assert np.max(np.abs(H.offset(x) + c)) < 1e-8
    assert H.residual < 1e-8


def test_smooth_conjugator_recovered(smooth):
    f, H = smooth
    x = np.random.default_rng(2).random((200, 3))
    want = f.perturbation.G_inverse(x)
    assert np.max(np.abs(torus_displacement(H(x), want))) < 1e-8
    assert H.anchor_error < 1e-8


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_functional_equation_pointwise(seed):
    f = families.generic(seed % 10, 0.05)
    plan = series_plan(f, 1e-10)
    x = np.random.default_rng(seed).random((32, 3))
    u = conjugacy_offset(f, x, plan["terms"])
    uf = conjugacy_offset(f, f.apply(x), plan["terms"])
    r = uf - u @ f.A.T + f.perturbation.value(x)
    assert np.max(np.abs(r)) < 1e-8


@given(st.floats(1e-6, 10.0), st.floats(0.05, 0.95), st.floats(1e-13, 1e-3))
def test_term_count_is_tight(qsup, ratio, tol):
    k = _term_count(qsup, ratio, tol)
    tail = lambda k: qsup * ratio ** k / (1 - ratio)
    assert tail(k) < tol * (1 + 1e-9)
    assert k == 1 or tail(k - 1) >= tol * (1 - 1e-9)


def test_series_stall():
    with pytest.raises(SeriesStall):
        _term_count(1.0, 1.0, 1e-9)
    with pytest.raises(SeriesStall):
        _term_count(1.0, 0.9999, 1e-12)


def test_residual_and_semiconjugacy_generic(generic7):
    f, H = generic7
    assert H.residual < 1e-6
    assert verify_semiconjugacy(H, f, 8) < 1e-6
    assert functional_residual(H, f, 6) < 1e-6


def test_identity_offset_fails_semiconjugacy():
    f = families.generic(7, 0.08)
    H = solve_conjugacy(families.linear(), 4)
    assert functional_residual(H, f, 6) > 1e-3


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_trig_field_reproduces_band_limited(seed):
    rng = np.random.default_rng(seed)
    n = 8
    k = rng.integers(-3, 4, size=3)
    a = rng.normal(size=3)
    g = _lattice(n).reshape(n, n, n, 3)
    field = PeriodicField(np.cos(2 * np.pi * g @ k)[..., None] * a, "trigonometric")
    x = rng.random((20, 3))
    assert np.allclose(field(x), np.cos(2 * np.pi * x @ k)[:, None] * a, atol=1e-12)
    const = PeriodicField(np.broadcast_to(a, (n, n, n, 3)).copy())
    assert np.allclose(const(x), a)


def test_periodic_field_rejects_unknown_order():
    with pytest.raises(ValueError):
        PeriodicField(np.zeros((2, 2, 2, 3)), "cubic")


def test_foliation_images(generic7):
    f, H = generic7
    for tag in ("wu", "s"):
        dev = foliation_image_check(H, f, tag, X0, 0.3)
        assert float(dev) < 1e-5 and dev.monotone
    uu = foliation_image_check(H, f, "uu", X0, 0.3)
    assert float(uu) < 1e-9 and uu.monotone


def test_probe_smooth_conjugate_is_c1(smooth):
    f, H = smooth
    pts = np.random.default_rng(3).random((12, 3))
    for tag in ("uu", "wu"):
        rep = leafwise_regularity_probe(H, f, tag, pts)
        assert rep.verdict == "C1-consistent"
        assert abs(rep.exponent - 1) < 0.01
        assert json.dumps(rep.to_dict())


def test_probe_generic_wu_is_sub_lipschitz(generic7):
    f, H = generic7
    rep = leafwise_regularity_probe(H, f, "wu", np.random.default_rng(3).random((48, 3)))
    assert rep.verdict == "sub-Lipschitz"
    assert rep.rules == VERDICT_RULES


def test_probe_refuses_scales_below_resolution(smooth):
    f, H = smooth
    with pytest.raises(ScaleBelowResolution):
        leafwise_regularity_probe(H, f, "wu", X0, [1e-2, 1e-4, 1e-9])
    with pytest.raises(ValueError):
        leafwise_regularity_probe(H, f, "wu", X0, [1e-2, 1e-3])


@given(st.floats(0.0, 2.0), st.lists(st.floats(0.0, 0.2), min_size=1, max_size=40))
def test_verdict_rules(nu, stab):
    stab = np.array(stab)
    verdict, unstable = _verdict(nu, stab)
    frac = float(np.mean(stab > 0.05))
    assert unstable == frac
    if abs(nu - 1) <= 0.05 and frac == 0:
        assert verdict == "C1-consistent"
    elif nu < 0.95 or frac >= 0.1:
        assert verdict == "sub-Lipschitz"
    else:
        assert verdict == "inconclusive"


def test_summary_is_serializable(smooth):
    _, H = smooth
    s = H.summary()
    assert json.loads(json.dumps(s))["grid_n"] == 8
    assert math.isfinite(H.resolution)

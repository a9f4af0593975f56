import numpy as np
from hypothesis import given, settings, strategies as st

from anosovlab import families
from anosovlab.torus_core import torus_displacement

points = st.lists(st.floats(-3.0, 3.0, allow_nan=False), min_size=3, max_size=3).map(np.array)


@settings(max_examples=30, deadline=None)
@given(points)
def test_volume_preserving_family(x):
    f = families.volume_preserving(0.05)
    assert abs(np.linalg.det(f.jacobian(x)) - 1) < 1e-12
    assert f.perturbation.volume_defect(f.A) < 1e-15


def test_generic_family_is_seeded():
    a, b = families.generic(4), families.generic(4)
    assert np.array_equal(a.perturbation.sin_amp, b.perturbation.sin_amp)
    assert not np.array_equal(a.perturbation.sin_amp, families.generic(5).perturbation.sin_amp)
    # every mode's derivative is at most eps
    p = a.perturbation
    amp = np.hypot(np.linalg.norm(p.sin_amp, axis=1), np.linalg.norm(p.cos_amp, axis=1))
    assert np.all(2 * np.pi * amp * np.linalg.norm(p.frequencies, axis=1) <= 1.0 + 1e-12)


def test_translation_conjugate_form():
    f = families.translation_conjugate((0.1, 0.2, 0.3))
    x = np.random.default_rng(0).random((20, 3))
    c = np.array([0.1, 0.2, 0.3])
    assert np.allclose(f.lift_apply(x), (x - c) @ f.A.T + c, atol=1e-14)


def test_smooth_conjugate_form():
    f = families.smooth_conjugate(0.05)
    G = f.perturbation
    x = np.random.default_rng(0).random((50, 3))
    lhs = f.lift_apply(G.G(x))
    rhs = G.G(x @ f.A.T)
    assert np.max(np.abs(torus_displacement(lhs, rhs))) < 1e-12
    assert np.max(np.abs(G.G(G.G_inverse(x)) - x)) < 1e-12


def test_generic_family_members_are_certified():
    fam = families.generic_family(10, 0.08)
    assert len(fam) == 10 and len({f.name for f in fam}) == 10
    for f in fam[:3]:
        assert f.certificate.gamma < 1


def test_single_mode_amplitude():
    p = families.single_mode(0.05).perturbation
    assert abs(p.derivative_bound() - 0.05) < 1e-15


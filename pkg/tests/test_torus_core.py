import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anosovlab import families
from anosovlab.errors import ConeViolation, NonConvergence, NotPartiallyHyperbolicAnosov
from anosovlab.torus_core import (AnosovMap, PerturbationField, reduce, solve3, spectrum,
                             torus_displacement, verify_cone_condition)

# roots of t^3 - 5 t^2 + 6 t - 1, 30-digit arithmetic
ROOTS = np.array([3.24697960371746706105, 1.55495813208737119142, 0.19806226419516174753])
LOGS = np.array([1.17772521152335946367, 0.44144862056606596145, -1.61917383208942542512])

points = st.lists(st.floats(-3.0, 3.0, allow_nan=False), min_size=3, max_size=3).map(np.array)


def test_spectrum_matches_frozen_roots():
    sp = spectrum(families.A_DEFAULT)
    assert np.allclose(sp.alphas, ROOTS, rtol=0, atol=1e-13)
    assert np.allclose(sp.lambdas, LOGS, rtol=0, atol=1e-13)
    A = families.A_DEFAULT.astype(float)
    for i in range(3):
        v = sp.vectors[:, i]
        assert np.linalg.norm(A @ v - sp.alphas[i] * v) < 1e-13
        assert abs(np.linalg.norm(v) - 1) < 1e-14


@pytest.mark.parametrize("A", [np.eye(3, dtype=int),
                               [[0, 1, 0], [0, 0, 1], [1, 1, 0]],
                               [[2, 0, 0], [0, 1, 0], [0, 0, 1]],
                               [[2, 1, 0], [1, 1, 0], [0, 0, 1]]])
def test_spectrum_rejects_non_anosov(A):
    with pytest.raises(NotPartiallyHyperbolicAnosov):
        spectrum(A)


def test_spectrum_rejects_non_integer():
    with pytest.raises(ValueError):
        spectrum(np.full((3, 3), 0.5))


@given(points)
def test_reduce_is_canonical(x):
    r = reduce(x)
    assert np.all((r >= 0) & (r < 1))
    d = x - r
    assert np.allclose(d, np.round(d), atol=1e-12)


@given(points, points)
def test_displacement_is_shortest(x, y):
    d = torus_displacement(x, y)
    assert np.all(np.abs(d) <= 0.5 + 1e-12)
    assert np.max(np.abs(torus_displacement(x + d, y))) < 1e-9


@given(st.integers(0, 10 ** 6))
def test_solve3_matches_numpy(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(4, 3, 3)) + 3 * np.eye(3)
    b = rng.normal(size=(4, 3))
    assert np.allclose(solve3(M, b), np.linalg.solve(M, b[..., None])[..., 0], atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(points, st.sampled_from(["linear", "single", "generic", "smooth", "volume"]))
def test_inverse_roundtrip(x, which):
    f = {"linear": families.linear(), "single": families.single_mode(0.05),
         "generic": families.generic(3, 0.08), "smooth": families.smooth_conjugate(0.05),
         "volume": families.volume_preserving(0.05)}[which]
    y = f.apply(x)
    back = f.inverse_apply(y)
    assert np.max(np.abs(torus_displacement(back, x))) < 1e-10
    # the inverse map presents f^-1 with the same interface
    g = f.inverse()
    assert np.max(np.abs(torus_displacement(g.apply(y), x))) < 1e-10


@settings(max_examples=30, deadline=None)
@given(points)
def test_lift_is_equivariant(x):
    f = families.generic(1, 0.08)
    k = np.array([1.0, -2.0, 3.0])
    assert np.allclose(f.lift_apply(x + k), f.lift_apply(x) + f.A @ k, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(points)
def test_jacobian_matches_finite_difference(x):
    f = families.generic(2, 0.08)
    h = 1e-6
    J = np.stack([(f.lift_apply(x + h * e) - f.lift_apply(x - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
    assert np.allclose(f.jacobian(x), J, atol=1e-7)


@given(st.integers(0, 10 ** 6))
def test_sup_bounds_dominate_samples(seed):
    f = families.generic(seed % 10, 0.08)
    x = np.random.default_rng(seed).random((512, 3))
    p = f.perturbation
    assert np.max(np.linalg.norm(p.value(x), axis=1)) <= p.sup_bound() + 1e-15
    assert np.max(np.linalg.norm(p.jacobian(x), ord=2, axis=(1, 2))) <= p.derivative_bound() + 1e-12
    W = f.spectrum.basis_inverse
    assert np.all(np.max(np.abs(p.value(x) @ W.T), axis=0) <= p.component_sup_bound(W) + 1e-15)


def test_cone_certificate_linear_and_perturbed():
    c = families.linear().certificate
    assert c.expansion > 1 and c.contraction > 1 and c.gamma < 1
    lo, hi = c.log_factor_range("uu")
    assert lo <= LOGS[0] + 1e-12 and hi >= LOGS[0] - 1e-12
    cert = verify_cone_condition(families.generic(7, 0.08), grid_n=12)
    assert cert.gamma < 1
    for tag in ("uu", "wu", "s"):
        assert cert.factors[tag][0] <= cert.factors[tag][1]


def test_cone_violation_reports_point():
    with pytest.raises(ConeViolation) as info:
        verify_cone_condition(families.single_mode(0.9), grid_n=12)
    assert info.value.point is not None or info.value.detail is not None


def test_newton_nonconvergence_is_raised():
    f = families.generic(0, 0.08)
    with pytest.raises(NonConvergence):
        f.lift_inverse(np.array([0.3, 0.4, 0.5]), tol=0.0, max_iter=0)


def test_custom_perturbation_validation():
    with pytest.raises(ValueError):
        PerturbationField([[1, 0, 0], [0, 1, 0]], [[0, 0, 0]], [[0, 0, 0]], 0.1)
    f = AnosovMap(families.A_DEFAULT, PerturbationField.zero())
    assert f.is_linear and f.epsilon == 0.0

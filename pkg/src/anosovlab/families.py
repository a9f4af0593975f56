"""Test map families on T^3 with the linear part A = [[2,1,0],[1,2,1],[0,1,1]]."""

import numpy as np

from .torus_core import TWO_PI, AnosovMap, ConjugatePerturbation, PerturbationField

A_DEFAULT = np.array([[2, 1, 0], [1, 2, 1], [0, 1, 1]], dtype=np.int64)


def linear(A=A_DEFAULT):
    return AnosovMap(A, name="linear")


def single_mode(eps=0.05, A=A_DEFAULT):
    """p = (eps / 2 pi) (sin 2 pi x2, 0, 0)."""
    p = PerturbationField([[0, 1, 0]], [[1.0 / TWO_PI, 0.0, 0.0]], [[0.0, 0.0, 0.0]], eps)
    return AnosovMap(A, p, name=f"single_mode(eps={eps:g})")


def _unit_mode_amp(k, direction):
    """Amplitude along ``direction`` whose mode has |Dp_m| = 1 at eps = 1."""
    d = np.asarray(direction, dtype=float)
    return d / (np.linalg.norm(d) * TWO_PI * np.linalg.norm(k))


def generic(seed, eps=0.08, n_modes=3, kmax=2, A=A_DEFAULT):
    """Seeded random non-conservative perturbation.

    Each mode has a random frequency with |k_i| <= kmax and random sine/cosine
    amplitudes, scaled so that |Dp_m| <= eps.
    """
    rng = np.random.default_rng([20240611, seed])
    ks, ss, cs = [], [], []
    while len(ks) < n_modes:
        k = rng.integers(-kmax, kmax + 1, size=3)
        if not np.any(k):
            continue
        ang = rng.uniform(0, TWO_PI)
        w = rng.uniform(0.5, 1.0)
        ks.append(k)
        ss.append(w * np.cos(ang) * _unit_mode_amp(k, rng.normal(size=3)))
        cs.append(w * np.sin(ang) * _unit_mode_amp(k, rng.normal(size=3)))
    p = PerturbationField(ks, ss, cs, eps)
    return AnosovMap(A, p, name=f"generic(seed={seed},eps={eps:g})")


def volume_preserving(eps=0.05, A=A_DEFAULT):
    """Rank-one shears along A e1 with frequencies in the (x2, x3) plane.

    Dp = a (grad phi)^T with A^-1 a = e1 and d phi / d x1 = 0, so
    det(A + Dp) = det(A) (1 + grad phi . A^-1 a) = 1 exactly.
    """
    A = np.asarray(A, dtype=np.int64)
    a = A[:, 0].astype(float)
    ks = np.array([[0, 1, 0], [0, 1, 1], [0, 0, 1]])
    ss = [0.6 * _unit_mode_amp(ks[0], a), 0.0 * a, 0.3 * _unit_mode_amp(ks[2], a)]
    cs = [0.0 * a, 0.4 * _unit_mode_amp(ks[1], a), 0.0 * a]
    p = PerturbationField(ks, ss, cs, eps)
    return AnosovMap(A, p, name=f"volume_preserving(eps={eps:g})")


def conjugator(eps=0.05):
    """Small explicit diffeomorphism G = id + w of T^3."""
    ks = np.array([[1, 0, 0], [0, 1, 1], [1, -1, 0]])
    ss = [_unit_mode_amp(ks[0], [0.3, 0.5, -0.2]), np.zeros(3), _unit_mode_amp(ks[2], [0.1, 0.2, 0.4])]
    cs = [np.zeros(3), _unit_mode_amp(ks[1], [-0.4, 0.1, 0.3]), np.zeros(3)]
    return PerturbationField(ks, ss, cs, eps)


def smooth_conjugate(eps=0.05, A=A_DEFAULT):
    """F = G o A o G^-1; the conjugacy to A is h = G^-1."""
    p = ConjugatePerturbation(A, conjugator(eps))
    return AnosovMap(A, p, name=f"smooth_conjugate(eps={eps:g})")


def translation_conjugate(c=(0.1, 0.2, 0.3), A=A_DEFAULT):
    """F(x) = A(x - c) + c, so H(x) = x - c solves H o F = A o H (u = -c)."""
    A = np.asarray(A, dtype=np.int64)
    c = np.asarray(c, dtype=float)
    shift = (np.eye(3) - A) @ c
    p = PerturbationField([[0, 0, 0]], [[0.0, 0.0, 0.0]], [shift], 1.0)
    return AnosovMap(A, p, name="translation_conjugate")


def generic_family(n=10, eps=0.08):
    return [generic(seed, eps) for seed in range(n)]

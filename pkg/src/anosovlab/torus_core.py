"""Maps f = A + p on the 3-torus: lifts, inverses, Jacobians, spectra and cones.

Points are numpy arrays with a trailing axis of length 3.  Lifts live in R^3
and are never reduced unless a function says so; torus points are canonical
representatives in [0, 1)^3.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConeViolation, NonConvergence, NotPartiallyHyperbolicAnosov

TAGS = ("uu", "wu", "s")
TAG_INDEX = {"uu": 0, "wu": 1, "s": 2}
TWO_PI = 2.0 * np.pi


def reduce(x):
    """Canonical torus representative of each row of ``x`` (floor based)."""
    x = np.asarray(x, dtype=float)
    r = x - np.floor(x)
    r[r >= 1.0] = 0.0
    return r


def torus_displacement(x, y):
    """Shortest lift of ``y - x`` (componentwise minimum over integer shifts)."""
    d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    return d - np.round(d)


def torus_distance(x, y):
    return np.linalg.norm(torus_displacement(x, y), axis=-1)


def solve3(M, b):
    """Batched solution of M x = b for 3x3 systems by cofactors."""
    a = M[..., 1, 1] * M[..., 2, 2] - M[..., 1, 2] * M[..., 2, 1]
    c = M[..., 1, 2] * M[..., 2, 0] - M[..., 1, 0] * M[..., 2, 2]
    e = M[..., 1, 0] * M[..., 2, 1] - M[..., 1, 1] * M[..., 2, 0]
    det = M[..., 0, 0] * a + M[..., 0, 1] * c + M[..., 0, 2] * e
    inv = np.empty(M.shape)
    inv[..., 0, 0], inv[..., 1, 0], inv[..., 2, 0] = a, c, e
    inv[..., 0, 1] = M[..., 0, 2] * M[..., 2, 1] - M[..., 0, 1] * M[..., 2, 2]
    inv[..., 1, 1] = M[..., 0, 0] * M[..., 2, 2] - M[..., 0, 2] * M[..., 2, 0]
    inv[..., 2, 1] = M[..., 0, 1] * M[..., 2, 0] - M[..., 0, 0] * M[..., 2, 1]
    inv[..., 0, 2] = M[..., 0, 1] * M[..., 1, 2] - M[..., 0, 2] * M[..., 1, 1]
    inv[..., 1, 2] = M[..., 0, 2] * M[..., 1, 0] - M[..., 0, 0] * M[..., 1, 2]
    inv[..., 2, 2] = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    return np.einsum("...ij,...j->...i", inv, b) / det[..., None]


def _as_points(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 3), x.shape


# ---------------------------------------------------------------------------
# Spectrum of the linear part
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Spectrum:
    """Eigen-data of an integer matrix sorted by modulus (uu, wu, s)."""

    alphas: np.ndarray
    vectors: np.ndarray  # columns v_uu, v_wu, v_s

    @property
    def lambdas(self):
        return np.log(np.abs(self.alphas))

    @property
    def alpha_uu(self):
        return self.alphas[0]

    @property
    def alpha_wu(self):
        return self.alphas[1]

    @property
    def alpha_s(self):
        return self.alphas[2]

    @property
    def lambda_uu(self):
        return self.lambdas[0]

    @property
    def lambda_wu(self):
        return self.lambdas[1]

    @property
    def lambda_s(self):
        return self.lambdas[2]

    def vector(self, tag):
        return self.vectors[:, TAG_INDEX[tag]]

    def alpha(self, tag):
        return self.alphas[TAG_INDEX[tag]]

    def log_modulus(self, tag):
        return self.lambdas[TAG_INDEX[tag]]

    @cached_property
    def basis_inverse(self):
        return np.linalg.inv(self.vectors)

    @cached_property
    def condition(self):
        return np.linalg.cond(self.vectors)


def spectrum(A):
    """Eigenvalues and unit eigenvectors of an integer matrix with |det A| = 1.

    Raises NotPartiallyHyperbolicAnosov unless the three roots are real,
    distinct and satisfy |a_uu| > |a_wu| > 1 > |a_s|.
    """
    A = np.asarray(A)
    if A.shape != (3, 3) or not np.all(A == np.round(A)):
        raise ValueError("linear part must be a 3x3 integer matrix")
    det = round(np.linalg.det(A))
    if abs(det) != 1:
        raise NotPartiallyHyperbolicAnosov(f"|det A| = {abs(det)}, expected 1")
    w, v = np.linalg.eig(A.astype(float))
    scale = max(1.0, np.max(np.abs(w)))
    if np.max(np.abs(w.imag)) > 1e-9 * scale:
        raise NotPartiallyHyperbolicAnosov(f"non-real eigenvalues {w}")
    w = w.real
    v = v.real
    order = np.argsort(-np.abs(w))
    w, v = w[order], v[:, order]
    mods = np.abs(w)
    if np.min(np.abs(np.diff(mods))) < 1e-9 or np.min(np.abs(w[:, None] - w[None, :]) + np.eye(3)) < 1e-9:
        raise NotPartiallyHyperbolicAnosov(f"repeated eigenvalue moduli {w}")
    if not (mods[0] > mods[1] > 1.0 > mods[2] > 0.0):
        raise NotPartiallyHyperbolicAnosov(f"moduli {mods} do not split as |uu| > |wu| > 1 > |s|")
    # polish each eigenvector as the null direction of A - aI
    vecs = np.empty((3, 3))
    for i, a in enumerate(w):
        _, _, vt = np.linalg.svd(A - a * np.eye(3))
        vec = vt[-1]
        vec = vec / np.linalg.norm(vec)
        if vec[np.argmax(np.abs(vec))] < 0:
            vec = -vec
        vecs[:, i] = vec
    return Spectrum(alphas=w, vectors=vecs)


# ---------------------------------------------------------------------------
# Perturbations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerturbationField:
    """p(x) = eps * sum_m [s_m sin(2 pi k_m.x) + c_m cos(2 pi k_m.x)].

    ``frequencies`` is an (M, 3) integer array, ``sin_amp`` and ``cos_amp``
    are (M, 3) real arrays.  Periodic and smooth by construction.
    """

    frequencies: np.ndarray
    sin_amp: np.ndarray
    cos_amp: np.ndarray
    epsilon: float = 1.0

    def __post_init__(self):
        k = np.asarray(self.frequencies, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "frequencies", k)
        object.__setattr__(self, "sin_amp", np.asarray(self.sin_amp, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "cos_amp", np.asarray(self.cos_amp, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "_zero", self.epsilon == 0.0 or len(k) == 0 or (
            not np.any(self.sin_amp) and not np.any(self.cos_amp)))
        if not (len(k) == len(self.sin_amp) == len(self.cos_amp)):
            raise ValueError("mode arrays must have equal length")

    @classmethod
    def zero(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)), 0.0)

    @property
    def n_modes(self):
        return len(self.frequencies)

    @property
    def is_zero(self):
        return self._zero

    def scaled(self, epsilon):
        return PerturbationField(self.frequencies, self.sin_amp, self.cos_amp, epsilon)

    def _phases(self, x):
        # phases from reduced points keep sin/cos arguments small for far lifts
        return TWO_PI * (reduce(x) @ self.frequencies.T)

    def value(self, x):
        x, shape = _as_points(x)
        if self.is_zero:
            return np.zeros(shape)
        ph = self._phases(x)
        out = np.sin(ph) @ self.sin_amp + np.cos(ph) @ self.cos_amp
        return (self.epsilon * out).reshape(shape)

    def jacobian(self, x):
        """Dp at each point, shape (..., 3, 3)."""
        x, shape = _as_points(x)
        if self.is_zero:
            return np.zeros(shape + (3,))
        ph = self._phases(x)
        coef = np.cos(ph)[:, :, None] * self.sin_amp[None] - np.sin(ph)[:, :, None] * self.cos_amp[None]
        d = TWO_PI * self.epsilon * np.einsum("pmi,mj->pij", coef, self.frequencies.astype(float))
        return d.reshape(shape + (3,))

    def sup_bound(self):
        """Upper bound for sup |p| from the coefficients."""
        return abs(self.epsilon) * float(np.sum(np.hypot(
            np.linalg.norm(self.sin_amp, axis=1), np.linalg.norm(self.cos_amp, axis=1))))

    def component_sup_bound(self, covectors):
        """Upper bound for sup |w . p| for each row w of ``covectors``."""
        w = np.asarray(covectors, dtype=float)
        s = np.abs(self.sin_amp @ w.T)
        c = np.abs(self.cos_amp @ w.T)
        return abs(self.epsilon) * np.sum(np.hypot(s, c), axis=0)

    def derivative_bound(self):
        """Upper bound for the operator norm of Dp."""
        amp = np.hypot(np.linalg.norm(self.sin_amp, axis=1), np.linalg.norm(self.cos_amp, axis=1))
        return TWO_PI * abs(self.epsilon) * float(np.sum(amp * np.linalg.norm(self.frequencies, axis=1)))

    def volume_defect(self, A):
        """max_m |k_m . A^-1 a_m| over modes; zero for the rank-one shear families.

        When every amplitude is parallel to one vector a and k_m . A^-1 a = 0,
        det(A + Dp) = det A exactly.
        """
        Ainv = np.linalg.inv(np.asarray(A, dtype=float))
        amps = np.vstack([self.sin_amp, self.cos_amp])
        if not len(amps):
            return 0.0
        ks = np.vstack([self.frequencies, self.frequencies]).astype(float)
        return float(np.max(np.abs(np.einsum("mi,ij,mj->m", ks, Ainv, amps))))


@dataclass(frozen=True)
class ConjugatePerturbation:
    """Perturbation making F = G o A o G^-1 with G = id + w, w a PerturbationField.

    Used to build maps smoothly conjugate to their linear part; the conjugacy
    to A is h = G^-1.
    """

    linear: np.ndarray
    w: PerturbationField

    def __post_init__(self):
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=np.int64))
        if self.w.derivative_bound() >= 1.0:
            raise ValueError("id + w must be a diffeomorphism (|Dw| < 1)")
        object.__setattr__(self, "_ainv", np.round(np.linalg.inv(self.linear)).astype(np.int64))
        object.__setattr__(self, "_preimages", {})

    def _z(self, y):
        """G^-1(y), remembered for the last few point arrays (orbits re-query them)."""
        y = np.ascontiguousarray(y, dtype=float)
        key = (y.shape, y.tobytes())
        z = self._preimages.get(key)
        if z is None:
            z = self.G_inverse(y)
            self._remember(key, z)
        return z

    def _remember(self, key, z):
        if len(self._preimages) >= 4096:
            self._preimages.clear()
        self._preimages[key] = z

    def orbit(self, x, n, direction=1):
        """(n + 1, N, 3) reduced orbit of F = G A G^-1 (or its inverse), run as G(A^k z)."""
        x = np.ascontiguousarray(x, dtype=float)
        M = self.linear if direction > 0 else self._ainv
        out = np.empty((n + 1,) + x.shape)
        out[0] = x
        z = self._z(x)
        for k in range(1, n + 1):
            z = z @ M.T
            z -= np.floor(z)
            y = self.G(z)
            shift = np.floor(y)
            out[k] = y - shift
            self._remember((out[k].shape, out[k].tobytes()), z - shift)
        return out

    @property
    def is_zero(self):
        return self.w.is_zero

    @property
    def epsilon(self):
        return self.w.epsilon

    def G(self, x):
        x = np.asarray(x, dtype=float)
        return x + self.w.value(x)

    def G_inverse(self, y, tol=1e-14, max_iter=60):
        y, shape = _as_points(y)
        z = y - self.w.value(y)
        for _ in range(max_iter):
            r = z + self.w.value(z) - y
            if np.max(np.abs(r), initial=0.0) <= tol * max(1.0, np.max(np.abs(y), initial=0.0)):
                break
            z = z - solve3(np.eye(3) + self.w.jacobian(z), r)
        else:
            raise NonConvergence("G^-1 Newton did not converge")
        return z.reshape(shape)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        z = self._z(x.reshape(-1, 3)).reshape(x.shape)
        az = z @ self.linear.T
        return az + self.w.value(az) - x @ self.linear.T

    def jacobian(self, x):
        x, shape = _as_points(x)
        z = self._z(x)
        az = z @ self.linear.T
        dg_out = np.eye(3) + self.w.jacobian(az)
        dg_in = np.eye(3) + self.w.jacobian(z)
        d = dg_out @ self.linear @ np.linalg.inv(dg_in) - self.linear
        return d.reshape(shape + (3,))

    def inverse_lift(self, y):
        y, shape = _as_points(y)
        return self.G(self._z(y) @ self._ainv.T).reshape(shape)

    def sup_bound(self, grid_n=16):
        pts = _lattice(grid_n)
        return 1.25 * float(np.max(np.linalg.norm(self.value(pts), axis=1)))

    def component_sup_bound(self, covectors, grid_n=16):
        pts = _lattice(grid_n)
        vals = self.value(pts) @ np.asarray(covectors, dtype=float).T
        return 1.25 * np.max(np.abs(vals), axis=0)

    def derivative_bound(self, grid_n=16):
        pts = _lattice(grid_n)
        return 1.25 * float(np.max(np.linalg.norm(self.jacobian(pts), ord=2, axis=(1, 2))))


def _lattice(n, offset=0.0):
    g = (np.arange(n) + offset) / n
    return np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)


lattice = _lattice


# ---------------------------------------------------------------------------
# Maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConeCertificate:
    """Measured one-step cone data on a grid (adapted eigen-coordinates).

    ``factors`` maps each tag to the (min, max) one-step stretch of Df over
    the cone containing that bundle (uu: strong cone; wu: intersection of the
    unstable and centre-stable cones; s: stable cone under Df).
    """

    half_angle_u: float
    half_angle_s: float
    half_angle_uu: float
    grid_n: int
    expansion: float
    contraction: float
    gamma: float
    factors: dict = field(default_factory=dict)
    worst_point: np.ndarray = None

    def log_factor_range(self, tag):
        lo, hi = self.factors[tag]
        return np.log(lo), np.log(hi)


class AnosovMap:
    """f = A + p on T^3 with integer linear part A and periodic perturbation p.

    The spectrum is computed on construction.  The cone certificate is
    computed lazily with default settings unless one is supplied.
    """

    direction = 1

    def __init__(self, linear_part, perturbation=None, certificate=None, name=None):
        A = np.asarray(linear_part)
        self.spectrum = spectrum(A)
        self.A = A.astype(np.int64)
        self.Ainv = np.round(np.linalg.inv(self.A)).astype(np.int64)
        self.perturbation = PerturbationField.zero() if perturbation is None else perturbation
        self.name = name or "map"
        if certificate is not None:
            self.__dict__["certificate"] = certificate

    def __repr__(self):
        return f"AnosovMap(name={self.name!r}, eps={self.epsilon})"

    @property
    def base(self):
        return self

    @property
    def epsilon(self):
        return self.perturbation.epsilon

    @property
    def is_linear(self):
        return self.perturbation.is_zero

    @cached_property
    def certificate(self):
        return verify_cone_condition(self)

    def certified(self, **kwargs):
        """Return a copy carrying a certificate computed with ``kwargs``."""
        cert = verify_cone_condition(self, **kwargs)
        return AnosovMap(self.A, self.perturbation, certificate=cert, name=self.name)

    def is_expanding(self, tag):
        return tag in ("uu", "wu")

    def inverse(self):
        return InverseMap(self)

    # --- evaluation -----------------------------------------------------
    def lift_apply(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.A.T + self.perturbation.value(x)

    def apply(self, x):
        return reduce(self.lift_apply(x))

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        if self.perturbation.is_zero:
            return np.broadcast_to(self.A.astype(float), x.shape + (3,)).copy()
        return self.A + self.perturbation.jacobian(x)

    def lift_inverse(self, y, tol=1e-12, max_iter=50):
        """Solve F(x) = y on the lift by Newton seeded at A^-1 y."""
        y, shape = _as_points(y)
        shift = np.floor(y)
        y0 = y - shift
        base = shift @ self.Ainv.T
        if self.perturbation.is_zero:
            return (y0 @ self.Ainv.T + base).reshape(shape)
        inv = getattr(self.perturbation, "inverse_lift", None)
        if inv is not None:
            return (inv(y0) + base).reshape(shape)
        x = (y0 - self.perturbation.value(y0 @ self.Ainv.T)) @ self.Ainv.T
        for _ in range(max_iter + 1):
            r = self.lift_apply(x) - y0
            if np.max(np.abs(r), initial=0.0) <= tol:
                break
            x = x - solve3(self.jacobian(x), r)
        else:
            raise NonConvergence(
                f"Newton inverse exceeded {max_iter} iterations (residual {np.max(np.abs(r)):.3g})")
        return (x + base).reshape(shape)

    def inverse_apply(self, y, tol=1e-12):
        return reduce(self.lift_inverse(y, tol=tol))

    def inverse_jacobian(self, y):
        """D(f^-1) at y."""
        return np.linalg.inv(self.jacobian(self.lift_inverse(y)))

    def leaf_factor(self, x, e):
        """|Df(x) e| for unit vectors e at points x."""
        return np.linalg.norm(np.einsum("...ij,...j->...i", self.jacobian(x), e), axis=-1)


class InverseMap:
    """f^-1 presented with the same interface as AnosovMap.

    Bundle tags keep referring to the splitting of ``base``; under f^-1 the
    stable bundle is the expanding one.
    """

    direction = -1

    def __init__(self, base):
        self.base = base
        self.spectrum = base.spectrum
        self.A = base.Ainv
        self.Ainv = base.A
        self.name = base.name + "^-1"

    def __repr__(self):
        return f"InverseMap({self.base!r})"

    @property
    def epsilon(self):
        return self.base.epsilon

    @property
    def is_linear(self):
        return self.base.is_linear

    @property
    def certificate(self):
        return self.base.certificate

    def is_expanding(self, tag):
        return tag == "s"

    def inverse(self):
        return self.base

    def lift_apply(self, x):
        return self.base.lift_inverse(x)

    def apply(self, x):
        return reduce(self.lift_apply(x))

    def lift_inverse(self, y, tol=None, max_iter=None):
        return self.base.lift_apply(y)

    def inverse_apply(self, y, tol=None):
        return self.base.apply(y)

    def jacobian(self, x):
        return np.linalg.inv(self.base.jacobian(self.base.lift_inverse(x)))

    def leaf_factor(self, x, e):
        return np.linalg.norm(np.einsum("...ij,...j->...i", self.jacobian(x), e), axis=-1)


# module-level forms of the basic operations
def lift_apply(map, x):
    return map.lift_apply(x)


def apply(map, x):
    return map.apply(x)


def inverse_apply(map, y, tol=1e-12):
    return map.inverse_apply(y, tol=tol)


def jacobian(map, x):
    return map.jacobian(x)


# ---------------------------------------------------------------------------
# Cone certificate
# ---------------------------------------------------------------------------


def _plane_cone(t, n_phi, n_s, boundary):
    """Directions (a cos phi, a sin phi, s t) with the plane in coordinates 0, 1."""
    phi = np.linspace(0.0, 2 * np.pi, n_phi, endpoint=False)
    s = np.array([-1.0, 1.0]) if boundary else np.linspace(-1.0, 1.0, n_s)
    P, S = np.meshgrid(phi, s, indexing="ij")
    d = np.stack([np.cos(P), np.sin(P), S * t], axis=-1).reshape(-1, 3)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _line_cone(t, n_phi, n_s, boundary):
    """Directions (s t cos phi, s t sin phi, 1) around coordinate 2."""
    phi = np.linspace(0.0, 2 * np.pi, n_phi, endpoint=False)
    s = np.array([1.0]) if boundary else np.linspace(0.0, 1.0, n_s)
    P, S = np.meshgrid(phi, s, indexing="ij")
    d = np.stack([S * t * np.cos(P), S * t * np.sin(P), np.ones_like(P)], axis=-1).reshape(-1, 3)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


# permutations placing the cone's distinguished coordinates last
_PERM_U = [0, 1, 2]      # plane (uu, wu), small s
_PERM_S = [0, 1, 2]      # line s, small (uu, wu)
_PERM_UU = [1, 2, 0]     # line uu, small (wu, s)
_PERM_CS = [1, 2, 0]     # plane (wu, s), small uu


def _embed(d, perm):
    out = np.empty_like(d)
    out[:, perm] = d
    return out


def _images(M, d):
    """M d for each matrix and direction: shape (P, 3, K)."""
    return np.matmul(M, d.T)


def _stretch(M, d):
    """|M d| for each matrix and direction: shape (P, K)."""
    W = _images(M, d)
    return np.sqrt(np.einsum("pik,pik->pk", W, W))


def _plane_aperture(W, perm):
    small = W[:, perm[2]]
    big = np.hypot(W[:, perm[0]], W[:, perm[1]])
    return np.abs(small) / big


def _line_aperture(W, perm):
    big = W[:, perm[2]]
    small = np.hypot(W[:, perm[0]], W[:, perm[1]])
    return small / np.abs(big)


def verify_cone_condition(map, half_angle_u=0.3, half_angle_s=0.3, half_angle_uu=0.3,
                          grid_n=32, n_phi=32, n_s=5, chunk=2048):
    """Certify one-step cone invariance and domination on a grid_n^3 lattice.

    Cones are taken around the eigen-directions of A in eigen-coordinates
    (the adapted metric in which A is diagonal).  Checks: Df maps the
    unstable plane cone and the strong-unstable line cone into themselves,
    Df^-1 maps the stable line cone and the centre-stable plane cone into
    themselves, the unstable cone is expanded, the stable cone is expanded by
    Df^-1, and the strong/centre-stable domination ratio gamma is below 1.
    Sampling of cone directions makes this a numerical certificate, not a
    proof.
    """
    f = map.base
    spec = f.spectrum
    V, Vinv = spec.vectors, spec.basis_inverse
    tu, ts, tuu = np.tan(half_angle_u), np.tan(half_angle_s), np.tan(half_angle_uu)
    pts = np.zeros((1, 3)) if f.is_linear else _lattice(grid_n)

    d_u_solid = _embed(_plane_cone(tu, n_phi, n_s, False), _PERM_U)
    d_u_edge = _embed(_plane_cone(tu, n_phi, n_s, True), _PERM_U)
    d_s_solid = _embed(_line_cone(ts, n_phi, n_s, False), _PERM_S)
    d_s_edge = _embed(_line_cone(ts, n_phi, n_s, True), _PERM_S)
    d_uu_solid = _embed(_line_cone(tuu, n_phi, n_s, False), _PERM_UU)
    d_uu_edge = _embed(_line_cone(tuu, n_phi, n_s, True), _PERM_UU)
    d_cs_solid = _embed(_plane_cone(tuu, n_phi, n_s, False), _PERM_CS)
    d_cs_edge = _embed(_plane_cone(tuu, n_phi, n_s, True), _PERM_CS)
    # wu sits in the intersection of the unstable and centre-stable cones
    a = np.linspace(-1, 1, 9)
    A_, B_ = np.meshgrid(a * tuu * np.sqrt(1 + tu ** 2), a * tu * np.sqrt(1 + tuu ** 2), indexing="ij")
    d_wu = np.stack([A_.ravel(), np.ones(A_.size), B_.ravel()], axis=-1)
    keep = (np.abs(d_wu[:, 2]) <= tu * np.hypot(d_wu[:, 0], d_wu[:, 1]) + 1e-15) & (
        np.abs(d_wu[:, 0]) <= tuu * np.hypot(d_wu[:, 1], d_wu[:, 2]) + 1e-15)
    d_wu = d_wu[keep]
    d_wu /= np.linalg.norm(d_wu, axis=1, keepdims=True)

    slack = lambda t: t * (1.0 - 1e-12) + 1e-13  # noqa: E731  strict inclusion
    worst = {"u": (-np.inf, None), "s": (-np.inf, None), "uu": (-np.inf, None), "cs": (-np.inf, None)}
    exp_u, con_s, gamma = np.inf, np.inf, -np.inf
    fac = {"uu": [np.inf, -np.inf], "wu": [np.inf, -np.inf], "s": [np.inf, -np.inf]}
    gamma_pt = None

    for start in range(0, len(pts), chunk):
        X = pts[start:start + chunk]
        M = Vinv @ f.jacobian(X) @ V
        Minv = np.linalg.inv(M)
        for key, mats, dirs, aperture, perm, t in (
                ("u", M, d_u_edge, _plane_aperture, _PERM_U, tu),
                ("s", Minv, d_s_edge, _line_aperture, _PERM_S, ts),
                ("uu", M, d_uu_edge, _line_aperture, _PERM_UU, tuu),
                ("cs", Minv, d_cs_edge, _plane_aperture, _PERM_CS, tuu)):
            ap = aperture(_images(mats, dirs), perm).max(axis=1) - slack(t)
            i = int(np.argmax(ap))
            if ap[i] > worst[key][0]:
                worst[key] = (ap[i], X[i])
        su = _stretch(M, d_u_solid)
        exp_u = min(exp_u, su.min())
        ss = _stretch(Minv, d_s_solid)
        con_s = min(con_s, ss.min())
        suu = _stretch(M, d_uu_solid)
        scs = _stretch(M, d_cs_solid)
        g = scs.max(axis=1) / suu.min(axis=1)
        i = int(np.argmax(g))
        if g[i] > gamma:
            gamma, gamma_pt = g[i], X[i]
        swu = _stretch(M, d_wu)
        sfs = _stretch(M, d_s_solid)
        for tag, s in (("uu", suu), ("wu", swu), ("s", sfs)):
            fac[tag][0] = min(fac[tag][0], s.min())
            fac[tag][1] = max(fac[tag][1], s.max())

    for key, (excess, pt) in worst.items():
        if excess > 0:
            raise ConeViolation(f"{key}-cone not mapped into itself (excess aperture {excess:.3g})",
                                point=pt, detail=key)
    if exp_u <= 1.0:
        raise ConeViolation(f"unstable cone expansion {exp_u:.4g} <= 1", detail="expansion")
    if con_s <= 1.0:
        raise ConeViolation(f"stable cone inverse expansion {con_s:.4g} <= 1", detail="contraction")
    if gamma >= 1.0:
        raise ConeViolation(f"domination ratio {gamma:.4g} >= 1", point=gamma_pt, detail="gamma")
    return ConeCertificate(
        half_angle_u=half_angle_u, half_angle_s=half_angle_s, half_angle_uu=half_angle_uu,
        grid_n=grid_n, expansion=float(exp_u), contraction=float(con_s), gamma=float(gamma),
        factors={k: (float(v[0]), float(v[1])) for k, v in fac.items()}, worst_point=gamma_pt)

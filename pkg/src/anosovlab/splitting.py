"""Invariant bundles E^uu, E^wu, E^s by cocycle iteration, and Lyapunov exponents.

Pointwise bundles pull the base point back (or push it forward) ``n`` steps
and iterate a generic vector or 2-frame along the orbit:

* E^uu(x): push a vector forward along the backward orbit of x.
* E^s(x):  pull a vector back along the forward orbit of x.
* E^u(x):  push a 2-frame forward (QR each step); E^cs(x) likewise by pulling back.
* E^wu(x) = E^u(x) ∩ E^cs(x).

Cost is O(n) inverse solves per query.  Along a whole orbit segment the same
bundles come from one forward and one backward sweep (``orbit_bundles``).
Directions are oriented so their eigen-coordinate along the matching
eigenvector of A is positive, which is a global continuous choice for
certified maps.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence, PlaneDegeneracy
from .torus_core import TAG_INDEX, TAGS, reduce, solve3

SEED = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
SEED2 = np.array([1.0, -1.0, 0.5]) / np.linalg.norm([1.0, -1.0, 0.5])
# fixed rotation used when the seed is (nearly) degenerate for the given A
_ROT = np.array([[0.36, 0.48, -0.8], [-0.8, 0.6, 0.0], [0.48, 0.64, 0.6]])


def _oriented(e, spec, tag):
    c = e @ spec.basis_inverse[TAG_INDEX[tag]]
    return np.where(c[..., None] < 0, -e, e)


def _normalize(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def seed_vector(spec, tag):
    """Generic seed for the power iteration producing ``tag``.

    The seed needs a nonzero component along the attracting direction; it is
    rotated while that component is within 1e-6 of zero.
    """
    v = SEED.copy()
    for _ in range(4):
        if abs((spec.basis_inverse @ v)[TAG_INDEX[tag]]) > 1e-6:
            return v
        v = _ROT @ v
    raise PlaneDegeneracy("no generic seed vector found")


def seed_frame(spec, plane):
    """Generic orthonormal 2-frame transverse to the complement of ``plane``.

    plane = 'u' needs a nondegenerate projection on (uu, wu); 'cs' on (wu, s).
    """
    rows = [0, 1] if plane == "u" else [1, 2]
    q = np.stack([SEED, SEED2], axis=1)
    for _ in range(4):
        q, _ = np.linalg.qr(q)
        proj = (spec.basis_inverse @ q)[rows]
        if abs(np.linalg.det(proj)) > 1e-6:
            return q
        q = _ROT @ q
    raise PlaneDegeneracy("no generic seed frame found")


def default_depth(map, target=1e-13):
    """Iteration depth from the certified domination ratio."""
    gamma = map.base.certificate.gamma
    return int(np.clip(math.ceil(math.log(target) / math.log(gamma)), 20, 200))


def _fast_orbit(f, x, n, direction):
    orbit = getattr(getattr(f, "perturbation", None), "orbit", None)
    return None if orbit is None else orbit(x, n, direction)


def backward_orbit(f, x, n):
    """Array of shape (n + 1, N, 3): f^-k x for k = 0..n (reduced mod 1)."""
    fast = _fast_orbit(f, x, n, -1)
    if fast is not None:
        return fast
    out = np.empty((n + 1,) + x.shape)
    out[0] = x
    for k in range(1, n + 1):
        out[k] = reduce(f.lift_inverse(out[k - 1]))
    return out


def forward_orbit(f, x, n):
    fast = _fast_orbit(f, x, n, 1)
    if fast is not None:
        return fast
    out = np.empty((n + 1,) + x.shape)
    out[0] = x
    for k in range(1, n + 1):
        out[k] = reduce(f.lift_apply(out[k - 1]))
    return out


def _push_vector(f, orbit, v):
    """Push v forward along orbit[n], ..., orbit[1] (a backward orbit)."""
    for k in range(len(orbit) - 1, 0, -1):
        v = _normalize(np.einsum("nij,nj->ni", f.jacobian(orbit[k]), v))
    return v


def _pull_vector(f, orbit, v):
    """Pull v back along a forward orbit: from orbit[n] down to orbit[0]."""
    for k in range(len(orbit) - 2, -1, -1):
        v = _normalize(solve3(f.jacobian(orbit[k]), v))
    return v


def _qr(q):
    q, r = np.linalg.qr(q)
    d = np.abs(r[:, 1, 1]) / np.abs(r[:, 0, 0])
    if np.any(~np.isfinite(d)) or np.min(d) < 1e-14:
        raise PlaneDegeneracy("pushed 2-plane collapsed; increase n or check partial hyperbolicity")
    return q


def _push_frame(f, orbit, q):
    for k in range(len(orbit) - 1, 0, -1):
        q = _qr(f.jacobian(orbit[k]) @ q)
    return q


def _pull_frame(f, orbit, q):
    for k in range(len(orbit) - 2, -1, -1):
        q = _qr(np.linalg.solve(f.jacobian(orbit[k]), q))
    return q


def unstable_plane(map, x, n=None):
    """Orthonormal frame (N, 3, 2) of E^u at each point."""
    f = map.base
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = default_depth(f) if n is None else n
    orbit = backward_orbit(f, x, n)
    q = np.broadcast_to(seed_frame(f.spectrum, "u"), x.shape[:1] + (3, 2)).copy()
    return _push_frame(f, orbit, q)


def centre_stable_plane(map, x, n=None):
    f = map.base
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = default_depth(f) if n is None else n
    orbit = forward_orbit(f, x, n)
    q = np.broadcast_to(seed_frame(f.spectrum, "cs"), x.shape[:1] + (3, 2)).copy()
    return _pull_frame(f, orbit, q)


def _plane_normal(q):
    return _normalize(np.cross(q[..., 0], q[..., 1]))


def bundle_field(map, tag, x, n=None, m=None):
    """Unit vectors spanning E^tag at each row of ``x`` (oriented, shape (N, 3)).

    ``tag`` always refers to the splitting of ``map.base``.
    """
    f = map.base
    spec = f.spectrum
    x = np.asarray(x, dtype=float)
    shape = x.shape
    x = x.reshape(-1, 3)
    n = default_depth(f) if n is None else n
    if tag == "uu":
        v = np.broadcast_to(seed_vector(spec, "uu"), x.shape).copy()
        e = _push_vector(f, backward_orbit(f, x, n), v)
    elif tag == "s":
        v = np.broadcast_to(seed_vector(spec, "s"), x.shape).copy()
        e = _pull_vector(f, forward_orbit(f, x, n), v)
    elif tag == "wu":
        nu = _plane_normal(unstable_plane(f, x, n))
        ncs = _plane_normal(centre_stable_plane(f, x, n if m is None else m))
        c = np.cross(nu, ncs)
        size = np.linalg.norm(c, axis=-1)
        if np.min(size, initial=1.0) < 1e-8:
            raise PlaneDegeneracy("unstable and centre-stable planes are not transverse")
        e = c / size[:, None]
    else:
        raise ValueError(f"unknown tag {tag!r}")
    return _oriented(e, spec, tag).reshape(shape)


def line_angle(a, b):
    """Angle between the lines spanned by a and b, in [0, pi/2]."""
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.abs(np.sum(a * b, axis=-1))
    return np.arctan2(cross, dot)


@dataclass
class BundleSample:
    base: np.ndarray
    direction: np.ndarray
    tag: str
    equivariance_residual: np.ndarray
    n: int
    plane_normal: np.ndarray = None


def _sample(map, tag, x, n, m, tol):
    f = map.base
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = default_depth(f) if n is None else n
    both = np.concatenate([x, f.apply(x)])
    e = bundle_field(f, tag, both, n=n, m=m)
    ex, efx = e[: len(x)], e[len(x):]
    pushed = np.einsum("nij,nj->ni", f.jacobian(x), ex)
    res = line_angle(pushed, efx)
    if np.max(res) > tol:
        raise NonConvergence(f"{tag} bundle residual {np.max(res):.3g} exceeds {tol:g} at n = {n}")
    return ex, res, n


def strong_unstable_direction(map, x, n=None, tol=1e-6):
    """E^uu(x) by pushing a generic vector along the backward orbit."""
    e, res, n = _sample(map, "uu", x, n, None, tol)
    return BundleSample(np.asarray(x, dtype=float), e, "uu", res, n)


def stable_direction(map, x, n=None, tol=1e-6):
    e, res, n = _sample(map, "s", x, n, None, tol)
    return BundleSample(np.asarray(x, dtype=float), e, "s", res, n)


def weak_unstable_direction(map, x, n=None, m=None, tol=1e-6):
    """E^wu(x) as the line where E^u(x) meets E^cs(x)."""
    e, res, n = _sample(map, "wu", x, n, m, tol)
    nu = _plane_normal(unstable_plane(map, x, n))
    return BundleSample(np.asarray(x, dtype=float), e, "wu", res, n, plane_normal=nu)


# ---------------------------------------------------------------------------
# Bundles along orbit segments
# ---------------------------------------------------------------------------


@dataclass
class OrbitBundles:
    """Orbit points and bundles for orbit indices -back..fwd (axis 0)."""

    points: np.ndarray
    uu: np.ndarray
    wu: np.ndarray
    s: np.ndarray
    back: int

    def direction(self, tag):
        return getattr(self, tag)


def orbit_bundles(map, x, back, fwd, warm=None):
    """Bundles along the f-orbit of each row of ``x`` from index -back to fwd.

    One forward sweep of a QR-orthonormalized 2-frame gives E^u and E^uu,
    one backward sweep gives E^cs and E^s; ``warm`` extra steps on each side
    let both converge before the requested range.
    """
    f = map.base
    spec = f.spectrum
    x = np.atleast_2d(np.asarray(x, dtype=float))
    warm = default_depth(f) if warm is None else warm
    pb = backward_orbit(f, x, back + warm)[::-1]
    pf = forward_orbit(f, x, fwd + warm)
    pts = np.concatenate([pb, pf[1:]])
    total = len(pts)
    lo, hi = warm, warm + back + fwd
    npts = hi - lo + 1
    qu = np.empty((npts,) + x.shape + (2,))
    qcs = np.empty_like(qu)
    q = np.broadcast_to(seed_frame(spec, "u"), x.shape + (2,)).copy()
    for i in range(total - 1):
        q = _qr(f.jacobian(pts[i]) @ q)
        if lo <= i + 1 <= hi:
            qu[i + 1 - lo] = q
    q = np.broadcast_to(seed_frame(spec, "cs"), x.shape + (2,)).copy()
    for i in range(total - 1, 0, -1):
        q = _qr(np.linalg.solve(f.jacobian(pts[i - 1]), q))
        if lo <= i - 1 <= hi:
            qcs[i - 1 - lo] = q
    uu = _oriented(qu[..., 0], spec, "uu")
    s = _oriented(qcs[..., 0], spec, "s")
    wu = np.cross(_plane_normal(qu), _plane_normal(qcs))
    wu = _oriented(_normalize(wu), spec, "wu")
    return OrbitBundles(points=pts[lo:hi + 1], uu=uu, wu=wu, s=s, back=back)


# ---------------------------------------------------------------------------
# Lyapunov exponents
# ---------------------------------------------------------------------------


class VolumeSampler:
    description = "volume"

    def draw(self, rng, size):
        return rng.random((size, 3))


class PointSampler:
    """Draw from a weighted point cloud (e.g. an EmpiricalMeasure)."""

    def __init__(self, points, weights=None, description="points"):
        self.points = np.asarray(points, dtype=float)
        self.weights = None if weights is None else np.asarray(weights, dtype=float)
        self.description = description

    def draw(self, rng, size):
        idx = rng.choice(len(self.points), size=size, p=self.weights)
        return self.points[idx]


@dataclass
class LyapunovEstimate:
    value: float
    std_error: float
    orbit_length: int
    ensemble_size: int
    tag: str
    sampler: str
    seed: int = 0
    per_orbit: np.ndarray = None

    CSV_HEADER = "map_id,tag,value,std_error,n,ensemble,seed"

    def csv_row(self, map_id):
        return f"{map_id},{self.tag},{self.value!r},{self.std_error!r},{self.orbit_length},{self.ensemble_size},{self.seed}"


def orbit_seeds(sampler, seed, ensemble):
    """Initial points, one deterministic generator per orbit index."""
    return np.concatenate([sampler.draw(np.random.default_rng([seed, i]), 1) for i in range(ensemble)])


def birkhoff_log_jacobian(map, tag, x0, n, warm=None):
    """(1/n) sum_k log |D map(x_k) e_tag(x_k)| along map-orbits of each row of x0."""
    f = map.base
    if map.direction > 0:
        ob = orbit_bundles(f, x0, 0, n, warm)
        pts, e = ob.points[:n], ob.direction(tag)[:n]
        terms = np.log(f.leaf_factor(pts, e))
    else:
        ob = orbit_bundles(f, x0, n, 0, warm)
        # f^-1 stretches e(y) by 1 / |Df(f^-1 y) e(f^-1 y)|
        pts, e = ob.points[:n], ob.direction(tag)[:n]
        terms = -np.log(f.leaf_factor(pts, e))
    return np.array([math.fsum(col) for col in terms.T]) / n


def lyapunov_exponent(map, tag, sampler=None, n=1000, ensemble=32, seed=0, threads=1, warm=None):
    """Ensemble of Birkhoff averages of the log leaf Jacobian along ``tag``.

    Per-orbit seeds derive from (seed, orbit index) and the reduction uses
    compensated summation in index order, so the result does not depend on
    ``threads``.
    """
    sampler = VolumeSampler() if sampler is None else sampler
    x0 = orbit_seeds(sampler, seed, ensemble)
    if threads > 1 and ensemble > 1:
        chunks = np.array_split(np.arange(ensemble), min(threads, ensemble))
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: birkhoff_log_jacobian(map, tag, x0[c], n, warm), chunks))
        vals = np.concatenate(parts)
    else:
        vals = birkhoff_log_jacobian(map, tag, x0, n, warm)
    value = math.fsum(vals) / ensemble
    err = float(np.std(vals, ddof=1) / np.sqrt(ensemble)) if ensemble > 1 else 0.0
    return LyapunovEstimate(value=value, std_error=err, orbit_length=n, ensemble_size=ensemble,
                            tag=tag, sampler=getattr(sampler, "description", "custom"), seed=seed,
                            per_orbit=vals)


def oseledets_qr(map, x, n, warm=None):
    """Lyapunov spectrum by running QR of the Jacobian cocycle along the orbit.

    The frame is first aligned by ``warm`` untallied steps (default: the
    bundle depth), which removes the O(1/n) transient of the identity frame.
    Returns the three diagonal-log averages sorted descending (shape (3,) for
    one point, (N, 3) for many) over the n steps after the warm-up.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    y = np.atleast_2d(x)
    q = np.broadcast_to(np.eye(3), y.shape + (3,)).copy()
    warm = default_depth(map.base) if warm is None else warm
    for _ in range(warm):
        q, _r = np.linalg.qr(map.jacobian(y) @ q)
        y = reduce(map.lift_apply(y))
    acc = np.zeros(y.shape)
    comp = np.zeros(y.shape)
    for _ in range(n):
        q, r = np.linalg.qr(map.jacobian(y) @ q)
        # Kahan summation of the diagonal logs
        term = np.log(np.abs(np.diagonal(r, axis1=1, axis2=2))) - comp
        t = acc + term
        comp = (t - acc) - term
        acc = t
        y = reduce(map.lift_apply(y))
    out = np.sort(acc / n, axis=1)[:, ::-1]
    return out[0] if single else out


def log_det_average(map, x, n):
    """(1/n) sum_k log |det D map(x_k)| along the orbit of each point."""
    y = np.atleast_2d(np.asarray(x, dtype=float))
    terms = []
    for _ in range(n):
        terms.append(np.log(np.abs(np.linalg.det(map.jacobian(y)))))
        y = reduce(map.lift_apply(y))
    out = np.array([math.fsum(c) for c in np.array(terms).T]) / n
    return out[0] if np.asarray(x).ndim == 1 else out


__all__ = [
    "TAGS", "BundleSample", "LyapunovEstimate", "OrbitBundles", "PointSampler", "VolumeSampler",
    "bundle_field", "strong_unstable_direction", "stable_direction", "weak_unstable_direction",
    "orbit_bundles", "lyapunov_exponent", "oseledets_qr", "log_det_average", "line_angle",
]

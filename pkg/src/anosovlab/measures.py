"""Leaf-absolutely-continuous invariant measures, Delta products and densities.

Notation: J(z) = |Df(z) e(z)| is the one-dimensional Jacobian of f along the
invariant line field e of a given tag, and

    Delta(y, t) = prod_{j >= 1} J(f^-j y) / J(f^-j t)

for points y, t of one leaf of an expanding tag.  The product converges
because f^-j contracts the leaf and log J is Lipschitz along leaves; the
truncation depth is chosen from a measured Lipschitz constant so the
neglected log-mass is below ``tol``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline, PPoly

from .errors import AdaptednessViolation, TailBoundUnavailable
from .foliation import geometric_growth, grow_leaf, trace_leaves
from .splitting import birkhoff_log_jacobian, bundle_field, orbit_bundles
from .torus_core import TWO_PI, reduce, torus_displacement


def leaf_jacobian(map, x, tag, n=None):
    """|D map(x) e_tag(x)|; ``tag`` refers to the splitting of map.base."""
    x = np.asarray(x, dtype=float)
    e = bundle_field(map.base, tag, x, n=n)
    return map.leaf_factor(x, e)


# ---------------------------------------------------------------------------
# Delta products
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TailData:
    """Bound |log J(a) - log J(b)| <= C d(a, b)^alpha along leaves, and the
    per-step backward contraction factor 1/kappa of leaf distances."""

    C: float
    alpha: float
    kappa: float

    def depth(self, d0, tol, cap=400):
        """Smallest j with sum_{i > j} C (d0 kappa^-i)^alpha < tol."""
        if self.C == 0.0 or d0 == 0.0:
            return 1
        q = self.kappa ** (-self.alpha)
        # tail after j terms: C d0^a q^(j+1) / (1 - q)
        head = math.log(tol * (1 - q) / (self.C * d0 ** self.alpha))
        j = max(1, math.ceil(head / math.log(q)))
        if j > cap:
            raise TailBoundUnavailable(f"tail bound needs {j} terms (cap {cap})")
        return j


def measure_tail_data(map, tag, n_leaves=3, r=0.15, step=2e-3, seed=0, safety=1.5):
    """Measure the Lipschitz constant of log J along sampled leaves.

    Two resolutions are compared; if they disagree by more than a factor of 2
    the data cannot support a tail bound.
    """
    cache = map.base.__dict__.setdefault("_tail_cache", {})
    key = (map.direction, tag, n_leaves, r, step, seed)
    if key in cache:
        return cache[key]
    f = map.base
    lo, hi = f.certificate.factors[tag]
    kappa = lo if map.direction > 0 else 1.0 / hi
    if not kappa > 1.0:
        raise TailBoundUnavailable(f"tag {tag} has no certified expansion under {map!r}")
    if f.is_linear:
        data = TailData(0.0, 1.0, kappa)
        cache[key] = data
        return data
    x = np.random.default_rng([seed, 7]).random((n_leaves, 3))
    pts, tan, s = trace_leaves(f, x, tag, r, h=0.02)
    fine = np.linspace(-r, r, int(2 * r / step) + 1)
    lips = []
    for p, t in zip(pts, tan):
        curve = CubicHermiteSpline(s, p, t, axis=0)(fine)
        lj = np.log(leaf_jacobian(map, curve, tag))
        d = np.linalg.norm(np.diff(curve, axis=0), axis=1)
        q1 = np.max(np.abs(np.diff(lj)) / d)
        q2 = np.max(np.abs(lj[2:] - lj[:-2]) / (d[1:] + d[:-1]))
        if not (np.isfinite(q1) and np.isfinite(q2)) or q1 > 2 * q2 + 1e-12 or q2 > 2 * q1 + 1e-12:
            raise TailBoundUnavailable("log J difference quotients do not stabilize along leaves")
        lips.append(max(q1, q2))
    data = TailData(safety * float(max(lips)), 1.0, kappa)
    cache[key] = data
    return data


def _rows_eval(pp, q):
    """Evaluate a piecewise polynomial whose coefficients carry one column per
    row (axis 2 of pp.c) at per-row points q of shape (N, K)."""
    x = pp.x
    i = np.clip(np.searchsorted(x, q, side="right") - 1, 0, len(x) - 2)
    dx = q - x[i]
    rows = np.arange(q.shape[0])[:, None]
    c = pp.c[:, i, rows]
    dx = dx.reshape(dx.shape + (1,) * (c.ndim - 3))
    out = c[0]
    for ck in c[1:]:
        out = out * dx + ck
    return out


def _expansion_floor(map, tag):
    f = map.base
    lo, hi = f.certificate.factors[tag]
    kappa = lo if map.direction > 0 else 1.0 / hi
    if not kappa > 1.0:
        raise TailBoundUnavailable(f"tag {tag} has no certified expansion under {map!r}")
    return kappa


class LeafStack:
    """Local leaves through the backward orbit z_j = map^-j(x), j = 0..depth.

    Every level is traced directly at z_j with unit speed, so no traced curve
    is ever iterated backwards (that would amplify its transverse error along
    the contracting bundle).  Levels are tied together by the image arclength

        phi_j(tau) = int_0^tau J(c_j(u)) du,

    the arclength on level j-1 of map(c_j(tau)).  Composing the phi_j gives
    the level-j parameter of map^-j(y) for any y of the level-0 leaf.
    """

    def __init__(self, map, x, tag, R, depth, h=0.01, min_steps=8, n=None, margin=1.05):
        if not map.is_expanding(tag):
            raise ValueError(f"tag {tag!r} is not expanding for {map!r}")
        f = map.base
        self.map, self.tag, self.R, self.depth = map, tag, float(R), int(depth)
        x = reduce(np.atleast_2d(np.asarray(x, dtype=float)))
        N = len(x)
        kappa = _expansion_floor(map, tag)
        z = [x]
        for _ in range(self.depth):
            z.append(reduce(map.lift_inverse(z[-1])))
        self.z = np.stack(z)
        radii = [self.R] + [margin * self.R * kappa ** -j for j in range(1, self.depth + 1)]
        self.radii = np.array(radii)
        self.tau, self.pts, self.tan = [None] * (self.depth + 1), [None] * (self.depth + 1), [None] * (self.depth + 1)
        # levels with the same step count are traced in one sweep
        steps = [max(min_steps, math.ceil(r / h)) for r in radii]
        for m in sorted(set(steps)):
            lv = [j for j, s in enumerate(steps) if s == m]
            rr = np.repeat(self.radii[lv], N)
            pts, tan, _ = trace_leaves(f, self.z[lv].reshape(-1, 3), tag, rr, steps=m, n=n)
            for k, j in enumerate(lv):
                self.tau[j] = np.linspace(-1.0, 1.0, 2 * m + 1) * radii[j]
                self.pts[j] = pts[k * N:(k + 1) * N]
                self.tan[j] = tan[k * N:(k + 1) * N]
        # orient each level so that map carries it forward positively
        for j in range(1, self.depth + 1):
            c = self.pts[j].shape[1] // 2
            img = np.einsum("nij,nj->ni", map.jacobian(self.z[j]), self.tan[j][:, c])
            flip = np.sum(img * self.tan[j - 1][:, c], axis=-1) < 0
            self.pts[j][flip] = self.pts[j][flip, ::-1]
            self.tan[j][flip] = -self.tan[j][flip, ::-1]
        self.logJ = [np.log(map.leaf_factor(p.reshape(-1, 3), t.reshape(-1, 3))).reshape(p.shape[:2])
                     for p, t in zip(self.pts, self.tan)]
        self.curve = [CubicHermiteSpline(t, p, d, axis=1) for t, p, d in zip(self.tau, self.pts, self.tan)]
        self.N = N
        self._lj = [CubicSpline(t, l, axis=1) for t, l in zip(self.tau, self.logJ)]
        self._g = []
        self._phi = []
        for t, l in zip(self.tau, self.logJ):
            g = CubicSpline(t, np.exp(l), axis=1)
            F = g.antiderivative()
            self._g.append(g)
            self._phi.append((F, F(0.0)))

    def phi(self, j, tau):
        F, F0 = self._phi[j]
        return _rows_eval(F, tau) - F0[:, None]

    def phi_inverse(self, j, s, iters=4):
        """tau with phi_j(tau) = s, per row (Newton from a node interpolation)."""
        F, F0 = self._phi[j]
        t = self.tau[j]
        node_vals = F(t) - F0[:, None]
        tau = np.stack([np.interp(si, nv, t) for si, nv in zip(s, node_vals)])
        for _ in range(iters):
            tau = tau - (_rows_eval(F, tau) - F0[:, None] - s) / _rows_eval(self._g[j], tau)
        return np.clip(tau, t[0], t[-1])

    def to_sigma(self, j, tau):
        """Level-0 arclength of map^j(c_j(tau))."""
        for k in range(j, 0, -1):
            tau = self.phi(k, tau)
        return tau

    def from_sigma(self, sigma, upto=None):
        """Level parameters tau_j(sigma) for j = 0..upto."""
        upto = self.depth if upto is None else upto
        out = [np.asarray(sigma, dtype=float)]
        for j in range(1, upto + 1):
            out.append(self.phi_inverse(j, out[-1]))
        return out

    def log_delta(self, sigma):
        """log Delta(y(sigma), x) = sum_j log J(map^-j y) - log J(map^-j x)."""
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        taus = self.from_sigma(sigma)
        total = np.zeros_like(sigma)
        zero = np.zeros((self.N, 1))
        for j in range(1, self.depth + 1):
            total += _rows_eval(self._lj[j], taus[j]) - _rows_eval(self._lj[j], zero)
        return total

    def point(self, j, tau):
        return _rows_eval(self.curve[j], np.atleast_2d(tau))

    def locate(self, y, iters=8):
        """Level-0 arclength of points y, shape (N, 3) or (N, K, 3), near the
        level-0 leaf of their row, and their distance from it."""
        y = np.asarray(y, dtype=float)
        flat = y.ndim == 2
        y = y[:, None, :] if flat else y
        d = torus_displacement(y[:, :, None, :], self.pts[0][:, None])
        k = np.argmin(np.sum(d * d, axis=-1), axis=2)
        tau = self.tau[0][k]
        c = self.curve[0]
        dc, ddc = c.derivative(), c.derivative(2)
        for _ in range(iters):
            r = torus_displacement(y, _rows_eval(c, tau))
            v, a = _rows_eval(dc, tau), _rows_eval(ddc, tau)
            tau = tau - np.sum(r * v, -1) / (np.sum(v * v, -1) + np.sum(r * a, -1))
        miss = np.linalg.norm(torus_displacement(y, _rows_eval(c, tau)), axis=-1)
        return (tau[:, 0], miss[:, 0]) if flat else (tau, miss)

    def cube_interval(self, j, scale, grid=4, bisect=40):
        """Level-0 arclength bounds of the component through z_j of the level-j
        leaf inside the cube of side ``scale`` containing z_j; +-inf where the
        component leaves the traced level."""
        t = self.tau[j]
        q = np.linspace(t[0], t[-1], grid * (len(t) - 1) + 1)
        qq = np.broadcast_to(q, (self.N, len(q)))
        pts = self.point(j, qq)
        home = _cell_index(self.z[j], scale)
        inside = np.all(_cell_index(pts, scale) == home[:, None], axis=-1)
        c0 = len(q) // 2
        lo = np.full(self.N, -np.inf)
        hi = np.full(self.N, np.inf)
        a_in, a_out, b_in, b_out = (np.zeros(self.N) for _ in range(4))
        has_a, has_b = np.zeros(self.N, bool), np.zeros(self.N, bool)
        for i, row in enumerate(inside):
            bad = np.nonzero(~row)[0]
            left, right = bad[bad < c0], bad[bad > c0]
            if len(left):
                has_a[i] = True
                a_out[i], a_in[i] = q[left[-1]], q[left[-1] + 1]
            if len(right):
                has_b[i] = True
                b_out[i], b_in[i] = q[right[0]], q[right[0] - 1]
        for _ in range(bisect):
            mid = np.stack([0.5 * (a_in + a_out), 0.5 * (b_in + b_out)], axis=1)
            ok = np.all(_cell_index(self.point(j, mid), scale) == home[:, None], axis=-1)
            a_in, a_out = np.where(ok[:, 0], mid[:, 0], a_in), np.where(ok[:, 0], a_out, mid[:, 0])
            b_in, b_out = np.where(ok[:, 1], mid[:, 1], b_in), np.where(ok[:, 1], b_out, mid[:, 1])
        ends = self.to_sigma(j, np.stack([0.5 * (a_in + a_out), 0.5 * (b_in + b_out)], axis=1))
        lo[has_a] = ends[has_a, 0]
        hi[has_b] = ends[has_b, 1]
        return lo, hi


def _stack_depth(map, tag, R, tol, tail):
    if map.base.is_linear or tail.C == 0.0:
        return 1
    return tail.depth(R, tol)


def delta_product(map, y, t, tag, tol=1e-10, distance=None, tail=None, return_depth=False,
                  leaf_tol=1e-5):
    """Delta(y, t) for pairs of points on common leaves of an expanding tag.

    ``distance`` bounds the leaf distance between y and t; by default 1.5
    times the torus chord, which is safe for the short arcs used here.
    """
    if not map.is_expanding(tag):
        raise ValueError(f"tag {tag!r} is not expanding for {map!r}")
    y = np.atleast_2d(np.asarray(y, dtype=float))
    t = np.atleast_2d(np.asarray(t, dtype=float))
    single = y.shape[0] == 1 and t.shape[0] == 1
    y, t = np.broadcast_arrays(y, t)
    tail = measure_tail_data(map, tag) if tail is None else tail
    if distance is None:
        distance = 1.5 * float(np.max(np.linalg.norm(torus_displacement(y, t), axis=-1)))
    depth = _stack_depth(map, tag, distance, tol, tail)
    if map.base.is_linear:
        out = np.ones(len(y))
    else:
        stack = LeafStack(map, t, tag, max(distance, 1e-3), depth)
        sigma, miss = stack.locate(y)
        if np.max(miss) > leaf_tol:
            raise ValueError(f"points are {np.max(miss):.2e} away from a common leaf")
        out = np.exp(stack.log_delta(sigma[:, None])[:, 0])
    if single:
        out = out[0]
    return (out, depth) if return_depth else out


@dataclass
class LeafDensity:
    segment: object
    rho: np.ndarray
    L: float
    base: np.ndarray
    log_delta: np.ndarray
    depth: int

    def normalization(self):
        """Trapezoid integral of rho over the segment (1 by construction)."""
        return float(np.trapezoid(self.rho, self.segment.arclengths))

    def normalization_identity(self):
        """rho(base) * integral of Delta(t, base) dVol(t), which must be 1."""
        delta = np.exp(self.log_delta)
        rho_base = 1.0 / self.L
        return rho_base * float(np.trapezoid(delta, self.segment.arclengths))

    def csv_rows(self):
        yield "arclength,rho"
        for a, r in zip(self.segment.arclengths, self.rho):
            yield f"{a!r},{r!r}"


def leaf_density(map, seg, tag=None, tol=1e-10, base=None, tail=None):
    """rho(v) = Delta(v, base) / L with L = integral of Delta(t, base) dVol(t).

    Delta is evaluated through one leaf stack anchored at the segment's
    parameter origin, so densities for different base points differ only by
    their normalization.
    """
    tag = seg.tag if tag is None else tag
    anchor = seg.point([0.0])[0]
    base = anchor if base is None else np.asarray(base, dtype=float)
    tail = measure_tail_data(map, tag) if tail is None else tail
    reach = seg.position(seg.params) - seg.position(np.array([0.0]))[0]
    R = 1.05 * float(np.max(np.abs(reach)))
    depth = _stack_depth(map, tag, R, tol, tail)
    if map.base.is_linear:
        logd = np.zeros(len(seg.vertices))
    else:
        stack = LeafStack(map, anchor, tag, R, depth)
        sigma, miss = stack.locate(np.concatenate([seg.vertices, base[None]])[None])
        if np.max(miss) > 1e-5:
            raise ValueError("segment or base point is off the anchored leaf")
        S = stack.log_delta(sigma)[0]
        logd = S[:-1] - S[-1]
    delta = np.exp(logd)
    L = float(np.trapezoid(delta, seg.arclengths))
    return LeafDensity(segment=seg, rho=delta / L, L=L, base=base, log_delta=logd, depth=depth)


# ---------------------------------------------------------------------------
# Invariant measures
# ---------------------------------------------------------------------------

# fixed test-function battery: cos(2 pi k.x) with k in {1,2,3}^3
BATTERY = np.array([[a, b, c] for a in (1, 2, 3) for b in (1, 2, 3) for c in (1, 2, 3)], dtype=float)


def battery(x):
    return np.cos(TWO_PI * (np.asarray(x) @ BATTERY.T))


@dataclass
class EmpiricalMeasure:
    points: np.ndarray
    weights: np.ndarray
    tag: str
    construction: dict = field(default_factory=dict)
    leaf_points: np.ndarray = None
    depths: np.ndarray = None

    def __len__(self):
        return len(self.points)

    def sampler(self):
        from .splitting import PointSampler

        return PointSampler(self.points, self.weights, f"empirical[{self.tag}]")

    def integrate(self, phi):
        return np.tensordot(self.weights, phi(self.points), axes=(0, 0))

    def csv_rows(self):
        yield "x1,x2,x3,weight"
        for p, w in zip(self.points, self.weights):
            yield f"{p[0]!r},{p[1]!r},{p[2]!r},{w!r}"


def push_forward(map, x, k):
    """map^k_i(x_i) for per-point step counts k (reduced mod 1)."""
    x = reduce(np.asarray(x, dtype=float))
    k = np.asarray(k)
    order = np.argsort(k, kind="stable")
    y = x[order]
    ks = k[order]
    for j in range(int(ks.max(initial=0))):
        first = int(np.searchsorted(ks, j, side="right"))
        y[first:] = reduce(map.lift_apply(y[first:]))
    out = np.empty_like(y)
    out[order] = y
    return out


def ac_invariant_measure(map, tag, seed_leaf, N, samples, seed=0):
    """Average of map^k_* (leaf Lebesgue on seed_leaf) over k = 0..N-1.

    Each sample is a uniform arclength point of the seed leaf pushed forward
    a uniform random number of steps, with equal weights.
    """
    if not map.is_expanding(tag):
        raise ValueError(f"tag {tag!r} is not expanding for {map!r}")
    rng = np.random.default_rng([seed, 11])
    u = rng.random(samples) * seed_leaf.length
    s = np.interp(u, seed_leaf.arclengths, seed_leaf.params)
    y = reduce(seed_leaf.point(s))
    k = rng.integers(0, N, size=samples)
    pts = push_forward(map, y, k)
    w = np.full(samples, 1.0 / samples)
    info = {"seed_base": seed_leaf.base.tolist(), "seed_length": seed_leaf.length, "N": int(N),
            "samples": int(samples), "seed": int(seed), "map": map.name}
    return EmpiricalMeasure(pts, w, tag, info, leaf_points=y, depths=k)


@dataclass
class InvarianceDefect:
    rao_blackwell: np.ndarray
    direct: np.ndarray
    N: int

    @property
    def max(self):
        return float(np.max(self.rao_blackwell))


def invariance_defect(map, mu):
    """|int phi d(f_* mu) - int phi d mu| over the battery.

    For mu = (1/N) sum_{k<N} f^k_* m the difference telescopes to
    (1/N)(int phi o f^N dm - int phi dm); that form uses every leaf sample
    and is reported as ``rao_blackwell``.  The direct plug-in difference on
    the sample cloud is kept alongside.
    """
    N = mu.construction["N"]
    y = mu.leaf_points
    yN = push_forward(map, y, np.full(len(y), N))
    rb = np.abs(np.mean(battery(yN) - battery(y), axis=0)) / N
    direct = np.abs(mu.weights @ (battery(map.apply(mu.points)) - battery(mu.points)))
    return InvarianceDefect(rao_blackwell=rb, direct=direct, N=N)


def fourier_moments(mu, kmax=3):
    """|int exp(2 pi i k.x) dmu| for nonzero k with |k_i| <= kmax."""
    r = np.arange(-kmax, kmax + 1)
    ks = np.array([[a, b, c] for a in r for b in r for c in r if (a, b, c) != (0, 0, 0)], dtype=float)
    ph = TWO_PI * mu.points @ ks.T
    z = mu.weights @ np.exp(1j * ph)
    return ks, np.abs(z)


def cube_masses(mu, side=8):
    idx = np.floor(reduce(mu.points) * side).astype(int)
    flat = (idx[:, 0] * side + idx[:, 1]) * side + idx[:, 2]
    return np.bincount(flat, weights=mu.weights, minlength=side ** 3)


@dataclass
class ExponentEstimate:
    value: float
    std_error: float
    samples: int
    orbit_length: int


def lebesgue_exponent_estimate(map, tag, mu, orbit_length=1, ensemble=None, seed=0):
    """Mean of log J over mu, with a standard error.

    With ``orbit_length`` > 1 each of ``ensemble`` sample points contributes
    its Birkhoff average of log J over that many steps; for an invariant mu
    the expectation is unchanged and the variance is much smaller.
    """
    if orbit_length <= 1:
        lj = np.log(leaf_jacobian(map, mu.points, tag))
        value = math.fsum(mu.weights * lj)
        var = float(np.sum(mu.weights * (lj - value) ** 2))
        n_eff = 1.0 / float(np.sum(mu.weights ** 2))
        return ExponentEstimate(value, math.sqrt(var / n_eff), len(mu), 1)
    ensemble = len(mu) if ensemble is None else min(ensemble, len(mu))
    rng = np.random.default_rng([seed, 13])
    idx = rng.choice(len(mu), size=ensemble, replace=False, p=mu.weights)
    vals = birkhoff_log_jacobian(map, tag, mu.points[idx], orbit_length)
    value = math.fsum(vals) / ensemble
    return ExponentEstimate(value, float(np.std(vals, ddof=1) / math.sqrt(ensemble)), ensemble,
                            orbit_length)


def lebesgue_exponent(map, tag, mu, **kw):
    """Integral of log J along ``tag`` against mu (the exponent of mu along the leaves)."""
    return lebesgue_exponent_estimate(map, tag, mu, **kw).value


@dataclass
class SaghinXia:
    lam: float
    chi: float
    slack: float
    lam_std_error: float
    chi_std_error: float
    exponent: ExponentEstimate = None
    growth: object = None

    @property
    def sigma(self):
        return math.hypot(self.lam_std_error, self.chi_std_error)

    def __iter__(self):
        return iter((self.lam, self.chi, self.slack))


def saghin_xia_check(map, tag, x, r, N=64, samples=4096, n_max=None, orbit_length=400,
                     ensemble=256, seed=0, max_step=1e-3, budget=4_000_000):
    """chi - lambda on the leaf ball W_r(x); nonnegative up to estimator noise."""
    seg = grow_leaf(map, x, tag, r, max_step)
    growth = geometric_growth(map, tag, x, r, n_max, max_step=max_step, budget=budget, seg=seg)
    mu = ac_invariant_measure(map, tag, seg, N, samples, seed)
    est = lebesgue_exponent_estimate(map, tag, mu, orbit_length=orbit_length, ensemble=ensemble,
                                     seed=seed)
    return SaghinXia(lam=est.value, chi=growth.chi, slack=growth.chi - est.value,
                     lam_std_error=est.std_error, chi_std_error=growth.std_error, exponent=est,
                     growth=growth)


# ---------------------------------------------------------------------------
# Conditional entropy of f^-1 xi given xi
# ---------------------------------------------------------------------------


@dataclass
class ConditionalEntropyEstimate:
    value: float
    std_error: float
    chart_scale: float
    depth: int
    used: int
    violations: float
    truncated: int
    per_sample: np.ndarray = None
    plain: float = None
    plain_std_error: float = None
    horizon: int = 1


def _cell_index(z, scale):
    return np.floor(reduce(z) / scale).astype(np.int64)


def _image_run(map, stack, scale, grid=257, bisect=40):
    """Level-0 arclength bounds of the run through x of points y whose image
    map(y) stays in the cube containing map(x)."""
    R = stack.R
    q = np.linspace(-R, R, grid)
    N = stack.N
    home = _cell_index(map.lift_apply(stack.z[0]), scale)

    def inside(t):
        y = stack.point(0, t)
        return np.all(_cell_index(map.lift_apply(y.reshape(-1, 3)), scale).reshape(y.shape)
                      == home[:, None], axis=-1)

    ok = inside(np.broadcast_to(q, (N, grid)))
    c0 = grid // 2
    a_in, a_out, b_in, b_out = (np.zeros(N) for _ in range(4))
    has_a, has_b = np.zeros(N, bool), np.zeros(N, bool)
    for i, row in enumerate(ok):
        bad = np.nonzero(~row)[0]
        left, right = bad[bad < c0], bad[bad > c0]
        if len(left):
            has_a[i], a_out[i], a_in[i] = True, q[left[-1]], q[left[-1] + 1]
        if len(right):
            has_b[i], b_out[i], b_in[i] = True, q[right[0]], q[right[0] - 1]
    for _ in range(bisect):
        mid = np.stack([0.5 * (a_in + a_out), 0.5 * (b_in + b_out)], axis=1)
        m = inside(mid)
        a_in, a_out = np.where(m[:, 0], mid[:, 0], a_in), np.where(m[:, 0], a_out, mid[:, 0])
        b_in, b_out = np.where(m[:, 1], mid[:, 1], b_in), np.where(m[:, 1], b_out, mid[:, 1])
    lo = np.where(has_a, 0.5 * (a_in + a_out), -np.inf)
    hi = np.where(has_b, 0.5 * (b_in + b_out), np.inf)
    return lo, hi


def conditional_entropy_estimate(map, tag, mu, chart_scale=0.125, refinement_depth=None,
                                 samples=400, tol=1e-8, seed=0, n_bundle=None, h=0.01,
                                 n_density=33, max_violation=1e-3, horizon=None):
    """-mean log m^xi_x(C_{f^-1 xi}(x)) with xi(x) a leaf-interval partition.

    xi(x) is the component through x of the leaf points y with
    map^-j y in the cube Q(map^-j x) for j = 0..d (cubes of side
    chart_scale); the f^-1 xi cell adds map(y) in Q(map(x)).  Conditional
    measures have density proportional to Delta(x, .) along the leaf.

    The reported value averages, over sampled x, the conditional entropy of
    the f^-n xi pieces inside xi(x), divided by n = ``horizon``.  Since xi is
    increasing and mu invariant, H(f^-n xi | xi) = n H(f^-1 xi | xi), so the
    expectation is unchanged while the per-sample spread shrinks like 1/n.
    The one-step plug-in -log m^xi_x(C_{f^-1 xi}(x)) is reported as ``plain``.
    By default n is the smallest horizon with kappa^n >= 64.
    """
    if not map.is_expanding(tag):
        raise ValueError(f"tag {tag!r} is not expanding for {map!r}")
    kappa = _expansion_floor(map, tag)
    rng = np.random.default_rng([seed, 17])
    idx = rng.choice(len(mu), size=min(samples, len(mu)), replace=False, p=mu.weights)
    x = mu.points[idx]
    d = int(math.ceil(math.log(1e5) / math.log(kappa))) if refinement_depth is None else refinement_depth
    n_h = int(math.ceil(math.log(64.0) / math.log(kappa))) if horizon is None else int(horizon)
    R = 1.2 * math.sqrt(3.0) * chart_scale
    tail = measure_tail_data(map, tag)
    depth = max(d, _stack_depth(map, tag, R, tol, tail))
    stack = LeafStack(map, x, tag, R, depth, h=h, n=n_bundle)

    levels = [_image_run(map, stack, chart_scale)]
    levels += [stack.cube_interval(j, chart_scale) for j in range(d + 1)]
    lo = np.stack([v[0] for v in levels])   # row k holds level k - 1
    hi = np.stack([v[1] for v in levels])
    xi = lo[1:].max(axis=0), hi[1:].min(axis=0)
    fine = lo.max(axis=0), hi.min(axis=0)
    pulled = lo[:-1].max(axis=0), hi[:-1].min(axis=0)

    keep = (xi[0] > -R) & (xi[1] < R)
    if not np.any(keep):
        raise AdaptednessViolation("no partition element fits inside the traced leaf window")
    width = xi[1] - xi[0]
    gap = np.maximum(np.abs(pulled[0] - fine[0]), np.abs(pulled[1] - fine[1]))
    violated = keep & ~(gap <= 1e-6 * width)
    frac = float(np.sum(violated)) / float(np.sum(keep))
    if frac > max_violation:
        raise AdaptednessViolation(
            f"f^-1 xi does not refine xi on {100 * frac:.2f}% of samples; increase refinement_depth")

    a, b = xi[0], np.where(keep, xi[1], 0.0)
    a = np.where(keep, a, -1.0)
    # density proportional to Delta(x, t) = 1 / Delta(t, x) on Chebyshev nodes of each cell
    u = 0.5 - 0.5 * np.cos(np.linspace(0.0, math.pi, n_density))
    nodes = a[:, None] + (b - a)[:, None] * u[None]
    dens = np.exp(-stack.log_delta(nodes))
    # cut search grid: about 32 points per expected f^-n xi piece
    kappa_hi = map.base.certificate.factors[tag][1] if map.direction > 0 else 1.0 / map.base.certificate.factors[tag][0]
    grid = max(2049, 32 * int(math.ceil(kappa_hi ** n_h)) + 1)
    plain = np.empty(len(x))
    vals = np.empty(len(x))
    for i in np.nonzero(keep)[0]:
        F = CubicSpline(nodes[i], dens[i]).antiderivative()
        total = F(b[i]) - F(a[i])
        plain[i] = -math.log((F(fine[1][i]) - F(fine[0][i])) / total)
        # pieces of f^-n xi inside xi(x): runs on which every map^k(y) stays in one cube
        cuts = _image_cuts(map, stack, i, a[i], b[i], chart_scale, n_h, grid)
        p = np.diff(F(cuts)) / total
        p = p[p > 0]
        vals[i] = -float(np.sum(p * np.log(p))) / n_h
    vals, plain = vals[keep], plain[keep]
    n = len(vals)
    return ConditionalEntropyEstimate(
        value=float(np.mean(vals)), std_error=float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else math.inf,
        chart_scale=chart_scale, depth=d, used=n, violations=frac, horizon=n_h,
        truncated=int(np.sum(~keep)), per_sample=vals, plain=float(np.mean(plain)),
        plain_std_error=float(np.std(plain, ddof=1) / math.sqrt(n)) if n > 1 else math.inf)


def _image_cuts(map, stack, i, a, b, scale, horizon, grid, bisect=40):
    """Cut points in [a, b] where the cube of map^k(y), k = 1..horizon, changes
    along row i of the level-0 leaf."""
    sp = stack.curve[0]
    curve = PPoly(sp.c[:, :, i], sp.x)

    def codes(t):
        y = curve(t)
        out = []
        for _ in range(horizon):
            y = map.lift_apply(y)
            out.append(_cell_index(y, scale))
        return np.concatenate(out, axis=-1)

    q = np.linspace(a, b, grid)
    cq = codes(q)
    k = np.nonzero(np.any(cq[1:] != cq[:-1], axis=-1))[0]
    lo, hi, c0 = q[k], q[k + 1], cq[k]
    for _ in range(bisect):
        mid = 0.5 * (lo + hi)
        same = np.all(codes(mid) == c0, axis=-1)
        lo, hi = np.where(same, mid, lo), np.where(same, hi, mid)
    return np.concatenate([[a], 0.5 * (lo + hi), [b]])


__all__ = [
    "leaf_jacobian", "TailData", "measure_tail_data", "delta_product", "LeafStack",
    "LeafDensity", "leaf_density", "EmpiricalMeasure", "ac_invariant_measure", "push_forward",
    "invariance_defect", "fourier_moments", "cube_masses", "lebesgue_exponent",
    "lebesgue_exponent_estimate", "ExponentEstimate", "SaghinXia", "saghin_xia_check",
    "ConditionalEntropyEstimate", "conditional_entropy_estimate", "BATTERY", "battery",
]

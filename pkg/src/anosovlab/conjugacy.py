"""The conjugacy H = id + u with H o F = A o H, and leafwise probes of h.

From F = A + p the periodic part satisfies u o F = A u - p.  In the eigenbasis
of A each coordinate c_i = (V^-1 u)_i solves c_i o F = a_i c_i - q_i with
q = V^-1 p, so

    expanding:   c_i = sum_{k>=1} a_i^-k q_i o F^(k-1)
    contracting: c_i = -sum_{k>=0} a_i^k q_i o F^-(k+1)

Both are geometric series with ratio |a_i|^-+1 and a known bound on |q_i|,
which fixes the number of terms for a requested tail tolerance.  u is not
smooth for a generic map, so grid interpolation of u is only an
approximation; every check here evaluates the series at the points it needs.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.spatial import cKDTree

from .errors import ScaleBelowResolution, SeriesStall
from .foliation import trace_leaves
from .torus_core import TAG_INDEX, TAGS, _lattice, reduce

TERM_CAP = 5000
CHUNK = 65536
EXPONENT_BAND = 0.05
QUOTIENT_BAND = 0.05
UNSTABLE_FRACTION = 0.1
DEFAULT_LADDER = 4.0 ** -np.arange(1, 9)


# ---------------------------------------------------------------------------
# Periodic fields on a lattice
# ---------------------------------------------------------------------------


@dataclass
class PeriodicField:
    """3-vector values on the n^3 lattice (i/n, j/n, k/n), periodic by indexing."""

    values: np.ndarray  # (n, n, n, 3)
    order: str = "trilinear"

    def __post_init__(self):
        if self.order not in ("trilinear", "trigonometric"):
            raise ValueError(f"unknown interpolation order {self.order!r}")

    @property
    def n(self):
        return self.values.shape[0]

    def sup(self):
        return float(np.max(np.linalg.norm(self.values, axis=-1), initial=0.0))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, 3)
        out = self._trilinear(pts) if self.order == "trilinear" else self._trig(pts)
        return out.reshape(x.shape)

    def _trilinear(self, x):
        n = self.n
        g = reduce(x) * n
        i0 = np.floor(g).astype(int)
        t = g - i0
        out = np.zeros((len(x), 3))
        for corner in range(8):
            b = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
            idx = (i0 + b) % n
            w = np.prod(np.where(b == 1, t, 1.0 - t), axis=1)
            out += w[:, None] * self.values[idx[:, 0], idx[:, 1], idx[:, 2]]
        return out

    def _trig(self, x):
        n = self.n
        coef = np.fft.fftn(self.values, axes=(0, 1, 2)) / n ** 3
        k = np.fft.fftfreq(n, 1.0 / n)
        ex = [np.exp(2j * np.pi * np.outer(x[:, a], k)) for a in range(3)]
        out = np.einsum("pi,pj,pk,ijkc->pc", ex[0], ex[1], ex[2], coef, optimize=True)
        return out.real


# ---------------------------------------------------------------------------
# Series solution
# ---------------------------------------------------------------------------


def _term_count(qsup, ratio, tol):
    """Terms needed so that the tail bound qsup r^K / (1 - r) drops below tol."""
    if qsup == 0.0:
        return 0
    if ratio >= 1.0:
        raise SeriesStall("series ratio is not below one", ratio=ratio)
    k = math.ceil(math.log(tol * (1.0 - ratio) / qsup) / math.log(ratio))
    k = max(k, 1)
    if k > TERM_CAP:
        raise SeriesStall(f"series needs {k} terms (cap {TERM_CAP}) at ratio {ratio:.6f}",
                          ratio=ratio)
    return k


def series_plan(map, tol):
    """Per-component term counts, ratios and coefficient bounds."""
    spec = map.spectrum
    W = spec.basis_inverse
    qsup = np.asarray(map.perturbation.component_sup_bound(W), dtype=float)
    if map.is_linear:
        qsup = np.zeros(3)
    alphas = spec.alphas
    ratios = np.where(np.abs(alphas) > 1, 1.0 / np.abs(alphas), np.abs(alphas))
    terms = [_term_count(float(qsup[i]), float(ratios[i]), tol) for i in range(3)]
    return {"terms": dict(zip(TAGS, terms)), "ratios": dict(zip(TAGS, ratios.tolist())),
            "q_sup": dict(zip(TAGS, qsup.tolist())), "condition": float(spec.condition)}


def _eigen_coordinates(map, x, terms):
    spec = map.spectrum
    W = spec.basis_inverse
    a = spec.alphas
    p = map.perturbation
    c = np.zeros((len(x), 3))
    n_fwd = max(terms["uu"], terms["wu"])
    y = reduce(x)
    for k in range(1, n_fwd + 1):
        q = p.value(y) @ W.T
        for i, tag in enumerate(("uu", "wu")):
            if k <= terms[tag]:
                c[:, i] += a[i] ** -k * q[:, i]
        if k < n_fwd:
            y = map.apply(y)
    y = reduce(x)
    for k in range(terms["s"]):
        y = map.inverse_apply(y)
        c[:, 2] -= a[2] ** k * (p.value(y) @ W[2])
    return c


def conjugacy_offset(map, x, terms):
    """u(x) from the truncated eigen-series, evaluated pointwise."""
    x = np.asarray(x, dtype=float)
    pts = x.reshape(-1, 3)
    out = np.zeros_like(pts)
    if not map.is_linear:
        V = map.spectrum.vectors
        for lo in range(0, len(pts), CHUNK):
            out[lo:lo + CHUNK] = _eigen_coordinates(map, pts[lo:lo + CHUNK], terms) @ V.T
    return out.reshape(x.shape)


@dataclass
class ConjugacyMap:
    """H = id + u solving H o F = A o H at finite distance from the identity."""

    map: object = field(repr=False)
    u: PeriodicField = field(repr=False)
    residual: float
    terms: dict
    tol: float
    ratios: dict = field(default_factory=dict)
    condition: float = 1.0
    anchor_error: float = 0.0

    @property
    def resolution(self):
        """Displacement below which pointwise values of h are not trusted."""
        return 10.0 * max(self.tol, 1e-9)

    def offset(self, x, exact=True):
        return conjugacy_offset(self.map, x, self.terms) if exact else self.u(x)

    def __call__(self, x, exact=True):
        """Lift of H at x (continuous in x)."""
        x = np.asarray(x, dtype=float)
        return x + self.offset(x, exact)

    def summary(self):
        return {"residual": self.residual, "terms": self.terms, "tol": self.tol,
                "ratios": self.ratios, "condition": self.condition,
                "grid_n": self.u.n, "u_sup": self.u.sup(), "anchor_error": self.anchor_error}


def functional_residual(H, map, grid_n, offset=0.5):
    """sup over a lattice of the torus distance between H(F x) and A H(x)."""
    x = _lattice(grid_n, offset)
    worst = 0.0
    for lo in range(0, len(x), CHUNK):
        xs = x[lo:lo + CHUNK]
        lhs = H(map.lift_apply(xs))
        rhs = H(xs) @ map.A.T
        d = lhs - rhs
        d -= np.round(d)
        worst = max(worst, float(np.max(np.linalg.norm(d, axis=1), initial=0.0)))
    return worst


def _fixed_point(map, tol=1e-13, max_iter=60):
    """A fixed point of F on the torus, by Newton from the origin (A fixes 0)."""
    x = np.zeros((1, 3))
    for _ in range(max_iter):
        r = map.lift_apply(x) - x
        r -= np.round(r)
        if np.max(np.abs(r)) < tol:
            break
        x = x - np.linalg.solve(map.jacobian(x)[0] - np.eye(3), r[0])[None]
    return reduce(x)[0]


def solve_conjugacy(map, grid_n=32, tol=1e-9, order="trilinear", residual_grid=None):
    """Series solution of u o F = A u - p.

    u is tabulated on the grid_n^3 lattice for interpolation; the recorded
    residual is measured on the half-offset lattice with exact series values.
    The bounded solution is unique, so it sends the fixed point of F to the
    fixed point 0 of A; the distance of H(fixed point) to 0 is recorded.
    """
    plan = series_plan(map, tol)
    terms = plan["terms"]
    g = _lattice(grid_n)
    vals = conjugacy_offset(map, g, terms).reshape(grid_n, grid_n, grid_n, 3)
    H = ConjugacyMap(map, PeriodicField(vals, order), 0.0, terms, tol, plan["ratios"],
                     plan["condition"])
    if not map.is_linear:
        H.residual = functional_residual(H, map, residual_grid or grid_n)
        z = H(_fixed_point(map)[None])[0]
        H.anchor_error = float(np.linalg.norm(z - np.round(z)))
    return H


def _injectivity_violations(H, x, near=1e-9, far=1e-6):
    img = reduce(H(x))
    img = np.where(img >= 1.0, 0.0, img)
    pairs = cKDTree(img, boxsize=1.0).query_pairs(near, output_type="ndarray")
    if not len(pairs):
        return 0
    d = x[pairs[:, 0]] - x[pairs[:, 1]]
    d -= np.round(d)
    return int(np.sum(np.linalg.norm(d, axis=1) > far))


def verify_semiconjugacy(H, map, grid_n=32):
    """sup over a fresh lattice of dist(h(f(x)), A h(x)); inf if h fails injectivity.

    The injectivity proxy flags two lattice images closer than 1e-9 whose
    sources are more than 1e-6 apart.
    """
    res = functional_residual(H, map, grid_n, offset=0.25)
    if _injectivity_violations(H, _lattice(grid_n, 0.25)):
        return math.inf
    return res


# ---------------------------------------------------------------------------
# Leaves through h
# ---------------------------------------------------------------------------


def _leaf_curves(map, x, tag, r, h):
    pts, tan, s = trace_leaves(map, x, tag, r, h=h)
    return CubicHermiteSpline(s, pts, tan, axis=1)


def _eigen_displacement(H, map, x, y):
    """Eigen-coordinates of H(y) - H(x) for y a continuous lift near x."""
    W = map.spectrum.basis_inverse
    d = (y - x[:, None]) + H.offset(y) - H.offset(x)[:, None]
    return d @ W.T


@dataclass
class ImageDeviation:
    """Deviation of h(leaf) from the A-eigenline and from the A-unstable plane."""

    tag: str
    line: float
    plane: float
    monotone: bool

    def __float__(self):
        return self.plane if self.tag == "uu" else self.line


def foliation_image_check(H, map, tag, x, r, h=0.005, n_points=401):
    """Map the leaf of ``tag`` through x by h and measure its straightness.

    ``line`` is the largest distance of image points from h(x) + span(v_tag);
    ``plane`` the largest distance from the A-unstable plane through h(x)
    (only meaningful for uu, whose image is contained in that plane).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    curve = _leaf_curves(map, x, tag, r, h)
    s = np.linspace(-r, r, n_points)
    y = curve(s)
    c = _eigen_displacement(H, map, x, y)
    V = map.spectrum.vectors
    i = TAG_INDEX[tag]
    d = c @ V.T
    v = V[:, i]
    off = d - (d @ v)[..., None] * v
    n = np.cross(V[:, 0], V[:, 1])
    n /= np.linalg.norm(n)
    steps = np.diff(c[..., i], axis=-1)
    monotone = bool(np.all(steps > 0) or np.all(steps < 0)) if len(x) == 1 else bool(
        np.all((steps > 0).all(axis=-1) | (steps < 0).all(axis=-1)))
    return ImageDeviation(tag, float(np.max(np.linalg.norm(off, axis=-1))),
                          float(np.max(np.abs(d @ n))), monotone)


# ---------------------------------------------------------------------------
# Leafwise regularity
# ---------------------------------------------------------------------------

VERDICT_RULES = (
    f"C1-consistent: |exponent - 1| <= {EXPONENT_BAND} and at every base point the "
    f"quotient changes by at most {QUOTIENT_BAND:.0%} between the two finest scales. "
    f"sub-Lipschitz: exponent < {1 - EXPONENT_BAND} or the quotient changes by more than "
    f"{QUOTIENT_BAND:.0%} at >= {UNSTABLE_FRACTION:.0%} of base points. "
    "inconclusive: otherwise.")


@dataclass
class RegularityReport:
    tag: str
    base_points: np.ndarray
    scales: np.ndarray
    quotients: np.ndarray  # (points, scales)
    exponent: float
    exponent_std_error: float
    verdict: str
    stability: np.ndarray  # |Q_finest / Q_next - 1| per base point
    unstable_fraction: float
    fit_window: tuple
    rules: str = VERDICT_RULES

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        d["median_quotient"] = np.median(self.quotients, axis=0).tolist()
        return d


def _verdict(exponent, stability):
    unstable = float(np.mean(stability > QUOTIENT_BAND))
    if abs(exponent - 1.0) <= EXPONENT_BAND and unstable == 0.0:
        return "C1-consistent", unstable
    if exponent < 1.0 - EXPONENT_BAND or unstable >= UNSTABLE_FRACTION:
        return "sub-Lipschitz", unstable
    return "inconclusive", unstable


def leafwise_regularity_probe(H, map, tag, x, scale_ladder=None, h=None):
    """Difference quotients of h along leaves of ``tag`` at a ladder of distances.

    At each base point and distance d the displacement of h along the
    A-eigenline of ``tag`` is averaged over the two leaf points at arclength
    +-d.  The Hölder exponent is the mean per-point log-log slope over the
    fit window (coarsest scale dropped, finest dropped when within 10x of
    the evaluation resolution).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = np.sort(np.asarray(DEFAULT_LADDER if scale_ladder is None else scale_ladder,
                          dtype=float))[::-1]
    if len(d) < 3:
        raise ValueError("the scale ladder needs at least three distances")
    if d[-1] <= H.resolution:
        raise ScaleBelowResolution(
            f"finest scale {d[-1]:.3g} is below the resolution {H.resolution:.3g} of h")
    curve = _leaf_curves(map, x, tag, d[0], d[0] / 16 if h is None else h)
    y = curve(np.concatenate([d, -d]))
    c = _eigen_displacement(H, map, x, y)[..., TAG_INDEX[tag]]
    L = len(d)
    D = 0.5 * (np.abs(c[:, :L]) + np.abs(c[:, L:]))
    Q = D / d
    hi = L - 1 if d[-1] <= 10 * H.resolution else L
    sel = slice(1, hi)
    ld, lD = np.log(d[sel]), np.log(D[:, sel])
    ldc = ld - ld.mean()
    slopes = (lD - lD.mean(axis=1, keepdims=True)) @ ldc / np.sum(ldc ** 2)
    nu = float(np.mean(slopes))
    se = float(np.std(slopes, ddof=1) / math.sqrt(len(slopes))) if len(slopes) > 1 else 0.0
    stab = np.abs(Q[:, -1] / Q[:, -2] - 1.0)
    verdict, unstable = _verdict(nu, stab)
    return RegularityReport(tag, x, d, Q, nu, se, verdict, stab, unstable, (1, hi - 1))


# ---------------------------------------------------------------------------
# Rigidity experiment
# ---------------------------------------------------------------------------


@dataclass
class TagDiagnostics:
    tag: str
    lam: float
    lam_std_error: float
    chi: float
    chi_std_error: float
    h_leaf: float
    regularity: RegularityReport

    @property
    def gap(self):
        return self.chi - self.lam

    @property
    def sigma(self):
        return math.hypot(self.lam_std_error, self.chi_std_error)

    @property
    def strict_gap(self):
        return abs(self.gap) > 3.0 * self.sigma

    def to_dict(self):
        return {"tag": self.tag, "lambda": self.lam, "lambda_std_error": self.lam_std_error,
                "chi": self.chi, "chi_std_error": self.chi_std_error, "h_leaf": self.h_leaf,
                "gap": self.gap, "sigma": self.sigma, "strict_gap": self.strict_gap,
                "regularity": self.regularity.to_dict()}


@dataclass
class RigidityReport:
    map_name: str
    tags: dict
    settings: dict
    conjugacy: dict

    @property
    def hypothesis_satisfied(self):
        """Every exponent gap within three standard errors of zero."""
        return not any(t.strict_gap for t in self.tags.values())

    @property
    def consistent(self):
        """The lab-level dichotomy: no gap -> no sub-Lipschitz; gap -> sub-Lipschitz there."""
        verdicts = {k: t.regularity.verdict for k, t in self.tags.items()}
        if self.hypothesis_satisfied:
            return "sub-Lipschitz" not in verdicts.values()
        return all(verdicts[k] == "sub-Lipschitz" for k, t in self.tags.items() if t.strict_gap)

    def to_dict(self):
        return {"map": self.map_name, "settings": self.settings, "conjugacy": self.conjugacy,
                "hypothesis_satisfied": self.hypothesis_satisfied,
                "dichotomy_consistent": self.consistent,
                "tags": {k: t.to_dict() for k, t in self.tags.items()}}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_rows(self):
        yield "tag,lambda,lambda_std_error,chi,chi_std_error,h_leaf,gap,sigma,exponent,verdict"
        for k, t in self.tags.items():
            yield (f"{k},{t.lam!r},{t.lam_std_error!r},{t.chi!r},{t.chi_std_error!r},"
                   f"{t.h_leaf!r},{t.gap!r},{t.sigma!r},{t.regularity.exponent!r},"
                   f"{t.regularity.verdict}")


def tag_diagnostics(map, tag, H, x0=(0.1234, 0.5678, 0.3141), r=0.25, N=64, samples=4096,
                    orbit_length=2000, ensemble=512, leaves=16, n_max=None, entropy=True,
                    entropy_n_max=None, base_points=64, seed=0, scale_ladder=None):
    """lambda, chi, h_W and the regularity probe along one tag.

    chi is the mean growth over ``leaves`` leaf balls of radius r at seeded
    random base points; lambda integrates log J against the measure grown
    from the leaf through x0, with Birkhoff averaging.
    """
    from .leaf_entropy import leaf_entropy
    from .foliation import DEFAULT_MAX_STEP, grow_leaf, growth_ensemble
    from .measures import ac_invariant_measure, lebesgue_exponent_estimate

    f = map if map.is_expanding(tag) else map.inverse()
    rng = np.random.default_rng([seed, 17])
    growth = growth_ensemble(f, tag, rng.random((leaves, 3)), r, n_max)
    seg = grow_leaf(f, x0, tag, r, DEFAULT_MAX_STEP)
    mu = ac_invariant_measure(f, tag, seg, N, samples, seed)
    est = lebesgue_exponent_estimate(f, tag, mu, orbit_length=orbit_length, ensemble=ensemble,
                                     seed=seed)
    h_leaf = math.nan
    if entropy:
        k = entropy_n_max or max(3, math.ceil(math.log(200.0) / max(growth.chi, 1e-3)))
        K = grow_leaf(f, x0, tag, 0.05, 2e-4)
        h_leaf = leaf_entropy(f, tag, K, n_max=k).h
    reg = leafwise_regularity_probe(H, map, tag, rng.random((base_points, 3)), scale_ladder)
    return TagDiagnostics(tag, est.value, est.std_error, growth.chi, growth.std_error, h_leaf, reg)


def rigidity_experiment(map, tags=TAGS, grid_n=16, tol=1e-9, seed=0, **kw):
    """Exponent gaps, leaf entropy and leafwise regularity of h for each tag."""
    H = solve_conjugacy(map, grid_n, tol)
    diags = {t: tag_diagnostics(map, t, H, seed=seed, **kw) for t in tags}
    settings = {"grid_n": grid_n, "tol": tol, "seed": seed,
                **{k: (list(v) if isinstance(v, (tuple, np.ndarray)) else v) for k, v in kw.items()},
                "verdict_rules": VERDICT_RULES}
    return RigidityReport(map.name, diags, settings, H.summary())


__all__ = [
    "PeriodicField", "ConjugacyMap", "RegularityReport", "ImageDeviation", "RigidityReport",
    "TagDiagnostics", "solve_conjugacy", "verify_semiconjugacy", "foliation_image_check",
    "leafwise_regularity_probe", "rigidity_experiment", "tag_diagnostics", "series_plan",
    "conjugacy_offset", "functional_residual", "VERDICT_RULES",
]

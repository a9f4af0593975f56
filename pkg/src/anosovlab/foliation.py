"""One-dimensional invariant leaves as adaptive polylines.

A leaf ball is traced by integrating the unit bundle field with RK4 at a
coarse step, then densified with a cubic Hermite interpolant (the field
value is the tangent) down to ``max_step``.  That interpolant is kept as the
generation-0 source of the segment: every vertex of an iterated segment is
f^gen(source(s)) for a leaf parameter s, so refinement bisects in s and never
in ambient space.

Vertices are lifts to R^3, so arclength never shortcuts through the torus
identification.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import OrientationJump, VertexBudgetExceeded
from .splitting import bundle_field, line_angle

DEFAULT_MAX_STEP = 1e-3
DEFAULT_BUDGET = 20_000_000


def polyline_arclength(v):
    """Cumulative Euclidean arclength along axis -2 of a vertex array."""
    gaps = np.linalg.norm(np.diff(v, axis=-2), axis=-1)
    out = np.zeros(gaps.shape[:-1] + (gaps.shape[-1] + 1,))
    np.cumsum(gaps, axis=-1, out=out[..., 1:])
    return out


@dataclass
class LeafSource:
    """Generation-0 leaf: s -> point, a cubic Hermite curve in signed arclength."""

    spline: CubicHermiteSpline
    lo: float
    hi: float

    def __call__(self, s):
        return self.spline(np.clip(np.asarray(s, dtype=float), self.lo, self.hi))


@dataclass
class LeafSegment:
    tag: str
    base: np.ndarray
    vertices: np.ndarray
    params: np.ndarray
    generation: int
    source: LeafSource
    map: object = field(repr=False)
    max_step: float = DEFAULT_MAX_STEP
    arclengths: np.ndarray = None

    def __post_init__(self):
        if self.arclengths is None:
            self.arclengths = polyline_arclength(self.vertices)

    @property
    def length(self):
        return float(self.arclengths[-1])

    def __len__(self):
        return len(self.params)

    def restrict(self, lo, hi):
        """Sub-segment with leaf parameters in [lo, hi] (endpoints inserted)."""
        s = np.unique(np.concatenate([[lo, hi], self.params[(self.params > lo) & (self.params < hi)]]))
        return replace(self, params=s, vertices=self.point(s), arclengths=None)

    def point(self, s):
        """Lift of f^generation(source(s)), continuous with the stored vertices."""
        return evaluate(self.map, self.source, s, self.generation, self.vertices[0], self.params[0])

    def position(self, s):
        """Arclength coordinate of leaf parameters s (linear in each gap)."""
        return np.interp(s, self.params, self.arclengths)

    def csv_rows(self):
        yield "s,x1,x2,x3,arclength"
        for s, v, a in zip(self.params, self.vertices, self.arclengths):
            yield f"{s!r},{v[0]!r},{v[1]!r},{v[2]!r},{a!r}"


def evaluate(map, source, s, generation, anchor=None, anchor_param=None):
    """f^generation(source(s)) as lifts; shifted by an integer vector so the
    point with parameter ``anchor_param`` lands on ``anchor``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if anchor is not None:
        s = np.concatenate([[anchor_param], s])
    y = source(s)
    for _ in range(generation):
        y = map.lift_apply(y)
    if anchor is not None:
        y = y[1:] + np.round(anchor - y[0])
    return y


# ---------------------------------------------------------------------------
# Tracing leaves
# ---------------------------------------------------------------------------


def _field(f, tag, y, prev, n):
    e = bundle_field(f, tag, y, n=n)
    if prev is not None:
        sign = np.sign(np.sum(e * prev, axis=-1))
        e = e * np.where(sign == 0, 1.0, sign)[..., None]
        if np.max(line_angle(e, prev)) > math.pi / 4:
            raise OrientationJump("bundle field turned by more than pi/4 in one step")
    return e


def trace_leaves(map, x, tag, r, h=0.01, n=None, steps=None):
    """RK4 integration of the unit field from each row of x over s in [-r, r].

    Both directions are integrated in one vectorized sweep.  Returns nodes
    (N, 2m+1, 3), unit tangents (N, 2m+1, 3) and parameters: (2m+1,) for a
    scalar r, (N, 2m+1) when r is given per row.  ``steps`` fixes m.
    """
    f = map.base
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k = len(x)
    rr = np.asarray(r, dtype=float)
    m = steps if steps is not None else max(1, math.ceil(float(np.max(rr)) / h))
    hh = np.broadcast_to(rr / m, (k,))
    step = np.concatenate([hh, hh])[:, None]
    y = np.concatenate([x, x])
    sgn = np.concatenate([np.ones(k), -np.ones(k)])[:, None]
    e0 = _field(f, tag, x, None, n)
    prev = np.concatenate([e0, e0]) * sgn
    nodes, tangents = [y], [prev]
    for _ in range(m):
        k1 = _field(f, tag, y, prev, n)
        k2 = _field(f, tag, y + 0.5 * step * k1, k1, n)
        k3 = _field(f, tag, y + 0.5 * step * k2, k2, n)
        k4 = _field(f, tag, y + step * k3, k3, n)
        y = y + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        prev = _field(f, tag, y, k4, n)
        nodes.append(y)
        tangents.append(prev)
    nodes = np.stack(nodes, axis=1)
    tangents = np.stack(tangents, axis=1)
    fwd, bwd = nodes[:k], nodes[k:, ::-1]
    tf, tb = tangents[:k], -tangents[k:, ::-1]
    pts = np.concatenate([bwd[:, :-1], fwd], axis=1)
    tan = np.concatenate([tb[:, :-1], tf], axis=1)
    unit = np.linspace(-1.0, 1.0, 2 * m + 1)
    s = unit * float(rr) if rr.ndim == 0 else rr[:, None] * unit[None]
    return pts, tan, s


def _densify(source, lo, hi, max_step):
    m = max(2, math.ceil((hi - lo) / (0.98 * max_step)) + 1)
    return np.linspace(lo, hi, m)


def grow_leaf(map, x, tag, r, max_step=DEFAULT_MAX_STEP, h=0.01, n=None):
    """Leaf ball of arclength radius r around x, as a generation-0 segment."""
    return grow_leaves(map, np.atleast_2d(x), tag, r, max_step, h, n)[0]


def grow_leaves(map, x, tag, r, max_step=DEFAULT_MAX_STEP, h=0.01, n=None):
    pts, tan, s = trace_leaves(map, x, tag, r, h, n)
    segs = []
    for p, t, b in zip(pts, tan, np.atleast_2d(x)):
        source = LeafSource(CubicHermiteSpline(s, p, t, axis=0), -r, r)
        params = _densify(source, -r, r, max_step)
        segs.append(LeafSegment(tag, np.array(b, dtype=float), source(params), params, 0, source,
                                map, max_step))
    return segs


# ---------------------------------------------------------------------------
# Iteration with refinement
# ---------------------------------------------------------------------------


def _refine(seg, max_step, budget):
    """Insert parameter midpoints until every vertex gap is at most max_step."""
    s, v = seg.params, seg.vertices
    while True:
        gaps = np.linalg.norm(np.diff(v, axis=0), axis=1)
        bad = np.nonzero(gaps > max_step)[0]
        if not len(bad):
            return s, v
        if len(s) + len(bad) > budget:
            raise VertexBudgetExceeded(
                f"{len(s) + len(bad)} vertices exceed budget {budget}; shrink r or n")
        mid = 0.5 * (s[bad] + s[bad + 1])
        if np.any((mid <= s[bad]) | (mid >= s[bad + 1])):
            raise VertexBudgetExceeded("leaf parameter bisection reached float resolution")
        vm = seg.point(mid) if seg.generation else seg.source(mid)
        # consecutive vertices are within max_step, so the nearest lift is the right one
        vm = vm + np.round(v[bad] - vm + 0.5 * (v[bad + 1] - v[bad]))
        s = np.insert(s, bad + 1, mid)
        v = np.insert(v, bad + 1, vm, axis=0)


def iterate_leaf(map, seg, n, max_step=None, budget=DEFAULT_BUDGET, history=False):
    """Apply ``map`` n times to a segment, refining after each application.

    ``map`` must be the map the segment was grown for (or the segment must be
    at generation 0).  With ``history`` the list of all intermediate segments
    (generations g..g+n) is returned.
    """
    max_step = seg.max_step if max_step is None else max_step
    if seg.generation and seg.map is not map:
        raise ValueError("segment was iterated under a different map")
    seg = replace(seg, map=map)
    out = [seg]
    for _ in range(n):
        v = map.lift_apply(seg.vertices)
        v = v - np.floor(v[0])
        seg = replace(seg, vertices=v, generation=seg.generation + 1, max_step=max_step,
                      arclengths=None)
        s, v = _refine(seg, max_step, budget)
        seg = replace(seg, params=s, vertices=v, arclengths=None)
        if history:
            out.append(seg)
    return out if history else seg


def leaf_length(seg):
    """Sum of Euclidean gaps between consecutive lift vertices."""
    v = seg.vertices if hasattr(seg, "vertices") else np.asarray(seg, dtype=float)
    return float(np.sum(np.linalg.norm(np.diff(v, axis=0), axis=1)))


def tangent_defect(seg, n=None):
    """Largest angle between segment chords and the bundle at chord midpoints."""
    v = seg.vertices
    chords = np.diff(v, axis=0)
    mid = 0.5 * (v[1:] + v[:-1])
    e = bundle_field(seg.map.base, seg.tag, mid, n=n)
    return float(np.max(line_angle(chords, e)))


# ---------------------------------------------------------------------------
# Growth rates
# ---------------------------------------------------------------------------


@dataclass
class GrowthEstimate:
    chi: float
    n: np.ndarray
    log_length: np.ndarray
    window: tuple
    residual: float
    std_error: float
    tag: str = ""
    x: np.ndarray = None
    r: float = 0.0
    defects: np.ndarray = None

    def csv_rows(self, map_id):
        x = " ".join(repr(float(c)) for c in self.x) if self.x is not None else ""
        yield "map_id,tag,x,r,n,log_length"
        for n, ll in zip(self.n, self.log_length):
            yield f"{map_id},{self.tag},{x},{self.r!r},{int(n)},{ll!r}"
        yield f"{map_id},{self.tag},{x},{self.r!r},chi={self.chi!r},residual={self.residual!r}"


def fit_slope(n, y):
    """Least-squares slope, RMS residual and slope standard error."""
    n = np.asarray(n, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(n) < 2:
        raise ValueError("need at least two points for a slope")
    A = np.stack([n, np.ones_like(n)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    rms = float(np.sqrt(np.mean(res ** 2)))
    if len(n) > 2:
        s2 = float(np.sum(res ** 2) / (len(n) - 2))
        se = math.sqrt(s2 / float(np.sum((n - n.mean()) ** 2)))
    else:
        se = 0.0
    return float(coef[0]), rms, se


def default_n_max(map, tag, r, max_step=DEFAULT_MAX_STEP, budget=DEFAULT_BUDGET, cap=30):
    """Largest n whose leaf of length 2r stays within the vertex budget."""
    lo, hi = map.certificate.log_factor_range(tag) if map.direction > 0 else \
        tuple(-v for v in map.certificate.log_factor_range(tag))[::-1]
    rate = max(hi, 1e-3)
    n = (math.log(0.5 * budget * max_step) - math.log(2 * r)) / rate
    return int(max(2, min(cap, math.floor(n))))


def chord_defect(seg, k=256, seed=0):
    """Largest chord-to-bundle angle over a fixed random subsample of chords."""
    v = seg.vertices
    m = len(v) - 1
    idx = np.arange(m) if m <= k else np.sort(np.random.default_rng(seed).choice(m, k, False))
    chords = v[idx + 1] - v[idx]
    mid = 0.5 * (v[idx + 1] + v[idx])
    e = bundle_field(seg.map.base, seg.tag, mid)
    return float(np.max(line_angle(chords, e)))


def geometric_growth(map, tag, x, r, n_max=None, window=None, max_step=DEFAULT_MAX_STEP,
                     budget=DEFAULT_BUDGET, seg=None, defect_tol=0.01):
    """Slope of log leaf_length(f^n W_r(x)) over the trailing window of n.

    For a contracting tag pass the inverse map.  ``window`` is (n_lo, n_hi);
    the default is the last half of 1..n_max.

    A weak leaf is unstable under iteration: the small transverse error of
    the traced leaf is stretched by the stronger bundle faster than the leaf
    itself.  Iteration stops at the first generation whose chords leave the
    bundle by more than ``defect_tol`` radians, and the default window is
    taken inside the generations that passed.
    """
    if not map.is_expanding(tag):
        raise ValueError(f"tag {tag!r} is not expanding for {map!r}; use the inverse map")
    x = np.asarray(x, dtype=float)
    n_max = default_n_max(map, tag, r, max_step, budget) if n_max is None else n_max
    seg = grow_leaf(map, x, tag, r, max_step) if seg is None else seg
    hist, defects = [seg], [0.0]
    for g in range(n_max):
        nxt = iterate_leaf(map, hist[-1], 1, max_step, budget)
        d = chord_defect(nxt, seed=g) if defect_tol is not None else 0.0
        if d > defect_tol and g >= 2:
            break
        hist.append(nxt)
        defects.append(d)
    n_ok = len(hist) - 1
    ns = np.arange(n_ok + 1)
    ll = np.array([math.log(leaf_length(s)) for s in hist])
    lo, hi = window if window is not None else (n_ok - n_ok // 2, n_ok)
    hi = min(hi, n_ok)
    lo = min(lo, hi - 1)
    sel = (ns >= lo) & (ns <= hi)
    chi, res, se = fit_slope(ns[sel], ll[sel])
    return GrowthEstimate(chi=chi, n=ns, log_length=ll, window=(int(lo), int(hi)), residual=res,
                          std_error=se, tag=tag, x=x, r=r, defects=np.array(defects))


@dataclass
class GrowthEnsemble:
    """Geometric growth averaged over leaf balls at several base points."""

    chi: float
    std_error: float
    per_leaf: np.ndarray
    estimates: list

    @property
    def spread(self):
        return float(self.per_leaf.max() - self.per_leaf.min())


def growth_ensemble(map, tag, points, r, n_max=None, h=0.003, max_step=DEFAULT_MAX_STEP,
                    budget=1_000_000, defect_tol=0.01):
    """Mean and standard error of geometric_growth over leaves through ``points``.

    The leaves are traced in one batch; a single leaf ball carries a
    leaf-specific transient of a few 1e-4, which the ensemble averages out.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n_max = default_n_max(map, tag, r, max_step, budget) if n_max is None else n_max
    segs = grow_leaves(map, pts, tag, r, max_step, h=h)
    ests = [geometric_growth(map, tag, p, r, n_max, max_step=max_step, budget=budget, seg=sg,
                             defect_tol=defect_tol) for p, sg in zip(pts, segs)]
    vals = np.array([e.chi for e in ests])
    se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else ests[0].std_error
    return GrowthEnsemble(float(vals.mean()), se, vals, ests)


@dataclass
class ChiSup:
    value: float
    per_point: np.ndarray
    spread: float
    estimates: list


def chi_sup(map, tag, sample_points, r, n_max=None, **kw):
    """Maximum of geometric_growth over sample points, with per-point spread."""
    ests = [geometric_growth(map, tag, x, r, n_max, **kw) for x in np.atleast_2d(sample_points)]
    vals = np.array([e.chi for e in ests])
    return ChiSup(value=float(vals.max()), per_point=vals, spread=float(vals.max() - vals.min()),
                  estimates=ests)


__all__ = [
    "LeafSegment", "LeafSource", "GrowthEstimate", "ChiSup", "grow_leaf", "grow_leaves",
    "trace_leaves", "iterate_leaf", "leaf_length", "geometric_growth", "chi_sup", "fit_slope",
    "tangent_defect", "chord_defect", "GrowthEnsemble", "growth_ensemble", "polyline_arclength",
]

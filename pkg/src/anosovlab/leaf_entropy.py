"""Leaf-wise topological entropy from (n, eps)-separated and generator sets.

For a compact arc K of a 1-d leaf, write Lam_j(s) for the arclength position
of f^j(point s) along the refined image f^j(K).  Because f maps the arc
homeomorphically onto its image, each Lam_j is increasing in s and

    d_n(y, z) = max_{0 <= j < n} |Lam_j(z) - Lam_j(y)|

is monotone in z for z > y.  A left-to-right greedy sweep is then optimal
both for maximal separated sets and for minimal generator sets.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ResolutionTooCoarse
from .foliation import DEFAULT_MAX_STEP, fit_slope, grow_leaf, iterate_leaf, leaf_length

DEFAULT_SCHEDULE = (0.2, 0.1, 0.05, 0.025)


class ImageTable:
    """Cumulative image arclengths of the discretization points of K.

    ``lam[j, i]`` is the arclength coordinate of f^j(t_i) along f^j(K), where
    t_0 < ... < t_M are the leaf parameters of the last refined generation.
    """

    def __init__(self, history):
        self.history = history
        finest = history[-1]
        self.params = finest.params
        self.lam = np.stack([seg.position(self.params) for seg in history])
        self.lengths = np.array([leaf_length(seg) for seg in history])

    @classmethod
    def build(cls, map, K, n, max_step=None, budget=None):
        kw = {} if budget is None else {"budget": budget}
        return cls(iterate_leaf(map, K, n - 1, max_step, history=True, **kw))

    @property
    def n(self):
        return self.lam.shape[0]

    def resolution(self, n):
        """Largest d_n gap between consecutive discretization points."""
        return float(np.max(np.diff(self.lam[:n], axis=1)))


def dn_distance(table, y, z, n):
    """d_n between leaf parameters y and z, read off the image arclengths."""
    if n < 1 or n > table.n:
        raise ValueError(f"n must be in 1..{table.n}")
    hist = table.history
    d = [abs(hist[j].position(z) - hist[j].position(y)) for j in range(n)]
    return np.max(np.stack(d), axis=0)


def dn_matrix(lam, n):
    """Pairwise d_n on the discretization (small instances only)."""
    l = lam[:n]
    return np.max(np.abs(l[:, :, None] - l[:, None, :]), axis=0)


def _check(table, n, eps):
    res = table.resolution(n)
    if res > eps / 10:
        raise ResolutionTooCoarse(f"d_{n} discretization step {res:.3g} exceeds eps/10 = {eps / 10:.3g}")


def greedy_separated(lam, n, eps):
    """Indices of the greedy (n, eps)-separated set (strict: d_n > eps).

    Next point = first index whose d_n to the last chosen one exceeds eps; by
    monotonicity that is the smallest over j of the first crossing in Lam_j.
    """
    l = lam[:n]
    m = l.shape[1]
    out = [0]
    a = 0
    while True:
        b = min(int(np.searchsorted(row, row[a] + eps, side="right")) for row in l)
        if b >= m:
            return out
        out.append(b)
        a = b


def greedy_generator(lam, n, eps):
    """Indices of a greedy generator set: every point within d_n <= eps of a center.

    The first uncovered point is covered by the furthest-right center that
    still reaches it; that center then covers everything up to its own reach.
    """
    l = lam[:n]
    m = l.shape[1]
    out = []
    a = 0
    while a < m:
        y = min(int(np.searchsorted(row, row[a] + eps, side="right")) for row in l) - 1
        out.append(y)
        a = min(int(np.searchsorted(row, row[y] + eps, side="right")) for row in l)
    return out


class _Sweep:
    """Continuous greedy sweeps over the piecewise-linear Lam_j.

    Refinement only inserts parameters, so each Lam_j is exactly linear
    between consecutive finest parameters and crossings are solved by inverse
    interpolation instead of snapping to the next discretization point.
    """

    def __init__(self, table, n):
        self.t = table.params
        self.lam = table.lam[:n]
        self.end = self.t[-1]
        m = self.lam.shape[1]
        # rows stacked with offsets so one searchsorted serves every j
        self.shift = (np.max(self.lam[:, -1]) + 1.0) * np.arange(n)
        self.flat = (self.lam + self.shift[:, None]).ravel()
        self.m = m
        self.rows = np.arange(n)

    def cross(self, a, eps):
        """Largest s with d_n(a, s) <= eps, i.e. min_j Lam_j^-1(Lam_j(a) + eps)."""
        t, lam, m = self.t, self.lam, self.m
        i = min(max(int(np.searchsorted(t, a)), 1), m - 1)
        w = (a - t[i - 1]) / (t[i] - t[i - 1])
        target = lam[:, i - 1] + w * (lam[:, i] - lam[:, i - 1]) + eps
        k = np.searchsorted(self.flat, target + self.shift) - self.rows * m
        ok = (k < m) & (k >= 1)
        if not np.any(ok):
            return np.inf
        k, rows, target = k[ok], self.rows[ok], target[ok]
        l0, l1 = lam[rows, k - 1], lam[rows, k]
        frac = np.where(l1 > l0, (target - l0) / np.where(l1 > l0, l1 - l0, 1.0), 1.0)
        return float(np.min(t[k - 1] + frac * (t[k] - t[k - 1])))

    def _top(self, steps):
        """Parameters where the last row advances by the given arclengths from t[0]."""
        top = self.lam[-1]
        return np.interp(top[0] + steps, top, self.t)

    def _dominated(self, lo, hi, eps):
        """True if no earlier row advances by more than eps on any [lo_k, hi_k]."""
        tol = eps * (1 + 1e-12)
        for row in self.lam[:-1]:
            if np.any(np.interp(hi, self.t, row) - np.interp(lo, self.t, row) > tol):
                return False
        return True

    def separated(self, eps):
        # fast path: when the last row is the binding one on every step the
        # greedy points sit at multiples of eps along it; verified, else swept
        top = self.lam[-1]
        k = np.arange(1, int((top[-1] - top[0]) / eps) + 2)
        pts = np.concatenate([[self.t[0]], self._top(k * eps)])
        pts = pts[: 1 + int(np.sum(top[0] + k * eps < top[-1]))]
        if self._dominated(pts[:-1], pts[1:], eps):
            return len(pts)
        return self._separated_sweep(eps)

    def _separated_sweep(self, eps):
        count, a = 1, self.t[0]
        while True:
            b = self.cross(a, eps)
            if not b < self.end:
                return count
            count += 1
            a = b

    def generator(self, eps):
        top = self.lam[-1]
        total = top[-1] - top[0]
        steps = np.arange(0, total / eps + 3)
        q = self._top(steps * eps)
        ends = top[0] + steps * eps < top[-1]
        # starts a_k at even multiples, centers at odd multiples of eps
        a = q[0::2]
        y = q[1::2]
        m = min(len(a), len(y))
        a, y = a[:m], y[:m]
        # count: centers until a center or its reach passes the end
        alive = ends[0::2][:m]
        centre_in = ends[1::2][:m]
        count = 0
        for k in range(m):
            count += 1
            if not centre_in[k] or k + 1 >= m or not alive[k + 1]:
                break
        lo = np.concatenate([a[:count], y[:count]])
        hi = np.concatenate([y[:count], np.minimum(a[1:count + 1], self.end) if count < len(a)
                             else np.append(a[1:count], self.end)])
        if len(hi) == len(lo) and self._dominated(lo, hi, eps):
            return count
        return self._generator_sweep(eps)

    def _generator_sweep(self, eps):
        count, a = 0, self.t[0]
        while True:
            count += 1
            y = self.cross(a, eps)
            if not y < self.end:
                return count
            c = self.cross(y, eps)
            if not c < self.end:
                return count
            a = c


def max_separated(table, n, eps, check=True, continuous=True):
    """Cardinality of a maximal (n, eps)-separated subset of K.

    ``continuous=False`` restricts to the discretization points (the setting
    of the brute-force oracle).
    """
    if check:
        _check(table, n, eps)
    if continuous:
        return _Sweep(table, n).separated(eps)
    return len(greedy_separated(table.lam, n, eps))


def min_generator(table, n, eps, check=True, continuous=True):
    if check:
        _check(table, n, eps)
    if continuous:
        return _Sweep(table, n).generator(eps)
    return len(greedy_generator(table.lam, n, eps))


@dataclass
class SeparationTable:
    ns: np.ndarray
    eps: np.ndarray
    s_count: np.ndarray
    g_count: np.ndarray
    g_half: np.ndarray
    lengths: np.ndarray
    resolution: float

    def csv_rows(self):
        yield "n,eps,s_count,g_count"
        for i, n in enumerate(self.ns):
            for k, e in enumerate(self.eps):
                yield f"{int(n)},{e!r},{int(self.s_count[i, k])},{int(self.g_count[i, k])}"

    def sandwich_holds(self):
        return bool(np.all(self.g_count <= self.s_count) and np.all(self.s_count <= self.g_half))

    def monotone(self):
        """s and g nondecreasing in n and nonincreasing in eps (eps sorted descending)."""
        ok = True
        for c in (self.s_count, self.g_count):
            ok &= bool(np.all(np.diff(c, axis=0) >= 0))
            order = np.argsort(-self.eps)
            ok &= bool(np.all(np.diff(c[:, order], axis=1) >= 0))
        return ok


def separation_table(table, ns, eps_list):
    ns = np.asarray(ns)
    eps_list = np.asarray(eps_list, dtype=float)
    for e in eps_list:
        _check(table, int(ns.max()), e / 2)
    s = np.array([[max_separated(table, n, e, False) for e in eps_list] for n in ns])
    g = np.array([[min_generator(table, n, e, False) for e in eps_list] for n in ns])
    gh = np.array([[min_generator(table, n, e / 2, False) for e in eps_list] for n in ns])
    return SeparationTable(ns, eps_list, s, g, gh, table.lengths[: ns.max()],
                           table.resolution(int(ns.max())))


@dataclass
class LeafEntropyEstimate:
    h: float
    schedule: np.ndarray
    slopes: np.ndarray
    std_errors: np.ndarray
    table: SeparationTable
    window: tuple
    diagnostics: dict = field(default_factory=dict)

    def to_json(self, **extra):
        d = {
            "h": self.h,
            "eps_schedule": self.schedule.tolist(),
            "slopes": self.slopes.tolist(),
            "slope_std_errors": self.std_errors.tolist(),
            "window": list(self.window),
            "diagnostics": self.diagnostics,
        }
        d.update(extra)
        return json.dumps(d, indent=2, sort_keys=True)


def leaf_entropy(map, tag, K, eps_schedule=None, n_max=None, window=None, table=None, budget=None):
    """Growth rate in n of the maximal separated counts on the compact K.

    ``eps_schedule`` is absolute; the default is (0.2, 0.1, 0.05, 0.025) times
    half the length of K.  The estimate is the trailing-window slope at the
    smallest eps; the slope at every eps is kept as an extrapolation
    diagnostic, never extrapolated.
    """
    if not map.is_expanding(tag):
        raise ValueError(f"tag {tag!r} is not expanding; use the inverse map")
    half = 0.5 * leaf_length(K)
    sched = np.sort(np.asarray(eps_schedule if eps_schedule is not None
                               else [c * half for c in DEFAULT_SCHEDULE], dtype=float))[::-1]
    if table is None:
        if n_max is None:
            raise ValueError("n_max or a prebuilt table is required")
        table = ImageTable.build(map, K, n_max, min(K.max_step, sched.min() / 25), budget)
    n_max = table.n
    ns = np.arange(1, n_max + 1)
    sep = separation_table(table, ns, sched)
    lo, hi = window if window is not None else (n_max - n_max // 2, n_max)
    lo = min(lo, hi - 1)
    sel = (ns >= lo) & (ns <= hi)
    slopes, errs = [], []
    for k in range(len(sched)):
        b, _, se = fit_slope(ns[sel], np.log(sep.s_count[sel, k]))
        slopes.append(b)
        errs.append(se)
    slopes = np.array(slopes)
    diag = {
        "slope_nondecreasing_as_eps_decreases": bool(np.all(np.diff(slopes) >= -2 * np.max(errs))),
        "sandwich": sep.sandwich_holds(),
        "monotone": sep.monotone(),
        "g_slope_smallest_eps": fit_slope(ns[sel], np.log(sep.g_count[sel, -1]))[0],
        "resolution": sep.resolution,
    }
    return LeafEntropyEstimate(h=float(slopes[-1]), schedule=sched, slopes=slopes,
                               std_errors=np.array(errs), table=sep, window=(int(lo), int(hi)),
                               diagnostics=diag)


def entropy_growth_gap(map, tag, x, r, n_max, eps_schedule=None, max_step=None):
    """h_W - chi on the same leaf ball W_r(x), with both estimates."""
    sched = [c * r for c in DEFAULT_SCHEDULE] if eps_schedule is None else eps_schedule
    step = min(DEFAULT_MAX_STEP if max_step is None else max_step, min(sched) / 25)
    K = grow_leaf(map, x, tag, r, step)
    hist = iterate_leaf(map, K, n_max, step, history=True)
    ent = leaf_entropy(map, tag, K, sched, table=ImageTable(hist[:n_max]))
    ns = np.arange(n_max + 1)
    ll = np.log([leaf_length(s) for s in hist])
    lo = n_max - n_max // 2
    chi, _, _ = fit_slope(ns[lo:], ll[lo:])
    return ent.h - chi, ent, chi


def separated_count_bound(table, n, eps):
    """Audit of the counting bound s <= 1 + sum_{j=n-1-k}^{n-1} length(f^j K) / eps.

    Each consecutive pair of a separated set is separated at some time j and
    the pairs charged to one j are disjoint arcs of f^j(K).  Returns the
    smallest k for which the bound holds (None if it fails even for k = n-1)
    and the count.
    """
    s = max_separated(table, n, eps, check=False)
    for k in range(n):
        if s <= 1 + math.fsum(table.lengths[n - 1 - k: n]) / eps:
            return k, s
    return None, s


__all__ = [
    "ImageTable", "SeparationTable", "LeafEntropyEstimate", "dn_distance", "dn_matrix",
    "greedy_separated", "greedy_generator", "max_separated", "min_generator",
    "separation_table", "leaf_entropy", "entropy_growth_gap", "separated_count_bound",
]

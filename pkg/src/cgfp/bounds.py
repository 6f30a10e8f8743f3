"""Convergence bounds: Chebyshev, the MMS 2-norm bound, and minimax on a union of intervals.

The minimax value ``min_{p(0)=1, deg p<=k} max_{z in union} |p(z)|`` is found by
a Remez-type exchange.  The constrained polynomial is levelled on a reference
of k+1 points and held in barycentric Lagrange form, which keeps the solve
free of any ill-conditioned basis.
"""

from dataclasses import dataclass, field
import contextlib
import csv
import hashlib
import math

import gmpy2
import numpy as np

from .errors import BadSpectrum, DegreeTooHigh, NoConvergence
from .hiprec.context import PrecisionContext

MAX_DEGREE = 400
HP_DEGREE = 30
GOLDEN = (math.sqrt(5) - 1) / 2


def _sigma(kappa):
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    s = math.sqrt(kappa)
    return (s - 1) / (s + 1)


def chebyshev_bound(kappa, k, flavor="Anorm"):
    """``2 sigma^k`` (A-norm) or ``sqrt(kappa) 2 sigma^k`` (residual norm)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    val = 2 * _sigma(kappa) ** k
    if flavor == "Anorm":
        return val
    if flavor == "rnorm":
        return math.sqrt(kappa) * val
    raise ValueError(f"unknown flavor {flavor!r}")


def mms_bound(kappa, k):
    """``14 k kappa sigma^k``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return 14 * k * kappa * _sigma(kappa) ** k


@dataclass
class IntervalUnion:
    """Sorted, non-overlapping positive intervals; overlapping input is merged."""

    intervals: list

    def __post_init__(self):
        ivs = sorted((float(lo), float(hi)) for lo, hi in self.intervals)
        if not ivs:
            raise BadSpectrum("empty interval union")
        for lo, hi in ivs:
            if not lo <= hi:
                raise BadSpectrum(f"interval ({lo}, {hi}) has lo > hi")
            if not lo > 0:
                raise BadSpectrum(f"interval ({lo}, {hi}) does not lie in (0, inf)")
        merged = [list(ivs[0])]
        for lo, hi in ivs[1:]:
            if lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        self.intervals = [tuple(iv) for iv in merged]

    @classmethod
    def from_spectrum(cls, spectrum, width=0.0):
        """``[lambda - width/2, lambda + width/2]`` about each spectrum point."""
        d = width / 2
        return cls([(lam - d, lam + d) for lam in np.asarray(spectrum, dtype=float)])

    @property
    def lo(self):
        return self.intervals[0][0]

    @property
    def hi(self):
        return self.intervals[-1][1]

    @property
    def kappa(self):
        return self.hi / self.lo

    def __len__(self):
        return len(self.intervals)

    def digest(self):
        text = ";".join(f"{lo!r},{hi!r}" for lo, hi in self.intervals)
        return hashlib.sha256(text.encode()).hexdigest()[:12]


@dataclass
class BoundSeries:
    kind: str
    values: np.ndarray
    params: object = None
    flagged: list = field(default_factory=list)

    def params_digest(self):
        if isinstance(self.params, IntervalUnion):
            return self.params.digest()
        return hashlib.sha256(repr(self.params).encode()).hexdigest()[:12]

    def rows(self):
        dig = self.params_digest()
        for k, v in enumerate(self.values):
            yield k, float(v), self.kind, dig, int(k in self.flagged)


def chebyshev_series(kappa, kmax, flavor="Anorm"):
    kind = "Chebyshev-Anorm" if flavor == "Anorm" else "Chebyshev-rnorm"
    return BoundSeries(kind, np.array([chebyshev_bound(kappa, k, flavor) for k in range(kmax + 1)]), kappa)


def mms_series(kappa, kmax):
    return BoundSeries("MMS", np.array([mms_bound(kappa, k) for k in range(kmax + 1)]), kappa)


def minimax_series(union, kmax, ctx=None, max_iter=200):
    """Minimax values for k = 0..kmax; non-converged degrees carry their best estimate and are flagged."""
    vals, flagged = [], []
    ref = None
    for k in range(kmax + 1):
        try:
            v, ref = _minimax(union, k, ctx, max_iter, ref)
        except NoConvergence as exc:
            v, ref = exc.value, None
            flagged.append(k)
        vals.append(v)
    return BoundSeries("Minimax", np.array(vals), union, flagged)


def write_series_csv(series_list, stream, comment=None):
    if comment:
        stream.write(f"# {comment}\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["k", "value", "kind", "params_digest", "flagged"])
    for s in series_list:
        for k, v, kind, dig, flag in s.rows():
            w.writerow([k, repr(v), kind, dig, flag])


# -- Remez exchange ----------------------------------------------------------

class _Num:
    """Scalar arithmetic for one exchange run: float64 or mpfr at a fixed precision."""

    def __init__(self, ctx):
        self.ctx = ctx
        self.hp = ctx is not None
        self.u = ctx.unit_roundoff if self.hp else np.finfo(float).eps / 2

    def local(self):
        return self.ctx.local() if self.hp else contextlib.nullcontext()

    def arr(self, values):
        if self.hp:
            out = np.empty(len(values), dtype=object)
            for i, v in enumerate(values):
                out[i] = gmpy2.mpfr(v)
            return out
        return np.array(values, dtype=float)

    def log(self, a):
        if self.hp:
            return np.array([gmpy2.log(v) for v in a], dtype=object)
        return np.log(a)

    def exp(self, a):
        if self.hp:
            return np.array([gmpy2.exp(v) for v in a], dtype=object)
        return np.exp(a)


class _Levelled:
    """Polynomial with p(0) = 1 levelled on the reference ``z``: p(z_i) = (-1)^i h."""

    def __init__(self, z, num):
        self.z = z
        self.num = num
        k1 = len(z)
        D = z[:, None] - z[None, :]
        np.fill_diagonal(D, 1)
        absD = np.abs(D)
        logD = num.log(absD.ravel()).reshape(absD.shape)
        # barycentric weights w_i = 1 / prod_{j != i} (z_i - z_j), scaled to max 1
        logw = -logD.sum(axis=1)
        logw = logw - max(logw)
        sign = np.array([(-1) ** (k1 - 1 - i) for i in range(k1)])
        self.w = sign * num.exp(logw)
        # |l_i(0)| = prod_{j != i} z_j / |z_j - z_i|
        logz = num.log(z)
        logl = (sum(logz) - logz) - logD.sum(axis=1)
        top = max(logl)
        self.h = 1 / (num.exp(logl - top).sum() * num.exp(np.array([top], dtype=logl.dtype))[0])
        self.f = np.array([(-1) ** i for i in range(k1)]) * self.h

    def __call__(self, x):
        x = np.asarray(x)
        C = x[:, None] - self.z[None, :]
        hit = C == 0
        C[hit] = 1
        W = self.w[None, :] / C
        out = W.dot(self.f) / W.sum(axis=1)
        rows, cols = np.nonzero(hit)
        out[rows] = self.f[cols]
        return out


def _pieces(union, num):
    """Split into degenerate points and proper intervals (at the working roundoff)."""
    points, ivs = [], []
    for lo, hi in union.intervals:
        if hi - lo <= 4 * num.u * hi:
            points.append(lo)
        else:
            ivs.append((lo, hi))
    return points, ivs


def _initial_reference(union, k, num):
    """k+1 distinct points of the union near the Chebyshev extrema of the spanning interval."""
    a, b = union.lo, union.hi
    t = [(a + b) / 2 - (b - a) / 2 * math.cos(math.pi * i / k) for i in range(k + 1)]
    points, ivs = _pieces(union, num)
    picked = set()
    slots = [(lo, lo) for lo in points] + ivs
    slots.sort()
    for x in t:
        best = min(slots, key=lambda s: 0 if s[0] <= x <= s[1] else min(abs(x - s[0]), abs(x - s[1])))
        picked.add(min(max(x, best[0]), best[1]))
    # top up with points spread inside the widest intervals, then unused isolated points
    extra = iter(sorted(points))
    while len(picked) < k + 1:
        if ivs:
            lo, hi = max(ivs, key=lambda s: (s[1] - s[0]) / (1 + sum(s[0] <= z <= s[1] for z in picked)))
            inside = sorted([lo, hi] + [z for z in picked if lo <= z <= hi])
            gaps = [(inside[i + 1] - inside[i], i) for i in range(len(inside) - 1)]
            g, i = max(gaps)
            picked.add((inside[i] + inside[i + 1]) / 2)
        else:
            nxt = next(extra, None)
            if nxt is None:
                break
            picked.add(nxt)
    return sorted(picked)


def _samples(lo, hi, nodes, num, count):
    """Sample abscissae in [lo, hi]: Chebyshev points, endpoints, nodes and midpoints between them."""
    with num.local():
        lo_h, hi_h = num.arr([lo, hi])
        j = np.arange(count)
        cheb = num.arr(np.cos(np.pi * (j + 0.5) / count))
        pts = list((lo_h + hi_h) / 2 - (hi_h - lo_h) / 2 * cheb)
        inner = sorted([lo_h, hi_h] + list(nodes))
        mids = [(inner[i] + inner[i + 1]) / 2 for i in range(len(inner) - 1)]
        allpts = sorted(set(pts + inner + mids))
    return allpts


def _candidates(P, union, num, grid):
    """Extrema of p over the union: the largest sample of every same-sign run, refined.

    Every reference node is a sample, so each sign arc of p that meets the
    union contributes a candidate and the alternation never drops below k+1.
    """
    points, ivs = _pieces(union, num)
    xs = list(num.arr(points)) if points else []
    brackets, seeds = [], []
    for lo, hi in ivs:
        nodes = [z for z in P.z if lo <= z <= hi]
        s = _samples(lo, hi, nodes, num, grid + 2 * len(nodes))
        v = P(num.arr(s))
        m = len(s)
        i = 0
        while i < m:
            j = i
            while j + 1 < m and (v[j + 1] > 0) == (v[i] > 0):
                j += 1
            best = max(range(i, j + 1), key=lambda t: abs(v[t]))
            if 0 < best < m - 1:
                brackets.append((s[best - 1], s[best + 1], 1 if v[best] > 0 else -1))
                seeds.append((s[best], v[best]))
            else:
                xs.append(s[best])
            i = j + 1
    if brackets:
        refined = _golden(P, brackets, num)
        pv = P(num.arr(refined))
        for (x0, v0), x, px, br in zip(seeds, refined, pv, brackets):
            xs.append(x if br[2] * px >= br[2] * v0 else x0)
    xs = num.arr(sorted(set(xs)))
    return xs, P(xs)


def _golden(P, brackets, num, steps=30):
    """Vectorized golden-section maximization of sign * p on each bracket."""
    a = num.arr([b[0] for b in brackets])
    b = num.arr([b[1] for b in brackets])
    sgn = np.array([b[2] for b in brackets])
    g = num.arr([GOLDEN])[0]
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = sgn * P(c), sgn * P(d)
    for _ in range(steps):
        left = fc > fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = np.where(left, b - g * (b - a), d)
        d_new = np.where(left, c, a + g * (b - a))
        fresh = np.where(left, c_new, d_new)
        val = sgn * P(fresh)
        fc, fd = np.where(left, val, fd), np.where(left, fc, val)
        c, d = c_new, d_new
    return list(np.where(fc > fd, c, d))


def _exchange(xs, vals, k):
    """Alternating subsequence of length k+1 keeping the largest magnitudes."""
    seq = []
    for x, v in zip(xs, vals):
        if v == 0:
            continue
        if seq and (seq[-1][1] > 0) == (v > 0):
            if abs(v) > abs(seq[-1][1]):
                seq[-1] = (x, v)
        else:
            seq.append((x, v))
    while len(seq) > k + 1:
        if len(seq) == k + 2:
            seq.pop(0 if abs(seq[0][1]) < abs(seq[-1][1]) else -1)
            continue
        i = min(range(len(seq)), key=lambda j: abs(seq[j][1]))
        if i == 0 or i == len(seq) - 1:
            seq.pop(i)
        else:
            left, right = seq[i - 1], seq[i + 1]
            keep = left if abs(left[1]) >= abs(right[1]) else right
            seq[i - 1:i + 2] = [keep]
    return seq


def minimax_union(union, k, ctx=None, max_iter=200, tol=1e-10):
    """``min_{p(0)=1, deg p <= k} max_{z in union} |p(z)|`` by Remez exchange.

    Degrees above 30 run in ``ctx`` precision (32 digits by default).  Raises
    :class:`NoConvergence` carrying the best levelled value if the exchange
    does not settle within ``max_iter`` iterations.
    """
    return _minimax(union, k, ctx, max_iter, None, tol)[0]


def _minimax(union, k, ctx, max_iter, warm=None, tol=1e-10):
    if k < 0:
        raise ValueError("k must be >= 0")
    if k > MAX_DEGREE:
        raise DegreeTooHigh(f"k={k} exceeds {MAX_DEGREE}")
    if k == 0:
        return 1.0, None
    if k > HP_DEGREE:
        ctx = ctx or PrecisionContext(32)
    else:
        ctx = None
    num = _Num(ctx)
    points, ivs = _pieces(union, num)
    if not ivs and len(points) <= k:
        return 0.0, None
    with num.local():
        ref = None
        if warm is not None and len(warm) == k:
            ref = _extend_reference(warm, union, num)
        if ref is None:
            ref = _initial_reference(union, k, num)
        z = num.arr(ref)
        grid = 16
        best = None
        for _ in range(max_iter):
            P = _Levelled(z, num)
            xs, vals = _candidates(P, union, num, grid)
            E = max(np.abs(vals))
            h = P.h
            best = (float(E), float(h))
            if E - h <= tol * E:
                return float(E), [float(v) for v in z]
            seq = _exchange(xs, vals, k)
            z_new = num.arr([x for x, _ in seq])
            if len(seq) < k + 1 or np.array_equal(z_new, z):
                if grid >= 1024:
                    break
                grid *= 2
                continue
            z = z_new
    raise NoConvergence(f"exchange did not settle in {max_iter} iterations (k={k})",
                        value=best[0], levelled=best[1])


def _extend_reference(prev, union, num):
    """Warm start for degree k from the degree k-1 reference: add one point where it fits best."""
    pts = sorted(prev)
    points, ivs = _pieces(union, num)
    gaps = []
    for lo, hi in ivs:
        inside = sorted([lo, hi] + [z for z in pts if lo <= z <= hi])
        for i in range(len(inside) - 1):
            gaps.append((inside[i + 1] - inside[i], (inside[i] + inside[i + 1]) / 2))
    unused = [x for x in points if x not in pts]
    if gaps:
        cand = max(gaps)[1]
    elif unused:
        cand = unused[0]
    else:
        return None
    if cand in pts:
        return None
    return sorted(pts + [cand])

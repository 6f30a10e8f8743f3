"""Problem ingestion and construction.

Matrix Market files, diagonal prescaling, the clustered-spectrum model problem,
interval-spread diagonal matrices and right-hand-side generation.  All matrices
are dense; spectral data is computed lazily and cached on the matrix.
"""

from dataclasses import dataclass
from functools import cached_property
import math

import numpy as np

from .errors import (BadSpectrum, MalformedHeader, MatrixTooLarge, NonPositiveDiagonal,
                     NotSquare, NotSymmetric, OverlappingIntervals, ZeroMatrix)

MAX_EIG_DIM = 4096


def make_rng(seed):
    """Seeded Philox (counter-based, 64-bit) generator used for every random draw."""
    return np.random.Generator(np.random.Philox(seed))


class SpdMatrix:
    """Dense symmetric matrix with cached spectral data.

    Symmetry is enforced on construction by averaging with the transpose.
    Positive definiteness is not checked here; see :attr:`positive_definite`.
    """

    def __init__(self, entries):
        a = np.array(entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise NotSquare(f"matrix has shape {a.shape}")
        self.entries = (a + a.T) / 2
        self.entries.setflags(write=False)

    @property
    def n(self):
        return self.entries.shape[0]

    @cached_property
    def _eig(self):
        if self.n > MAX_EIG_DIM:
            raise MatrixTooLarge(f"n={self.n} exceeds {MAX_EIG_DIM} for dense eigendecomposition")
        if self.is_diagonal:
            d = np.diag(self.entries).copy()
            order = np.argsort(d, kind="stable")
            return d[order], np.eye(self.n)[:, order]
        lam, V = np.linalg.eigh(self.entries)
        return lam, V

    @cached_property
    def is_diagonal(self):
        return not np.any(self.entries - np.diag(np.diag(self.entries)))

    @property
    def eigenvalues(self):
        return self._eig[0]

    @property
    def eigenvectors(self):
        return self._eig[1]

    @property
    def norm2(self):
        lam = self.eigenvalues
        return float(max(abs(lam[0]), abs(lam[-1])))

    @property
    def kappa(self):
        lam = self.eigenvalues
        if lam[0] <= 0:
            return math.inf
        return float(lam[-1] / lam[0])

    @property
    def positive_definite(self):
        return bool(self.eigenvalues[0] > 0)

    def solve(self, b):
        """``A^{-1} b`` through the cached eigendecomposition."""
        V = self.eigenvectors
        return V @ ((V.T @ b) / self.eigenvalues)

    def inverse_quadratic(self, r):
        """``<r, A^{-1} r>`` through the cached eigendecomposition."""
        c = self.eigenvectors.T @ r
        return float(np.sum(c * c / self.eigenvalues))

    def __matmul__(self, other):
        return self.entries @ other

    def __repr__(self):
        return f"SpdMatrix(n={self.n})"


@dataclass
class Problem:
    A: SpdMatrix
    x_true: np.ndarray
    b: np.ndarray
    x0: np.ndarray = None
    label: str = ""

    def __post_init__(self):
        if self.x0 is None:
            self.x0 = np.zeros(self.A.n)

    @property
    def n(self):
        return self.A.n


@dataclass
class SpectrumSpec:
    """Targets for :func:`interval_spread`.

    ``width`` is the FULL interval width by default (values spread over
    ``lambda +- width/2``); with ``width_convention="half"`` the values spread
    over ``lambda +- width``.
    """

    values: np.ndarray
    multiplicity: int = 1
    width: float = 0.0
    width_convention: str = "full"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values <= 0):
            raise BadSpectrum("spectrum values must be strictly positive")
        if np.any(np.diff(self.values) < 0):
            raise BadSpectrum("spectrum values must be ascending")
        if self.multiplicity < 1:
            raise ValueError("multiplicity must be >= 1")
        if self.width < 0:
            raise ValueError("width must be >= 0")
        if self.width_convention not in ("full", "half"):
            raise ValueError("width_convention must be 'full' or 'half'")

    @property
    def full_width(self):
        return self.width if self.width_convention == "full" else 2 * self.width


def spectral_data(A):
    """(eigenvalues ascending, spectral norm, condition number); cached on ``A``."""
    return A.eigenvalues, A.norm2, A.kappa


def diagonal_prescale(A):
    d = np.diag(A.entries)
    if np.any(d <= 0):
        raise NonPositiveDiagonal("diagonal prescaling needs a strictly positive diagonal")
    # sqrt(fl(d*d)) == d, so the diagonal comes out exactly 1
    return SpdMatrix(A.entries / np.sqrt(np.outer(d, d)))


def normalize_to_unit_norm(A):
    nrm = A.norm2
    if nrm == 0:
        raise ZeroMatrix("cannot normalize the zero matrix")
    return SpdMatrix(A.entries / nrm)


def model_eigenvalues(n, rho, lambda1, lambdan):
    """Spectrum clustered at the lower end, controlled by ``rho`` in (0, 1]."""
    if n < 2:
        raise BadSpectrum("n must be >= 2")
    if not 0 < lambda1 < lambdan:
        raise BadSpectrum("need 0 < lambda1 < lambdan")
    if not 0 < rho <= 1:
        raise BadSpectrum("rho must lie in (0, 1]")
    i = np.arange(1, n + 1)
    lam = lambda1 + (i - 1) / (n - 1) * (lambdan - lambda1) * rho ** (n - i)
    lam[0] = lambda1
    lam[-1] = lambdan
    return lam


def haar_orthogonal(n, rng):
    """Haar-distributed orthogonal matrix: QR of a Gaussian matrix with R's diagonal made positive."""
    Z = rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    return Q * np.sign(np.diag(R))[None, :]


def model_problem(n=48, rho=0.8, lambda1=1e-3, lambdan=1.0, seed=0):
    lam = model_eigenvalues(n, rho, lambda1, lambdan)
    rng = make_rng(seed)
    V = haar_orthogonal(n, rng)
    A = SpdMatrix((V * lam[None, :]) @ V.T)
    x_true = rng.standard_normal(n)
    return Problem(A, x_true, A.entries @ x_true, label=f"model(n={n},rho={rho})")


def make_problem(A, seed=0, label=""):
    """Problem with a seeded standard-normal solution, ``b = A x_true`` and zero initial guess."""
    x_true = make_rng(seed).standard_normal(A.n)
    return Problem(A, x_true, A.entries @ x_true, label=label)


def spread_values(spec):
    """Diagonal entries of the interval-spread matrix, as a 1-d array."""
    w = spec.full_width
    vals = spec.values
    if len(vals) > 1 and w > 0 and np.min(np.diff(vals)) <= w:
        raise OverlappingIntervals(f"width {w} is not below the minimum gap {np.min(np.diff(vals))}")
    m = spec.multiplicity
    if m == 1 or w == 0:
        offsets = np.zeros(m)
    else:
        offsets = w * (np.arange(m) / (m - 1) - 0.5)
    target = np.repeat(vals, m)
    out = (vals[:, None] + offsets[None, :]).ravel()
    # rounding may push an entry one ulp past width/2; step it back
    over = np.abs(out - target) > w / 2
    out[over] = np.nextafter(out[over], target[over])
    return out


def interval_spread(spec):
    return SpdMatrix(np.diag(spread_values(spec)))


def spread_problem(spec, seed=0):
    """Problem on the interval-spread matrix; the solution depends only on ``seed`` and size."""
    A = interval_spread(spec)
    return make_problem(A, seed, label=f"spread(m={spec.multiplicity},w={spec.width:g})")


# -- Matrix Market -----------------------------------------------------------

def parse_matrix_market(stream):
    """Read a real Matrix Market file (coordinate or array) into a dense :class:`SpdMatrix`."""
    lines = iter(stream)
    try:
        header = next(lines)
    except StopIteration:
        raise MalformedHeader("empty stream") from None
    tokens = header.strip().split()
    if len(tokens) != 5 or tokens[0].lower() != "%%matrixmarket" or tokens[1].lower() != "matrix":
        raise MalformedHeader(f"bad banner: {header.strip()!r}")
    fmt, fld, sym = (t.lower() for t in tokens[2:])
    if fmt not in ("coordinate", "array"):
        raise MalformedHeader(f"unsupported format {fmt!r}")
    if fld not in ("real", "integer", "double"):
        raise MalformedHeader(f"unsupported field {fld!r}")
    if sym not in ("symmetric", "general"):
        raise MalformedHeader(f"unsupported symmetry {sym!r}")

    body = (ln for ln in lines if ln.strip() and not ln.lstrip().startswith("%"))
    try:
        size = next(body).split()
    except StopIteration:
        raise MalformedHeader("missing size line") from None
    nrows, ncols = int(size[0]), int(size[1])
    if nrows != ncols:
        raise NotSquare(f"{nrows} x {ncols}")
    n = nrows
    A = np.zeros((n, n))

    if fmt == "coordinate":
        nnz = int(size[2])
        count = 0
        for ln in body:
            i, j, v = ln.split()[:3]
            i, j, v = int(i) - 1, int(j) - 1, float(v)
            if sym == "symmetric":
                if i < j:
                    i, j = j, i
                A[i, j] += v
                if i != j:
                    A[j, i] += v
            else:
                A[i, j] += v
            count += 1
        if count != nnz:
            raise MalformedHeader(f"expected {nnz} entries, found {count}")
    else:
        vals = [float(ln.split()[0]) for ln in body]
        if sym == "general":
            if len(vals) != n * n:
                raise MalformedHeader(f"expected {n * n} values, found {len(vals)}")
            A = np.array(vals).reshape(n, n, order="F")
        else:
            if len(vals) != n * (n + 1) // 2:
                raise MalformedHeader("wrong number of values for symmetric array")
            it = iter(vals)
            for j in range(n):
                for i in range(j, n):
                    A[i, j] = A[j, i] = next(it)

    if sym == "general":
        scale = np.max(np.abs(A)) if A.size else 0.0
        if np.max(np.abs(A - A.T), initial=0.0) > 1e-12 * scale:
            raise NotSymmetric("general-symmetry matrix is not symmetric")
    return SpdMatrix(A)


def read_matrix_market(path):
    with open(path) as fh:
        return parse_matrix_market(fh)


def write_matrix_market(A, stream, comment=None):
    """Write the lower triangle of ``A`` in coordinate/real/symmetric format (entry-exact)."""
    M = A.entries if isinstance(A, SpdMatrix) else np.asarray(A)
    n = M.shape[0]
    rows, cols = np.nonzero(np.tril(M))
    stream.write("%%MatrixMarket matrix coordinate real symmetric\n")
    if comment:
        stream.write(f"% {comment}\n")
    stream.write(f"{n} {n} {len(rows)}\n")
    order = np.lexsort((rows, cols))
    for i, j in zip(rows[order], cols[order]):
        stream.write(f"{i + 1} {j + 1} {float(M[i, j])!r}\n")

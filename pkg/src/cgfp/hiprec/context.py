"""Configurable-precision arithmetic context.

Values are gmpy2 ``mpfr`` numbers held in numpy object arrays, so the usual
numpy vector expressions (``x + a * p``, ``np.dot``, ``M.dot(v)``) run in the
precision of whichever context is active on the current thread.  There is no
global precision state: every kernel enters its own context with
``with ctx.local(): ...``.
"""

from dataclasses import dataclass, field
import math

import gmpy2
import numpy as np

from ..errors import PrecisionTooLow

MIN_DIGITS = 32


@dataclass(frozen=True)
class PrecisionContext:
    digits: int = 64
    bits: int = field(init=False)

    def __post_init__(self):
        if self.digits < MIN_DIGITS:
            raise PrecisionTooLow(f"digits={self.digits} < {MIN_DIGITS}")
        object.__setattr__(self, "bits", int(math.ceil(self.digits * math.log2(10))) + 1)

    @property
    def unit_roundoff(self):
        return 2.0 ** (-self.bits)

    def local(self):
        """Context manager activating this precision on the current thread."""
        return gmpy2.context(precision=self.bits)

    def scalar(self, x):
        with self.local():
            return gmpy2.mpfr(x)

    def array(self, x):
        """Promote a float (or mpfr) array to this context's precision, exactly when possible."""
        a = np.asarray(x)
        with self.local():
            out = np.empty(a.shape, dtype=object)
            flat = out.reshape(-1)
            for i, v in enumerate(a.reshape(-1)):
                flat[i] = gmpy2.mpfr(v)
        return out

    def zeros(self, shape):
        with self.local():
            z = gmpy2.mpfr(0)
        out = np.empty(shape, dtype=object)
        out.fill(z)
        return out

    def tiny(self, scale=1.0):
        """A number far below this context's roundoff, used to dodge exact zero pivots."""
        with self.local():
            return gmpy2.mpfr(scale) * gmpy2.mpfr(2) ** (-(2 * self.bits))


def doubled():
    """Context used for measurements on working-precision data (about twice double)."""
    return PrecisionContext(MIN_DIGITS)

"""Parametric software floating-point arithmetic.

Implements a radix-b, precision-p floating-point system with round-to-nearest
(ties to even) scalar operations and strictly left-to-right matrix-vector
products.  All rounding happens on exact integer representations of the
operands, so results are correctly rounded, never double-rounded.  This module
is a ground-truth model of finite-precision evaluation, not a fast kernel.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

Real = Union[int, float, Fraction]

_FORMAT_RE = re.compile(r"^b(\d+)p(\d+)e(-?\d+):(-?\d+)$")


class FpOverflowError(ArithmeticError):
    """Raised when a result exceeds the format's largest magnitude."""


def _ndigits(a: int, b: int) -> int:
    """Number of base-b digits of the positive integer a."""
    if b == 2:
        return a.bit_length()
    if b == 10:
        return len(str(a))
    n = 0
    while a:
        a //= b
        n += 1
    return n


@dataclass(frozen=True)
class FloatFormat:
    """A floating-point system: radix, significand digits, exponent range.

    Nonzero members have magnitude m * radix**(e - precision + 1) with an
    integer significand m of exactly `precision` base-`radix` digits (leading
    digit nonzero) and e in [emin, emax].  Zero is always representable.
    """

    radix: int
    precision: int
    emin: int
    emax: int

    def __post_init__(self) -> None:
        if self.radix < 2:
            raise ValueError("radix must be >= 2")
        if self.precision < 1:
            raise ValueError("precision must be >= 1")
        if self.emax < self.emin:
            raise ValueError("emax must be >= emin")

    @property
    def epsilon(self) -> Fraction:
        """Machine epsilon (1/2) * radix**(1 - precision), exactly."""
        return Fraction(1, 2) * Fraction(self.radix) ** (1 - self.precision)

    @property
    def epsilon_float(self) -> float:
        return float(self.epsilon)

    @property
    def max_value(self) -> Fraction:
        """Largest representable magnitude."""
        b, p = self.radix, self.precision
        return Fraction(b**p - 1) * Fraction(b) ** (self.emax - p + 1)

    @property
    def min_normal(self) -> Fraction:
        """Smallest representable positive magnitude."""
        return Fraction(self.radix) ** self.emin

    @property
    def spec(self) -> str:
        return f"b{self.radix}p{self.precision}e{self.emin}:{self.emax}"

    @classmethod
    def from_spec(cls, text: str) -> "FloatFormat":
        """Parse a "b<radix>p<precision>e<emin>:<emax>" format string."""
        m = _FORMAT_RE.match(text.strip())
        if m is None:
            raise ValueError(f"bad format spec {text!r}; expected e.g. 'b10p16e-30:30'")
        return cls(int(m.group(1)), int(m.group(2)), int(m.group(3)), int(m.group(4)))


@dataclass(frozen=True)
class FpValue:
    """A member of the format's value set, or zero.

    value = sign * significand * radix**(exponent - precision + 1), where the
    significand has exactly `precision` base-radix digits with a nonzero
    leading digit.  Zero is encoded as sign = significand = exponent = 0.
    """

    sign: int
    significand: int
    exponent: int

    @property
    def is_zero(self) -> bool:
        return self.significand == 0

    def as_fraction(self, fmt: FloatFormat) -> Fraction:
        if self.significand == 0:
            return Fraction(0)
        scale = Fraction(fmt.radix) ** (self.exponent - fmt.precision + 1)
        return self.sign * self.significand * scale

    def as_float(self, fmt: FloatFormat) -> float:
        if self.significand == 0:
            return 0.0
        return float(self.as_fraction(fmt))

    def __neg__(self) -> "FpValue":
        return FpValue(-self.sign, self.significand, self.exponent)


FP_ZERO = FpValue(0, 0, 0)


def machine_epsilon(fmt: FloatFormat) -> Fraction:
    """Relative-accuracy bound of one rounded operation: (1/2)*b**(1-p)."""
    return fmt.epsilon


# ---------------------------------------------------------------------------
# Internal exact engine.  Values are (m, q) with value = m * b**q, m a signed
# integer with trailing base-b zeros stripped (keeps intermediate integers
# small); (0, 0) is zero.  Rounding returns this canonical form.
# ---------------------------------------------------------------------------


def _underflows(num: int, den: int, fmt: FloatFormat) -> bool:
    """True when the positive rational num/den lies below b**emin * (1 - eps)."""
    b, p = fmt.radix, fmt.precision
    # num/den < b**emin * (1 - b**(1-p)/2)  <=>
    # 2*num*b**(p-1-emin) < den*(2*b**(p-1) - 1), exponents kept nonnegative.
    k = p - 1 - fmt.emin
    rhs = den * (2 * b ** (p - 1) - 1)
    if k >= 0:
        return 2 * num * b**k < rhs
    return 2 * num < rhs * b**-k


def _round_mq(m: int, q: int, fmt: FloatFormat) -> tuple[int, int]:
    """Correctly round the exact value m * b**q into the format."""
    if m == 0:
        return (0, 0)
    b, p = fmt.radix, fmt.precision
    neg = m < 0
    a0 = -m if neg else m
    q0 = q
    a = a0
    d = _ndigits(a, b)
    if d > p:
        shift = d - p
        div = b**shift
        quo, rem = divmod(a, div)
        q += shift
        twice = 2 * rem
        if twice > div or (twice == div and quo & 1):
            quo += 1
            if quo == b**p:  # carried into an extra digit
                quo //= b
                q += 1
        a = quo
        d = p
    e = q + d - 1
    if e > fmt.emax:
        raise FpOverflowError(f"magnitude {a}*{b}**{q} exceeds emax={fmt.emax}")
    if e < fmt.emin:
        # Flush to zero below b**emin * (1 - eps); the remaining sliver
        # [b**emin*(1-eps), b**emin) rounds up to the smallest normal.
        num, den = (a0 * b**q0, 1) if q0 >= 0 else (a0, b**-q0)
        if _underflows(num, den, fmt):
            return (0, 0)
        return (1 if not neg else -1, fmt.emin)
    while a % b == 0:
        a //= b
        q += 1
    return (-a if neg else a, q)


def _add_mq(x: tuple[int, int], y: tuple[int, int], fmt: FloatFormat) -> tuple[int, int]:
    m1, q1 = x
    m2, q2 = y
    if m1 == 0:
        return y
    if m2 == 0:
        return x
    b = fmt.radix
    if q1 < q2:
        m, q = m1 + m2 * b ** (q2 - q1), q1
    else:
        m, q = m2 + m1 * b ** (q1 - q2), q2
    return _round_mq(m, q, fmt)


def _mul_mq(x: tuple[int, int], y: tuple[int, int], fmt: FloatFormat) -> tuple[int, int]:
    if x[0] == 0 or y[0] == 0:
        return (0, 0)
    return _round_mq(x[0] * y[0], x[1] + y[1], fmt)


def _cmp_pow(num: int, den: int, b: int, k: int) -> int:
    """Sign of num/den - b**k for positive num, den."""
    if k >= 0:
        lhs, rhs = num, den * b**k
    else:
        lhs, rhs = num * b**-k, den
    return (lhs > rhs) - (lhs < rhs)


def _mq_from_fraction(fr: Fraction, fmt: FloatFormat) -> tuple[int, int]:
    """Round an exact rational into the format (nearest, ties to even)."""
    if fr == 0:
        return (0, 0)
    b, p = fmt.radix, fmt.precision
    num, den = abs(fr.numerator), fr.denominator
    e = _ndigits(num, b) - _ndigits(den, b)
    while _cmp_pow(num, den, b, e + 1) >= 0:
        e += 1
    while _cmp_pow(num, den, b, e) < 0:
        e -= 1
    # b**e <= |fr| < b**(e+1); significand = round(|fr| * b**(p-1-e))
    k = p - 1 - e
    nn, dd = (num * b**k, den) if k >= 0 else (num, den * b**-k)
    quo, rem = divmod(nn, dd)
    twice = 2 * rem
    if twice > dd or (twice == dd and quo & 1):
        quo += 1
        if quo == b**p:
            quo //= b
            e += 1
    if e > fmt.emax:
        raise FpOverflowError(f"{fr} exceeds emax={fmt.emax}")
    if e < fmt.emin:
        if _underflows(num, den, fmt):
            return (0, 0)
        return (1 if fr > 0 else -1, fmt.emin)
    m, q = quo, e - p + 1
    while m % b == 0:
        m //= b
        q += 1
    return (-m if fr < 0 else m, q)


def _mq_to_value(mq: tuple[int, int], fmt: FloatFormat) -> FpValue:
    m, q = mq
    if m == 0:
        return FP_ZERO
    b, p = fmt.radix, fmt.precision
    neg = m < 0
    a = -m if neg else m
    d = _ndigits(a, b)
    a *= b ** (p - d)
    return FpValue(-1 if neg else 1, a, q + d - 1)


def _as_mq(x: Union[FpValue, Real], fmt: FloatFormat) -> tuple[int, int]:
    if isinstance(x, FpValue):
        if x.significand == 0:
            return (0, 0)
        b = fmt.radix
        m = x.sign * x.significand
        q = x.exponent - fmt.precision + 1
        while m % b == 0:
            m //= b
            q += 1
        return (m, q)
    return _mq_from_fraction(Fraction(x), fmt)


# ---------------------------------------------------------------------------
# Public operations.
# ---------------------------------------------------------------------------


def round_nearest(x: Union[FpValue, Real], fmt: FloatFormat) -> FpValue:
    """Round a real to the nearest member of the format.

    Representable values are fixed points.  Ties round the significand to
    even.  Magnitudes below min_normal * (1 - eps) flush to zero; magnitudes
    beyond the format's largest value raise FpOverflowError.
    """
    return _mq_to_value(_as_mq(x, fmt), fmt)


def add_fp(a: Union[FpValue, Real], b: Union[FpValue, Real], fmt: FloatFormat) -> FpValue:
    """Round-to-nearest sum: round(a + b) computed on exact integers."""
    return _mq_to_value(_add_mq(_as_mq(a, fmt), _as_mq(b, fmt), fmt), fmt)


def mul_fp(a: Union[FpValue, Real], b: Union[FpValue, Real], fmt: FloatFormat) -> FpValue:
    """Round-to-nearest product: round(a * b) computed on exact integers."""
    return _mq_to_value(_mul_mq(_as_mq(a, fmt), _as_mq(b, fmt), fmt), fmt)


def relu_fp(v: FpValue) -> FpValue:
    """max{0, v}; exact on members of the format."""
    return v if v.sign > 0 else FP_ZERO


def _round_matrix(A: Iterable[Iterable[Real]], fmt: FloatFormat) -> list[list[tuple[int, int]]]:
    return [[_mq_from_fraction(Fraction(a), fmt) for a in row] for row in A]


def _matvec_mq(
    rows: list[list[tuple[int, int]]],
    x: list[tuple[int, int]],
    fmt: FloatFormat,
) -> list[tuple[int, int]]:
    out = []
    for row in rows:
        acc = _mul_mq(row[0], x[0], fmt)
        for a, xi in zip(row[1:], x[1:]):
            acc = _add_mq(acc, _mul_mq(a, xi, fmt), fmt)
        out.append(acc)
    return out


def matvec_fp(
    A: Iterable[Iterable[Real]],
    x: Sequence[Union[FpValue, Real]],
    fmt: FloatFormat,
) -> list[FpValue]:
    """Floating-point matrix-vector product with left-to-right row sums.

    Row j is (A[j,0] (x) x[0]) (+) (A[j,1] (x) x[1]) (+) ... folded strictly
    left to right.  Matrix entries are rounded into the format at use;
    vector entries that are not already FpValue are rounded first.
    """
    rows = _round_matrix(A, fmt)
    xs = [_as_mq(v, fmt) for v in x]
    if rows and len(rows[0]) != len(xs):
        raise ValueError(f"dimension mismatch: matrix has {len(rows[0])} columns, vector has {len(xs)}")
    return [_mq_to_value(v, fmt) for v in _matvec_mq(rows, xs, fmt)]

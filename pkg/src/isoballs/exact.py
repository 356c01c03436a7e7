"""Exact distribution of the non-isolated ball count.

Three independent routes are provided and cross-checked in the tests:
brute-force enumeration of all ``m**n`` outcomes, closed-form moments from
pairwise joint probabilities, and the inclusion-exclusion formula for the
number of singleton urns evaluated in arbitrary precision.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from typing import Iterable

import mpmath
import numpy as np

from .errors import PrecisionError, PreconditionError, TooLargeError
from .model import UrnModel

ENUMERATION_CAP = 10**7
FELLER_MAX_M_GENERAL = 12
FELLER_MAX_M_UNIFORM = 512
MAX_PRECISION_BITS = 1 << 15

_CHUNK = 1 << 16


@dataclass(frozen=True)
class IntegerPmf:
    """Probability mass function on a finite set of integers."""

    support: tuple[int, ...]
    mass: tuple[float, ...]
    provenance: str

    def __post_init__(self):
        if len(self.support) != len(self.mass):
            raise ValueError("support and mass lengths differ")
        if list(self.support) != sorted(set(self.support)):
            raise ValueError("support must be strictly increasing")

    @classmethod
    def from_dict(cls, d: dict[int, float], provenance: str) -> IntegerPmf:
        keys = sorted(k for k, v in d.items() if v != 0.0)
        return cls(tuple(int(k) for k in keys), tuple(float(d[k]) for k in keys), provenance)

    @classmethod
    def from_counts(cls, values: np.ndarray, counts: np.ndarray) -> IntegerPmf:
        keep = counts > 0
        total = int(counts.sum())
        return cls(
            tuple(int(v) for v in values[keep]),
            tuple(int(c) / total for c in counts[keep]),
            "empirical",
        )

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.support, self.mass))

    def prob(self, k: int) -> float:
        return self.as_dict().get(int(k), 0.0)

    @property
    def mean(self) -> float:
        return math.fsum(k * q for k, q in zip(self.support, self.mass))

    @property
    def variance(self) -> float:
        mu = self.mean
        return math.fsum(q * (k - mu) ** 2 for k, q in zip(self.support, self.mass))

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def cdf(self) -> np.ndarray:
        """``F(y)`` at every support point, accumulated with exact rounding."""
        out = np.empty(len(self.mass))
        acc: list[float] = []
        for i, q in enumerate(self.mass):
            acc.append(q)
            out[i] = math.fsum(acc)
        return out

    def size_biased(self) -> IntegerPmf:
        """The law ``k P[Y=k] / E Y``."""
        mu = self.mean
        if mu <= 0:
            raise PreconditionError("size-biasing needs a positive mean")
        d = {k: k * q / mu for k, q in zip(self.support, self.mass) if k != 0}
        return IntegerPmf.from_dict(d, self.provenance)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["value", "probability"])
        for k, q in zip(self.support, self.mass):
            w.writerow([k, repr(q)])
        return buf.getvalue()


def normal_cdf(t):
    """Standard normal CDF via ``erfc``; absolute error well below ``1e-15``."""
    if np.ndim(t) == 0:
        return 0.5 * math.erfc(-float(t) / math.sqrt(2.0))
    from scipy.special import erfc

    return 0.5 * erfc(-np.asarray(t, dtype=np.float64) / math.sqrt(2.0))


def _outcome_block(start: int, stop: int, n: int, m: int) -> np.ndarray:
    """Mixed-radix digits (ball urns) of outcome indices ``start .. stop-1``."""
    idx = np.arange(start, stop, dtype=np.int64)
    digits = np.empty((stop - start, n), dtype=np.int64)
    for i in range(n):
        digits[:, i] = idx % m
        idx //= m
    return digits


def enumerate_pmf(model: UrnModel, cap: int = ENUMERATION_CAP) -> IntegerPmf:
    """Brute-force pmf of ``Y`` over all ``m**n`` equally indexed outcomes.

    Each outcome is weighted by ``prod_i p[x_i]``; per-value totals use
    exactly rounded summation so the result does not depend on block order.
    """
    n, m = model.n, model.m
    total = m**n
    if total > cap:
        raise TooLargeError(f"m**n = {total} exceeds the enumeration cap {cap}")
    partial: dict[int, list[float]] = {}
    for start in range(0, total, _CHUNK):
        stop = min(start + _CHUNK, total)
        x = _outcome_block(start, stop, n, m)
        rows = stop - start
        if model.is_uniform:
            w = np.full(rows, float(model.p[0]) ** n)
        else:
            w = np.prod(model.p[x], axis=1)
        flat = (np.arange(rows)[:, None] * m + x).ravel()
        counts = np.bincount(flat, minlength=rows * m).reshape(rows, m)
        y = n - np.count_nonzero(counts == 1, axis=1)
        order = np.argsort(y, kind="stable")
        ys, ws = y[order], w[order]
        bounds = np.flatnonzero(np.diff(ys)) + 1
        for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, ys.size]):
            partial.setdefault(int(ys[lo]), []).append(math.fsum(ws[lo:hi]))
    d = {k: math.fsum(v) for k, v in partial.items()}
    return IntegerPmf.from_dict(d, "exact-enumeration")


def _pow1m(p, e: int):
    """``(1 - p)**e``, via ``log1p`` for small ``p``; ``0**0 == 1``."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = np.exp(e * np.log1p(-np.minimum(p, 0.5)))
    return np.where(p < 0.5, small, np.power(np.clip(1.0 - p, 0.0, None), e))


def exact_moments(model: UrnModel) -> tuple[float, float]:
    """Mean and variance of ``Y`` from one- and two-ball marginals.

    With ``q = P[M_1 = 0]`` and ``r = P[M_1 = 0, M_2 = 0]``,
    ``E Y = n (1 - q)`` and ``Var Y = n q (1 - q) + n (n - 1) (r - q**2)``,
    which is the same quantity as ``nA + n(n-1)B - (nA)**2`` with
    ``A = 1 - q`` and ``B = 1 - 2q + r``.
    """
    n, p = model.n, model.p
    if n == 1:
        return 0.0, 0.0
    q = math.fsum(p * _pow1m(p, n - 1))
    mean = n * (1.0 - q)
    if model.is_uniform:
        m = model.m
        pu = float(p[0])
        r = (m * (m - 1)) * pu * pu * float(_pow1m(2.0 * pu, n - 2)) if m > 1 else 0.0
    else:
        r = _pair_isolation(p, n)
    var = n * q * (1.0 - q) + n * (n - 1) * (r - q * q)
    return mean, max(var, 0.0)


def _pair_isolation(p: np.ndarray, n: int) -> float:
    """``sum_{x != y} p_x p_y (1 - p_x - p_y)**(n-2)`` in row blocks."""
    m = p.shape[0]
    parts = []
    block = max(1, (1 << 22) // max(m, 1))
    for lo in range(0, m, block):
        px = p[lo : lo + block, None]
        rest = np.clip(1.0 - px - p[None, :], 0.0, None)
        t = px * p[None, :] * rest ** (n - 2)
        rows = np.arange(lo, min(lo + block, m))
        t[rows - lo, rows] = 0.0
        parts.append(math.fsum(t.ravel()))
    return math.fsum(parts)


# ---------------------------------------------------------------------------
# inclusion-exclusion for the number of singleton urns
# ---------------------------------------------------------------------------


def _feller_sums_uniform(n: int, m: int, ctx) -> list:
    """``S_j`` for ``j = 0..m``: expected number of j-sets of singleton urns."""
    p = ctx.mpf(1) / m
    out = []
    for j in range(m + 1):
        if j > n:
            out.append(ctx.mpf(0))
            continue
        base = ctx.mpf(m - j) / m
        tail = ctx.mpf(1) if n == j else (ctx.mpf(0) if base <= 0 else base ** (n - j))
        out.append(ctx.binomial(m, j) * ctx.ff(n, j) * p**j * tail)
    return out


def _feller_sums_general(n: int, p: np.ndarray, ctx) -> list:
    m = p.shape[0]
    pm = [ctx.mpf(float(v)) for v in p]
    sums = [ctx.mpf(0) for _ in range(m + 1)]
    for j in range(0, min(m, n) + 1):
        acc = ctx.mpf(0)
        for sub in itertools.combinations(range(m), j):
            chosen = set(sub)
            prod = ctx.mpf(1)
            for x in sub:
                prod *= pm[x]
            rest = ctx.fsum(pm[x] for x in range(m) if x not in chosen)
            tail = ctx.mpf(1) if n == j else rest ** (n - j)
            acc += prod * tail
        sums[j] = ctx.ff(n, j) * acc
    return sums


def _tail_terms(sums: list, k: int, ctx) -> Iterable:
    m = len(sums) - 1
    for j in range(k, m + 1):
        yield (-1) ** (j - k) * ctx.binomial(j - 1, k - 1) * sums[j]


class _FellerEvaluator:
    """Cached ``S_j`` at a working precision that is raised until the error budget is met."""

    def __init__(self, model: UrnModel, tol: float, max_prec: int):
        n, m = model.n, model.m
        if model.is_uniform:
            if m > FELLER_MAX_M_UNIFORM:
                raise TooLargeError(f"uniform inclusion-exclusion supports m <= {FELLER_MAX_M_UNIFORM}, got {m}")
        elif m > FELLER_MAX_M_GENERAL:
            raise TooLargeError(f"general inclusion-exclusion supports m <= {FELLER_MAX_M_GENERAL}, got {m}")
        self.model = model
        self.tol = tol
        self.max_prec = max_prec
        self.prec = n + m + 64
        self._compute()

    def _compute(self):
        self.ctx = mpmath.MPContext()
        self.ctx.prec = self.prec
        if self.model.is_uniform:
            self.sums = _feller_sums_uniform(self.model.n, self.model.m, self.ctx)
        else:
            self.sums = _feller_sums_general(self.model.n, self.model.p, self.ctx)

    def tail(self, k: int):
        """``P[n - Y >= k]`` as an mpf, with a rigorous-style rounding budget check."""
        ctx = self.ctx
        if k <= 0:
            return ctx.mpf(1)
        if k > len(self.sums) - 1:
            return ctx.mpf(0)
        while True:
            terms = list(_tail_terms(self.sums, k, ctx))
            value = ctx.fsum(terms)
            magnitude = ctx.fsum(abs(t) for t in terms)
            # each term carries O(n + m) roundings of relative size 2**-prec
            err = magnitude * (4 * (self.model.n + len(self.sums))) * ctx.ldexp(1, -self.prec)
            if err <= self.tol:
                return value
            if self.prec * 2 > self.max_prec:
                raise PrecisionError(
                    f"inclusion-exclusion error budget {self.tol} not met at {self.prec} bits (estimate {float(err):.3g})"
                )
            self.prec *= 2
            self._compute()
            ctx = self.ctx


def feller_cdf(model: UrnModel, k: int, tol: float = 1e-15, max_prec: int = MAX_PRECISION_BITS) -> float:
    """``P[n - Y >= k]``, the chance of at least ``k`` isolated balls.

    Evaluates ``sum_{j=k}^{m} (-1)**(j-k) C(j-1, k-1) S_j`` in arbitrary
    precision. Explicit models need ``m <= 12``; uniform models use a closed
    form for ``S_j`` and allow ``m <= 512``.

    Raises
    ------
    TooLargeError
        Model outside the supported size.
    PrecisionError
        Rounding error could not be brought under ``tol`` within ``max_prec`` bits.
    """
    if k <= 0:
        return 1.0
    return float(_FellerEvaluator(model, tol, max_prec).tail(k))


def feller_pmf(model: UrnModel, tol: float = 1e-15, max_prec: int = MAX_PRECISION_BITS) -> IntegerPmf:
    """Exact pmf of ``Y`` from differences of inclusion-exclusion tails."""
    ev = _FellerEvaluator(model, tol, max_prec)
    n = model.n
    top = min(n, model.m)
    tails = [ev.tail(k) for k in range(top + 2)]
    d = {}
    for s in range(top + 1):
        q = float(tails[s] - tails[s + 1])
        if q > 0:
            d[n - s] = q
    return IntegerPmf.from_dict(d, "exact-feller")


def exact_pmf(model: UrnModel, cap: int = ENUMERATION_CAP) -> IntegerPmf:
    """Pmf by enumeration when feasible, otherwise by inclusion-exclusion."""
    if model.m**model.n <= cap:
        return enumerate_pmf(model, cap)
    return feller_pmf(model)


def kolmogorov_distance(pmf: IntegerPmf, mean: float | None = None, std: float | None = None) -> float:
    """``sup_t |P[(Y - mu)/sigma <= t] - Phi(t)|`` for a lattice law.

    The supremum is attained at an atom or just below it, so it is the
    maximum over atoms of ``|F(y) - Phi(z_y)|`` and ``|Phi(z_y) - F(y-)|``.
    ``mean``/``std`` override the pmf's own moments.
    """
    mu = pmf.mean if mean is None else float(mean)
    sigma = pmf.std if std is None else float(std)
    if not sigma > 0.0:
        raise PreconditionError("Kolmogorov distance to the normal needs positive variance")
    F = pmf.cdf()
    F_left = np.r_[0.0, F[:-1]]
    z = (np.asarray(pmf.support, dtype=np.float64) - mu) / sigma
    phi = normal_cdf(z)
    return float(max(np.max(np.abs(F - phi)), np.max(np.abs(phi - F_left))))


def distance_lower_bound(sigma: float) -> float:
    """Universal lower bound ``min(1/6, (8 pi e)**-1/2 / sigma)`` on the distance."""
    return min(1.0 / 6.0, (8.0 * math.pi * math.e) ** -0.5 / sigma)

"""Size-biased couplings for the non-isolated ball count.

Two constructions are provided. :func:`couple_uniform` handles equal urn
probabilities: pick a ball ``I``, and with probability ``pi[M_I]`` move a
second ball ``J`` into ``I``'s urn. :func:`couple_general` first relocates
ball ``I`` to an urn drawn from the size-biased urn law ``p_hat`` and then
imports a second ball there with probability ``pi[N](X_0)``. In both cases
the recomputed count ``Y''`` has the size-biased law of ``Y``.

Random draws are taken from a ``numpy.random.Generator`` in a fixed layout
(``n`` allocation uniforms/integers followed by the auxiliary uniforms) so
that results are reproducible from a seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln

from . import _kernels
from .errors import ModelError, PreconditionError
from .model import Allocation, UrnModel, sample_urns
from .streams import chunked, run_chunks

log = logging.getLogger(__name__)

CLAMP_TOLERANCE = 1e-9
# excess over [0, 1] below this is plain rounding and not worth a warning
_SILENT_CLAMP = 1e-13


@dataclass(frozen=True)
class PiTable:
    """Import probabilities ``pi_0 .. pi_nu`` for ``N ~ Bin(nu, p)``."""

    nu: int
    p: float
    values: np.ndarray

    def __getitem__(self, k: int) -> float:
        return float(self.values[k])


def _binom_logpmf(nu: int, p: float) -> np.ndarray:
    k = np.arange(nu + 1)
    return (
        gammaln(nu + 1) - gammaln(k + 1) - gammaln(nu - k + 1)
        + k * math.log(p) + (nu - k) * math.log1p(-p)
    )


def _stable_pi(nu: int, p: float) -> np.ndarray:
    # pi_k = P[N=0] P[N>k] / ((1 - P[N=0]) P[N=k] (1 - k/nu)), all in logs
    logpmf = _binom_logpmf(nu, p)
    log_ge = np.logaddexp.accumulate(logpmf[::-1])[::-1]
    log_q = nu * math.log1p(-p)
    log_1mq = math.log(-math.expm1(log_q))
    k = np.arange(nu)
    logpi = log_q - log_1mq + log_ge[1:] - logpmf[:-1] - np.log1p(-k / nu)
    # pi_0 = P[N=0] P[N>0] / ((1 - P[N=0]) P[N=0]) = 1 identically
    logpi[0] = 0.0
    return np.r_[np.exp(logpi), 0.0]


def _direct_pi(nu: int, p: float) -> np.ndarray:
    k = np.arange(nu)
    q = stats.binom.pmf(0, nu, p)
    sf = stats.binom.sf(k, nu, p)
    pmf = stats.binom.pmf(k, nu, p)
    return np.r_[(sf / (1.0 - q) - sf) / (pmf * (1.0 - k / nu)), 0.0]


def pi_table(nu: int, p: float, method: str = "stable") -> PiTable:
    """Bernoulli import probabilities turning ``Bin(nu, p)`` into ``Bin(nu, p) | > 0``.

    ``method="direct"`` evaluates the textbook ratio with ``scipy.stats``
    and is kept for cross-checking; it loses accuracy for large ``nu``.
    Values that leave ``[0, 1]`` by at most ``1e-9`` are clamped; anything
    larger raises ``ArithmeticError``.
    """
    if isinstance(nu, bool) or int(nu) != nu or nu < 1:
        raise PreconditionError(f"nu must be a positive integer, got {nu!r}")
    if not 0.0 < p < 1.0:
        raise PreconditionError(f"p must lie in (0, 1), got {p!r}")
    nu = int(nu)
    if method == "stable":
        v = _stable_pi(nu, p)
    elif method == "direct":
        v = _direct_pi(nu, p)
    else:
        raise ValueError(f"unknown method {method!r}")
    lo, hi = float(v.min()), float(v.max())
    if not (lo >= -CLAMP_TOLERANCE and hi <= 1.0 + CLAMP_TOLERANCE) or not np.all(np.isfinite(v)):
        raise ArithmeticError(f"pi table for nu={nu}, p={p} left [0, 1]: range [{lo}, {hi}]")
    excess = max(-lo, hi - 1.0)
    if excess > _SILENT_CLAMP:
        log.warning("clamped pi table (nu=%d, p=%g) by %.3g", nu, p, excess)
    v = np.clip(v, 0.0, 1.0)
    v.setflags(write=False)
    return PiTable(nu, float(p), v)


def hat_p(model: UrnModel) -> np.ndarray:
    """Law of the urn of a ball conditioned to be non-isolated.

    ``p_hat[x]`` is proportional to ``p[x] (1 - (1 - p[x])**(n-1))``.
    """
    if model.n < 2:
        raise PreconditionError("size-biasing needs n >= 2 (Y is identically 0 for n = 1)")
    if model.is_uniform:
        return np.full(model.m, 1.0 / model.m)
    with np.errstate(divide="ignore"):
        # p = 1 gives log1p(-1) = -inf and the correct weight 1
        w = model.p * -np.expm1((model.n - 1) * np.log1p(-np.minimum(model.p, 1.0)))
    return w / math.fsum(w)


# ---------------------------------------------------------------------------
# h-family
# ---------------------------------------------------------------------------


def h_basic(i: int, k):
    """The occupancy-only functions ``h_0, h_1, h_2, h_3, h_6``."""
    k = np.asarray(k)
    one = (k == 1).astype(float)
    two = (k == 2).astype(float)
    zero = (k == 0).astype(float)
    if i == 0:
        out = (k >= 1) + one
    elif i == 1:
        out = zero - one
    elif i == 2:
        out = 2.0 * one - two
    elif i == 3:
        out = one
    elif i == 6:
        out = k * (2.0 * one - two)
    else:
        raise ValueError(f"h_{i} depends on the urn; use HFamily")
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


class HFamily:
    """Tables of ``h_0 .. h_7`` for one model, indexed by occupancy ``k = 0..n``.

    ``h_4, h_5, h_7`` depend on the urn through ``pi_k(x)``, the import
    table for ``nu = n - 1`` and ``p = p[x]``. Urns with equal probability
    share a table. ``pi_n`` is taken as 0; it only ever multiplies an empty
    sum (all balls in one urn).
    """

    def __init__(self, model: UrnModel, method: str = "stable"):
        if model.n < 2:
            raise PreconditionError("h-family needs n >= 2")
        self.model = model
        n = model.n
        levels, group = np.unique(model.p, return_inverse=True)
        self.group = group.astype(np.int64)
        self.levels = levels
        pi = np.zeros((levels.size, n + 1))
        for g, pv in enumerate(levels):
            if pv >= 1.0:
                continue
            pi[g, :n] = pi_table(n - 1, float(pv), method).values
        self.pi = pi
        k = np.arange(n + 1)
        pi_prev = np.zeros_like(pi)
        pi_prev[:, 1:] = pi[:, :-1]
        h4 = (k * pi_prev + (n - k - 1) * pi) / (n - 1) - 1.0
        h5 = pi / (n - 1)
        h1_prev = np.r_[0.0, h_basic(1, k[:-1])]
        h2_prev = np.r_[0.0, h_basic(2, k[:-1])]
        h7 = (
            h_basic(3, k) + h4
            - k * (2.0 + h4) * h1_prev / n
            - k * h5 * (k - 1) * h2_prev / n
        )
        self.h4, self.h5, self.h7 = h4, h5, h7
        self.basic = {i: h_basic(i, k) for i in (0, 1, 2, 3, 6)}

    def table(self, i: int) -> np.ndarray:
        """``h_i`` as an ``(m, n+1)`` array (rows per urn)."""
        if i in self.basic:
            return np.broadcast_to(self.basic[i], (self.model.m, self.model.n + 1))
        if i in (4, 5, 7):
            return getattr(self, f"h{i}")[self.group]
        raise ValueError(f"h index must be in 0..7, got {i}")

    def h(self, i: int, k: int, x: int = 0) -> float:
        if not 0 <= i <= 7:
            raise ValueError(f"h index must be in 0..7, got {i}")
        if k == -1:
            return 0.0
        if not 0 <= k <= self.model.n:
            raise ValueError(f"occupancy {k} outside 0..{self.model.n}")
        if i in self.basic:
            return float(self.basic[i][k])
        return float(getattr(self, f"h{i}")[self.group[x], k])

    def h_tilde(self, i: int, k: int, x: int = 0) -> float:
        """``h_i(k + 1, x) / (k + 1)``."""
        return self.h(i, k + 1, x) / (k + 1)

    def norm(self, i: int, tilde: bool = False) -> float:
        """``sup_{k, x} |h_i|`` over ``k = 0..n-1`` (tilded: ``h_i(k+1)/(k+1)``)."""
        t = self.table(i)
        if tilde:
            k = np.arange(1, self.model.n + 1)
            return float(np.max(np.abs(t[:, 1:] / k)))
        return float(np.max(np.abs(t[:, : self.model.n])))


# ---------------------------------------------------------------------------
# couplers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CouplingDraw:
    """One coupled pair ``(Y, Y'')`` with the randomness that produced it.

    ``x0`` is ``None`` for the uniform construction; ``j`` is ``None`` when
    the general construction did not import a ball.
    """

    y: int
    y_sb: int
    i: int
    n_co: int
    b: bool
    j: int | None
    x0: int | None
    allocation: Allocation

    @property
    def increment(self) -> int:
        return self.y_sb - self.y


@dataclass(frozen=True)
class CouplingBatch:
    y: np.ndarray
    y_sb: np.ndarray
    i: np.ndarray
    n_co: np.ndarray
    b: np.ndarray
    j: np.ndarray
    x0: np.ndarray

    @property
    def increment(self) -> np.ndarray:
        return self.y_sb - self.y

    def __len__(self) -> int:
        return int(self.y.shape[0])

    @classmethod
    def concat(cls, parts: list[CouplingBatch]) -> CouplingBatch:
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in cls.__dataclass_fields__))

    def to_csv(self) -> str:
        lines = ["y,y_sb,increment,b_flag"]
        inc = self.increment
        for r in range(len(self)):
            lines.append(f"{self.y[r]},{self.y_sb[r]},{inc[r]},{int(self.b[r])}")
        return "\n".join(lines) + "\n"


class Coupler:
    """Precomputed tables for repeated coupling draws on one model.

    ``method`` is ``"uniform"`` (requires a uniform model) or ``"general"``.
    """

    def __init__(self, model: UrnModel, method: str | None = None):
        if method is None:
            method = "uniform" if model.is_uniform else "general"
        if method not in ("uniform", "general"):
            raise ValueError(f"unknown coupling method {method!r}")
        if model.n < 2:
            raise PreconditionError("coupling needs n >= 2")
        if method == "uniform" and not model.is_uniform:
            raise ModelError("the uniform coupler needs equal urn probabilities; use the general coupler")
        self.model = model
        self.method = method
        if method == "uniform":
            self.pi = np.r_[pi_table(model.n - 1, 1.0 / model.m).values, 0.0] if model.m > 1 else np.zeros(model.n + 1)
        else:
            self.family = HFamily(model)
            self.hat = hat_p(model)
            cdf = np.cumsum(self.hat)
            cdf[-1] = 1.0
            self.hat_cdf = cdf

    @property
    def aux_width(self) -> int:
        return 3 if self.method == "uniform" else 4

    def draw_arrays(self, x: np.ndarray, u: np.ndarray) -> CouplingBatch:
        """Run the construction on urn rows ``x`` (or one fixed row) and uniforms ``u``."""
        x = np.ascontiguousarray(x, dtype=np.int64)
        u = np.ascontiguousarray(u, dtype=np.float64)
        d = u.shape[0]
        y, ysb, i, nco, j, x0 = (np.empty(d, dtype=np.int64) for _ in range(6))
        b = np.empty(d, dtype=np.bool_)
        m = self.model.m
        if self.method == "uniform":
            _kernels.couple_uniform_kernel(x, u, self.pi, m, y, ysb, i, nco, b, j)
            x0.fill(-1)
        else:
            f = self.family
            _kernels.couple_general_kernel(x, u, self.hat_cdf, f.pi, f.group, m, y, ysb, i, x0, nco, b, j)
        return CouplingBatch(y, ysb, i, nco, b, j, x0)

    def draw(self, rng: np.random.Generator) -> CouplingDraw:
        x = sample_urns(self.model, rng, self.model.n)
        u = rng.random((1, self.aux_width))
        out = self.draw_arrays(x[None, :], u)
        return CouplingDraw(
            y=int(out.y[0]),
            y_sb=int(out.y_sb[0]),
            i=int(out.i[0]),
            n_co=int(out.n_co[0]),
            b=bool(out.b[0]),
            j=None if out.j[0] < 0 else int(out.j[0]),
            x0=None if out.x0[0] < 0 else int(out.x0[0]),
            allocation=Allocation.from_urns(x, self.model.m),
        )

    def batch(self, draws: int, rng: np.random.Generator) -> CouplingBatch:
        x = sample_urns(self.model, rng, (draws, self.model.n))
        u = rng.random((draws, self.aux_width))
        return self.draw_arrays(x, u)

    def redraw(self, alloc: Allocation, draws: int, rng: np.random.Generator) -> CouplingBatch:
        """Fresh auxiliary randomness ``(I, X_0, B, J)`` with the allocation held fixed."""
        u = rng.random((draws, self.aux_width))
        return self.draw_arrays(np.asarray(alloc.x)[None, :], u)

    def conditional_increment(self, x: np.ndarray) -> np.ndarray:
        """``E[Y'' - Y | X]`` for each urn row of ``x``, in closed form."""
        x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.int64)
        out = np.empty(x.shape[0])
        m = self.model.m
        if self.method == "uniform":
            _kernels.cond_increment_uniform_kernel(x, self.pi, m, out)
        else:
            f = self.family
            s5_empty = math.fsum(self.hat * f.h5[f.group, 0])
            _kernels.cond_increment_general_kernel(
                x, self.hat, f.group, f.h4, f.h5, f.h7,
                f.basic[0].astype(np.float64), f.basic[6].astype(np.float64),
                s5_empty, m, out,
            )
        return out


def couple_uniform(model: UrnModel, rng: np.random.Generator) -> CouplingDraw:
    """One draw of the equal-probability construction (moves ball ``J`` onto ball ``I``)."""
    return Coupler(model, "uniform").draw(rng)


def couple_general(model: UrnModel, rng: np.random.Generator) -> CouplingDraw:
    """One draw of the general construction (relocate ``I`` to ``X_0 ~ p_hat``, then maybe import ``J``)."""
    return Coupler(model, "general").draw(rng)


def couple_batch(
    model: UrnModel,
    draws: int,
    seed: int,
    method: str | None = None,
    threads: int = 1,
    chunk: int = 1 << 16,
) -> CouplingBatch:
    """Seeded batch of coupled pairs; identical for any ``threads``."""
    coupler = Coupler(model, method)
    parts = run_chunks(
        lambda rng, size: coupler.batch(size, rng),
        chunked(draws, chunk), seed, threads,
    )
    return CouplingBatch.concat(parts)


def conditional_increment(model: UrnModel, alloc: Allocation, method: str | None = None) -> float:
    """Closed-form ``E[Y'' - Y | allocation]`` for the chosen coupler.

    Uniform coupler::

        (1/n) sum_i V_i tau_i + (1/(n(n-1))) sum_{i != j} V_i T_j

    with ``V_i = pi[M_i]``, ``tau_i = 1{M_i=0} + 1{M_i=1}/(n-1)`` and
    ``T_j = 1{M_j=0} - 1{M_j=1}``. General coupler::

        2 + (sum_x p_hat_x h5(N_x, x)) (1/n) sum_i h6(M_i) + sum_x p_hat_x h7(N_x, x)
          - (sum_x p_hat_x h4(N_x, x)) (1/n) sum_i h0(M_i) - (2/n) sum_i h0(M_i)
    """
    return float(Coupler(model, method).conditional_increment(np.asarray(alloc.x))[0])


@dataclass(frozen=True)
class DeltaEstimate:
    """Monte Carlo variance of the allocation-conditional mean increment.

    This variance dominates ``Var(E[Y'' - Y | Y])``, so ``delta`` is an
    upper-bound surrogate for the coupling's ``Delta``.
    """

    delta: float
    delta_se: float
    delta_sq: float
    delta_sq_se: float
    samples: int
    mean_increment: float
    mean_increment_se: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _jackknife_variance(v: np.ndarray) -> tuple[np.ndarray, float]:
    """Leave-one-out sample variances of ``v`` and the full-sample variance."""
    n = v.size
    c = v - v.mean()
    s1 = c.sum()
    s2 = np.dot(c, c)
    loo_mean = (s1 - c) / (n - 1)
    loo_var = (s2 - c * c - (n - 1) * loo_mean**2) / (n - 2)
    return loo_var, s2 / (n - 1) - s1 * s1 / (n * (n - 1))


def delta_upper_estimate(
    model: UrnModel,
    samples: int,
    seed: int,
    method: str | None = None,
    threads: int = 1,
) -> DeltaEstimate:
    """Estimate ``sqrt(Var(E[Y'' - Y | allocation]))`` with jackknife errors."""
    if samples < 100:
        raise PreconditionError(f"need at least 100 samples, got {samples}")
    coupler = Coupler(model, method)

    def work(rng, size):
        return coupler.conditional_increment(sample_urns(model, rng, (size, model.n)))

    v = np.concatenate(run_chunks(work, chunked(samples, 1 << 14), seed, threads))
    loo_var, var = _jackknife_variance(v)
    var = max(var, 0.0)
    nn = v.size

    def jk_se(theta):
        return math.sqrt((nn - 1) / nn * float(np.sum((theta - theta.mean()) ** 2)))

    loo_var = np.maximum(loo_var, 0.0)
    return DeltaEstimate(
        delta=math.sqrt(var),
        delta_se=jk_se(np.sqrt(loo_var)),
        delta_sq=var,
        delta_sq_se=jk_se(loo_var),
        samples=nn,
        mean_increment=float(v.mean()),
        mean_increment_se=float(v.std(ddof=1) / math.sqrt(nn)),
    )

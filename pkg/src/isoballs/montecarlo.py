"""Seeded Monte Carlo estimation of the law of the non-isolated ball count."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import PreconditionError
from .exact import IntegerPmf, exact_moments, kolmogorov_distance
from .model import UrnModel, sample_urns
from .streams import chunked, run_chunks

DKW_ALPHA = 0.01
_CELLS_PER_CHUNK = 1 << 22


def dkw_radius(samples: int, alpha: float = DKW_ALPHA) -> float:
    """Half-width ``eps`` with ``P[sup |F_N - F| > eps] <= alpha`` (Massart's constant)."""
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * samples))


@dataclass
class MomentAccumulator:
    """Mergeable running central moments up to order four."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    m4: float = 0.0

    @classmethod
    def from_values(cls, v: np.ndarray) -> MomentAccumulator:
        v = np.asarray(v, dtype=np.float64)
        if v.size == 0:
            return cls()
        mu = float(v.mean())
        d = v - mu
        d2 = d * d
        return cls(v.size, mu, float(d2.sum()), float((d2 * d).sum()), float((d2 * d2).sum()))

    def merge(self, other: MomentAccumulator) -> MomentAccumulator:
        na, nb = self.count, other.count
        if na == 0:
            return MomentAccumulator(**vars(other))
        if nb == 0:
            return MomentAccumulator(**vars(self))
        n = na + nb
        delta = other.mean - self.mean
        d_n = delta / n
        mean = self.mean + d_n * nb
        m2 = self.m2 + other.m2 + delta * d_n * na * nb
        m3 = (
            self.m3 + other.m3
            + delta * d_n * d_n * na * nb * (na - nb)
            + 3.0 * d_n * (na * other.m2 - nb * self.m2)
        )
        m4 = (
            self.m4 + other.m4
            + delta * d_n**3 * na * nb * (na * na - na * nb + nb * nb)
            + 6.0 * d_n * d_n * (na * na * other.m2 + nb * nb * self.m2)
            + 4.0 * d_n * (na * other.m3 - nb * self.m3)
        )
        return MomentAccumulator(n, mean, m2, m3, m4)

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1)

    @property
    def mean_se(self) -> float:
        return math.sqrt(self.variance / self.count)

    @property
    def variance_se(self) -> float:
        # large-sample standard error of the unbiased sample variance
        n = self.count
        s2 = self.variance
        m4 = self.m4 / n
        return math.sqrt(max(m4 - (n - 3) / (n - 1) * s2 * s2, 0.0) / n)


@dataclass
class McSummary:
    model: UrnModel
    samples: int
    seed: int
    threads: int
    sampler: str
    mean: float
    mean_se: float
    variance: float
    variance_se: float
    pmf: IntegerPmf
    d_hat: float
    d_radius: float
    standardization: str
    elapsed: float = field(default=0.0, compare=False)

    @property
    def throughput(self) -> float:
        return self.samples / self.elapsed if self.elapsed > 0 else float("inf")

    def as_dict(self, timing: bool = False) -> dict:
        out = {
            "model": self.model.to_json_dict(),
            "samples": self.samples,
            "seed": self.seed,
            "sampler": self.sampler,
            "mean": self.mean,
            "mean_se": self.mean_se,
            "variance": self.variance,
            "variance_se": self.variance_se,
            "kolmogorov_distance": self.d_hat,
            "dkw_radius_99": self.d_radius,
            "standardization": self.standardization,
            "pmf": {str(k): q for k, q in zip(self.pmf.support, self.pmf.mass)},
        }
        if timing:
            out["threads"] = self.threads
            out["elapsed_s"] = self.elapsed
            out["samples_per_s"] = self.throughput
        return out


def sample_y(model: UrnModel, rng: np.random.Generator, size: int, sampler: str = "balls") -> np.ndarray:
    """``size`` independent replicates of ``Y``.

    ``sampler="counts"`` draws multinomial urn counts directly (uniform
    models only, O(m) per replicate) instead of placing every ball.
    """
    if sampler == "balls":
        x = sample_urns(model, rng, (size, model.n))
        return _kernels.y_from_urns(x, model.m)
    if sampler == "counts":
        if not model.is_uniform:
            raise PreconditionError("the count sampler is only offered for uniform models")
        counts = rng.multinomial(model.n, np.full(model.m, 1.0 / model.m), size=size)
        return model.n - np.count_nonzero(counts == 1, axis=1)
    raise ValueError(f"unknown sampler {sampler!r}")


def chunk_rows(model: UrnModel, sampler: str = "balls") -> int:
    width = model.m if sampler == "counts" else model.n
    return max(256, _CELLS_PER_CHUNK // max(width, 1))


def mc_run(
    model: UrnModel,
    samples: int,
    seed: int,
    threads: int = 1,
    sampler: str = "balls",
    standardize: str = "sample",
) -> McSummary:
    """Estimate moments, pmf and Kolmogorov distance of ``Y`` from ``samples`` replicates.

    The result is a deterministic function of ``(model, samples, seed,
    sampler)``; ``threads`` only changes the wall-clock time.
    ``standardize="exact"`` centers and scales by the exact moments instead
    of the replicate moments when computing the distance.
    """
    if isinstance(samples, bool) or int(samples) != samples or samples < 2:
        raise PreconditionError(f"samples must be an integer >= 2, got {samples!r}")
    if threads < 1:
        raise PreconditionError(f"threads must be >= 1, got {threads!r}")
    if standardize not in ("sample", "exact"):
        raise ValueError(f"unknown standardization {standardize!r}")
    samples = int(samples)
    n = model.n

    def work(rng, size):
        y = sample_y(model, rng, size, sampler)
        return np.bincount(y, minlength=n + 1), MomentAccumulator.from_values(y)

    t0 = time.perf_counter()
    parts = run_chunks(work, chunked(samples, chunk_rows(model, sampler)), seed, threads)
    elapsed = time.perf_counter() - t0

    hist = np.zeros(n + 1, dtype=np.int64)
    acc = MomentAccumulator()
    for h, a in parts:
        hist += h
        acc = acc.merge(a)
    pmf = IntegerPmf.from_counts(np.arange(n + 1), hist)
    if standardize == "exact":
        mu, var = exact_moments(model)
    else:
        mu, var = acc.mean, acc.variance
    d_hat = kolmogorov_distance(pmf, mu, math.sqrt(var)) if var > 0 else float("nan")
    return McSummary(
        model=model,
        samples=samples,
        seed=seed,
        threads=threads,
        sampler=sampler,
        mean=acc.mean,
        mean_se=acc.mean_se,
        variance=acc.variance,
        variance_se=acc.variance_se,
        pmf=pmf,
        d_hat=d_hat,
        d_radius=dkw_radius(samples),
        standardization=standardize,
        elapsed=elapsed,
    )

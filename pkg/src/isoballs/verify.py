"""Empirical checks of the coupling law, covariance inequalities and convergence rate.

Every check returns a :class:`CheckReport`; reports are reproducible from
their recorded seed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

import numpy as np
from scipy import stats

from .bounds import C_gamma, eta, general_flags
from .coupling import Coupler, HFamily, delta_upper_estimate, h_basic, hat_p
from .errors import PreconditionError, TooLargeError
from .exact import ENUMERATION_CAP, IntegerPmf, exact_moments, exact_pmf
from .model import UrnModel, explicit, sample_allocation, sample_urns, uniform
from .montecarlo import mc_run
from .streams import chunked, run_chunks, stream

CHI2_THRESHOLD = 1e-3
SE_ALLOWANCE = 4.0
RATE_SLOPE_RANGE = (-0.70, -0.30)
RATE_SNR = 3.0
DEFAULT_RATE_NS = (256, 512, 1024, 2048)

GRID_PROBABILITIES = {
    2: (0.7, 0.3),
    3: (0.5, 0.25, 0.25),
    4: (0.4, 0.3, 0.2, 0.1),
}

COUPLING_GRID_UNIFORM = [
    (2, 2), (3, 2), (4, 2), (3, 3), (5, 3), (4, 4), (6, 4), (12, 4),
    (8, 5), (10, 7), (2, 12), (6, 12), (12, 12), (5, 1),
]
COUPLING_GRID_GENERAL = [
    (2, 2), (5, 2), (19, 2), (3, 3), (4, 3), (8, 3), (12, 3), (2, 4), (5, 4), (9, 4),
]


@dataclass
class CheckReport:
    """Outcome of one verification check.

    ``worst_margin`` is the smallest slack across instances, in the units
    named by ``margin_units``; a check fails only when an estimate exceeds
    its bound by more than the declared allowance.
    """

    name: str
    instances: int
    worst_margin: float
    margin_units: str
    passed: bool
    seeds: list[int]
    details: list[dict[str, Any]] = field(default_factory=list)

    def as_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "instances": self.instances,
            "worst_margin": self.worst_margin,
            "margin_units": self.margin_units,
            "passed": self.passed,
            "seeds": self.seeds,
            "details": self.details,
        }


# ---------------------------------------------------------------------------
# model grids
# ---------------------------------------------------------------------------


def enumeration_grid(max_outcomes: int = 10**6, max_uniform: int = 12) -> Iterator[UrnModel]:
    """Explicit models with ``m <= 4`` and ``m**n <= max_outcomes``, then uniform ``n, m <= 12``."""
    for m, p in GRID_PROBABILITIES.items():
        n = 1
        while m**n <= max_outcomes:
            yield explicit(n, p)
            n += 1
    for n in range(1, max_uniform + 1):
        for m in range(1, max_uniform + 1):
            yield uniform(n, m)


def coupling_grid() -> list[UrnModel]:
    """Representative grid models (``n >= 2``) used for coupling checks."""
    models = [uniform(n, m) for n, m in COUPLING_GRID_UNIFORM]
    models += [explicit(n, GRID_PROBABILITIES[m]) for n, m in COUPLING_GRID_GENERAL]
    return models


def couplers_for(model: UrnModel) -> list[str]:
    return ["uniform", "general"] if model.is_uniform else ["general"]


# ---------------------------------------------------------------------------
# size-bias law
# ---------------------------------------------------------------------------


def chi_square_pvalue(observed: dict[int, int], target: IntegerPmf, min_expected: float = 5.0) -> tuple[float, int]:
    """Goodness-of-fit p-value of integer counts against a pmf.

    Adjacent support points are pooled until every cell expects at least
    ``min_expected`` observations. Mass outside the support gives ``p = 0``.
    Returns ``(p_value, degrees_of_freedom)``.
    """
    total = sum(observed.values())
    support = set(target.support)
    if any(k not in support and c > 0 for k, c in observed.items()):
        return 0.0, 0
    cells_obs, cells_exp = [], []
    o_acc = e_acc = 0.0
    for k, q in zip(target.support, target.mass):
        o_acc += observed.get(k, 0)
        e_acc += q * total
        if e_acc >= min_expected:
            cells_obs.append(o_acc)
            cells_exp.append(e_acc)
            o_acc = e_acc = 0.0
    if cells_obs:
        cells_obs[-1] += o_acc
        cells_exp[-1] += e_acc
    else:
        cells_obs, cells_exp = [o_acc], [e_acc]
    if len(cells_obs) < 2:
        return 1.0, 0
    obs = np.asarray(cells_obs)
    exp = np.asarray(cells_exp)
    exp *= obs.sum() / exp.sum()
    res = stats.chisquare(obs, exp)
    return float(res.pvalue), len(cells_obs) - 1


def sizebias_law_check(
    model: UrnModel,
    samples: int,
    seed: int,
    methods: list[str] | None = None,
    threads: int = 1,
) -> CheckReport:
    """Chi-squared fit of ``Y''`` from each coupler to the exact ``k P[Y=k] / E Y``."""
    if model.m**model.n > ENUMERATION_CAP and not model.is_uniform and model.m > 12:
        raise TooLargeError("no exact pmf available for this model")
    target = exact_pmf(model).size_biased()
    methods = methods or couplers_for(model)
    details = []
    worst = math.inf
    for idx, meth in enumerate(methods):
        coupler = Coupler(model, meth)
        batch = _coupling_draws(coupler, samples, seed + idx, threads)
        vals, cnts = np.unique(batch.y_sb, return_counts=True)
        observed = {int(v): int(c) for v, c in zip(vals, cnts)}
        pval, dof = chi_square_pvalue(observed, target)
        max_step = int(np.abs(batch.increment).max())
        limit = 2 if meth == "uniform" else 3
        worst = min(worst, pval)
        details.append({
            "model": model.to_json_dict(), "coupler": meth, "samples": samples,
            "seed": seed + idx, "p_value": pval, "dof": dof,
            "max_abs_increment": max_step, "increment_limit": limit,
        })
    passed = all(d["p_value"] > CHI2_THRESHOLD and d["max_abs_increment"] <= d["increment_limit"] for d in details)
    return CheckReport("sizebias_law", len(details), worst, "min chi-squared p-value", passed, [seed], details)


def _coupling_draws(coupler: Coupler, draws: int, seed: int, threads: int = 1):
    from .coupling import CouplingBatch

    parts = run_chunks(lambda rng, s: coupler.batch(s, rng), chunked(draws, 1 << 16), seed, threads)
    return CouplingBatch.concat(parts)


# ---------------------------------------------------------------------------
# conditional increment and Delta
# ---------------------------------------------------------------------------


def conditional_increment_check(
    model: UrnModel,
    allocations: int,
    draws: int,
    seed: int,
    method: str | None = None,
    average_samples: int = 100_000,
) -> CheckReport:
    """Fixed-allocation mean increments against the closed form, plus the model average.

    The model average of the closed form must match ``Var Y / E Y``, the
    mean shift produced by size-biasing.
    """
    coupler = Coupler(model, method)
    rng = stream(seed, 0)
    jump = 2.0 * (2 if coupler.method == "uniform" else 3)
    worst = math.inf
    details = []
    ok = True
    for a in range(allocations):
        alloc = sample_allocation(model, rng)
        inc = coupler.redraw(alloc, draws, rng).increment
        closed = float(coupler.conditional_increment(alloc.x)[0])
        mean = float(inc.mean())
        se = float(inc.std(ddof=1) / math.sqrt(draws))
        z = abs(mean - closed) / _resolved_se(se, jump, draws)
        ok &= z <= 5.0
        worst = min(worst, 5.0 - z)
        if a < 5:
            details.append({"allocation": alloc.x.tolist(), "closed_form": closed, "mean": mean, "se": se})
    mu, var = exact_moments(model)
    est = delta_upper_estimate(model, average_samples, seed + 1, coupler.method)
    target = var / mu
    z = abs(est.mean_increment - target) / _resolved_se(est.mean_increment_se, jump, est.samples)
    ok &= z <= 5.0
    worst = min(worst, 5.0 - z)
    details.append({
        "model_average": est.mean_increment, "model_average_se": est.mean_increment_se,
        "var_over_mean": target,
    })
    return CheckReport(
        "conditional_increment", allocations + 1, worst, "standard errors below the 5-se limit",
        bool(ok), [seed, seed + 1], details,
    )


def _resolved_se(se: float, jump: float, draws: int) -> float:
    """Standard error floored at one draw's worth of the largest possible jump.

    When every draw agrees the sample error is 0, yet outcomes with
    probability below ``1/draws`` (e.g. an import with ``pi_k`` near 1e-11)
    still shift the true mean; they are unresolvable at this sample size.
    """
    return max(se, jump / draws)


def delta_check(model: UrnModel, samples: int, seed: int, method: str | None = None) -> CheckReport:
    """Surrogate ``Delta^2`` against ``eta(n, m)`` (uniform) or ``C(gamma)^2 / Var Y`` (general)."""
    est = delta_upper_estimate(model, samples, seed, method)
    method = method or ("uniform" if model.is_uniform else "general")
    if method == "uniform":
        bound = eta(model.n, model.m)
        applies = True
        label = "eta"
    else:
        _, var = exact_moments(model)
        bound = C_gamma(model.gamma) ** 2 / var
        applies = all(general_flags(model).values())
        label = "C(gamma)^2/Var"
    se = est.delta_sq_se
    slack = bound - est.delta_sq
    margin = slack / se if se > 0 else (math.inf if slack >= 0 else -math.inf)
    passed = est.delta_sq <= bound + SE_ALLOWANCE * se
    return CheckReport(
        "delta_surrogate", 1, margin, "standard errors", passed, [seed],
        [{"model": model.to_json_dict(), "delta_sq": est.delta_sq, "delta_sq_se": se,
          "bound": bound, "bound_kind": label, "hypotheses_hold": applies, **est.as_dict()}],
    )


# ---------------------------------------------------------------------------
# covariance inequalities
# ---------------------------------------------------------------------------


def occupancy_law(model: UrnModel) -> np.ndarray:
    """``P[X_1 = x, M_1 = k]`` as an ``(m, n)`` array."""
    k = np.arange(model.n)
    levels, group = np.unique(model.p, return_inverse=True)
    rows = np.array([stats.binom.pmf(k, model.n - 1, pv) for pv in levels])
    return model.p[:, None] * rows[group]


def psi_library(model: UrnModel) -> dict[str, np.ndarray]:
    """Test functions as ``(m, n)`` tables over urn ``x`` and co-occupancy ``k = 0..n-1``."""
    n, m = model.n, model.m
    k = np.arange(n)
    lib = {
        "ind_M0": (k == 0).astype(float),
        "ind_M1": (k == 1).astype(float),
    }
    for i in (0, 1, 2, 3, 6):
        lib[f"h{i}"] = h_basic(i, k)
    out = {name: np.broadcast_to(v, (m, n)).copy() for name, v in lib.items()}
    if n >= 2:
        fam = HFamily(model)
        for i in (4, 5, 7):
            out[f"h{i}"] = fam.table(i)[:, :n].copy()
        if not model.is_uniform:
            hat = hat_p(model)
            tilde4 = fam.table(4)[:, 1:] / np.arange(1, n + 1)
            out["hat_h4_tilde"] = hat[:, None] * tilde4
            out["np_ind_M0"] = (n * model.p)[:, None] * (k == 0)
    return out


def _center(table: np.ndarray, law: np.ndarray) -> np.ndarray:
    return table - float(np.sum(table * law))


def _sup(t: np.ndarray) -> float:
    return float(np.max(np.abs(t)))


def _rng(t: np.ndarray) -> float:
    return float(t.max() - t.min())


def covariance_bound(model: UrnModel, family: str, psi1: np.ndarray, others: list[np.ndarray]) -> float:
    """Right-hand side of the two-ball (``pair``) or four-ball (``quad``) correlation inequality."""
    n, m = model.n, model.m
    norms = math.prod(_sup(t) for t in others)
    if model.is_uniform:
        k = 2 if family == "pair" else 4
        if m < k:
            raise PreconditionError(f"the uniform {family} bound needs m >= {k}")
        return (k - 1) / m * norms * _rng(psi1) * (2.0 + n / (m - k + 1) + n / m)
    factor = 3.0 if family == "pair" else 9.0
    return factor * (1.0 + model.gamma) * _rng(psi1) * norms * model.sum_p_squared


def covariance_bound_check(
    model: UrnModel,
    family: str,
    samples: int,
    seed: int,
    threads: int = 1,
    library: dict[str, np.ndarray] | None = None,
) -> CheckReport:
    """Monte Carlo ``|E prod psi_i(X_i, M_i)|`` against its bound for every library combination.

    ``psi_1`` is centered with the exact law of ``(X_1, M_1)``. For ``quad``
    the last three factors share one library member. Each allocation
    contributes the average over disjoint blocks of 2 (or 4) consecutive
    balls, which is unbiased by exchangeability and i.i.d. across
    allocations.
    """
    if family not in ("pair", "quad"):
        raise ValueError("family must be 'pair' or 'quad'")
    k = 2 if family == "pair" else 4
    n, m = model.n, model.m
    if n < k:
        raise PreconditionError(f"{family} check needs n >= {k}")
    lib = library if library is not None else psi_library(model)
    law = occupancy_law(model)
    names = list(lib)
    combos = list(itertools.product(names, names))
    centered = {nm: _center(lib[nm], law) for nm in names}
    blocks = n // k

    def work(rng, size):
        x = sample_urns(model, rng, (size, n))
        flat = (np.arange(size)[:, None] * m + x).ravel()
        counts = np.bincount(flat, minlength=size * m).reshape(size, m)
        mm = np.take_along_axis(counts, x, axis=1) - 1
        xb = x[:, : blocks * k].reshape(size, blocks, k)
        mb = mm[:, : blocks * k].reshape(size, blocks, k)
        sums = np.empty((len(combos), 2))
        for c, (a, b) in enumerate(combos):
            v = centered[a][xb[..., 0], mb[..., 0]]
            t = lib[b]
            for j in range(1, k):
                v = v * t[xb[..., j], mb[..., j]]
            per = v.mean(axis=1)
            sums[c] = per.sum(), np.dot(per, per)
        return sums

    totals = sum(run_chunks(work, chunked(samples, max(1, (1 << 20) // n)), seed, threads))
    details = []
    worst = math.inf
    ok = True
    for c, (a, b) in enumerate(combos):
        mean = totals[c, 0] / samples
        var = max(totals[c, 1] / samples - mean * mean, 0.0) * samples / (samples - 1)
        se = math.sqrt(var / samples)
        bound = covariance_bound(model, family, centered[a], [lib[b]] * (k - 1))
        slack = bound - abs(mean)
        margin = slack / se if se > 0 else (math.inf if slack >= -1e-15 else -math.inf)
        passed = abs(mean) <= bound + SE_ALLOWANCE * se + 1e-15
        ok &= passed
        worst = min(worst, margin)
        details.append({"psi1": a, "psi_rest": b, "estimate": mean, "se": se, "bound": bound, "passed": passed})
    return CheckReport(
        f"covariance_{family}", len(combos), worst, "standard errors", bool(ok), [seed],
        [{"model": model.to_json_dict()}] + details,
    )


# ---------------------------------------------------------------------------
# rate of convergence
# ---------------------------------------------------------------------------


def rate_check(
    n_list=DEFAULT_RATE_NS,
    samples: int = 100_000,
    seed: int = 0,
    threads: int = 1,
) -> CheckReport:
    """Log-log slope of the Monte Carlo distance against ``n`` for ``m = n``.

    Passes when the slope lies in ``[-0.70, -0.30]`` and every estimate is
    at least three times its 99% DKW radius.
    """
    ns = sorted(set(int(v) for v in n_list))
    if len(ns) < 2:
        raise PreconditionError("rate_check needs at least two values of n to fit a slope")
    if samples < 2:
        raise PreconditionError("samples must be >= 2")
    rows = []
    for idx, n in enumerate(ns):
        model = uniform(n, n)
        s = mc_run(model, samples, seed + idx, threads, standardize="exact")
        _, var = exact_moments(model)
        rows.append({"n": n, "d_hat": s.d_hat, "radius": s.d_radius, "sigma": math.sqrt(var), "seed": seed + idx})
    logn = np.log([r["n"] for r in rows])
    logd = np.log([r["d_hat"] for r in rows])
    slope = float(np.polyfit(logn, logd, 1)[0])
    snr_ok = all(r["d_hat"] >= RATE_SNR * r["radius"] for r in rows)
    lo, hi = RATE_SLOPE_RANGE
    slope_ok = lo <= slope <= hi
    details: list[dict[str, Any]] = [{"slope": slope, "slope_range": [lo, hi]}] + rows
    scaled = [r["d_hat"] * r["sigma"] for r in rows]
    details[0]["d_sigma_ratios"] = [b / a for a, b in zip(scaled, scaled[1:])]
    if not snr_ok:
        weakest = min(r["d_hat"] for r in rows)
        need = math.ceil(math.log(2.0 / 0.01) / (2.0 * (weakest / RATE_SNR) ** 2))
        details[0]["required_samples"] = need
        details[0]["reason"] = f"distance below {RATE_SNR} DKW radii; about {need} samples per n needed"
    margin = min(slope - lo, hi - slope)
    return CheckReport(
        "rate", len(rows), margin, "slope distance to range edge", bool(snr_ok and slope_ok),
        [r["seed"] for r in rows], details,
    )


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------


def run_suite(
    samples: int,
    seed: int,
    threads: int = 1,
    checks: tuple[str, ...] = ("sizebias", "increment", "delta", "covariance", "rate"),
    progress: Callable[[CheckReport], None] | None = None,
) -> list[CheckReport]:
    """Run the default battery. ``samples`` scales every Monte Carlo size."""
    reports: list[CheckReport] = []

    def add(r: CheckReport):
        reports.append(r)
        if progress:
            progress(r)

    if "sizebias" in checks:
        for i, model in enumerate(coupling_grid()):
            add(sizebias_law_check(model, samples, seed + 10 * i, threads=threads))
    if "increment" in checks:
        for i, model in enumerate(coupling_grid()[:6]):
            for meth in couplers_for(model):
                add(conditional_increment_check(model, 10, max(1000, samples // 10), seed + 7 * i, meth, samples))
    if "delta" in checks:
        add(delta_check(uniform(100, 100), max(samples // 10, 100), seed))
        add(delta_check(flagged_general_model(), max(samples // 100, 100), seed))
    if "covariance" in checks:
        for i, model in enumerate([uniform(8, 6), uniform(20, 20), explicit(9, GRID_PROBABILITIES[4])]):
            for fam in ("pair", "quad"):
                add(covariance_bound_check(model, fam, samples, seed + i, threads))
    if "rate" in checks:
        add(rate_check(DEFAULT_RATE_NS, samples, seed, threads))
    return reports


def flagged_general_model(n: int = 2000, m: int = 4000) -> UrnModel:
    """Two-level non-uniform model meeting ``max p <= 1/11`` and ``n >= threshold`` (``gamma = 1``)."""
    w = np.where(np.arange(m) % 2 == 0, 1.0, 2.0)
    return explicit(n, w / w.sum())

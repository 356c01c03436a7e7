"""Explicit normal-approximation and variance bounds for the non-isolated count.

Every numeric constant lives in :data:`CONSTANTS`. Bounds are always
evaluated; whether their hypotheses hold is reported next to the value,
never enforced by refusing to compute.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Any

from .errors import PreconditionError
from .exact import distance_lower_bound
from .model import UrnModel

CONSTANTS: dict[str, float] = {
    # Stein size-bias bound: 0.4 B/s + (mu/s^2)(64 B^2/s + 4 B^3/s^2 + 23 Delta)
    "stein_linear": 0.4,
    "stein_quadratic": 64.0,
    "stein_cubic": 4.0,
    "stein_delta": 23.0,
    "stein_precondition": 6.0,
    # uniform-case bound (B = 2)
    "uniform_B": 2.0,
    "uniform_linear": 0.8,
    "uniform_quadratic": 256.0,
    "uniform_cubic": 32.0,
    "uniform_precondition": 24.0,
    # eta(n, m)
    "eta_n": 16.0,
    "eta_pairs": 4.0,
    "eta_m": 24.0,
    # proportional-growth limit
    "coro_linear": 0.8,
    "coro_cubic": 256.0,
    "coro_delta": 92.0,
    # general case
    "general_B": 3.0,
    "general_ratio": 8165.0,
    "general_exp": 2.1,
    "general_base": 577.0,
    "general_proof_base": 576.0,
    "general_proof_sigma": 108.0,
    "general_proof_linear": 1.2,
    "p_max": 1.0 / 11.0,
    "n_factor": 83.0,
    "n_exp": 1.05,
    "var_upper": 8.0,
    "var_lower": 7776.0,
    "C_scale": 10.0,
}

# reported value for the proportional-growth constant at alpha = 1; an
# independent evaluation of the same expression gives about 2106.3
PUBLISHED_CORO1_AT_ONE = 2236


def eta(n: int, m: int) -> float:
    """``16/n + 4/(n(n-1)) + (24/m)(2 + n/(m-3) + n/m)``."""
    if n < 2:
        raise PreconditionError(f"eta needs n >= 2, got n={n}")
    if m < 4:
        raise PreconditionError(f"eta needs m >= 4 (m - 3 appears in a denominator), got m={m}")
    c = CONSTANTS
    return c["eta_n"] / n + c["eta_pairs"] / (n * (n - 1)) + c["eta_m"] / m * (2.0 + n / (m - 3) + n / m)


def stein_terms(mu: float, sigma: float, B: float, Delta: float) -> dict[str, float]:
    c = CONSTANTS
    ratio = mu / sigma**2
    return {
        "linear": c["stein_linear"] * B / sigma,
        "quadratic": ratio * c["stein_quadratic"] * B**2 / sigma,
        "cubic": ratio * c["stein_cubic"] * B**3 / sigma**2,
        "delta": ratio * c["stein_delta"] * Delta,
    }


def stein_precondition(mu: float, sigma: float, B: float) -> bool:
    """``B <= sigma**1.5 / sqrt(6 mu)``."""
    return B <= sigma**1.5 / math.sqrt(CONSTANTS["stein_precondition"] * mu)


def goldstein_bound(mu: float, sigma: float, B: float, Delta: float) -> float:
    """Kolmogorov bound from a size-bias coupling with ``|W^s - W| <= B``.

    Raises
    ------
    PreconditionError
        If an input is not positive (``Delta`` may be 0) or
        ``B > sigma**1.5 / sqrt(6 mu)``.
    """
    if mu <= 0 or sigma <= 0 or B <= 0 or Delta < 0:
        raise PreconditionError("need mu, sigma, B > 0 and Delta >= 0")
    if not stein_precondition(mu, sigma, B):
        raise PreconditionError(
            f"B <= sigma^(3/2)/sqrt(6 mu) fails: B={B}, bound={sigma**1.5 / math.sqrt(6 * mu):.6g}"
        )
    t = stein_terms(mu, sigma, B, Delta)
    return math.fsum(t.values())


@dataclass
class BoundReport:
    """A family of evaluated bounds with their hypotheses."""

    name: str
    context: dict[str, Any] = field(default_factory=dict)
    flags: dict[str, bool] = field(default_factory=dict)
    values: dict[str, float] = field(default_factory=dict)
    components: dict[str, dict[str, float]] = field(default_factory=dict)
    verdicts: dict[str, str] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "context": self.context,
            "flags": self.flags,
            "values": self.values,
            "components": self.components,
            "verdicts": self.verdicts,
            "notes": self.notes,
        }


def _distance_verdict(value: float, holds: bool) -> str:
    if not holds:
        return "hypotheses not met"
    return "vacuous (exceeds 1)" if value > 1.0 else "informative"


def thm1_bound(n: int, m: int, mu: float, sigma: float) -> BoundReport:
    """Uniform-case distance bound ``0.8/s + (mu/s^2)(256/s + 32/s^2 + 23 sqrt(eta))``.

    Applies when ``sigma**3 >= 24 mu``; the flag is reported, not enforced.
    """
    c = CONSTANTS
    e = eta(n, m)
    ratio = mu / sigma**2
    comps = {
        "linear": c["uniform_linear"] / sigma,
        "quadratic": ratio * c["uniform_quadratic"] / sigma,
        "cubic": ratio * c["uniform_cubic"] / sigma**2,
        "delta": ratio * c["stein_delta"] * math.sqrt(e),
    }
    value = math.fsum(comps.values())
    holds = sigma**3 >= c["uniform_precondition"] * mu
    rep = BoundReport(
        name="uniform_distance_upper",
        context={"n": n, "m": m, "mu": mu, "sigma": sigma, "eta": e},
        flags={"sigma3_ge_24mu": holds},
        values={"distance_upper": value},
        components={"distance_upper": comps},
        verdicts={"distance_upper": _distance_verdict(value, holds)},
    )
    if m < 4:
        rep.notes.append("m < 4")
    return rep


def g_alpha(alpha: float) -> float:
    """``sqrt(e^-a - e^-2a (a^2 - a + 1))``, the limiting ``sigma / sqrt(n)`` for ``n/m -> a``."""
    if not alpha > 0:
        raise PreconditionError(f"alpha must be positive, got {alpha!r}")
    # e^-a (1 - e^-a (a^2 - a + 1)), written to avoid cancellation at small a
    inner = -math.expm1(-alpha) - math.exp(-alpha) * alpha * (alpha - 1.0)
    g2 = math.exp(-alpha) * inner
    if not g2 > 0:
        raise ArithmeticError(f"g(alpha)^2 = {g2} is not positive at alpha={alpha}")
    return math.sqrt(g2)


def coro1_terms(alpha: float) -> dict[str, float]:
    c = CONSTANTS
    g = g_alpha(alpha)
    occ = -math.expm1(-alpha)
    return {
        "linear": c["coro_linear"] / g,
        "cubic": c["coro_cubic"] * occ / g**3,
        "delta": c["coro_delta"] * occ / g**2 * math.sqrt(1.0 + 3.0 * alpha * (1.0 + alpha)),
    }


def coro1_rhs(alpha: float) -> float:
    """Limit of ``sqrt(n)`` times the uniform distance bound as ``n/m -> alpha``."""
    return math.fsum(coro1_terms(alpha).values())


def eta_limit(alpha: float) -> float:
    """Limit of ``n eta(n, m)`` as ``n/m -> alpha``: ``16 + 24 alpha (2 + 2 alpha)``."""
    return 16.0 + 24.0 * alpha * (2.0 + 2.0 * alpha)


def C_gamma(gamma: float) -> float:
    """``10 sqrt(82 g^7 + 82 g^6 + 80 g^5 + 47 g^4 + 12 g^3 + 12 g^2)``."""
    g = gamma
    poly = 82 * g**7 + 82 * g**6 + 80 * g**5 + 47 * g**4 + 12 * g**3 + 12 * g**2
    return CONSTANTS["C_scale"] * math.sqrt(poly)


def n_threshold(gamma: float) -> int:
    """Smallest integer ``n >= 83 g^2 (1 + 3g + 3g^2) e^(1.05 g)``."""
    c = CONSTANTS
    return math.ceil(c["n_factor"] * gamma**2 * (1 + 3 * gamma + 3 * gamma**2) * math.exp(c["n_exp"] * gamma))


def general_flags(model: UrnModel) -> dict[str, bool]:
    g = model.gamma
    return {
        "p_max_le_1_11": model.p_max <= CONSTANTS["p_max"],
        "n_ge_threshold": model.n >= n_threshold(g),
    }


def thm2_report(model: UrnModel, sigma: float) -> BoundReport:
    """Lower bound (always valid) and general-case upper bound on the distance."""
    if not sigma > 0:
        raise PreconditionError("sigma must be positive")
    c = CONSTANTS
    g = model.gamma
    Cg = C_gamma(g)
    lead = c["general_ratio"] * g**2 * math.exp(c["general_exp"] * g)
    comps = {
        "base": lead * c["general_base"] / sigma,
        "delta": lead * c["stein_delta"] * Cg / sigma,
    }
    upper = math.fsum(comps.values())
    flags = general_flags(model)
    holds = all(flags.values())
    lower = distance_lower_bound(sigma)
    rep = BoundReport(
        name="general_distance",
        context={"n": model.n, "m": model.m, "gamma": g, "sigma": sigma, "C_gamma": Cg, "n_threshold": n_threshold(g)},
        flags=flags,
        values={"distance_lower": lower, "distance_upper": upper},
        components={"distance_lower": {"lower": lower}, "distance_upper": comps},
        verdicts={"distance_lower": "always valid", "distance_upper": _distance_verdict(upper, holds)},
    )
    rep.notes.extend(model.warnings)
    return rep


def check_proof_constants() -> None:
    """Confirm ``1.2 = 0.4 B``, ``576 = 64 B^2`` and ``108 = 4 B^3`` with ``B = 3``, in exact decimals."""
    c = {k: Fraction(repr(v)) for k, v in CONSTANTS.items()}
    B = c["general_B"]
    pairs = [
        ("general_proof_linear", c["stein_linear"] * B),
        ("general_proof_base", c["stein_quadratic"] * B**2),
        ("general_proof_sigma", c["stein_cubic"] * B**3),
    ]
    for key, expected in pairs:
        if c[key] != expected:
            raise ArithmeticError(f"constant {key}={CONSTANTS[key]} differs from {float(expected)}")


def general_proof_form(gamma: float, sigma: float) -> float:
    """The intermediate bound ``(1.2 + 8165 g^2 e^(2.1 g)(576 + 108/s + 23 C)) / s``.

    It is dominated by the general upper bound once
    ``sigma >= 108 / (1 - 1.2 / (8165 g^2 e^(2.1 g)))``, just above 108.
    """
    c = CONSTANTS
    check_proof_constants()
    lead = c["general_ratio"] * gamma**2 * math.exp(c["general_exp"] * gamma)
    inner = c["general_proof_base"] + c["general_proof_sigma"] / sigma + c["stein_delta"] * C_gamma(gamma)
    return (c["general_proof_linear"] + lead * inner) / sigma


def variance_bounds(model: UrnModel) -> BoundReport:
    """``Var Y <= 8 n^2 sum p^2`` always; a matching lower bound under the general hypotheses."""
    c = CONSTANTS
    n, g = model.n, model.gamma
    scale = n * n * model.sum_p_squared
    upper = c["var_upper"] * scale
    lower = scale / (c["var_lower"] * g**2 * math.exp(c["general_exp"] * g))
    flags = general_flags(model)
    rep = BoundReport(
        name="variance",
        context={"n": n, "m": model.m, "gamma": g, "n2_sum_p2": scale, "n_threshold": n_threshold(g)},
        flags=flags,
        values={"variance_upper": upper, "variance_lower": lower},
        components={"variance_upper": {"upper": upper}, "variance_lower": {"lower": lower}},
        verdicts={
            "variance_upper": "always valid",
            "variance_lower": "valid" if all(flags.values()) else "hypotheses not met",
        },
    )
    rep.notes.extend(model.warnings)
    return rep


def coro1_report(alpha: float) -> BoundReport:
    terms = coro1_terms(alpha)
    g = g_alpha(alpha)
    rep = BoundReport(
        name="proportional_limit",
        context={"alpha": alpha},
        values={"g": g, "g_squared": g * g, "limsup_sqrt_n_distance": math.fsum(terms.values()), "n_eta_limit": eta_limit(alpha)},
        components={"limsup_sqrt_n_distance": terms},
        verdicts={"limsup_sqrt_n_distance": "asymptotic"},
    )
    if alpha == 1.0:
        rep.context["published_value_at_alpha_1"] = PUBLISHED_CORO1_AT_ONE
        rep.notes.append(
            f"published rounded value {PUBLISHED_CORO1_AT_ONE} differs from the evaluated "
            f"{math.fsum(terms.values()):.4f}"
        )
    return rep

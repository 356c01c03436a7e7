"""Independent oracles shared by the test modules.

Nothing here imports the package's numerical routines: the oracles work in
exact rational arithmetic over every outcome of a small model.
"""

from __future__ import annotations

import itertools
from collections import Counter
from fractions import Fraction
from math import comb



def nonisolated(urns) -> int:
    c = Counter(urns)
    return sum(1 for u in urns if c[u] > 1)


def brute_pmf(n: int, probs) -> dict[int, Fraction]:
    """Law of ``Y`` by summing over all ``m**n`` allocations, in exact fractions."""
    probs = [Fraction(q) for q in probs]
    out: dict[int, Fraction] = {}
    for urns in itertools.product(range(len(probs)), repeat=n):
        w = Fraction(1)
        for u in urns:
            w *= probs[u]
        y = nonisolated(urns)
        out[y] = out.get(y, Fraction(0)) + w
    return out


def moments(pmf: dict[int, Fraction]) -> tuple[Fraction, Fraction]:
    mu = sum(k * q for k, q in pmf.items())
    return mu, sum(k * k * q for k, q in pmf.items()) - mu * mu


def size_biased(pmf: dict[int, Fraction]) -> dict[int, Fraction]:
    mu, _ = moments(pmf)
    return {k: k * q / mu for k, q in pmf.items() if k > 0 and q > 0}


def binom_pmf(nu: int, p: Fraction, k: int) -> Fraction:
    return comb(nu, k) * p**k * (1 - p) ** (nu - k)


def pi_definition(nu: int, p: Fraction) -> list[Fraction]:
    """``pi_k`` straight from its defining ratio, ``pi_nu = 0``."""
    pk = [binom_pmf(nu, p, k) for k in range(nu + 1)]
    p0 = pk[0]
    out = []
    for k in range(nu):
        tail = sum(pk[k + 1:])
        cond_tail = tail / (1 - p0)
        out.append((cond_tail - tail) / (pk[k] * (1 - Fraction(k, nu))))
    out.append(Fraction(0))
    return out


UNIFORM_SMALL = [(2, 2), (3, 2), (4, 2), (3, 3), (4, 3), (5, 3), (4, 4), (5, 5), (6, 4)]
GENERAL_SMALL = [
    (2, ("7/10", "3/10")),
    (5, ("7/10", "3/10")),
    (4, ("1/2", "1/4", "1/4")),
    (5, ("2/5", "3/10", "1/5", "1/10")),
]


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance criterion lines at the end of the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])

"""Urn occupancy model, allocations and the non-isolated ball count.

Urns are indexed ``0 .. m-1`` throughout the package.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import ModelError

SUM_TOLERANCE = 1e-9
MIN_URNS_FOR_BOUNDS = 4


@dataclass(frozen=True, eq=False)
class UrnModel:
    """``n`` balls thrown independently into ``m`` urns with probabilities ``p``.

    Instances are immutable; build them with :func:`build_model`,
    :func:`uniform` or :func:`explicit`.
    """

    n: int
    p: np.ndarray
    kind: str
    cdf: np.ndarray = field(repr=False)

    @property
    def m(self) -> int:
        return int(self.p.shape[0])

    @property
    def is_uniform(self) -> bool:
        return self.kind == "uniform"

    @property
    def p_max(self) -> float:
        """``max_x p_x``."""
        return float(self.p.max())

    @property
    def gamma(self) -> float:
        """``max(n * max_x p_x, 1)``."""
        return max(self.n * self.p_max, 1.0)

    @property
    def sum_p_squared(self) -> float:
        return math.fsum(self.p * self.p)

    @property
    def warnings(self) -> list[str]:
        out = []
        if self.m < MIN_URNS_FOR_BOUNDS:
            out.append(f"m={self.m} < {MIN_URNS_FOR_BOUNDS}: outside the regime assumed by the bounds")
        return out

    def to_json_dict(self) -> dict[str, Any]:
        if self.is_uniform:
            urns: dict[str, Any] = {"kind": "uniform", "m": self.m}
        else:
            urns = {"kind": "explicit", "p": [float(v) for v in self.p]}
        return {"n": self.n, "urns": urns}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, UrnModel):
            return NotImplemented
        return (
            self.n == other.n
            and self.kind == other.kind
            and np.array_equal(self.p, other.p)
        )

    def __hash__(self) -> int:
        return hash((self.n, self.kind, self.p.tobytes()))

    def __str__(self) -> str:
        if self.is_uniform:
            return f"UrnModel(n={self.n}, uniform m={self.m})"
        return f"UrnModel(n={self.n}, m={self.m}, p_max={self.p_max:.4g})"


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def uniform(n: int, m: int) -> UrnModel:
    return build_model(n, {"kind": "uniform", "m": m})


def explicit(n: int, p: Sequence[float]) -> UrnModel:
    return build_model(n, {"kind": "explicit", "p": list(p)})


def build_model(n: int, urns: dict[str, Any]) -> UrnModel:
    """Validate and normalize an urn model.

    Parameters
    ----------
    n : int
        Number of balls, at least 1.
    urns : dict
        Either ``{"kind": "uniform", "m": m}`` or
        ``{"kind": "explicit", "p": [...]}``. Explicit probabilities must be
        strictly positive and sum to 1 within ``1e-9``; they are then
        renormalized.

    Raises
    ------
    ModelError
        On any violation of the above.
    """
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise ModelError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    kind = urns.get("kind")
    if kind == "uniform":
        m = urns.get("m")
        if isinstance(m, bool) or not isinstance(m, (int, np.integer)) or m < 1:
            raise ModelError(f"m must be a positive integer, got {m!r}")
        p = np.full(int(m), 1.0 / int(m))
    elif kind == "explicit":
        raw = urns.get("p")
        if raw is None or len(raw) == 0:
            raise ModelError("explicit model needs a non-empty probability vector")
        p = np.asarray(raw, dtype=np.float64).copy()
        if p.ndim != 1:
            raise ModelError("probability vector must be one-dimensional")
        if not np.all(np.isfinite(p)) or np.any(p <= 0.0):
            raise ModelError("probabilities must be finite and strictly positive")
        total = math.fsum(p)
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise ModelError(f"probabilities sum to {total!r}, not 1 within {SUM_TOLERANCE}")
        p = p / total
    else:
        raise ModelError(f"unknown urn kind {kind!r}")
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    return UrnModel(n=n, p=_freeze(p), kind=kind, cdf=_freeze(cdf))


def model_from_json(text_or_obj: str | dict[str, Any]) -> UrnModel:
    """Parse ``{"n": int, "urns": {...}}`` (string or already-decoded)."""
    obj = json.loads(text_or_obj) if isinstance(text_or_obj, str) else text_or_obj
    if not isinstance(obj, dict) or "n" not in obj or "urns" not in obj:
        raise ModelError('model JSON must look like {"n": int, "urns": {...}}')
    if not isinstance(obj["urns"], dict):
        raise ModelError('"urns" must be an object')
    return build_model(obj["n"], obj["urns"])


@dataclass(frozen=True, eq=False)
class Allocation:
    """One realization: ball urns ``x``, urn counts and per-ball co-occupancy."""

    x: np.ndarray
    counts: np.ndarray
    m_of: np.ndarray

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @classmethod
    def from_urns(cls, x: Sequence[int], m: int) -> Allocation:
        x = np.asarray(x, dtype=np.int64)
        if x.ndim != 1 or x.size == 0:
            raise ModelError("allocation needs at least one ball")
        if x.min() < 0 or x.max() >= m:
            raise ModelError(f"urn indices must lie in [0, {m})")
        counts = np.bincount(x, minlength=m)
        m_of = counts[x] - 1
        return cls(x=_freeze(x), counts=_freeze(counts), m_of=_freeze(m_of))


def sample_urns(model: UrnModel, rng: np.random.Generator, size: tuple[int, ...] | int) -> np.ndarray:
    """I.i.d. urn indices with mass function ``model.p`` (inverse CDF)."""
    if model.is_uniform:
        return rng.integers(0, model.m, size=size, dtype=np.int64)
    u = rng.random(size)
    idx = np.searchsorted(model.cdf, u, side="right")
    return np.minimum(idx, model.m - 1)


def sample_allocation(model: UrnModel, rng: np.random.Generator) -> Allocation:
    return Allocation.from_urns(sample_urns(model, rng, model.n), model.m)


def nonisolated_count(alloc: Allocation) -> int:
    """Number of balls sharing their urn with at least one other ball."""
    return int(np.count_nonzero(alloc.m_of > 0))


def nonisolated_from_counts(counts: np.ndarray) -> np.ndarray:
    """``Y = n - #{x : N_x = 1}`` along the last axis of an array of urn counts."""
    counts = np.asarray(counts)
    return counts.sum(axis=-1) - np.count_nonzero(counts == 1, axis=-1)

"""Anonymity set size, the analytic latency model and the equivalence formulas."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import NonIntegralWarning, ParityMismatch
from .overlay import NodeId, Topology


@dataclass(frozen=True)
class ASQuery:
    observer: NodeId
    predecessor: NodeId
    horizon: int

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


def anonymity_profile(topo: Topology, observer: NodeId, predecessor: NodeId, max_horizon: int) -> list[int]:
    """Anonymity set sizes for every horizon ``1..max_horizon`` from one search.

    Breadth-first search runs backwards from ``predecessor`` (in-links for
    C-Tarzan, mimic links for Tarzan) and never enters ``observer``.
    """
    indptr, indices = topo.reverse_csr
    seen = np.zeros(topo.n, dtype=bool)
    seen[observer] = True
    seen[predecessor] = True
    frontier = np.array([predecessor], dtype=np.int64)
    sizes = [1]
    for _ in range(max_horizon - 1):
        if frontier.size:
            starts = indptr[frontier]
            lens = indptr[frontier + 1] - starts
            total = int(lens.sum())
            offsets = np.repeat(starts - (np.cumsum(lens) - lens), lens)
            cand = indices[np.arange(total, dtype=np.int64) + offsets]
            frontier = np.unique(cand[~seen[cand]])
            seen[frontier] = True
        sizes.append(sizes[-1] + int(frontier.size))
    return sizes


def anonymity_set_size(topo: Topology, q: ASQuery) -> int:
    if not topo.has_link(q.predecessor, q.observer):
        raise ValueError(f"no link {q.predecessor}->{q.observer}")
    return anonymity_profile(topo, q.observer, q.predecessor, q.horizon)[-1]


def interpolate_as(h: float, as_floor: float, as_ceil: float) -> float:
    """Geometric interpolation of the anonymity set between integer horizons."""
    frac = h - math.floor(h)
    if frac == 0 or as_floor == as_ceil:
        return float(as_floor)
    return as_floor * (as_ceil / as_floor) ** frac


class BoundMode(enum.Enum):
    EVEN = "even"
    ODD = "odd"
    AVERAGE = "average"


def _pair_cost(d: float) -> float:
    # expected return hops per two forward hops, halved: (1/d * 1 + (d-1)/d * 4) / 2
    return 2 - 3 / (2 * d)


def tarzan_latency(h: int, tau: float = 1.0) -> tuple[float, float]:
    """(forward, return) latency; both directions share the tunnel."""
    if h < 1 or tau <= 0:
        raise ValueError("need h >= 1 and tau > 0")
    lat = (h + 2) * tau
    return lat, lat


def ctarzan_forward_latency(hprime: int, tau: float = 1.0) -> float:
    if hprime < 1 or tau <= 0:
        raise ValueError("need hprime >= 1 and tau > 0")
    return (hprime + 2) * tau


def ctarzan_return_latency_bound(hprime: int, d: float, tau: float = 1.0,
                                 mode: BoundMode = BoundMode.AVERAGE, strict: bool = True) -> float:
    """Upper bound of the C-Tarzan return latency.

    EVEN and ODD are the parity-specific forms; AVERAGE weighs both parities
    equally and is the bound the experiments compare against. ``strict=False``
    evaluates a parity form at any ``hprime``.
    """
    mode = BoundMode(mode)
    if hprime < 1 or d < 1 or tau <= 0:
        raise ValueError("need hprime >= 1, d >= 1 and tau > 0")
    if mode is BoundMode.EVEN:
        if strict and hprime % 2:
            raise ParityMismatch(f"hprime={hprime} is odd")
        return (hprime * _pair_cost(d) + 2) * tau
    if mode is BoundMode.ODD:
        if strict and hprime % 2 == 0:
            raise ParityMismatch(f"hprime={hprime} is even")
        return ((hprime - 1) * _pair_cost(d) + 4) * tau
    return (hprime * _pair_cost(d) + 3 / (4 * d) + 2) * tau


@dataclass(frozen=True)
class LatencyModel:
    tau: float
    h: int
    hprime: int
    d: float
    wf: float
    wr: float

    def __post_init__(self):
        if self.tau <= 0 or self.d < 1 or abs(self.wf + self.wr - 2) > 1e-9:
            raise ValueError("need tau > 0, d >= 1 and wf + wr = 2")

    @property
    def tarzan(self) -> tuple[float, float]:
        return tarzan_latency(self.h, self.tau)

    @property
    def ctarzan(self) -> tuple[float, float]:
        return (ctarzan_forward_latency(self.hprime, self.tau),
                ctarzan_return_latency_bound(self.hprime, self.d, self.tau))

    def weighted(self) -> tuple[float, float]:
        """Weighted latency of (Tarzan, C-Tarzan)."""
        return (weighted_latency(self.wf, self.wr, *self.tarzan),
                weighted_latency(self.wf, self.wr, *self.ctarzan))


def weighted_latency(wf: float, wr: float, lf: float, lr: float) -> float:
    if abs(wf + wr - 2) > 1e-9:
        raise ValueError(f"weights must sum to 2, got {wf} + {wr}")
    return wf * lf + wr * lr


def equivalent_kprime(k) -> Fraction:
    """C-Tarzan selection count giving the same link count as Tarzan with ``k``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    value = Fraction(2, 3) * Fraction(k)
    if value.denominator != 1:
        warnings.warn(f"k={k} is not a multiple of 3; k'={value} is fractional", NonIntegralWarning,
                      stacklevel=2)
    return value


def equivalent_k(kprime) -> Fraction:
    if kprime < 0:
        raise ValueError("kprime must be >= 0")
    value = Fraction(3, 2) * Fraction(kprime)
    if value.denominator != 1:
        warnings.warn(f"k'={kprime} gives fractional k={value}", NonIntegralWarning, stacklevel=2)
    return value


def predicted_hprime(h: float, d: float, wf: float, wr: float) -> float:
    """C-Tarzan tunnel length matching Tarzan's weighted latency under the bound."""
    denom = wf + (4 * d - 3) / (2 * d) * wr
    if denom <= 0:
        raise ValueError("non-positive denominator")
    return (2 * h - 3 / (4 * d) * wr) / denom


def required_tarzan_h(weighted_l: float, tau: float = 1.0) -> float:
    """Real-valued Tarzan tunnel length whose weighted latency is ``weighted_l``."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    return (weighted_l - 4 * tau) / (2 * tau)


def cover_traffic(topo: Topology) -> int:
    """Unidirectional link count; a Tarzan mimic pair counts twice."""
    return topo.total_links

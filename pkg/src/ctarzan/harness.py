"""Paired Tarzan / C-Tarzan experiments under equal cover traffic and latency.

For a C-Tarzan configuration the harness measures degree, hop counts and the
anonymity set over several rounds, derives the Tarzan parameters that match
its cover traffic and weighted latency, measures Tarzan the same way and
reports the anonymity set ratio.

Every round draws from its own random streams, keyed by (seed, round, kind,
tunnel length), so grouping configurations to share topologies never changes
a result.
"""

from __future__ import annotations

import csv
import logging
import math
import random
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import EquivalenceViolation, NonIntegralK, UnknownPreset
from .metrics import (
    anonymity_profile,
    interpolate_as,
    required_tarzan_h,
    weighted_latency,
)
from .overlay import Kind, Topology, build_topology, selection_param
from .routing import Tunnel, compute_return_route, forward_hop_count, random_tunnel, return_hop_count

log = logging.getLogger(__name__)

FULL_SCALE_N = 100_000
EQUIVALENCE_PCT = 1.0
WF_SERIES = (1.5, 1.6, 1.7, 1.8, 1.9)
# integer k' only; n = 10,000 saturates the anonymity set beyond d = 9
D_SWEEP = {"desk": (3, 6, 9), "paper": (3, 6, 9, 12)}
HPRIME_SWEEP = (2, 3, 4, 5, 6, 7)
SCALES = {"desk": (10_000, 20), "paper": (FULL_SCALE_N, 100)}


class EquivalenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 10_000
    kprime: Fraction = Fraction(2)
    hprime: int = 4
    wf: float = 1.9
    rounds: int = 20
    seed: int = 0
    tau: float = 1.0
    samples_per_round: int = 100

    def __post_init__(self):
        object.__setattr__(self, "kprime", selection_param(self.kprime))
        if min(self.n, self.hprime, self.rounds, self.samples_per_round) < 1:
            raise ValueError("n, hprime, rounds and samples_per_round must be >= 1")
        if not 1 <= self.wf <= 2:
            raise ValueError(f"wf must lie in [1, 2], got {self.wf}")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")

    @property
    def wr(self) -> float:
        return 2 - self.wf


@dataclass(frozen=True)
class RoundStats:
    round: int
    d: float
    cover: int
    forward_hops: float
    return_hops: float
    anonymity: float
    tunnels: tuple[Tunnel, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class Aggregate:
    """Means over rounds for one protocol at one tunnel length."""

    kind: Kind
    param: Fraction
    length: int
    d: float
    cover: float
    forward_hops: float
    return_hops: float
    anonymity: float
    rounds: tuple[RoundStats, ...] = field(repr=False)

    @classmethod
    def of(cls, kind: Kind, param: Fraction, length: int, rounds: Sequence[RoundStats]) -> "Aggregate":
        def mean(attr):
            return sum(getattr(r, attr) for r in rounds) / len(rounds)

        return cls(kind, param, length, mean("d"), mean("cover"), mean("forward_hops"),
                   mean("return_hops"), mean("anonymity"), tuple(rounds))

    def weighted_latency(self, wf: float, tau: float = 1.0) -> float:
        return weighted_latency(wf, 2 - wf, self.forward_hops * tau, self.return_hops * tau)


@dataclass(frozen=True)
class ComparisonRow:
    d: float
    h_prime: int
    w_f: float
    k_prime: float
    k: float
    h_real: float
    as_prime: float
    as_floor: float
    as_ceil: float
    as_interp: float
    ratio: float
    cover_ct: int
    cover_t: int
    cover_err_pct: float
    lat_ct: float
    lat_t: float
    lat_err_pct: float

    @property
    def as_tarzan(self) -> float:
        return self.as_interp


CSV_COLUMNS = tuple(f.name for f in fields(ComparisonRow))


def _stream(kind: Kind, seed: int, rnd: int, length: int) -> random.Random:
    return random.Random(f"{kind.value}:{seed}:{rnd}:{length}")


def measure_round(topo: Topology, rnd: int, lengths: Iterable[int], samples: int, seed: int,
                  keep_tunnels: bool = False) -> dict[int, RoundStats]:
    """Sample ``samples`` tunnels per length on one topology.

    The anonymity set is seen from the last relay, which received the cell
    from the second-to-last tunnel node, with the tunnel length as horizon.
    """
    d = topo.total_links / topo.n
    out = {}
    for length in lengths:
        rng = _stream(topo.kind, seed, rnd, length)
        fwd = ret = anon = 0
        kept = []
        for _ in range(samples):
            tunnel = random_tunnel(topo, length, rng)
            fwd += forward_hop_count(tunnel)
            ret += return_hop_count(compute_return_route(topo, tunnel))
            nodes = tunnel.nodes
            anon += anonymity_profile(topo, nodes[-1], nodes[-2], length)[-1]
            if keep_tunnels:
                kept.append(tunnel)
        out[length] = RoundStats(rnd, d, topo.total_links, fwd / samples, ret / samples,
                                 anon / samples, tuple(kept))
    return out


def _round_job(args) -> dict[int, RoundStats]:
    kind, n, param, seed, rnd, lengths, samples, keep, dump_dir = args
    topo = build_topology(kind, n, param, seed + rnd)
    if dump_dir is not None:
        from .overlay import dump_topology

        with open(Path(dump_dir) / f"{kind.value}-{param.numerator}_{param.denominator}-r{rnd}.txt",
                  "w") as fh:
            dump_topology(topo, fh)
    return measure_round(topo, rnd, lengths, samples, seed, keep)


def _run_rounds(kind: Kind, n: int, param: Fraction, seed: int, rounds: int, lengths: Sequence[int],
                samples: int, *, workers: int = 1, keep_tunnels: bool = False, dump_dir=None,
                factory: Callable[[int], Topology] | None = None) -> dict[int, Aggregate]:
    lengths = sorted(set(lengths))
    if factory is not None:
        per_round = [measure_round(factory(r), r, lengths, samples, seed, keep_tunnels)
                     for r in range(rounds)]
    else:
        jobs = [(kind, n, param, seed, r, lengths, samples, keep_tunnels, dump_dir)
                for r in range(rounds)]
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                per_round = list(pool.map(_round_job, jobs))
        else:
            per_round = [_round_job(job) for job in jobs]
    return {h: Aggregate.of(kind, param, h, [pr[h] for pr in per_round]) for h in lengths}


def run_ctarzan_rounds(cfg: ExperimentConfig, *, factory: Callable[[int], Topology] | None = None,
                       workers: int = 1, keep_tunnels: bool = False) -> Aggregate:
    """Mean degree, hop counts and anonymity set of C-Tarzan over ``cfg.rounds``.

    Round ``r`` uses a fresh topology seeded with ``cfg.seed + r`` unless a
    ``factory`` supplies the topologies.
    """
    return _run_rounds(Kind.CTARZAN, cfg.n, cfg.kprime, cfg.seed, cfg.rounds, [cfg.hprime],
                       cfg.samples_per_round, workers=workers, keep_tunnels=keep_tunnels,
                       factory=factory)[cfg.hprime]


def run_tarzan_rounds(cfg: ExperimentConfig, k, h: int, *, workers: int = 1,
                      keep_tunnels: bool = False) -> Aggregate:
    if h < 1 or int(h) != h:
        raise ValueError(f"Tarzan tunnel length must be a positive integer, got {h}")
    return _run_rounds(Kind.TARZAN, cfg.n, selection_param(k), cfg.seed, cfg.rounds, [int(h)],
                       cfg.samples_per_round, workers=workers, keep_tunnels=keep_tunnels)[int(h)]


def derive_tarzan_params(cfg: ExperimentConfig, ct: Aggregate, *,
                         allow_fractional: bool = False) -> tuple[Fraction, float]:
    """Tarzan ``k`` with the same cover traffic and real ``h`` with the same
    weighted latency as the measured C-Tarzan aggregate."""
    k = Fraction(3, 2) * cfg.kprime
    if k.denominator != 1 and not allow_fractional:
        raise NonIntegralK(f"k' = {cfg.kprime} gives non-integral k = {k}")
    h_real = required_tarzan_h(ct.weighted_latency(cfg.wf, cfg.tau), cfg.tau)
    return k, h_real


def _pct(a: float, b: float) -> float:
    return abs(a - b) / b * 100 if b else 0.0


def _group_key(cfg: ExperimentConfig):
    return (cfg.n, cfg.kprime, cfg.seed, cfg.rounds, cfg.samples_per_round)


def compare_many(cfgs: Sequence[ExperimentConfig], *, workers: int = 1, allow_fractional: bool = True,
                 strict: bool = True, dump_dir=None, keep_tunnels: bool = False):
    """Compare every configuration, sharing topologies between configurations
    that differ only in tunnel length or weights.

    Returns ``(rows, details)`` where ``details[i]`` holds the aggregates
    behind ``rows[i]``. Raises EquivalenceViolation at full scale when cover
    traffic or latency differ by more than 1%; the exception carries the rows.
    """
    groups: dict[tuple, list[int]] = {}
    for i, cfg in enumerate(cfgs):
        groups.setdefault(_group_key(cfg), []).append(i)
    rows: list[ComparisonRow | None] = [None] * len(cfgs)
    details: list[dict | None] = [None] * len(cfgs)
    for (n, kprime, seed, rounds, samples), members in groups.items():
        log.info("C-Tarzan n=%d k'=%s: %d configs", n, kprime, len(members))
        ct = _run_rounds(Kind.CTARZAN, n, kprime, seed, rounds, [cfgs[i].hprime for i in members],
                         samples, workers=workers, keep_tunnels=keep_tunnels, dump_dir=dump_dir)
        derived = {}
        for i in members:
            derived[i] = derive_tarzan_params(cfgs[i], ct[cfgs[i].hprime],
                                              allow_fractional=allow_fractional)
        k = derived[members[0]][0]
        needed = set()
        for _, h_real in derived.values():
            if h_real < 1:
                raise ValueError(f"derived Tarzan tunnel length {h_real:.3f} < 1")
            needed.update({math.floor(h_real), math.ceil(h_real)})
        log.info("Tarzan n=%d k=%s: lengths %s", n, k, sorted(needed))
        tz = _run_rounds(Kind.TARZAN, n, k, seed, rounds, sorted(needed), samples, workers=workers,
                         keep_tunnels=keep_tunnels, dump_dir=dump_dir)
        for i in members:
            cfg = cfgs[i]
            rows[i] = _row(cfg, ct[cfg.hprime], k, derived[i][1], tz)
            details[i] = {"ctarzan": ct[cfg.hprime], "tarzan_floor": tz[math.floor(derived[i][1])],
                          "tarzan_ceil": tz[math.ceil(derived[i][1])]}
    full_scale = []
    for r, cfg in zip(rows, cfgs):
        if max(r.cover_err_pct, r.lat_err_pct) <= EQUIVALENCE_PCT:
            continue
        if cfg.n >= FULL_SCALE_N:
            full_scale.append(r)
        else:
            warnings.warn(f"equivalence error above {EQUIVALENCE_PCT}% at n={cfg.n}: "
                          f"cover {r.cover_err_pct:.2f}%, latency {r.lat_err_pct:.2f}%",
                          EquivalenceWarning, stacklevel=2)
    if strict and full_scale:
        exc = EquivalenceViolation(f"{len(full_scale)} configuration(s) exceed {EQUIVALENCE_PCT}%")
        exc.rows = rows
        raise exc
    return rows, details


def _row(cfg: ExperimentConfig, ct: Aggregate, k: Fraction, h_real: float,
         tz: dict[int, Aggregate]) -> ComparisonRow:
    lo, hi = tz[math.floor(h_real)], tz[math.ceil(h_real)]
    as_interp = interpolate_as(h_real, lo.anonymity, hi.anonymity)
    frac = h_real - math.floor(h_real)
    lat_lo, lat_hi = lo.weighted_latency(cfg.wf, cfg.tau), hi.weighted_latency(cfg.wf, cfg.tau)
    lat_t = lat_lo + (lat_hi - lat_lo) * frac
    lat_ct = ct.weighted_latency(cfg.wf, cfg.tau)
    return ComparisonRow(
        d=ct.d,
        h_prime=cfg.hprime,
        w_f=cfg.wf,
        k_prime=float(cfg.kprime),
        k=float(k),
        h_real=h_real,
        as_prime=ct.anonymity,
        as_floor=lo.anonymity,
        as_ceil=hi.anonymity,
        as_interp=as_interp,
        ratio=ct.anonymity / as_interp,
        cover_ct=round(ct.cover),
        cover_t=round(lo.cover),
        cover_err_pct=_pct(lo.cover, ct.cover),
        lat_ct=lat_ct,
        lat_t=lat_t,
        lat_err_pct=_pct(lat_t, lat_ct),
    )


def compare(cfg: ExperimentConfig, **kwargs) -> ComparisonRow:
    rows, _ = compare_many([cfg], **kwargs)
    return rows[0]


def _sweep(scale: str, seed: int, samples: int, points) -> list[ExperimentConfig]:
    n, rounds = SCALES[scale]
    return [ExperimentConfig(n=n, kprime=Fraction(d, 3), hprime=hp, wf=wf, rounds=rounds, seed=seed,
                             samples_per_round=samples) for d, hp, wf in points]


PRESETS = {
    "ratio_vs_d_h3": lambda s: [(d, 3, wf) for d in D_SWEEP[s] for wf in WF_SERIES],
    "ratio_vs_d_h4": lambda s: [(d, 4, wf) for d in D_SWEEP[s] for wf in WF_SERIES],
    "ratio_vs_d_h5": lambda s: [(d, 5, wf) for d in D_SWEEP[s] for wf in WF_SERIES],
    "as_vs_hprime_d4": lambda s: [(4, hp, wf) for hp in HPRIME_SWEEP for wf in (1.5, 1.9)],
    "ratio_vs_hprime_d3": lambda s: [(3, hp, wf) for hp in HPRIME_SWEEP for wf in WF_SERIES],
    "ratio_vs_hprime_d4": lambda s: [(4, hp, wf) for hp in HPRIME_SWEEP for wf in WF_SERIES],
    "ratio_vs_hprime_d5": lambda s: [(5, hp, wf) for hp in HPRIME_SWEEP for wf in WF_SERIES],
}


def preset_figure(name: str, scale: str = "desk", *, seed: int = 0,
                  samples: int = 100) -> list[ExperimentConfig]:
    """Configurations behind one figure.

    ``d`` is realised as ``k' = d/3``. The ``d`` sweeps stay on integer
    ``k'``; the fixed ``d = 4`` and ``d = 5`` figures use the fractional-quota
    selection variant.
    """
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}; choose from {sorted(SCALES)}")
    try:
        points = PRESETS[name](scale)
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return _sweep(scale, seed, samples, points)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_csv(rows: Sequence[ComparisonRow], path) -> Path:
    if not rows:
        raise ValueError("nothing to write")
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(_fmt(getattr(row, col)) for col in CSV_COLUMNS)
    return path


def read_csv(path) -> list[ComparisonRow]:
    types = {f.name: f.type for f in fields(ComparisonRow)}
    out = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(ComparisonRow(**{
                col: int(rec[col]) if types[col] in ("int", int) else float(rec[col])
                for col in CSV_COLUMNS
            }))
    return out

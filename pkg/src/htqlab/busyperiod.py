"""Joint law of (busy-period duration, arrivals served) at constant drain rate.

When the workload drains at a constant rate p (the linear regime, or a
pessimistic constant-rate comparison system), the M/G/1 busy-period argument
gives the joint density over (duration t, count n): the n-th component is
the n-fold convolution of the normalized travel-distance law weighted by the
Poisson factor, with a separate closed form when the first period starts
from a fixed initial workload instead of a sampled distance.

Point-mass travel distances keep everything exact: each per-count component
is a single atom whose weight is evaluated at its exact (pre-rounding) time,
which reproduces the Borel count distribution of an M/D/1 busy period.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .dist import GriddedPdf, SpatialDistribution, convolve, unit_atom
from .errors import NumericError

DEFAULT_N_MAX = 64


def _poisson_weight(lam: float, t, n: int):
    """exp(-lam*t) (lam*t)^(n-1) / n!, stable for large n via lgamma."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    if n == 1:
        out[pos] = np.exp(-lam * t[pos])
        out[t == 0] = 1.0
    else:
        lt = lam * t[pos]
        with np.errstate(divide="ignore"):
            out[pos] = np.exp(-lt + (n - 1) * np.log(lt) - math.lgamma(n + 1))
    return out


def _weighted(g: GriddedPdf, weight_fn) -> GriddedPdf:
    nodes = np.arange(len(g.values)) * g.step
    vals = g.values * weight_fn(nodes)
    atoms = [(t, m * float(weight_fn(np.array([t]))[0])) for t, m in g.atoms]
    atoms = [(t, m) for t, m in atoms if m > 0]
    return GriddedPdf(g.step, vals, atoms, g.trunc_loss)


@dataclass
class BusyDist:
    """per_n[n] is the sub-density of (duration, exactly n-1 new arrivals)."""

    p_rate: float
    lam: float
    theta_kind: str              # 'psi' | 'initial'
    w0: float | None
    per_n: dict[int, GriddedPdf]
    n_max: int
    truncation_report: dict

    def mass(self, n: int) -> float:
        return self.per_n[n].mass

    def total_mass(self) -> float:
        return sum(g.mass for g in self.per_n.values())

    def cumulative(self, n: int, ts) -> np.ndarray:
        """H(t, n): probability the period ends by t with n-1 arrivals."""
        return self.per_n[n].cdf(ts)


def build(p_rate: float, lam: float, psi: SpatialDistribution,
          theta="psi", n_max: int = DEFAULT_N_MAX,
          grid: tuple[float, float] | None = None) -> BusyDist:
    """Construct the per-count duration laws at constant drain rate p_rate.

    theta is 'psi' (period initiated by a sampled distance) or
    ('initial', w0) for a first period starting from workload w0 > 0.
    grid is (h, t_max) in time units; default h scales the normalized
    distance law to ~200 nodes per mean and t_max covers n_max services.
    """
    if p_rate <= 0:
        raise ValueError("p_rate must be positive")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    w0 = None
    if theta != "psi":
        kind, w0 = theta
        if kind != "initial":
            raise ValueError(f"unknown theta {theta!r}")
        if w0 <= 0:
            raise ValueError("initial workload must be positive")
    psi_t = psi.scaled(p_rate)
    if grid is None:
        h = psi_t.default_step()
        t_max = max(n_max * psi_t.support_hi, h) + (w0 / p_rate if w0 else 0.0)
    else:
        h, t_max = grid
    base_cap = max(t_max, psi_t.support_hi, h)
    psig = psi_t.to_grid(h, max(psi_t.support_hi, h))

    shift = None
    if w0 is not None:
        shift = GriddedPdf(h, np.zeros(1), [(w0 / p_rate, 1.0)])

    per_n: dict[int, GriddedPdf] = {}
    conv_loss = 0.0
    fold = unit_atom(h)   # psi_tilde convolved (n-1) or n times, iteratively
    for n in range(1, n_max + 1):
        if w0 is None:
            fold = convolve(fold, psig, t_cap=base_cap, allow_truncation=True)
            comp = _weighted(fold, lambda ts, n=n: _poisson_weight(lam, ts, n))
        else:
            shifted = convolve(fold, shift, t_cap=base_cap, allow_truncation=True)

            def wfn(ts, n=n):
                w = _poisson_weight(lam, ts, n) * w0 / p_rate
                out = np.zeros_like(ts)
                pos = ts > 0
                out[pos] = w[pos] * n / ts[pos]   # (lam t)^{n-1}/(t (n-1)!) = n/t * ()/n!
                return out

            comp = _weighted(shifted, wfn)
            fold = convolve(fold, psig, t_cap=base_cap, allow_truncation=True)
        conv_loss += fold.trunc_loss
        per_n[n] = comp

    acc = sum(g.mass for g in per_n.values())
    report = {
        "mass_accounted": acc,
        "t_truncation_bound": conv_loss,
        "n_tail": max(0.0, 1.0 - acc - conv_loss),
    }
    return BusyDist(p_rate, lam, "psi" if w0 is None else "initial", w0,
                    per_n, n_max, report)


def r_fold(bd: BusyDist, r: int, n: int, allow_truncation: bool = False) -> GriddedPdf:
    """Time-convolution of the n-th component with itself r times: the law of
    r consecutive such periods' total duration. Mass is mass(n)^r."""
    if r < 1:
        raise ValueError("r must be >= 1")
    if n not in bd.per_n:
        raise ValueError(f"n={n} beyond n_max={bd.n_max}")
    g = bd.per_n[n]
    out = g
    cap = g.t_hi if allow_truncation else None
    for _ in range(r - 1):
        out = convolve(out, g, t_cap=cap, allow_truncation=allow_truncation)
    return out


def mixed_first_period(bd1: BusyDist, bd2: BusyDist, r: int, n: int,
                       allow_truncation: bool = False) -> GriddedPdf:
    """First period from bd1 (initial-workload law) followed by r-1 periods
    from bd2: the convolution of their duration laws at count n."""
    if r < 1:
        raise ValueError("r must be >= 1")
    g1 = bd1.per_n[n]
    if r == 1:
        return g1
    g2r = r_fold(bd2, r - 1, n, allow_truncation=allow_truncation)
    if abs(g1.step - g2r.step) > 1e-12 * max(g1.step, g2r.step):
        raise NumericError(f"grid mismatch: {g1.step} vs {g2r.step}")
    cap = max(g1.t_hi, g2r.t_hi) if allow_truncation else None
    return convolve(g1, g2r, t_cap=cap, allow_truncation=allow_truncation)


def tail_sum(grids, t_from: float) -> float:
    """Sum over components of the mass at durations >= t_from (atoms at
    exactly t_from included). Mass already lost to grid truncation is not
    counted, which can only understate the tail."""
    if t_from < 0:
        raise ValueError("t_from must be >= 0")
    vals = grids.values() if isinstance(grids, dict) else grids
    return float(sum(g.tail_mass(t_from) for g in vals))


def linear_moments(L: float, lam: float, psi: SpatialDistribution) -> tuple[float, float]:
    """(mean busy-period duration, long-run idle fraction) in the linear
    regime with drain rate L."""
    mb = psi.mean
    if mb <= 0:
        raise ValueError("psi must have positive mean")
    if lam * mb >= L:
        raise NumericError(f"unstable: lam*mean = {lam * mb} >= L = {L}, no finite mean")
    return (mb / (L - lam * mb), 1.0 - lam * mb / L)


def borel_pmf(mu: float, n: int) -> float:
    """Total count of an M/D/1 busy period: e^{-mu n}(mu n)^{n-1}/n!."""
    return math.exp(-mu * n + (n - 1) * math.log(mu * n) - math.lgamma(n + 1))


def write_components_csv(bd: BusyDist, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "kind", "t", "density_or_mass"])
        for n, g in sorted(bd.per_n.items()):
            for k, v in enumerate(g.values):
                if v > 0:
                    w.writerow([n, "node", k * g.step, v])
            for t, mass in g.atoms:
                w.writerow([n, "atom", t, mass])


def summary_json(bd: BusyDist, path=None) -> dict:
    data = {
        "p_rate": bd.p_rate,
        "lambda": bd.lam,
        "theta": bd.theta_kind,
        "w0": bd.w0,
        "n_max": bd.n_max,
        "masses": {n: bd.mass(n) for n in sorted(bd.per_n)},
        "truncation_report": bd.truncation_report,
    }
    if path is not None:
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2)
    return data

"""Spatial distributions on nonnegative intervals.

Three roles share one representation: arrival locations on [0, l], travel
distances on [0, R], and initial-workload laws. Continuous laws can be
discretized onto a uniform grid for n-fold convolution work; point masses
stay symbolic (exact location and mass) and are never smeared onto the grid,
so deterministic travel distances convolve exactly.

Grid semantics are lattice-style: a `GriddedPdf` assigns mass ``h * values[k]``
to node ``k*h`` plus its atoms. Under this convention discrete convolution is
exactly mass-multiplicative and the size-biased convolution identity
(integral of z*f(z)*f_{n-1}(t-z) equal to (t/n)*f_n(t)) holds to float
round-off on the lattice, which the downstream busy-period engine relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError, NumericError

#: |mass - 1| tolerance for a grid that claims to be a normalized density.
MASS_TOL = 1e-9

#: Default grid resolution: step = mean / GRID_POINTS_PER_MEAN.
GRID_POINTS_PER_MEAN = 200

_FFT_THRESHOLD = 1 << 14  # len(a)*len(b) above which fftconvolve wins


def node_index(t: float, h: float) -> int:
    """Nearest grid node to ``t``, ties resolved toward the lower index."""
    return max(0, int(math.ceil(t / h - 0.5 - 1e-12)))


@dataclass
class GriddedPdf:
    """Density samples on the uniform lattice {0, h, 2h, ...} plus point masses.

    ``atoms`` is a list of ``(time, mass)`` pairs; times are exact
    (pre-rounding) locations. ``trunc_loss`` accumulates mass known to have
    been dropped by grid truncation during convolutions.
    """

    step: float
    values: np.ndarray
    atoms: list[tuple[float, float]] = field(default_factory=list)
    trunc_loss: float = 0.0

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("grid step must be positive")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or len(self.values) == 0:
            raise ValueError("values must be a nonempty 1-D array")
        if np.any(self.values < 0):
            raise ValueError("density values must be nonnegative")
        if any(m < 0 or t < -1e-12 for t, m in self.atoms):
            raise ValueError("atoms need nonnegative time and mass")

    @property
    def t_hi(self) -> float:
        """Upper end of the lattice (atoms may lie beyond it)."""
        return (len(self.values) - 1) * self.step

    @property
    def grid_mass(self) -> float:
        return float(self.step * self.values.sum())

    @property
    def atom_mass(self) -> float:
        return float(sum(m for _, m in self.atoms))

    @property
    def mass(self) -> float:
        return self.grid_mass + self.atom_mass

    @property
    def support_hi(self) -> float:
        """Largest location carrying mass (0.0 for an all-zero grid)."""
        nz = np.nonzero(self.values)[0]
        hi = nz[-1] * self.step if len(nz) else 0.0
        if self.atoms:
            hi = max(hi, max(t for t, m in self.atoms if m > 0), hi)
        return float(hi)

    @property
    def lattice_mean(self) -> float:
        nodes = np.arange(len(self.values)) * self.step
        tot = self.step * float(nodes @ self.values)
        tot += sum(t * m for t, m in self.atoms)
        return tot / self.mass

    def atom_nodes(self) -> list[tuple[int, float]]:
        """Atoms as (node index, mass) under the ties-to-lower rounding rule."""
        return [(node_index(t, self.step), m) for t, m in self.atoms]

    def normalized(self) -> "GriddedPdf":
        m = self.mass
        if m <= 0:
            raise ValueError("cannot normalize a zero-mass grid")
        return GriddedPdf(
            self.step,
            self.values / m,
            [(t, w / m) for t, w in self.atoms],
            self.trunc_loss,
        )

    def require_normalized(self):
        if abs(self.mass - 1.0) > MASS_TOL:
            raise ValueError(f"grid mass {self.mass!r} is not 1 within {MASS_TOL}")

    def tail_mass(self, t_from: float) -> float:
        """Total mass at locations >= t_from (nodes and atoms at exactly
        t_from included)."""
        k0 = int(math.ceil(t_from / self.step - 1e-12))
        grid = self.step * float(self.values[max(k0, 0):].sum()) if k0 < len(self.values) else 0.0
        return grid + float(sum(m for t, m in self.atoms if t >= t_from - 1e-12))

    def cdf(self, ts) -> np.ndarray:
        """Lattice CDF: mass at locations <= t."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        cum = np.concatenate([[0.0], np.cumsum(self.step * self.values)])
        idx = np.floor(ts / self.step + 1e-12).astype(int)
        idx = np.clip(idx + 1, 0, len(cum) - 1)
        out = cum[idx]
        for t, m in self.atoms:
            out = out + m * (ts >= t - 1e-12)
        return out

    def sample(self, rng: np.random.Generator, size=None):
        """Inverse-CDF draw from the lattice law (values land on nodes or
        atom locations)."""
        positions = np.arange(len(self.values)) * self.step
        weights = self.step * self.values
        if self.atoms:
            positions = np.concatenate([positions, [t for t, _ in self.atoms]])
            weights = np.concatenate([weights, [m for _, m in self.atoms]])
        cum = np.cumsum(weights)
        u = rng.uniform(0.0, cum[-1], size=size)
        idx = np.searchsorted(cum, u, side="right")
        idx = np.minimum(idx, len(positions) - 1)
        return positions[idx] if size is not None else float(positions[idx])


def _conv_dense(a: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    if len(a) * len(b) > _FFT_THRESHOLD:
        out = fftconvolve(a, b)
        np.maximum(out, 0.0, out=out)  # clamp fft round-off
    else:
        out = np.convolve(a, b)
    return out * h


def convolve(a: GriddedPdf, b: GriddedPdf, t_cap: float | None = None,
             allow_truncation: bool = False) -> GriddedPdf:
    """Lattice convolution of two grids sharing the same step.

    The dense part is ``h * conv(values)``; atoms convolve exactly against
    atoms and shift the partner's dense part by their (rounded) node offset.
    With ``t_cap`` the dense result is cut at that horizon; the dropped mass
    goes to ``trunc_loss`` (or raises when truncation is not allowed).
    """
    if abs(a.step - b.step) > 1e-12 * max(a.step, b.step):
        raise NumericError(f"grid step mismatch: {a.step} vs {b.step}")
    h = a.step
    n_out = len(a.values) + len(b.values) - 1
    if t_cap is not None:
        n_keep = node_index(t_cap, h) + 1
    else:
        n_keep = n_out

    dense = np.zeros(max(n_keep, 1))
    dropped = 0.0

    def _accumulate(arr: np.ndarray, shift: int, scale: float):
        nonlocal dropped
        if scale == 0.0:
            return
        end = min(len(dense), shift + len(arr))
        if shift < len(dense):
            dense[shift:end] += scale * arr[: end - shift]
        dropped_part = scale * h * float(arr[max(end - shift, 0):].sum())
        dropped += dropped_part

    full = _conv_dense(a.values, b.values, h)
    _accumulate(full, 0, 1.0)
    for t, m in a.atoms:
        _accumulate(b.values, node_index(t, h), m)
    for t, m in b.atoms:
        _accumulate(a.values, node_index(t, h), m)
    atoms = [(ta + tb, ma * mb) for ta, ma in a.atoms for tb, mb in b.atoms if ma * mb > 0]

    if dropped > 0 and not allow_truncation:
        raise NumericError(
            f"convolution overflows the grid: need t_max >= {(n_out - 1) * h:.6g}"
        )
    loss = dropped + a.trunc_loss * max(b.mass, 0.0) + b.trunc_loss * max(a.mass, 0.0)
    return GriddedPdf(h, dense, atoms, loss)


def unit_atom(h: float) -> GriddedPdf:
    """Convolution identity: all mass at the origin."""
    return GriddedPdf(h, np.zeros(1), [(0.0, 1.0)])


def n_fold_convolve(p: GriddedPdf, n: int) -> GriddedPdf:
    """n-fold self-convolution on p's own lattice.

    n = 0 gives the unit atom at 0 and n = 1 gives p back. The result is
    kept on p's grid; if n times the support does not fit, this raises with
    the horizon that would be required.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return unit_atom(p.step)
    if n == 1:
        return p
    p.require_normalized()
    required = n * p.support_hi
    if len(p.values) > 1 and required > p.t_hi + 0.5 * p.step:
        raise NumericError(
            f"grid overflow: {n}-fold support {required:.6g} exceeds grid "
            f"t_max {p.t_hi:.6g}; rebuild the grid with t_max >= {required:.6g}"
        )
    out = p
    for _ in range(n - 1):
        out = convolve(out, p, t_cap=p.t_hi, allow_truncation=True)
    return out


@dataclass(frozen=True)
class SpatialDistribution:
    """A probability law on a bounded nonnegative interval.

    kind is one of 'dirac', 'uniform', 'grid'. ``density_bound`` is a sup
    bound on the density where one exists (None for point masses).
    """

    kind: str
    point: float = 0.0
    lo: float = 0.0
    hi: float = 0.0
    grid: GriddedPdf | None = None

    @staticmethod
    def dirac(point: float) -> "SpatialDistribution":
        if point < 0:
            raise ValueError("dirac point must be >= 0")
        return SpatialDistribution("dirac", point=point)

    @staticmethod
    def uniform(lo: float, hi: float) -> "SpatialDistribution":
        if not 0 <= lo < hi:
            raise ValueError("uniform needs 0 <= lo < hi")
        return SpatialDistribution("uniform", lo=lo, hi=hi)

    @staticmethod
    def from_grid(grid: GriddedPdf) -> "SpatialDistribution":
        grid.require_normalized()
        return SpatialDistribution("grid", grid=grid)

    @staticmethod
    def from_density(fn, support_hi: float, h: float) -> "SpatialDistribution":
        """Discretize a density function by cell averages (Simpson per cell)
        and normalize. Convenience for smooth or piecewise-linear laws."""
        n = int(round(support_hi / h)) + 1
        nodes = np.arange(n) * h
        lo_e = np.maximum(nodes - h / 2, 0.0)
        hi_e = np.minimum(nodes + h / 2, support_hi)
        width = hi_e - lo_e
        f = np.vectorize(fn)
        vals = np.where(
            width > 0,
            (f(lo_e) + 4.0 * f((lo_e + hi_e) / 2) + f(hi_e)) / 6.0 * (width / h),
            0.0,
        )
        return SpatialDistribution.from_grid(GriddedPdf(h, vals).normalized())

    @property
    def support_hi(self) -> float:
        if self.kind == "dirac":
            return self.point
        if self.kind == "uniform":
            return self.hi
        return self.grid.support_hi

    @property
    def mean(self) -> float:
        if self.kind == "dirac":
            return self.point
        if self.kind == "uniform":
            return 0.5 * (self.lo + self.hi)
        return self.grid.lattice_mean

    @property
    def density_bound(self) -> float | None:
        if self.kind == "dirac":
            return None
        if self.kind == "uniform":
            return 1.0 / (self.hi - self.lo)
        if self.grid.atoms:
            return None
        return float(self.grid.values.max())

    def sample(self, rng: np.random.Generator, size=None):
        if self.kind == "dirac":
            if size is None:
                return self.point
            return np.full(size, self.point)
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi, size=size)
        return self.grid.sample(rng, size=size)

    def to_grid(self, h: float, t_max: float) -> GriddedPdf:
        """Discretize onto the lattice {0, h, ..., ~t_max}.

        Point masses become symbolic atoms at the nearest node (exact time
        kept); continuous densities are cell-averaged and renormalized.
        """
        if h <= 0:
            raise ValueError("h must be positive")
        if t_max < self.support_hi - 1e-12:
            raise NumericError(
                f"support truncated: t_max {t_max:.6g} < support {self.support_hi:.6g}"
            )
        n = node_index(t_max, h) + 1
        if self.kind == "dirac":
            return GriddedPdf(h, np.zeros(n), [(self.point, 1.0)])
        if self.kind == "uniform":
            nodes = np.arange(n) * h
            overlap = np.minimum(nodes + h / 2, self.hi) - np.maximum(nodes - h / 2, self.lo)
            vals = np.clip(overlap, 0.0, None) / ((self.hi - self.lo) * h)
            return GriddedPdf(h, vals).normalized()
        g = self.grid
        if abs(g.step - h) > 1e-12 * max(g.step, h):
            raise NumericError(
                f"grid distribution has step {g.step}; resampling to {h} is not supported"
            )
        vals = np.zeros(n)
        m = min(n, len(g.values))
        vals[:m] = g.values[:m]
        return GriddedPdf(h, vals, list(g.atoms), g.trunc_loss)

    def scaled(self, p_rate: float) -> "SpatialDistribution":
        """Law of X / p_rate: support and mean divide by the rate."""
        if p_rate <= 0:
            raise ValueError("p_rate must be positive")
        if self.kind == "dirac":
            return SpatialDistribution.dirac(self.point / p_rate)
        if self.kind == "uniform":
            return SpatialDistribution.uniform(self.lo / p_rate, self.hi / p_rate)
        g = self.grid
        return SpatialDistribution.from_grid(
            GriddedPdf(
                g.step / p_rate,
                g.values * p_rate,
                [(t / p_rate, m) for t, m in g.atoms],
                g.trunc_loss,
            )
        )

    def default_step(self) -> float:
        """Recommended lattice step: mean / 200 (support / 200 when the law
        is concentrated near zero)."""
        scale = self.mean if self.mean > 0 else self.support_hi
        if scale <= 0:
            return 1.0 / GRID_POINTS_PER_MEAN
        return scale / GRID_POINTS_PER_MEAN

    def to_config(self) -> dict:
        if self.kind == "dirac":
            return {"kind": "dirac", "point": self.point}
        if self.kind == "uniform":
            return {"kind": "uniform", "lo": self.lo, "hi": self.hi}
        return {
            "kind": "grid",
            "h": self.grid.step,
            "values": self.grid.values.tolist(),
            "atoms": [list(a) for a in self.grid.atoms],
        }


def scale_workload(d: SpatialDistribution, p_rate: float) -> SpatialDistribution:
    """Functional alias for SpatialDistribution.scaled."""
    return d.scaled(p_rate)


def from_config(obj, path: str = "distribution") -> SpatialDistribution:
    """Build a distribution from its JSON form; raises ConfigError with the
    offending field path."""
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError(f"{path}: expected an object with a 'kind' field")
    kind = obj["kind"]
    try:
        if kind == "dirac":
            return SpatialDistribution.dirac(float(obj["point"]))
        if kind == "uniform":
            return SpatialDistribution.uniform(float(obj["lo"]), float(obj["hi"]))
        if kind == "grid":
            grid = GriddedPdf(
                float(obj["h"]),
                np.asarray(obj["values"], dtype=float),
                [tuple(map(float, a)) for a in obj.get("atoms", [])],
            )
            return SpatialDistribution.from_grid(grid.normalized())
    except KeyError as exc:
        raise ConfigError(f"{path}.{exc.args[0]}: missing field") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    raise ConfigError(f"{path}.kind: unknown kind {kind!r}")

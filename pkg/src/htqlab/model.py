"""Ring-road queue state, continuous dynamics between jumps, and jump rules.

Vehicles sit on a circle of circumference L in a fixed cyclic order. Each
vehicle moves at speed y^m where y is the gap to the vehicle directly in
front, so total workload drains at the state-dependent rate sum(y_i^m).
Between arrivals and departures the gap vector follows
dy_i/dt = y_{i+1}^m - y_i^m; a departure merges its two neighboring gaps and
an arrival splits one.

States are value types: transitions return new states and never mutate.
Headways are carried explicitly through jumps (split/merge arithmetic), so
their sum stays pinned to L instead of drifting through mod-L position
round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dist import SpatialDistribution
from .errors import IntegratorStall, InvariantViolation

HEADWAY_SUM_RTOL = 1e-10       # |sum(y) - L| tolerance, relative to L
MONOTONE_STEP_TOL = 1e-8       # allowed per-step monotonicity slack
DEPART_DIST_TOL = 1e-6         # |traveled - quota| slack at a departure
_CLAMP = 1e-14                 # tiny negative headways snapped to zero


@dataclass(frozen=True)
class HtqParams:
    """One queue instance: ring length, speed exponent, arrival process."""

    L: float
    m: float
    lam: float
    phi: SpatialDistribution
    psi: SpatialDistribution
    x0: tuple[float, ...] = ()

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("L must be positive")
        if self.m <= 0:
            raise ValueError("m must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.phi.support_hi > self.L + 1e-12:
            raise ValueError("arrival-location support exceeds the ring length")
        if any(not 0 <= x <= self.L for x in self.x0):
            raise ValueError("initial positions must lie in [0, L]")

    @property
    def n0(self) -> int:
        return len(self.x0)


@dataclass
class QueueState:
    """Ring occupancy at one instant.

    positions are wrapped to [0, L); index i+1 (cyclically) is the front
    neighbor of index i and headways[i] is that gap. traveled accumulates
    without wrapping so quotas longer than one lap work.
    """

    time: float
    L: float
    positions: np.ndarray
    headways: np.ndarray
    traveled: np.ndarray
    quota: np.ndarray
    ids: np.ndarray

    @staticmethod
    def empty(L: float, time: float = 0.0) -> "QueueState":
        z = np.empty(0)
        return QueueState(time, L, z.copy(), z.copy(), z.copy(), z.copy(),
                          np.empty(0, dtype=np.int64))

    @staticmethod
    def from_ring(L: float, positions, quotas, time: float = 0.0,
                  first_id: int = 0) -> "QueueState":
        """Build a state from raw ring coordinates (any order)."""
        pos = np.mod(np.asarray(positions, dtype=float), L)
        order = np.argsort(pos, kind="stable")
        pos = pos[order]
        quota = np.asarray(quotas, dtype=float)[order]
        ids = np.arange(first_id, first_id + len(pos), dtype=np.int64)
        return QueueState(time, L, pos, _gaps_from_sorted(pos, L),
                          np.zeros(len(pos)), quota, ids)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def workload(self) -> float:
        return float(np.sum(self.quota - self.traveled))

    def check(self):
        if self.n == 0:
            return
        if np.any(self.headways < 0):
            raise InvariantViolation(f"negative headway at t={self.time}")
        if abs(self.headways.sum() - self.L) > HEADWAY_SUM_RTOL * self.L:
            raise InvariantViolation(
                f"headway sum {self.headways.sum()!r} != L={self.L} at t={self.time}"
            )
        if np.any(self.traveled > self.quota + DEPART_DIST_TOL * np.maximum(self.quota, 1.0)):
            raise InvariantViolation(f"vehicle overshot its quota at t={self.time}")


def _gaps_from_sorted(pos: np.ndarray, L: float) -> np.ndarray:
    if len(pos) == 1:
        return np.array([L])
    y = np.diff(pos, append=pos[0] + L)
    # wrap gap absorbs round-off so the sum is exactly L
    y[-1] = L - y[:-1].sum()
    return y


def headways(state: QueueState) -> np.ndarray:
    """Gap vector; a solitary vehicle sees the whole circle."""
    if state.n == 0:
        raise ValueError("no vehicles")
    return state.headways.copy()


def service_rate(y: np.ndarray, m: float) -> float:
    return float(np.sum(np.maximum(y, 0.0) ** m))


def flow_field(y: np.ndarray, m: float) -> np.ndarray:
    """dy/dt: front neighbor's speed minus own speed (sums to zero)."""
    sp = np.maximum(y, 0.0) ** m
    return np.roll(sp, -1) - sp


def service_rate_bounds(L: float, m: float, n: int) -> tuple[float, float]:
    """(lower, upper) bounds over the headway simplex."""
    if n == 0:
        return (0.0, 0.0)
    equal = L ** m * n ** (1.0 - m)
    if m >= 1:
        return (equal, L ** m)
    return (L ** m, equal)


@dataclass(frozen=True)
class RateReport:
    service_rate: float
    workload: float
    y_min: float
    y_max: float


def rate_report(state: QueueState, m: float) -> RateReport:
    y = state.headways
    return RateReport(
        service_rate=service_rate(y, m),
        workload=state.workload,
        y_min=float(y.min()),
        y_max=float(y.max()),
    )


def apply_arrival(state: QueueState, location: float, quota: float,
                  vid: int) -> QueueState:
    """Insert a vehicle preserving cyclic order.

    If the location coincides with an incumbent's position the newcomer is
    placed immediately behind it (the incumbent keeps its front gap).
    """
    L = state.L
    z = location % L
    if state.n == 0:
        return QueueState(
            state.time, L, np.array([z]), np.array([L]), np.zeros(1),
            np.array([float(quota)]), np.array([vid], dtype=np.int64),
        )
    rel = np.mod(state.positions - state.positions[0], L)
    rel[0] = 0.0
    relz = (z - state.positions[0]) % L
    j = int(np.searchsorted(rel, relz, side="left"))
    j = min(j, state.n)  # j == n wraps: front neighbor is index 0
    prev = (j - 1) % state.n
    gap_prev = float(state.headways[prev])
    a = (z - state.positions[prev]) % L
    if state.n == 1:
        a = relz  # single incumbent: mod() cannot tell 0 from L
    a = min(a, gap_prev)
    y = np.insert(state.headways, j, gap_prev - a)
    y[(j - 1) % len(y)] = a
    return QueueState(
        state.time, L,
        np.insert(state.positions, j, z),
        y,
        np.insert(state.traveled, j, 0.0),
        np.insert(state.quota, j, float(quota)),
        np.insert(state.ids, j, vid),
    )


def apply_departure(state: QueueState, vid: int) -> QueueState:
    """Remove a vehicle; its rear and front gaps merge."""
    hits = np.nonzero(state.ids == vid)[0]
    if len(hits) == 0:
        raise ValueError(f"no vehicle with id {vid}")
    k = int(hits[0])
    gap = state.quota[k] - state.traveled[k]
    if abs(gap) > DEPART_DIST_TOL * max(1.0, state.quota[k]):
        raise ValueError(
            f"vehicle {vid} has remaining distance {gap!r}; not at its departure point"
        )
    if state.n == 1:
        return QueueState.empty(state.L, state.time)
    y = state.headways.copy()
    y[(k - 1) % state.n] += y[k]
    return QueueState(
        state.time, state.L,
        np.delete(state.positions, k),
        np.delete(y, k),
        np.delete(state.traveled, k),
        np.delete(state.quota, k),
        np.delete(state.ids, k),
    )


def departure_rate_change_bound(y1: float, y2: float, m: float) -> float:
    """Upper bound on |service-rate jump| when a vehicle with rear gap y1 and
    front gap y2 leaves: (y1+y2)^m (1 - 2^(1-m)) for m>1, min(y1^m, y2^m)
    for m<1."""
    if m > 1:
        return (y1 + y2) ** m * (1.0 - 2.0 ** (1.0 - m))
    return min(y1 ** m, y2 ** m)


def rate_derivative(y: np.ndarray, m: float) -> float:
    """d/dt of the service rate along the gap dynamics."""
    yp = np.maximum(y, 0.0)
    return float(m * np.sum(yp ** (m - 1.0) * (np.roll(yp, -1) ** m - yp ** m)))


def kl_derivative_check(y: np.ndarray, L: float) -> tuple[float, float]:
    """Sensitivity of the rate derivative to the exponent at m=1.

    Returns (analytic, numeric): the analytic value is -L times the KL
    divergence between the normalized gap vector and its cyclic shift; the
    numeric value is a central finite difference with step 1e-5.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("KL undefined: all headways must be positive")
    p = y / L
    analytic = -L * float(np.sum(p * np.log(p / np.roll(p, 1))))
    dm = 1e-5
    numeric = (rate_derivative(y, 1.0 + dm) - rate_derivative(y, 1.0 - dm)) / (2 * dm)
    return analytic, numeric


def pinsker_diagnostic(y: np.ndarray, m: float, L: float) -> tuple[float, float]:
    """Report-only: (d/dt s(y), 2(1-m)/L * (y_max - y_min)^2).

    The claimed inequality lhs >= rhs holds for L < e^-2 and m close enough
    to 1; the admissible range of m is not constructive, so callers report
    violation rates instead of asserting.
    """
    lhs = rate_derivative(y, m)
    rhs = 2.0 * (1.0 - m) / L * float(np.ptp(y)) ** 2
    return lhs, rhs


# ---------------------------------------------------------------------------
# Adaptive Dormand-Prince 5(4) integration with departure events.
# The stepping loop is numba-compiled: event-driven runs cross millions of
# short inter-jump segments and pure-numpy stepping dominates the runtime.
# ---------------------------------------------------------------------------

from numba import njit  # noqa: E402

_DP_A = np.zeros((5, 5))
_DP_A[0, :1] = [1 / 5]
_DP_A[1, :2] = [3 / 40, 9 / 40]
_DP_A[2, :3] = [44 / 45, -56 / 15, 32 / 9]
_DP_A[3, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
_DP_A[4, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                   187 / 2100, 1 / 40])
_DP_E = _DP_B5 - _DP_B4  # error weights

_STATUS_HORIZON = 0
_STATUS_DEPARTURE = 1
_STATUS_STALL = 2
_STATUS_OVERFLOW = 3


@njit(cache=True)
def _rhs(z, out, n, m):
    for i in range(n):
        v = z[i]
        if v < 0.0:
            v = 0.0
        out[n + i] = v ** m
    for i in range(n):
        nxt = out[n + i + 1] if i + 1 < n else out[n]
        out[i] = nxt - out[n + i]


@njit(cache=True)
def _hermite(z0, z1, f0, f1, h, theta, out):
    h00 = (1.0 + 2.0 * theta) * (1.0 - theta) ** 2
    h10 = theta * (1.0 - theta) ** 2
    h01 = theta * theta * (3.0 - 2.0 * theta)
    h11 = theta * theta * (theta - 1.0)
    for j in range(len(z0)):
        out[j] = h00 * z0[j] + h10 * h * f0[j] + h01 * z1[j] + h11 * h * f1[j]


@njit(cache=True)
def _log_step(step_log, row, t, z, n, m):
    s = 0.0
    ymin = z[0]
    ymax = z[0]
    ysum = 0.0
    for i in range(n):
        v = z[i]
        if v < ymin:
            ymin = v
        if v > ymax:
            ymax = v
        ysum += v
        if v < 0.0:
            v = 0.0
        s += v ** m
    step_log[row, 0] = t
    step_log[row, 1] = s
    step_log[row, 2] = ymin
    step_log[row, 3] = ymax
    step_log[row, 4] = ysum
    return s


@njit(cache=True)
def _dp_core(z, quota, n, m, t0, t_end, rtol, atol, eps_t, clamp,
             a_tab, b5, e_w, sample_ts, step_log, sample_log):
    """Advance z = [y, traveled] until t_end or the first quota crossing.

    Returns (t_final, status, accepted_steps, samples_written). z is left at
    the final state. step_log rows are (t, rate, y_min, y_max, y_sum);
    sample_log rows are (t, remaining_workload, rate, y_min, y_max).
    """
    n2 = 2 * n
    k = np.empty((7, n2))
    ztmp = np.empty(n2)
    z1 = np.empty(n2)
    zev = np.empty(n2)
    t = t0
    _rhs(z, k[0], n, m)
    vmax = 1e-8
    for i in range(n):
        if k[0][n + i] > vmax:
            vmax = k[0][n + i]
    h = min(t_end - t, 1.0)
    cap = 0.2 * (z[:n].sum()) / vmax
    if cap < h:
        h = cap
    nrow = 0
    _log_step(step_log, nrow, t, z, n, m)
    nrow += 1
    si = 0
    while si < len(sample_ts) and sample_ts[si] <= t + 1e-15:
        si += 1
    nsamp = 0
    status = _STATUS_HORIZON
    max_rows = step_log.shape[0]

    while True:
        if t_end - t < h:
            h = t_end - t
        if h < 1e-14 * max(1.0, abs(t)):
            status = _STATUS_STALL
            break
        # stages
        for s in range(1, 6):
            for j in range(n2):
                acc = 0.0
                for q in range(s):
                    acc += a_tab[s - 1, q] * k[q, j]
                ztmp[j] = z[j] + h * acc
            _rhs(ztmp, k[s], n, m)
        err_sq = 0.0
        for j in range(n2):
            acc5 = 0.0
            for q in range(6):
                acc5 += b5[q] * k[q, j]
            z1[j] = z[j] + h * acc5
        _rhs(z1, k[6], n, m)
        for j in range(n2):
            e = 0.0
            for q in range(7):
                e += e_w[q] * k[q, j]
            e *= h
            a0 = abs(z[j])
            a1 = abs(z1[j])
            sc = atol + rtol * (a0 if a0 > a1 else a1)
            err_sq += (e / sc) ** 2
        err = math.sqrt(err_sq / n2)
        if err > 1.0:
            fac = 0.9 * err ** -0.2
            if fac < 0.2:
                fac = 0.2
            h *= fac
            continue

        t1 = t + h
        event = False
        for i in range(n):
            if z1[n + i] >= quota[i]:
                event = True
                break
        if event:
            lo = 0.0
            hi = 1.0
            while (hi - lo) * h > eps_t:
                mid = 0.5 * (lo + hi)
                _hermite(z, z1, k[0], k[6], h, mid, zev)
                hit = False
                for i in range(n):
                    if zev[n + i] >= quota[i]:
                        hit = True
                        break
                if hit:
                    hi = mid
                else:
                    lo = mid
            _hermite(z, z1, k[0], k[6], h, hi, zev)
            t1 = t + hi * h

        # samples inside (t, t1]
        while si < len(sample_ts) and sample_ts[si] <= t1 + 1e-15:
            ts = sample_ts[si]
            theta = (ts - t) / h
            if theta > 1.0:
                theta = 1.0
            _hermite(z, z1, k[0], k[6], h, theta, ztmp)
            rem = 0.0
            srate = 0.0
            ymin = ztmp[0]
            ymax = ztmp[0]
            for i in range(n):
                rem += quota[i] - ztmp[n + i]
                v = ztmp[i]
                if v < ymin:
                    ymin = v
                if v > ymax:
                    ymax = v
                if v < 0.0:
                    v = 0.0
                srate += v ** m
            sample_log[nsamp, 0] = ts
            sample_log[nsamp, 1] = rem
            sample_log[nsamp, 2] = srate
            sample_log[nsamp, 3] = ymin
            sample_log[nsamp, 4] = ymax
            nsamp += 1
            si += 1

        if event:
            for j in range(n2):
                z[j] = zev[j]
        else:
            for j in range(n2):
                z[j] = z1[j]
        for i in range(n):
            if z[i] < 0.0:
                z[i] = 0.0
        t = t1
        if nrow >= max_rows:
            status = _STATUS_OVERFLOW
            break
        _log_step(step_log, nrow, t, z, n, m)
        nrow += 1
        if event:
            status = _STATUS_DEPARTURE
            break
        if t >= t_end - 1e-15 * max(1.0, abs(t_end)):
            status = _STATUS_HORIZON
            break
        for j in range(n2):
            k[0, j] = k[6, j]  # FSAL
        if err > 0.0:
            fac = 0.9 * err ** -0.2
            if fac > 5.0:
                fac = 5.0
            elif fac < 0.2:
                fac = 0.2
            h *= fac
        else:
            h *= 5.0
    return t, status, nrow, nsamp


@dataclass
class SegmentResult:
    """Outcome of integrating one inter-jump segment."""

    state: QueueState
    event: str                      # 'departure' or 'horizon'
    departing_ids: list[int] = field(default_factory=list)
    steps: np.ndarray | None = None  # rows (t, s, y_min, y_max) at accepted steps
    samples: list[tuple] = field(default_factory=list)
    violations: dict = field(default_factory=dict)


def _sample_row(t: float, n: int, y: np.ndarray, remaining: float, m: float):
    return (t, n, remaining, service_rate(y, m), float(y.min()), float(y.max()))


def _check_steps(steps: np.ndarray, m: float, L: float, violations: dict):
    """Soft monotonicity checks between accepted steps (integrator-limited,
    so violations are counted, not raised). Rows: (t, s, y_min, y_max, y_sum)."""
    if len(steps) < 2:
        return
    tol = MONOTONE_STEP_TOL * max(1.0, L ** m)
    tol_y = MONOTONE_STEP_TOL * max(1.0, L)
    ds = np.diff(steps[:, 1])
    if (k := int(np.sum(np.diff(steps[:, 2]) < -tol_y))):
        violations["y_min_decreased"] = violations.get("y_min_decreased", 0) + k
    if (k := int(np.sum(np.diff(steps[:, 3]) > tol_y))):
        violations["y_max_increased"] = violations.get("y_max_increased", 0) + k
    if m > 1 and (k := int(np.sum(ds > tol))):
        violations["rate_increased_superlinear"] = (
            violations.get("rate_increased_superlinear", 0) + k)
    if m < 1 and (k := int(np.sum(ds < -tol))):
        violations["rate_decreased_sublinear"] = (
            violations.get("rate_decreased_sublinear", 0) + k)


def _hard_checks(y: np.ndarray, m: float, L: float, t: float):
    n = len(y)
    if abs(y.sum() - L) > HEADWAY_SUM_RTOL * L:
        raise InvariantViolation(f"headway sum drifted from L at t={t}")
    lo, hi = service_rate_bounds(L, m, n)
    s = service_rate(y, m)
    slack = 1e-9 * max(1.0, hi)
    if not (lo - slack <= s <= hi + slack):
        raise InvariantViolation(
            f"service rate {s} outside [{lo}, {hi}] for N={n} at t={t}"
        )


def _hard_checks_log(steps: np.ndarray, m: float, L: float, n: int):
    if np.any(np.abs(steps[:, 4] - L) > HEADWAY_SUM_RTOL * L):
        t = steps[np.argmax(np.abs(steps[:, 4] - L)), 0]
        raise InvariantViolation(f"headway sum drifted from L at t={t}")
    lo, hi = service_rate_bounds(L, m, n)
    slack = 1e-9 * max(1.0, hi)
    s = steps[:, 1]
    if np.any(s < lo - slack) or np.any(s > hi + slack):
        raise InvariantViolation(
            f"service rate left [{lo}, {hi}] for N={n} "
            f"(range [{s.min()}, {s.max()}])"
        )


def _constant_speed_segment(state: QueueState, m: float, t_end: float,
                            speed: float, sample_times, check: bool) -> SegmentResult:
    """Exact path when every vehicle moves at the same constant speed
    (solitary vehicle, or exactly equal gaps)."""
    remaining = state.quota - state.traveled
    t_dep = state.time + float(remaining.min()) / speed if speed > 0 else math.inf
    t_stop = min(t_dep, t_end)
    dt = t_stop - state.time
    traveled = state.traveled + speed * dt
    positions = np.mod(state.positions + speed * dt, state.L)
    new = QueueState(t_stop, state.L, positions, state.headways.copy(),
                     traveled, state.quota.copy(), state.ids.copy())
    samples = []
    if sample_times is not None:
        for ts in sample_times:
            if state.time < ts <= t_stop:
                rem = float(np.sum(state.quota - state.traveled - speed * (ts - state.time)))
                samples.append(_sample_row(ts, state.n, state.headways, rem, m))
    departing = []
    if t_dep <= t_end:
        done = new.quota - new.traveled <= DEPART_DIST_TOL * np.maximum(new.quota, 1.0)
        departing = sorted(int(i) for i in new.ids[done])
        # pin the leaders exactly on their quota
        new.traveled = np.where(done, new.quota, new.traveled)
    if check:
        _hard_checks(new.headways, m, state.L, t_stop)
    row = (t_stop, service_rate(state.headways, m), float(state.headways.min()),
           float(state.headways.max()), float(state.headways.sum()))
    return SegmentResult(new, "departure" if departing else "horizon", departing,
                         np.array([row]), samples, {})


def integrate_to(state: QueueState, m: float, t_end: float, *,
                 sample_times=None, rtol: float = 1e-8, atol: float = 1e-12,
                 check: bool = True) -> SegmentResult:
    """Advance the ring until t_end or the first departure, whichever is
    earlier.

    The first vehicle to exhaust its quota defines a departure event,
    localized by bisection on the step interpolant to an absolute time
    tolerance of 1e-10 * max(1, t_end). Vehicles whose remaining distance is
    within tolerance at that instant are all reported (simultaneity is the
    caller's policy). Positions are re-wrapped mod L; traveled distances
    accumulate unwrapped.
    """
    if t_end < state.time:
        raise ValueError("t_end must not precede the state time")
    if state.n == 0:
        out = QueueState.empty(state.L, t_end)
        return SegmentResult(out, "horizon")
    remaining0 = state.quota - state.traveled
    if np.any(remaining0 <= 0):
        raise ValueError("pending departure at the segment start")
    if t_end == state.time:
        return SegmentResult(state, "horizon")

    L, N = state.L, state.n
    if N == 1:
        return _constant_speed_segment(state, m, t_end, L ** m, sample_times, check)
    if float(np.ptp(state.headways)) <= 1e-13 * L:
        speed = (L / N) ** m
        return _constant_speed_segment(state, m, t_end, speed, sample_times, check)

    eps_t = 1e-10   # absolute, in the model's unit time scale
    quota = state.quota.astype(float)
    if sample_times is None:
        ts_arr = np.empty(0)
    else:
        ts_arr = np.asarray(sample_times, dtype=float)
        ts_arr = ts_arr[(ts_arr > state.time) & (ts_arr <= t_end + 1e-15)]
    sample_log = np.empty((len(ts_arr) + 1, 5))

    rows = 4096
    while True:
        z = np.concatenate([state.headways.astype(float), state.traveled.astype(float)])
        step_log = np.empty((rows, 5))
        t_fin, status, n_steps, n_samp = _dp_core(
            z, quota, N, float(m), float(state.time), float(t_end),
            float(rtol), float(atol), eps_t, _CLAMP,
            _DP_A, _DP_B5, _DP_E, ts_arr, step_log, sample_log)
        if status != _STATUS_OVERFLOW:
            break
        rows *= 8
        if rows > 1 << 23:
            raise IntegratorStall(f"step limit exceeded after t={t_fin}", state=state)

    steps = step_log[:n_steps]
    if status == _STATUS_STALL:
        raise IntegratorStall(
            f"integrator stalled at t={t_fin}",
            state=QueueState(t_fin, L, state.positions.copy(), z[:N].copy(),
                             z[N:].copy(), quota.copy(), state.ids.copy()),
        )

    violations: dict = {}
    if check:
        _hard_checks_log(steps, m, L, N)
        _check_steps(steps, m, L, violations)
    samples = [(row[0], N, row[1], row[2], row[3], row[4])
               for row in sample_log[:n_samp]]

    dtrav = z[N:] - state.traveled
    positions = np.mod(state.positions + dtrav, L)
    out = QueueState(t_fin, L, positions, z[:N].copy(), z[N:].copy(),
                     quota.copy(), state.ids.copy())
    departing: list[int] = []
    if status == _STATUS_DEPARTURE:
        rem = quota - out.traveled
        done = rem <= DEPART_DIST_TOL * np.maximum(quota, 1.0)
        departing = sorted(int(i) for i in out.ids[done])
        out.traveled = np.where(done, quota, out.traveled)
    return SegmentResult(out, "departure" if departing else "horizon",
                         departing, steps, samples, violations)

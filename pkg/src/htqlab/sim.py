"""Event-driven simulation of the ring queue.

One replication advances exactly: Poisson arrival epochs from a dedicated
random substream, arrival locations and travel distances from two more, the
ring integrated between jumps, and departures localized by the integrator's
event detection. Everything observable lands in a Trace: the jump log,
cadence samples, and busy/idle segmentation.

Replications are embarrassingly parallel; seeds are spawned from one root
SeedSequence so results do not depend on scheduling.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvariantViolation, NumericError
from .model import HtqParams, QueueState, apply_arrival, apply_departure, integrate_to

_Z95 = 1.959963984540054


class Event(NamedTuple):
    time: float
    kind: str           # 'arrival' | 'departure'
    vid: int
    location: float
    quota: float


class BusyPeriod(NamedTuple):
    start: float
    end: float | None   # None when still open at the horizon
    arrivals: int       # not counting whoever initiated the period


@dataclass
class Trace:
    events: list[Event] = field(default_factory=list)
    samples: list[tuple] = field(default_factory=list)
    busy_periods: list[BusyPeriod] = field(default_factory=list)
    violations: dict = field(default_factory=dict)

    def completed_busy_periods(self) -> list[BusyPeriod]:
        return [b for b in self.busy_periods if b.end is not None]


@dataclass
class SimOutcome:
    trace: Trace
    max_queue: int
    horizon: float
    seed: int | None
    bounded_at: int | None = None
    exceeded_cap: bool = False
    exceeded_at: float | None = None
    final_state: QueueState | None = None

    @property
    def bounded(self) -> bool:
        return not self.exceeded_cap


def streams(seed) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Three independent generators (arrival times, locations, distances)
    derived from one seed."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return tuple(np.random.Generator(np.random.PCG64(c)) for c in ss.spawn(3))


def _merge_violations(total: dict, part: dict):
    for k, v in part.items():
        total[k] = total.get(k, 0) + v


def _empty_row(t: float):
    return (t, 0, 0.0, 0.0, math.nan, math.nan)


def _state_row(t: float, state: QueueState, m: float):
    y = state.headways
    s = float(np.sum(np.maximum(y, 0.0) ** m))
    return (t, state.n, state.workload, s, float(y.min()), float(y.max()))


def run(params: HtqParams, horizon: float, seed, cap: int | None = None,
        sample_rate: float = 100.0, check: bool = True) -> SimOutcome:
    """Simulate one replication on [0, horizon].

    With ``cap`` given, the run stops the first time the queue length
    exceeds it and the outcome is flagged unbounded. The trace records a
    forced sample immediately before and after every jump plus cadence
    samples at multiples of 1/sample_rate (sample_rate=0 disables cadence).
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng_t, rng_loc, rng_d = streams(seed)
    lam = params.lam
    trace = Trace()
    m, L = params.m, params.L

    state = QueueState.empty(L)
    if params.n0:
        quotas = [float(params.psi.sample(rng_d)) for _ in params.x0]
        state = QueueState.from_ring(L, params.x0, quotas)
    next_id = params.n0
    max_queue = state.n

    next_arrival = rng_t.exponential(1.0 / lam) if lam > 0 else math.inf
    sample_dt = 1.0 / sample_rate if sample_rate > 0 else math.inf
    next_sample = sample_dt

    busy_start = 0.0 if state.n else None
    busy_arrivals = 0
    exceeded_at = None

    def emit_idle_samples(until: float):
        nonlocal next_sample
        while next_sample <= until + 1e-15:
            trace.samples.append(_empty_row(next_sample))
            next_sample += sample_dt

    t = 0.0
    while t < horizon:
        if state.n == 0:
            if next_arrival >= horizon:
                emit_idle_samples(horizon)
                t = horizon
                break
            emit_idle_samples(next_arrival)
            t = next_arrival
            loc = float(params.phi.sample(rng_loc))
            quota = float(params.psi.sample(rng_d))
            trace.samples.append(_empty_row(t))
            state = apply_arrival(QueueState.empty(L, t), loc, quota, next_id)
            trace.events.append(Event(t, "arrival", next_id, loc, quota))
            busy_start, busy_arrivals = t, 0
            next_id += 1
            next_arrival = t + (rng_t.exponential(1.0 / lam) if lam > 0 else math.inf)
            if quota <= 0.0:
                trace.events.append(Event(t, "departure", state.ids[0], loc, quota))
                trace.samples.append(_state_row(t, state, m))
                state = QueueState.empty(L, t)
                trace.busy_periods.append(BusyPeriod(busy_start, t, 0))
                busy_start = None
                trace.samples.append(_empty_row(t))
                continue
            trace.samples.append(_state_row(t, state, m))
            max_queue = max(max_queue, 1)
            if cap is not None and state.n > cap:
                exceeded_at = t
                break
            continue

        t_stop = min(next_arrival, horizon)
        n_cadence = int(max(0, math.floor((t_stop - next_sample) / sample_dt))) + 1 \
            if next_sample <= t_stop else 0
        ts = None
        if n_cadence > 0:
            ts = next_sample + sample_dt * np.arange(n_cadence)
        seg = integrate_to(state, m, t_stop, sample_times=ts, check=check)
        if ts is not None:
            used = [row for row in seg.samples if row[0] <= seg.state.time + 1e-15]
            trace.samples.extend(used)
            next_sample += sample_dt * len(used)
        _merge_violations(trace.violations, seg.violations)
        state = seg.state
        t = state.time

        if seg.event == "departure":
            trace.samples.append(_state_row(t, state, m))
            for vid in seg.departing_ids:
                i = int(np.nonzero(state.ids == vid)[0][0])
                trace.events.append(Event(t, "departure", vid,
                                          float(state.positions[i]),
                                          float(state.quota[i])))
                state = apply_departure(state, vid)
            if state.n:
                trace.samples.append(_state_row(t, state, m))
            else:
                trace.samples.append(_empty_row(t))
                trace.busy_periods.append(BusyPeriod(busy_start, t, busy_arrivals))
                busy_start = None
            continue

        if t >= horizon or next_arrival > horizon:
            break
        # arrival jump
        loc = float(params.phi.sample(rng_loc))
        quota = float(params.psi.sample(rng_d))
        trace.samples.append(_state_row(t, state, m))
        state = apply_arrival(state, loc, quota, next_id)
        trace.events.append(Event(t, "arrival", next_id, loc, quota))
        busy_arrivals += 1
        next_id += 1
        next_arrival = t + (rng_t.exponential(1.0 / lam) if lam > 0 else math.inf)
        if quota <= 0.0:
            vid = next_id - 1
            trace.events.append(Event(t, "departure", vid, loc, quota))
            state = apply_departure(state, vid)
        trace.samples.append(_state_row(t, state, m) if state.n else _empty_row(t))
        max_queue = max(max_queue, state.n)
        if cap is not None and state.n > cap:
            exceeded_at = t
            break

    if busy_start is not None:
        trace.busy_periods.append(BusyPeriod(busy_start, None, busy_arrivals))

    return SimOutcome(
        trace=trace,
        max_queue=max_queue,
        horizon=horizon,
        seed=seed if isinstance(seed, int) else None,
        bounded_at=cap,
        exceeded_cap=exceeded_at is not None,
        exceeded_at=exceeded_at,
        final_state=state,
    )


@dataclass
class BusyStats:
    mean_duration: float
    mean_arrivals: float
    joint: list[tuple[float, int]]   # (duration, arrivals) per completed period

    @property
    def count(self) -> int:
        return len(self.joint)


def busy_period_stats(trace: Trace) -> BusyStats:
    """Statistics over completed busy periods only; the initiating vehicle is
    not counted among the arrivals."""
    done = trace.completed_busy_periods()
    if not done:
        raise NumericError("insufficient data: no completed busy period")
    joint = [(b.end - b.start, b.arrivals) for b in done]
    durations = np.array([d for d, _ in joint])
    counts = np.array([c for _, c in joint])
    return BusyStats(float(durations.mean()), float(counts.mean()), joint)


def idle_fraction(trace: Trace, horizon: float) -> float:
    """Fraction of [0, horizon] with an empty ring, from the busy log."""
    busy = 0.0
    for b in trace.busy_periods:
        busy += (b.end if b.end is not None else horizon) - b.start
    return 1.0 - busy / horizon


@dataclass
class BoundednessEstimate:
    probability: float
    wilson_lo: float
    wilson_hi: float
    reps: int
    bounded_count: int


def wilson_interval(k: int, n: int, z: float = _Z95) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def _bounded_one(args) -> bool:
    params, horizon, cap, child = args
    out = run(params, horizon, child, cap=cap, sample_rate=0.0, check=False)
    return out.bounded


def estimate_boundedness(params: HtqParams, horizon: float, cap: int,
                         reps: int, seed, jobs: int = 1) -> BoundednessEstimate:
    """Fraction of replications whose queue length stays <= cap on the whole
    horizon, with a Wilson 95% interval."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(reps)
    tasks = [(params, horizon, cap, c) for c in children]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            flags = list(pool.map(_bounded_one, tasks, chunksize=max(1, reps // (4 * jobs))))
    else:
        flags = [_bounded_one(t) for t in tasks]
    k = int(sum(flags))
    lo, hi = wilson_interval(k, reps)
    return BoundednessEstimate(k / reps, lo, hi, reps, k)


@dataclass
class ThroughputEstimate:
    lam: float
    probes: list[tuple[float, float]]    # (lambda, bounded probability)
    delta: float
    horizon: float
    cap: int


def estimate_throughput(params: HtqParams, delta: float, horizon: float,
                        cap: int, reps: int, seed, lam_range: tuple[float, float],
                        rel_width: float = 0.02, jobs: int = 1) -> ThroughputEstimate:
    """Largest arrival rate keeping the queue bounded with probability at
    least 1 - delta, located by bisection over lam_range.

    The boundedness probability is assumed monotone decreasing in the
    arrival rate; the bracket is validated first.
    """
    lo, hi = lam_range
    if not 0 <= lo < hi:
        raise ValueError("need 0 <= lam_lo < lam_hi")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    probes: list[tuple[float, float]] = []

    def probe(lam: float) -> float:
        p = HtqParams(params.L, params.m, lam, params.phi, params.psi, params.x0)
        est = estimate_boundedness(p, horizon, cap, reps, ss.spawn(1)[0], jobs=jobs)
        probes.append((lam, est.probability))
        return est.probability

    p_lo = probe(lo) if lo > 0 else 1.0
    if lo == 0:
        probes.append((0.0, 1.0))
    p_hi = probe(hi)
    if p_lo < 1 - delta or p_hi >= 1 - delta:
        raise NumericError(
            f"invalid bracket: P(bounded | lam={lo}) = {p_lo:.3f}, "
            f"P(bounded | lam={hi}) = {p_hi:.3f}, need >= {1 - delta} at the "
            "low end and < at the high end"
        )
    while (hi - lo) > rel_width * hi:
        mid = 0.5 * (lo + hi)
        if probe(mid) >= 1 - delta:
            lo = mid
        else:
            hi = mid
    return ThroughputEstimate(lo, probes, delta, horizon, cap)


# ---------------------------------------------------------------------------
# Trace reconstruction and CSV export
# ---------------------------------------------------------------------------

def reconstruct_queue_length(trace: Trace, n0: int):
    """Step function of N(t) from the event log: (times, values after each
    event)."""
    ts, ns = [], []
    n = n0
    for e in trace.events:
        n += 1 if e.kind == "arrival" else -1
        ts.append(e.time)
        ns.append(n)
    return np.array(ts), np.array(ns, dtype=int)


def check_trace(trace: Trace, params: HtqParams, horizon: float):
    """Hard trace invariants: event ordering, sampled N versus the event
    reconstruction, and workload below N*R."""
    times = [e.time for e in trace.events]
    if any(b > a + 1e-12 for a, b in zip(times[1:], times)):
        raise InvariantViolation("events are not time-ordered")
    ts, ns = reconstruct_queue_length(trace, params.n0)
    R = params.psi.support_hi
    for row in trace.samples:
        t, n_s, w = row[0], row[1], row[2]
        if w > n_s * R + 1e-9 * max(1.0, R):
            raise InvariantViolation(f"workload {w} exceeds N*R at t={t}")
        if len(ts):
            k = int(np.searchsorted(ts, t, side="right"))
            n_ev = params.n0 if k == 0 else int(ns[k - 1])
            # jump instants carry both pre- and post-jump samples
            if n_s != n_ev and not np.any(np.abs(ts - t) <= 1e-12 * max(1.0, t)):
                raise InvariantViolation(
                    f"sampled N={n_s} != reconstructed N={n_ev} at t={t}"
                )


def write_trace_csv(outcome: SimOutcome, path):
    """Jump and sample rows with RFC-4180 quoting."""
    rows = []
    for e in outcome.trace.events:
        rows.append((e.time, e.kind, e.vid, None, None, None, None, None))
    for srow in outcome.trace.samples:
        t, n, w, s, ymin, ymax = srow
        rows.append((t, "sample", None, n, w, s,
                     None if math.isnan(ymin) else ymin,
                     None if math.isnan(ymax) else ymax))
    rows.sort(key=lambda r: (r[0], 0 if r[1] != "sample" else 1))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "kind", "id", "N", "workload", "service_rate",
                    "y_min", "y_max"])
        for row in rows:
            w.writerow(["" if v is None else v for v in row])


def write_busy_csv(outcome: SimOutcome, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["start", "end", "duration", "n_bn"])
        for b in outcome.trace.busy_periods:
            if b.end is None:
                w.writerow([b.start, "", "", b.arrivals])
            else:
                w.writerow([b.start, b.end, b.end - b.start, b.arrivals])

"""Event-driven simulator of the n-th system.

Poisson arrivals at rate n*lambda_bar, exponential services at heterogeneous
per-server rates, exponential patience, and a pluggable non-idling routing
policy. The engine merges two exponential clocks: the arrival stream and a
potential-completion stream at the constant rate sum(mu_k), thinned to the
busy servers by an alias-table draw proportional to mu_k (exact, since
accepted completions occur at rate sum over busy servers of mu_k).

Abandonment uses lazy deletion: each queued customer carries a patience
deadline; a sweep at every event epoch retires deadlines that passed,
crediting the abandonment at its true time so the queue-length integral and
the in-system count stay exact between events.

Structural invariants are enforced on every event:
  * non-idling: a nonempty queue forces zero idle servers;
  * (X - N)^- equals the idle-server count.

Randomness is split into named substreams (population/init, arrival,
service, patience, routing) derived from (master seed, replication), so
swapping the routing policy leaves the arrival and service processes
untouched.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import ModelParams, ServerPopulation
from .rates import FairnessMeasure

__all__ = [
    "RoutingPolicy",
    "SimulationResult",
    "stream_seed",
    "run_simulation",
    "empirical_fairness",
    "empirical_conditional_idleness",
    "empirical_allocation",
]

STREAMS = ("population", "arrival", "service", "patience", "routing", "init")
_BLOCK = 1 << 15
_H_BUCKETS = 48


@dataclass(frozen=True)
class RoutingPolicy:
    """Non-idling routing rule. ``h`` is only used by the weighted-random kind."""

    kind: str
    h: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("lisf", "fsf", "ssf", "uniform", "hrandom"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "hrandom" and self.h is None:
            raise ValueError("hrandom needs a weight function")

    @staticmethod
    def lisf() -> "RoutingPolicy":
        return RoutingPolicy("lisf")

    @staticmethod
    def fsf() -> "RoutingPolicy":
        return RoutingPolicy("fsf")

    @staticmethod
    def ssf() -> "RoutingPolicy":
        return RoutingPolicy("ssf")

    @staticmethod
    def uniform() -> "RoutingPolicy":
        return RoutingPolicy("uniform")

    @staticmethod
    def hrandom(h: Callable) -> "RoutingPolicy":
        return RoutingPolicy("hrandom", h=h)


def stream_seed(master_seed: int, replication: int, stream: str) -> np.random.SeedSequence:
    """Counter-based substream derivation: (master, replication, stream index)."""
    return np.random.SeedSequence((int(master_seed), int(replication), STREAMS.index(stream)))


class _Blocks:
    """Block-drawn scalars from a Generator, consumed one at a time.

    Consumption pops from the end of each block; the order within a block
    is immaterial (i.i.d. draws) and fully deterministic."""

    __slots__ = ("rng", "kind", "scale", "buf")

    def __init__(self, rng: np.random.Generator, kind: str, scale: float = 1.0):
        self.rng = rng
        self.kind = kind
        self.scale = scale
        self.buf: list[float] = []

    def _refill(self):
        if self.kind == "exp":
            self.buf = self.rng.exponential(self.scale, _BLOCK).tolist()
        else:
            self.buf = self.rng.random(_BLOCK).tolist()

    def next(self) -> float:
        buf = self.buf
        if not buf:
            self._refill()
            buf = self.buf
        return buf.pop()


def _alias_table(weights: np.ndarray) -> tuple[list, list]:
    """Vose alias method; O(1) draws proportional to ``weights``."""
    n = weights.size
    p = (weights / weights.sum()) * n
    prob = [0.0] * n
    alias = [0] * n
    small = [i for i in range(n) if p[i] < 1.0]
    large = [i for i in range(n) if p[i] >= 1.0]
    p = p.tolist()
    while small and large:
        s = small.pop()
        l = large.pop()
        prob[s] = p[s]
        alias[s] = l
        p[l] = (p[l] + p[s]) - 1.0
        (small if p[l] < 1.0 else large).append(l)
    for i in large:
        prob[i] = 1.0
    for i in small:
        prob[i] = 1.0
    return prob, alias


@dataclass(frozen=True)
class SimulationResult:
    """Statistics over [warmup, horizon] plus whole-run counters."""

    n: int
    N: int
    alpha: float
    horizon: float
    warmup: float
    rates: np.ndarray
    idle_time: np.ndarray           # per server, measurement window
    idle_fraction: np.ndarray
    idle_after_shift: dict          # eps -> per-server idle time on [tau_eps, horizon]
    tau_shift: dict                 # eps -> crossing time (inf if never)
    scaled_idleness_mean: float     # time average of n^-alpha * idle count
    scaled_queue_plus_mean: float   # time average of n^-alpha * queue length
    idle_batch_means: np.ndarray
    queue_batch_means: np.ndarray
    arrivals: int
    departures: int
    abandonments: int
    in_system_end: int
    window_arrivals: int
    window_abandonments: int
    abandonment_fraction: float
    event_count: int
    event_log: list | None = None

    @property
    def window(self) -> float:
        return self.horizon - self.warmup

    def batch_stderr(self, which: str = "idle") -> float:
        """Standard error of the windowed time average via batch means."""
        b = self.idle_batch_means if which == "idle" else self.queue_batch_means
        if b.size < 2:
            return float("nan")
        return float(b.std(ddof=1) / math.sqrt(b.size))


def run_simulation(params: ModelParams, population: ServerPopulation,
                   policy: RoutingPolicy, horizon: float, warmup: float,
                   seed: int, *, epsilons: Sequence[float] = (0.0,),
                   initial_idle_prob: np.ndarray | None = None,
                   n_batches: int = 20, replication: int = 0,
                   collect_event_log: bool = False) -> SimulationResult:
    """Simulate one trajectory; deterministic given (seed, replication).

    ``epsilons`` lists the idleness-shift levels at which per-server idle
    snapshots are taken (cumulative scaled idleness measured from time 0).
    ``initial_idle_prob`` starts each server idle independently with the
    given probability (all busy when omitted); the queue starts empty either
    way, so the initial scaled state is nonpositive.
    """
    if len(population) == 0:
        raise ValueError("population is empty")
    if not 0.0 <= warmup < horizon:
        raise ValueError("need 0 <= warmup < horizon")
    if n_batches < 2:
        raise ValueError("need at least two batches")

    N = len(population)
    rates_arr = np.asarray(population.rate, dtype=float)
    rates = rates_arr.tolist()
    n_scale = float(params.n) ** params.alpha
    lam = params.lambda_n
    gamma = params.gamma
    S_tot = float(rates_arr.sum())

    init_rng = np.random.default_rng(stream_seed(seed, replication, "init"))
    arrival_gaps = _Blocks(np.random.default_rng(stream_seed(seed, replication, "arrival")),
                           "exp", 1.0 / lam)
    service_rng = np.random.default_rng(stream_seed(seed, replication, "service"))
    service_gaps = _Blocks(service_rng, "exp", 1.0 / S_tot)
    service_u = _Blocks(service_rng, "u")
    patience_gaps = _Blocks(np.random.default_rng(stream_seed(seed, replication, "patience")),
                            "exp", 1.0 / gamma)
    route_u = _Blocks(np.random.default_rng(stream_seed(seed, replication, "routing")), "u")

    prob, alias = _alias_table(rates_arr)

    # --- initial state ------------------------------------------------
    if initial_idle_prob is None:
        busy = [1] * N
    else:
        p = np.broadcast_to(np.asarray(initial_idle_prob, dtype=float), (N,))
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("initial idle probabilities must lie in [0, 1]")
        busy = (init_rng.random(N) >= p).astype(np.int64).tolist()
    idle_since = [0.0] * N
    idle_total = [0.0] * N
    idle_count = busy.count(0)
    X = N - idle_count
    X0 = X

    kind = policy.kind
    idle_list: list[int] = []
    idle_pos: list[int] = []
    idle_deque: deque[int] = deque()
    idle_heap: list = []
    buckets: list[list[int]] = []
    bucket_pos: list[int] = []
    bucket_of: list[int] = []
    bucket_hsum: list[float] = []
    bucket_hmax: list[float] = []
    hvals: list[float] = []

    initially_idle = [k for k in range(N) if not busy[k]]
    if kind == "uniform":
        idle_pos = [-1] * N
        for k in initially_idle:
            idle_pos[k] = len(idle_list)
            idle_list.append(k)
    elif kind == "lisf":
        idle_deque = deque(initially_idle)
    elif kind in ("fsf", "ssf"):
        sgn = -1.0 if kind == "fsf" else 1.0
        idle_heap = [(sgn * rates[k], k) for k in initially_idle]
        heapq.heapify(idle_heap)
    elif kind == "hrandom":
        hv = np.asarray(policy.h(rates_arr), dtype=float)
        if np.any(hv <= 0) or np.any(~np.isfinite(hv)):
            raise ValueError("routing weight must be finite and positive on all rates")
        hvals = hv.tolist()
        z = hv / hv.max()          # scale-invariant bucket coordinate
        zmin = float(z.min())
        if zmin >= 1.0:
            edges = np.array([0.0, 2.0])
        else:
            edges = np.geomspace(zmin, 1.0, _H_BUCKETS + 1)
            edges[0] = 0.0
            edges[-1] = 2.0
        bucket_of = (np.clip(np.searchsorted(edges, z, side="right") - 1,
                             0, edges.size - 2)).tolist()
        nb = edges.size - 1
        buckets = [[] for _ in range(nb)]
        bucket_pos = [-1] * N
        bucket_hsum = [0.0] * nb
        bucket_hmax = [0.0] * nb
        for k in range(N):
            b = bucket_of[k]
            if hvals[k] > bucket_hmax[b]:
                bucket_hmax[b] = hvals[k]
        for k in initially_idle:
            b = bucket_of[k]
            bucket_pos[k] = len(buckets[b])
            buckets[b].append(k)
            bucket_hsum[b] += hvals[k]

    # --- queue with patience deadlines ---------------------------------
    fifo: deque = deque()
    dl_heap: list = []
    gone: set = set()
    served: set = set()
    seq = 0
    queue_len = 0

    # --- statistics ----------------------------------------------------
    arrivals = departures = abandonments = 0
    window_arrivals = window_abandonments = 0
    event_count = 0
    I_int = 0.0              # integral of idle count from time 0
    Q_int = 0.0              # integral of queue length from time 0
    t_cursor = 0.0
    eps_sorted = sorted(set(float(e) for e in epsilons))
    eps_pending = list(eps_sorted)
    eps_target = eps_pending[0] * n_scale if eps_pending else math.inf
    shift_snap: dict = {}
    tau_shift: dict = {}
    warm_snap = None
    warm_I = warm_Q = 0.0
    batch_edges = np.linspace(warmup, horizon, n_batches + 1).tolist()
    marks = sorted(set([warmup] + batch_edges + [horizon]))
    mark_I: list[float] = []
    mark_Q: list[float] = []
    log = [] if collect_event_log else None

    def snapshot(at: float) -> np.ndarray:
        snap = np.array(idle_total, dtype=float)
        for k in range(N):
            if not busy[k]:
                snap[k] += at - idle_since[k]
        return snap

    def integrate_to(t: float):
        nonlocal I_int, Q_int, t_cursor, eps_target
        dt = t - t_cursor
        if dt <= 0.0:
            return
        # epsilon-shift crossings happen mid-interval at the exact instant
        while idle_count > 0 and I_int + idle_count * dt > eps_target:
            t_c = t_cursor + (eps_target - I_int) / idle_count
            eps = eps_pending.pop(0)
            tau_shift[eps] = t_c
            shift_snap[eps] = snapshot(t_c)
            eps_target = eps_pending[0] * n_scale if eps_pending else math.inf
        I_int += idle_count * dt
        Q_int += queue_len * dt
        t_cursor = t

    def sweep(t: float):
        nonlocal X, queue_len, abandonments, window_abandonments
        while dl_heap and dl_heap[0][0] <= t:
            d, sq = heapq.heappop(dl_heap)
            if sq in served:
                served.discard(sq)
                continue
            integrate_to(d)
            gone.add(sq)
            queue_len -= 1
            X -= 1
            abandonments += 1
            if d >= warmup:
                window_abandonments += 1
            if log is not None:
                log.append((d, "abandon", -1, queue_len))

    idle_hsum = 0.0
    if kind == "hrandom":
        for k in initially_idle:
            idle_hsum += hvals[k]
    routings_since_rebuild = 0

    def free_server(k: int, t: float,
                    _push=heapq.heappush):
        """Busy -> idle transition of server k at time t."""
        nonlocal idle_count, idle_hsum
        busy[k] = 0
        idle_since[k] = t
        idle_count += 1
        if kind == "uniform":
            idle_pos[k] = len(idle_list)
            idle_list.append(k)
        elif kind == "lisf":
            idle_deque.append(k)
        elif kind == "fsf":
            _push(idle_heap, (-rates[k], k))
        elif kind == "ssf":
            _push(idle_heap, (rates[k], k))
        else:
            b = bucket_of[k]
            bucket_pos[k] = len(buckets[b])
            buckets[b].append(k)
            hk = hvals[k]
            bucket_hsum[b] += hk
            idle_hsum += hk

    def seize_server(k: int, t: float):
        """Idle -> busy transition (caller already removed k from its pool)."""
        nonlocal idle_count
        busy[k] = 1
        idle_total[k] += t - idle_since[k]
        idle_count -= 1

    def pick_idle(_pop_heap=heapq.heappop) -> int:
        nonlocal idle_hsum, routings_since_rebuild
        if kind == "uniform":
            u_next = route_u.next
            m = len(idle_list)
            j = int(u_next() * m)
            if j == m:
                j -= 1
            k = idle_list[j]
            last = idle_list.pop()
            if last != k:
                idle_list[j] = last
                idle_pos[last] = j
            idle_pos[k] = -1
            return k
        if kind == "lisf":
            return idle_deque.popleft()
        if kind in ("fsf", "ssf"):
            return _pop_heap(idle_heap)[1]
        # hrandom: bucket by exact weighted scan, rejection inside the bucket.
        # idle_hsum is maintained incrementally; rebuild it periodically to
        # cap floating drift (deterministic: tied to the routing count).
        routings_since_rebuild += 1
        if routings_since_rebuild >= 4096:
            routings_since_rebuild = 0
            idle_hsum = 0.0
            for s in bucket_hsum:
                idle_hsum += s
        u_next = route_u.next
        hs = bucket_hsum
        last_b = len(hs) - 1
        while True:
            target = u_next() * idle_hsum
            b = 0
            acc = hs[0]
            while acc < target and b < last_b:
                b += 1
                acc += hs[b]
            members = buckets[b]
            m = len(members)
            if m == 0:
                continue  # numerically empty bucket hit by rounding drift
            hmax = bucket_hmax[b]
            hv = hvals
            while True:
                j = int(u_next() * m)
                if j == m:
                    j -= 1
                k = members[j]
                hk = hv[k]
                if u_next() * hmax < hk:
                    last = members.pop()
                    if last != k:
                        members[j] = last
                        bucket_pos[last] = j
                    bucket_pos[k] = -1
                    hs[b] -= hk
                    idle_hsum -= hk
                    return k

    arr_next = arrival_gaps.next
    srv_next = service_gaps.next
    srv_u = service_u.next
    pat_next = patience_gaps.next
    next_arr = arr_next()
    next_srv = srv_next()
    mark_idx = 0
    n_marks = len(marks)
    INF = math.inf

    while True:
        t_mark = marks[mark_idx] if mark_idx < n_marks else INF
        t_ev = next_arr if next_arr <= next_srv else next_srv
        if t_mark <= t_ev:
            sweep(t_mark)
            integrate_to(t_mark)
            if warm_snap is None and t_mark >= warmup:
                warm_snap = snapshot(t_mark)
                warm_I, warm_Q = I_int, Q_int
            mark_I.append(I_int)
            mark_Q.append(Q_int)
            mark_idx += 1
            if t_mark >= horizon:
                break
            continue
        if dl_heap:
            sweep(t_ev)
        integrate_to(t_ev)
        event_count += 1
        if next_arr <= next_srv:
            arrivals += 1
            if t_ev >= warmup:
                window_arrivals += 1
            if idle_count > 0:
                k = pick_idle()
                seize_server(k, t_ev)
                X += 1
                if log is not None:
                    log.append((t_ev, "arrival", k, queue_len))
            else:
                seq += 1
                d = t_ev + pat_next()
                fifo.append((d, seq))
                heapq.heappush(dl_heap, (d, seq))
                queue_len += 1
                X += 1
                if log is not None:
                    log.append((t_ev, "arrival", -1, queue_len))
            next_arr = t_ev + arr_next()
        else:
            j = int(srv_u() * N)
            if j == N:
                j -= 1
            k = j if srv_u() < prob[j] else alias[j]
            if busy[k]:
                departures += 1
                X -= 1
                if queue_len > 0:
                    while True:
                        d, sq = fifo.popleft()
                        if sq in gone:
                            gone.discard(sq)
                            continue
                        served.add(sq)
                        break
                    queue_len -= 1
                else:
                    free_server(k, t_ev)
                if log is not None:
                    log.append((t_ev, "service", k, queue_len))
            next_srv = t_ev + srv_next()
        # structural invariants of a non-idling system
        if queue_len > 0 and idle_count != 0:
            raise RuntimeError("non-idling violated: queue with idle servers")
        if (N - X if X < N else 0) != idle_count:
            raise RuntimeError("idle-count identity (X - N)^- violated")

    for eps in eps_pending:
        tau_shift[eps] = math.inf
    end_snap = snapshot(horizon)
    if warm_snap is None:
        warm_snap = end_snap
        warm_I, warm_Q = I_int, Q_int
    window = horizon - warmup
    idle_time = end_snap - warm_snap
    idle_after = {}
    for eps in eps_sorted:
        if eps in shift_snap:
            idle_after[eps] = end_snap - shift_snap[eps]
        else:
            idle_after[eps] = np.zeros(N)
    edge_I = np.array(mark_I[-(len(batch_edges)):])
    edge_Q = np.array(mark_Q[-(len(batch_edges)):])
    bw = window / n_batches
    idle_batches = np.diff(edge_I) / bw / n_scale
    queue_batches = np.diff(edge_Q) / bw / n_scale

    if arrivals + X0 != departures + abandonments + X:
        raise RuntimeError("conservation violated: arrivals != departures + abandonments + in-system")

    return SimulationResult(
        n=params.n, N=N, alpha=params.alpha, horizon=horizon, warmup=warmup,
        rates=rates_arr.copy(),
        idle_time=idle_time,
        idle_fraction=idle_time / window,
        idle_after_shift=idle_after,
        tau_shift=tau_shift,
        scaled_idleness_mean=float((I_int - warm_I) / window / n_scale),
        scaled_queue_plus_mean=float((Q_int - warm_Q) / window / n_scale),
        idle_batch_means=idle_batches,
        queue_batch_means=queue_batches,
        arrivals=arrivals, departures=departures, abandonments=abandonments,
        in_system_end=X,
        window_arrivals=window_arrivals,
        window_abandonments=window_abandonments,
        abandonment_fraction=(window_abandonments / window_arrivals
                              if window_arrivals else 0.0),
        event_count=event_count,
        event_log=log,
    )


def empirical_fairness(result: SimulationResult, population: ServerPopulation,
                       epsilon: float = 0.0) -> FairnessMeasure:
    """Idleness share per observed service rate, after a cumulative-idleness
    shift of ``epsilon`` (must be one of the run's requested shift levels).

    Returns the tagged degenerate measure when the trajectory never
    accumulated ``epsilon`` of scaled idleness.
    """
    eps = float(epsilon)
    if eps not in result.idle_after_shift:
        raise KeyError(f"epsilon {eps!r} was not requested in run_simulation "
                       f"(have {sorted(result.idle_after_shift)})")
    idle = result.idle_after_shift[eps]
    total = float(idle.sum())
    if not math.isfinite(result.tau_shift[eps]) or total <= 0.0:
        return FairnessMeasure.pre_shift()
    return FairnessMeasure.from_weights(population.rate, idle)


def empirical_conditional_idleness(result: SimulationResult,
                                   population: ServerPopulation,
                                   bins: int) -> list[tuple[float, float, float]]:
    """Mean idle fraction per equal-width rate bin with across-server
    standard errors; empty bins are omitted."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    rates = population.rate
    lo, hi = float(rates.min()), float(rates.max())
    if hi == lo:
        frac = result.idle_fraction
        se = float(frac.std(ddof=1) / math.sqrt(frac.size)) if frac.size > 1 else 0.0
        return [(lo, float(frac.mean()), se)]
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.clip(np.searchsorted(edges, rates, side="right") - 1, 0, bins - 1)
    out = []
    for b in range(bins):
        mask = idx == b
        cnt = int(mask.sum())
        if cnt == 0:
            continue
        vals = result.idle_fraction[mask]
        se = float(vals.std(ddof=1) / math.sqrt(cnt)) if cnt > 1 else 0.0
        out.append((float(0.5 * (edges[b] + edges[b + 1])), float(vals.mean()), se))
    return out


def empirical_allocation(result: SimulationResult, population: ServerPopulation,
                         rate_grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Time-averaged scaled idle-server measure per rate cell:
    cell b -> (1/n) * time average of the idle count with rate in b."""
    edges = np.asarray(rate_grid, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("rate_grid must be an increasing array of edges")
    idx = np.clip(np.searchsorted(edges, population.rate, side="right") - 1,
                  0, edges.size - 2)
    sums = np.zeros(edges.size - 1)
    np.add.at(sums, idx, result.idle_time)
    return edges, sums / result.window / result.n

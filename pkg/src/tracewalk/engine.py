"""Walk simulation: single steps, vectorized base walks, and the nested
demand-driven run where each walk moves on the trace of the one before.

The nested scheme never lets a child read unsettled structure. A child
at first coordinate x1 may step only while x1 is strictly below the
parent's certified regeneration frontier: every edge incident to such a
vertex has both endpoints below the frontier, and certified levels are
never undercut again (up to the audited lookahead error), so the local
neighborhood the child samples from is final. When the child reaches the
frontier the parent walk is extended in place until the frontier clears
it, recursively up to the base walk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

from .bias import BiasDistribution, direction_vectors, drift, restricted_kernel
from .phase import NoPositiveRoot, phi, solve_root
from .regen import FrontierScanner, RegenerationRecord, audit_record, regenerations
from .trace import (
    COORD_BITS,
    OFFSET,
    TraceGraph,
    WalkPath,
    pack,
    packed_deltas,
    unpack,
)

_E1_CACHE: dict[int, np.ndarray] = {}


def _e1(d: int) -> np.ndarray:
    if d not in _E1_CACHE:
        v = np.zeros(d)
        v[0] = 1.0
        _E1_CACHE[d] = v
    return _E1_CACHE[d]


class UnsettledNeighborhood(RuntimeError):
    """A step was requested from a vertex the generating walk may revisit."""


class IsolatedVertex(ValueError):
    """The restricted kernel has no present direction at this vertex."""


class PathTooShort(ValueError):
    """Not enough steps to estimate a velocity."""


class BudgetExhausted(RuntimeError):
    """A per-level step budget ran out mid-run.

    Carries the level that ran dry and, when raised out of
    nested_simulate, the partial run assembled so far in ``run``.
    """

    def __init__(self, level: int, message: str | None = None):
        super().__init__(message or f"step budget exhausted at level {level}")
        self.level = level
        self.run: "NestedRun | None" = None


@lru_cache(maxsize=None)
def _mask_tables(p: BiasDistribution):
    """Sampling tables for the restricted kernel, indexed by incidence mask.

    Entry m holds, for the directions present in mask m with positive
    weight: the cumulative cut points (all but the last), the packed
    position increments, the first-coordinate increments, and the
    direction indices. Masks with no positive present weight map to None.
    """
    d = p.d
    w = p.as_array()
    deltas = packed_deltas(d)
    tables: list[tuple | None] = [None] * (1 << (2 * d))
    for mask in range(1, 1 << (2 * d)):
        ks = [k for k in range(2 * d) if (mask >> k) & 1 and w[k] > 0.0]
        if not ks:
            continue
        ww = w[ks]
        cum = np.cumsum(ww) / ww.sum()
        cuts = tuple(cum[:-1])
        dd = tuple(deltas[k] for k in ks)
        d1 = tuple(1 if k == 0 else -1 if k == 1 else 0 for k in ks)
        tables[mask] = (cuts, dd, d1, tuple(ks))
    return tables


def step(p: BiasDistribution, g: TraceGraph | None, x, rng: np.random.Generator):
    """One step of the walk biased by p, restricted to the trace g.

    g None means the full lattice. On a trace, stepping from x needs the
    first coordinate of x strictly below the certified settled level, so
    the incident edges cannot change if the generating walk is extended;
    traces that are final should be certified settled at +inf first.
    """
    x = tuple(int(c) for c in x)
    if g is None:
        mask = (1 << (2 * p.d)) - 1
    else:
        if p.d != g.d:
            raise ValueError("dimension mismatch between bias and trace")
        mask = g.incident_mask(x)
        if not x[0] < g.settled_level:
            raise UnsettledNeighborhood(
                f"vertex {x} is not strictly below the settled level "
                f"{g.settled_level}"
            )
    entry = _mask_tables(p)[mask]
    if entry is None:
        raise IsolatedVertex(f"no present direction has positive weight at {x}")
    cuts, _, _, ks = entry
    u = float(rng.random())
    i = 0
    while i < len(cuts) and u > cuts[i]:
        i += 1
    vec = direction_vectors(p.d)[ks[i]]
    return tuple(a + b for a, b in zip(x, vec))


def _as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def stream_for(master_seed: int, level: int, replica: int) -> np.random.Generator:
    """The RNG stream for one (level, replica) pair.

    Streams are counter-based Philox generators keyed by the master seed
    with spawn key (level, replica): runs are reproducible per level and
    replica regardless of how many chunks the samples are drawn in.
    """
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(level, replica)))
    )


def simulate_level0(
    p0: BiasDistribution,
    n_steps: int,
    rng,
    chunk: int = 1 << 20,
) -> WalkPath:
    """Vectorized free walk of n_steps from the origin.

    rng may be a Generator, a SeedSequence, or an integer seed. Sampling
    draws one uniform per step and inverts the cumulative weights, in
    chunks, so the stream agrees with the one-shot computation.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    gen = _as_generator(rng)
    d = p0.d
    cum = np.cumsum(p0.as_array())
    cum[-1] = 1.0
    dirs = direction_vectors(d)
    out = np.empty((n_steps + 1, d), dtype=np.int64)
    out[0] = 0
    pos = np.zeros(d, dtype=np.int64)
    done = 0
    while done < n_steps:
        m = min(chunk, n_steps - done)
        u = gen.random(m)
        ks = np.searchsorted(cum, u, side="right")
        incs = dirs[ks]
        np.cumsum(incs, axis=0, out=incs)
        incs += pos
        out[done + 1 : done + m + 1] = incs
        pos = incs[-1].copy()
        done += m
    return WalkPath(steps=out, seed=None, level=0)


@dataclass
class VelocityEstimate:
    v: np.ndarray
    speed: float
    angle_deg: float | None
    n: int
    burn_in: float


def velocity_estimate(
    path: WalkPath, burn_in: float = 0.2, reference=None
) -> VelocityEstimate:
    """Empirical velocity (X_n - X_m) / (n - m) with m = burn_in * n.

    The burn-in prefix is discarded so the estimate is taken over the
    stationary-looking tail. angle_deg is the angle to the reference
    direction in degrees, None when either vector is zero.
    """
    n = path.n_steps
    m = int(burn_in * n)
    if n < 1 or m >= n:
        raise PathTooShort(f"cannot estimate a velocity from {n} steps")
    v = (path.steps[n] - path.steps[m]) / float(n - m)
    speed = float(np.linalg.norm(v))
    angle = None
    if reference is not None:
        ref = np.asarray(reference, dtype=np.float64)
        nr = np.linalg.norm(ref)
        if speed > 0 and nr > 0:
            c = float(np.dot(v, ref) / (speed * nr))
            angle = math.degrees(math.acos(max(-1.0, min(1.0, c))))
    return VelocityEstimate(v=v, speed=speed, angle_deg=angle, n=n, burn_in=burn_in)


@dataclass
class BacktrackCensus:
    """Empirical backtracking depths of the free walk against the
    exponential bound exp(-t h)."""

    t: float
    horizon: int
    n_replicas: int
    h: np.ndarray
    counts: np.ndarray
    p_hat: np.ndarray
    wilson_upper: np.ndarray
    bound: np.ndarray
    horizon_tail: float


def _horizon_tail_bound(
    p0: BiasDistribution, ell: np.ndarray, horizon: int, t: float, h_max: int
) -> float:
    """Bound on the probability mass the finite horizon misses.

    A replica that would first reach depth h after the horizon must
    either sit at projection <= m at the horizon (Chernoff) or backtrack
    by h + m from a projection above m (exponential bound); minimized
    over the split point m.
    """
    s = t * np.linspace(0.05, 4.0, 120)
    logphi = np.log(phi(p0, ell, s))
    m = np.arange(0, 40 * h_max + 1)
    log_stay = np.min(
        horizon * logphi[:, None] + np.multiply.outer(s, m.astype(float)), axis=0
    )
    total = np.exp(log_stay) + np.exp(-t * (h_max + m))
    return float(total.min())


def backtrack_census(
    p0: BiasDistribution,
    ell,
    n_replicas: int,
    horizon: int = 1000,
    seed=0,
    h_max: int = 8,
    batch: int = 4096,
) -> BacktrackCensus:
    """Estimate P(walk ever drops h below its start along ell) for h <= h_max.

    Wilson upper limits are at 99%. Refuses (NoPositiveRoot) when the
    drift along ell is not positive, in which case no exponential bound
    exists. horizon_tail bounds the truncation error of the finite
    horizon; it is common to every h and should be well below the
    confidence slack.
    """
    ell = np.asarray(ell, dtype=np.float64)
    t = solve_root(p0, ell)
    gen = _as_generator(seed)
    cum = np.cumsum(p0.as_array())
    cum[-1] = 1.0
    s_vals = direction_vectors(p0.d).astype(np.float64) @ ell
    counts = np.zeros(h_max, dtype=np.int64)
    done = 0
    while done < n_replicas:
        m = min(batch, n_replicas - done)
        u = gen.random((m, horizon))
        ks = np.searchsorted(cum, u, side="right")
        inc = s_vals[ks]
        np.cumsum(inc, axis=1, out=inc)
        depth = -np.minimum(np.min(inc, axis=1), 0.0)
        for h in range(1, h_max + 1):
            counts[h - 1] += int(np.sum(depth >= h - 1e-9))
        done += m
    p_hat = counts / float(n_replicas)
    z = stats.norm.ppf(0.995)
    z2 = z * z
    n = float(n_replicas)
    center = (p_hat + z2 / (2 * n)) / (1 + z2 / n)
    half = (z / (1 + z2 / n)) * np.sqrt(p_hat * (1 - p_hat) / n + z2 / (4 * n * n))
    hs = np.arange(1, h_max + 1)
    return BacktrackCensus(
        t=t,
        horizon=horizon,
        n_replicas=n_replicas,
        h=hs,
        counts=counts,
        p_hat=p_hat,
        wilson_upper=center + half,
        bound=np.exp(-t * hs),
        horizon_tail=_horizon_tail_bound(p0, ell, horizon, t, h_max),
    )


@dataclass
class SimulationConfig:
    """Everything a nested run needs, validated up front.

    biases[0] drives the base walk, biases[i] the walk on the trace of
    walk i-1. budgets are per-level step caps; the last level runs to its
    budget exactly, earlier levels extend on demand up to theirs. h_la is
    the certification lookahead, defaulting to 40 / t0 where t0 is the
    backtracking rate of the base walk, so each certification carries
    error at most exp(-40); eps_trunc is the ceiling that error must
    stay under.
    """

    biases: tuple[BiasDistribution, ...]
    budgets: tuple[int, ...]
    seed: int = 0
    h_la: float | None = None
    eps_trunc: float = 1e-12
    mode: str = "extend"
    chunk: int = 8192
    audit_kernel: bool = True
    t0: float = field(init=False)
    per_event_error: float = field(init=False)

    def __post_init__(self):
        self.biases = tuple(self.biases)
        self.budgets = tuple(int(b) for b in self.budgets)
        if not self.biases:
            raise ValueError("need at least the base bias")
        if len(self.budgets) != len(self.biases):
            raise ValueError("one budget per level")
        d = self.biases[0].d
        for p in self.biases:
            if p.d != d:
                raise ValueError("all biases must share one dimension")
        if any(b < 0 for b in self.budgets):
            raise ValueError("budgets must be nonnegative")
        if self.mode not in ("extend", "fixed"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0 < self.eps_trunc < 1:
            raise ValueError("eps_trunc must lie in (0, 1)")
        try:
            self.t0 = solve_root(self.biases[0], _e1(d))
        except NoPositiveRoot as e:
            raise ValueError(
                "the base bias needs positive drift along e_1 to certify a "
                "settlement frontier"
            ) from e
        if self.h_la is None:
            self.h_la = 40.0 / self.t0
        if self.h_la <= 0:
            raise ValueError("h_la must be positive")
        self.per_event_error = math.exp(-self.t0 * self.h_la)
        if self.per_event_error > self.eps_trunc:
            raise ValueError(
                f"lookahead {self.h_la} gives per-event error "
                f"{self.per_event_error:.3e} above eps_trunc {self.eps_trunc:.3e}"
            )

    @property
    def levels(self) -> int:
        return len(self.biases)


@dataclass
class KernelAuditRow:
    level: int
    mask: int
    n: int
    chi2: float
    p_value: float
    flagged: bool


@dataclass
class NestedRun:
    """Result of one nested simulation replica.

    paths[i] and traces[i] are walk i and the trace it generated (the
    graph walk i+1 moved on); records[i] its certified regenerations
    along e_1. error_budget bounds the probability that any certification
    anywhere in the run is wrong. truncations lists fixed-mode child
    stops at the parent frontier; exhausted marks levels whose budget ran
    out. kernel_audit rows flag (never fail) heavily-visited masks whose
    empirical step frequencies look off.
    """

    config: SimulationConfig
    replica: int
    paths: list[WalkPath]
    traces: list[TraceGraph]
    records: list[RegenerationRecord]
    certifications: int
    error_budget: float
    truncations: list[dict]
    exhausted: list[bool]
    kernel_audit: list[KernelAuditRow] = field(default_factory=list)

    @property
    def top_path(self) -> WalkPath:
        return self.paths[-1]


class _Level0Source:
    """Base walk generated in vectorized chunks, feeding a trace and a
    frontier scanner."""

    def __init__(self, p0: BiasDistribution, budget: int, gen, chunk: int, h_la: float):
        self.d = p0.d
        self.budget = budget
        self.gen = gen
        self.chunk = chunk
        cum = np.cumsum(p0.as_array())
        cum[-1] = 1.0
        self._cum = cum
        self._dirs = direction_vectors(self.d)
        self.trace = TraceGraph(self.d)
        self.scanner = FrontierScanner(h_la)
        self._pos = np.zeros(self.d, dtype=np.int64)
        self._chunks: list[np.ndarray] = [np.zeros((1, self.d), dtype=np.int64)]
        self.steps_done = 0

    @property
    def frontier(self) -> float:
        return self.scanner.frontier

    def _gen_chunk(self, m: int) -> None:
        u = self.gen.random(m)
        ks = np.searchsorted(self._cum, u, side="right")
        incs = self._dirs[ks]
        np.cumsum(incs, axis=0, out=incs)
        incs += self._pos
        seg = np.empty((m + 1, self.d), dtype=np.int64)
        seg[0] = self._pos
        seg[1:] = incs
        self.trace._add_points(seg)
        self.scanner.push_many(incs[:, 0])
        self._chunks.append(incs)
        self._pos = incs[-1].copy()
        self.steps_done += m

    def run_steps(self, m: int) -> None:
        if self.steps_done + m > self.budget:
            raise BudgetExhausted(0)
        left = m
        while left > 0:
            take = min(self.chunk, left)
            self._gen_chunk(take)
            left -= take

    def extend_past(self, x1: float) -> None:
        """Extend until the certified frontier is strictly above x1."""
        while self.scanner.frontier <= x1:
            if self.steps_done >= self.budget:
                raise BudgetExhausted(0)
            self._gen_chunk(min(self.chunk, self.budget - self.steps_done))

    def path(self, seed_tag) -> WalkPath:
        steps = np.concatenate(self._chunks, axis=0)
        self._chunks = [steps]
        return WalkPath(steps=steps, seed=seed_tag, level=0)


def _unpack_column(keys: np.ndarray, d: int, j: int) -> np.ndarray:
    shift = COORD_BITS * (d - 1 - j)
    mask = np.uint64((1 << COORD_BITS) - 1)
    return ((keys >> np.uint64(shift)) & mask).astype(np.int64) - OFFSET


class _TraceWalker:
    """Walk on the settled part of a parent trace, one step at a time.

    Keeps its position packed, samples from per-mask cumulative tables,
    and asks the parent to extend whenever its first coordinate reaches
    the parent frontier. Builds its own trace and scanner so it can serve
    as the parent of the next level.
    """

    def __init__(
        self,
        p: BiasDistribution,
        parent,
        budget: int,
        gen,
        h_la: float,
        level: int,
        buffer: int = 4096,
    ):
        self.d = p.d
        self.level = level
        self.budget = budget
        self.gen = gen
        self._buffer = buffer
        self._tables = _mask_tables(p)
        self.parent = parent
        self._parent_adj = parent.trace._adj
        self.trace = TraceGraph(self.d)
        self._own_adj = self.trace._adj
        self.scanner = FrontierScanner(h_la)
        origin = pack((0,) * self.d)
        self._pos = origin
        self._x1 = 0
        self.keys: list[int] = [origin]
        self.steps_done = 0
        self.frontier_requests = 0
        self._u = np.empty(0)
        self._ui = 0

    @property
    def frontier(self) -> float:
        return self.scanner.frontier

    def _refill(self) -> None:
        self._u = self.gen.random(self._buffer)
        self._ui = 0

    def run_steps(self, m: int, stop_at: float = math.inf) -> int:
        """Advance up to m steps; returns the number actually taken.

        Stops early only when the first coordinate reaches stop_at
        (fixed-mode truncation). In extend mode the parent is grown on
        demand instead and the full m steps always complete, budgets
        permitting.
        """
        if self.steps_done + m > self.budget:
            raise BudgetExhausted(self.level)
        tables = self._tables
        padj = self._parent_adj
        oadj = self._own_adj
        push = self.scanner.push
        keys_append = self.keys.append
        parent = self.parent
        pos = self._pos
        x1 = self._x1
        S = parent.frontier
        u_arr = self._u
        ui = self._ui
        edge_count = self.trace._edge_count
        taken = 0
        try:
            while taken < m:
                if x1 >= stop_at:
                    break
                while x1 >= S:
                    parent.extend_past(x1)
                    S = parent.frontier
                    self.frontier_requests += 1
                entry = tables[padj[pos]]
                if entry is None:
                    raise IsolatedVertex(
                        f"no present direction has positive weight at level "
                        f"{self.level}, step {self.steps_done + taken}"
                    )
                if ui >= len(u_arr):
                    self._refill()
                    u_arr = self._u
                    ui = 0
                u = u_arr[ui]
                ui += 1
                cuts, deltas, d1s, ks = entry
                i = 0
                while i < len(cuts) and u > cuts[i]:
                    i += 1
                new = pos + deltas[i]
                k = ks[i]
                bit = 1 << k
                old = oadj.get(pos, 0)
                if not old & bit:
                    edge_count += 1
                oadj[pos] = old | bit
                oadj[new] = oadj.get(new, 0) | (1 << (k ^ 1))
                pos = new
                x1 += d1s[i]
                keys_append(pos)
                push(x1)
                taken += 1
        finally:
            self._pos = pos
            self._x1 = x1
            self._ui = ui
            self.steps_done += taken
            self.trace._edge_count = edge_count
            self.trace._end = pos
        return taken

    def extend_past(self, x1: float) -> None:
        while self.scanner.frontier <= x1:
            if self.steps_done >= self.budget:
                raise BudgetExhausted(self.level)
            self.run_steps(min(self._buffer, self.budget - self.steps_done))

    def path(self, seed_tag) -> WalkPath:
        if self.d <= 2:
            keys = np.array(self.keys, dtype=np.uint64)
            steps = np.empty((len(keys), self.d), dtype=np.int64)
            for j in range(self.d):
                steps[:, j] = _unpack_column(keys, self.d, j)
        else:
            # Keys wider than 64 bits stay Python ints.
            steps = np.array(
                [unpack(k, self.d) for k in self.keys], dtype=np.int64
            )
        return WalkPath(steps=steps, seed=seed_tag, level=self.level)


def _audit_counts(
    counts: dict[tuple[int, int], int],
    p: BiasDistribution,
    level: int,
    min_visits: int = 10_000,
    alpha: float = 1e-4,
) -> list[KernelAuditRow]:
    w = p.as_array()
    per_mask: dict[int, dict[int, int]] = {}
    for (mask, k), c in counts.items():
        per_mask.setdefault(mask, {})[k] = c
    rows = []
    for mask, obs in sorted(per_mask.items()):
        n = sum(obs.values())
        if n < min_visits:
            continue
        ks = [k for k in range(len(w)) if (mask >> k) & 1 and w[k] > 0.0]
        pk = w[ks] / w[ks].sum()
        o = np.array([obs.get(k, 0) for k in ks], dtype=np.float64)
        exp = n * pk
        chi2 = float(np.sum((o - exp) ** 2 / exp))
        pv = float(stats.chi2.sf(chi2, df=len(ks) - 1)) if len(ks) > 1 else 1.0
        rows.append(
            KernelAuditRow(
                level=level, mask=mask, n=n, chi2=chi2, p_value=pv,
                flagged=pv < alpha,
            )
        )
    return rows


def nested_simulate(cfg: SimulationConfig, replica: int = 0) -> NestedRun:
    """Run one replica of the nested walk stack.

    Level 0 is generated in vectorized chunks; each deeper level walks
    step by step on the settled part of the trace below it, extending its
    parent on demand (mode "extend") or truncating at the parent frontier
    minus h_la (mode "fixed", where parents are pre-run to their full
    budgets and never touched again). A BudgetExhausted raised here
    carries the partial run in its ``run`` attribute.
    """
    gens = [stream_for(cfg.seed, lvl, replica) for lvl in range(cfg.levels)]
    base = _Level0Source(cfg.biases[0], cfg.budgets[0], gens[0], cfg.chunk, cfg.h_la)
    walkers: list[_TraceWalker] = []
    parent = base
    for lvl in range(1, cfg.levels):
        w = _TraceWalker(
            cfg.biases[lvl], parent, cfg.budgets[lvl], gens[lvl], cfg.h_la, lvl
        )
        walkers.append(w)
        parent = w

    truncations: list[dict] = []
    exhausted = [False] * cfg.levels

    def _drive() -> None:
        if cfg.mode == "fixed":
            base.run_steps(cfg.budgets[0])
            for w in walkers:
                stop = w.parent.frontier - cfg.h_la
                taken = w.run_steps(w.budget, stop_at=stop)
                if taken < w.budget:
                    truncations.append(
                        {"level": w.level, "step": taken, "frontier": stop}
                    )
            return
        if not walkers:
            base.run_steps(cfg.budgets[0])
            return
        walkers[-1].run_steps(cfg.budgets[-1])

    try:
        _drive()
    except BudgetExhausted as e:
        exhausted[e.level] = True
        e.run = _finalize(cfg, replica, base, walkers, truncations, exhausted)
        raise

    return _finalize(cfg, replica, base, walkers, truncations, exhausted)


def _finalize(cfg, replica, base, walkers, truncations, exhausted) -> NestedRun:
    paths: list[WalkPath] = []
    traces: list[TraceGraph] = []
    records: list[RegenerationRecord] = []
    certs = 0
    sources = [base] + walkers
    e1 = _e1(cfg.biases[0].d)
    for lvl, src in enumerate(sources):
        tag = (cfg.seed, lvl, replica)
        path = src.path(tag)
        src.trace.certify_settled(src.scanner.frontier)
        if lvl < len(sources) - 1 or lvl == 0:
            # This walk's frontier gated a deeper walk (or it is the base
            # walk, whose lookahead margin carries the quantitative bound),
            # so a certification undercut is a correctness failure.
            rec = src.scanner.to_record(e1, cfg.per_event_error)
            audit_record(path.steps[:, 0], rec)
        else:
            # Deepest walk: nothing consumed its frontier, and its own
            # backtracking is not controlled by the base-calibrated margin,
            # so rebuild the record offline and demote any certification
            # the rest of the path undercut.
            rec = regenerations(
                path, e1, cfg.h_la, cfg.per_event_error, on_undercut="demote"
            )
        paths.append(path)
        traces.append(src.trace)
        records.append(rec)
        certs += len(rec.times)
    for i in range(1, len(traces)):
        if not traces[i].is_subgraph_of(traces[i - 1]):
            raise AssertionError(
                f"trace nesting violated between levels {i - 1} and {i}"
            )
    audit_rows: list[KernelAuditRow] = []
    if cfg.audit_kernel:
        for w in walkers:
            rows = _empirical_audit(w, cfg.biases[w.level])
            audit_rows.extend(rows)
    return NestedRun(
        config=cfg,
        replica=replica,
        paths=paths,
        traces=traces,
        records=records,
        certifications=certs,
        error_budget=certs * cfg.per_event_error,
        truncations=truncations,
        exhausted=exhausted,
        kernel_audit=audit_rows,
    )


def _empirical_audit(w: _TraceWalker, p: BiasDistribution) -> list[KernelAuditRow]:
    """Recount the walker's transitions against the restricted kernel.

    Replays the stored path against the final parent adjacency and
    chi-square-tests per-mask direction frequencies. Every step left from
    a vertex strictly below the then-current frontier, where the incident
    edges were already final, so the replayed mask equals the mask the
    sampler saw. Masks under 10k visits are skipped; small p-values are
    flagged, not failed.
    """
    keys = w.keys
    padj = w._parent_adj
    deltas = packed_deltas(w.d)
    delta_to_k = {dlt: k for k, dlt in enumerate(deltas)}
    counts: dict[tuple[int, int], int] = {}
    for i in range(len(keys) - 1):
        k = delta_to_k[keys[i + 1] - keys[i]]
        key = (padj[keys[i]], k)
        counts[key] = counts.get(key, 0) + 1
    return _audit_counts(counts, p, w.level)

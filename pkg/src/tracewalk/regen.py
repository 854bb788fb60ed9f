"""Regeneration structure, cut-points, and trap detection on finite paths.

A regeneration happens when the projection of the walk onto a direction
hits a strict new maximum it never falls below again. On a finite path
"never again" is replaced by a lookahead window: a candidate level L is
certified once the projection reaches L + h_la without dipping below L.
The probability that a certified level is later undercut is bounded by
the exponential backtracking bound at depth h_la, and a hard audit turns
any such miscertification that does show up in the observed path into a
CertificationError instead of silently bad statistics.

Candidates whose window is still open when the path ends are reported as
unresolved and excluded from every statistic.
"""

from __future__ import annotations

import math
from bisect import bisect_left, insort
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .trace import WalkPath, pack_array

_FLOOR_GUARD = 1e-9


class CertificationError(AssertionError):
    """A certified regeneration level was undercut later in the path."""


class InsufficientBlocks(ValueError):
    """No replica carries enough certified regeneration blocks."""


def _is_e1(ell: np.ndarray) -> bool:
    return abs(ell[0] - 1.0) < 1e-12 and np.all(np.abs(ell[1:]) < 1e-12)


def _project(path: WalkPath, ell: np.ndarray) -> np.ndarray:
    """Projection of the path onto ell; integer-valued fast path for e_1."""
    if _is_e1(ell):
        return path.e1_projection()
    return path.projection(ell)


@dataclass
class RegenerationRecord:
    """Certified regeneration times and levels of one path.

    times[j] is the j-th certified regeneration time (time 0 qualifies
    whenever the path never goes strictly below its starting level), and
    levels[j] the projection there. Unresolved candidates sit at the tail
    of the path where the lookahead window did not complete.
    """

    ell: np.ndarray
    times: np.ndarray
    levels: np.ndarray
    h_la: float
    per_event_error: float | None = None
    unresolved_times: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    unresolved_levels: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.float64))
    n_points: int = 0
    demoted: int = 0

    @property
    def n_blocks(self) -> int:
        return max(len(self.times) - 1, 0)


class FrontierScanner:
    """Streaming certification of regeneration levels.

    Push projection values one step at a time (or in batches); the scanner
    keeps the pending candidates, rejects any candidate whose level the
    projection later undercuts, and certifies a candidate once the running
    maximum clears it by h_la. ``frontier`` is the highest certified level.
    """

    __slots__ = ("h_la", "_t", "_max", "_pending", "times", "levels")

    def __init__(self, h_la: float, start_level: float = 0.0):
        if h_la <= 0:
            raise ValueError("lookahead margin must be positive")
        self.h_la = h_la
        self._t = 0
        self._max = start_level
        self._pending: deque = deque([(0, start_level)])
        self.times: list[int] = []
        self.levels: list[float] = []

    @property
    def frontier(self) -> float:
        return self.levels[-1] if self.levels else float("-inf")

    @property
    def certified_count(self) -> int:
        return len(self.times)

    @property
    def pending(self) -> list[tuple[int, float]]:
        return list(self._pending)

    def push(self, v) -> None:
        self._t += 1
        pend = self._pending
        if v > self._max:
            self._max = v
            pend.append((self._t, v))
            cutoff = v - self.h_la
            while pend and pend[0][1] <= cutoff:
                ct, cl = pend.popleft()
                self.times.append(ct)
                self.levels.append(cl)
        else:
            while pend and v < pend[-1][1]:
                pend.pop()

    def push_many(self, values) -> None:
        t = self._t
        mx = self._max
        pend = self._pending
        h = self.h_la
        times = self.times
        levels = self.levels
        arr = values.tolist() if isinstance(values, np.ndarray) else values
        for v in arr:
            t += 1
            if v > mx:
                mx = v
                pend.append((t, v))
                cutoff = v - h
                while pend and pend[0][1] <= cutoff:
                    ct, cl = pend.popleft()
                    times.append(ct)
                    levels.append(cl)
            else:
                while pend and v < pend[-1][1]:
                    pend.pop()
        self._t = t
        self._max = mx

    def to_record(
        self, ell: np.ndarray, per_event_error: float | None = None
    ) -> RegenerationRecord:
        pend = list(self._pending)
        return RegenerationRecord(
            ell=np.asarray(ell, dtype=np.float64),
            times=np.array(self.times, dtype=np.int64),
            levels=np.array(self.levels),
            h_la=self.h_la,
            per_event_error=per_event_error,
            unresolved_times=np.array([p[0] for p in pend], dtype=np.int64),
            unresolved_levels=np.array([p[1] for p in pend]),
            n_points=self._t + 1,
        )


def audit_record(proj: np.ndarray, record: RegenerationRecord) -> None:
    """Hard assertion: no certified level is undercut anywhere later on."""
    if len(record.times) == 0:
        return
    sufmin = np.minimum.accumulate(proj[::-1])[::-1]
    bad = np.nonzero(sufmin[record.times] < record.levels)[0]
    if bad.size:
        j = int(bad[0])
        raise CertificationError(
            f"certified level {record.levels[j]} at time {int(record.times[j])} "
            f"is undercut later in the observed path"
        )


def regenerations(
    path: WalkPath,
    ell: Sequence[float],
    h_la: float,
    per_event_error: float | None = None,
    on_undercut: str = "raise",
) -> RegenerationRecord:
    """Certified regenerations of a complete path in direction ell.

    Candidates are the strict-new-maximum times of the projection; a
    candidate at level L is certified when the projection reaches
    L + h_la before going strictly below L, rejected when it dips first,
    and unresolved when the path ends inside the window. Certified levels
    are audited against the whole observed path.

    A level certified by its window but undercut later in the path means
    the lookahead margin was too small for this walk. With
    on_undercut="raise" that is a hard error; with "demote" the offending
    candidates are dropped and counted in the record's ``demoted`` field,
    which keeps the surviving levels honest at the cost of a selection
    bias the margin was supposed to make negligible.
    """
    if on_undercut not in ("raise", "demote"):
        raise ValueError("on_undercut must be 'raise' or 'demote'")
    ell = np.asarray(ell, dtype=np.float64)
    proj = _project(path, ell)
    n = len(proj)
    M = np.maximum.accumulate(proj)
    cand = np.empty(n, dtype=bool)
    cand[0] = True
    cand[1:] = proj[1:] > M[:-1]
    cand_idx = np.nonzero(cand)[0]
    sufmin = np.minimum.accumulate(proj[::-1])[::-1]
    levels = proj[cand_idx]
    clean = sufmin[cand_idx] >= levels
    complete = levels + h_la <= M[-1]
    # One batched lookup; proj is int64 along e_1 and a per-candidate
    # searchsorted against it would convert M on every call.
    reaches = np.searchsorted(
        M.astype(np.float64, copy=False),
        levels.astype(np.float64) + h_la,
        side="left",
    )

    cert_times: list[int] = []
    cert_levels: list = []
    unres_times: list[int] = []
    unres_levels: list = []
    demoted = 0
    for i in range(len(cand_idx)):
        t = int(cand_idx[i])
        L = levels[i]
        if complete[i]:
            if clean[i]:
                cert_times.append(t)
                cert_levels.append(L)
            else:
                # Dipped below L at some point; certified anyway if the dip
                # came after the window completed, which the audit rejects
                # (or demotes, see the docstring).
                reach = int(reaches[i])
                if proj[t : reach + 1].min() >= L:
                    if on_undercut == "demote":
                        demoted += 1
                    else:
                        raise CertificationError(
                            f"level {L} at time {t} certified by its lookahead "
                            f"window but undercut later in the observed path"
                        )
        elif clean[i]:
            unres_times.append(t)
            unres_levels.append(L)
        # incomplete and dipped: plain rejected candidate

    record = RegenerationRecord(
        ell=ell,
        times=np.array(cert_times, dtype=np.int64),
        levels=np.array(cert_levels),
        h_la=h_la,
        per_event_error=per_event_error,
        unresolved_times=np.array(unres_times, dtype=np.int64),
        unresolved_levels=np.array(unres_levels),
        n_points=n,
        demoted=demoted,
    )
    audit_record(proj, record)
    return record


def uber_levels(
    records: Sequence[RegenerationRecord], paths: Sequence[WalkPath]
) -> tuple[np.ndarray, np.ndarray]:
    """Strictly positive levels certified for every walk in the stack.

    All records must be in direction e_1, where levels are integers and
    set intersection is exact. Returns the sorted common levels plus the
    top walk's position at its regeneration time for each common level.
    """
    if len(records) == 0 or len(records) != len(paths):
        raise ValueError("need one record per path")
    for rec in records:
        if not _is_e1(rec.ell):
            raise ValueError("uber levels are defined along e_1")
    sets = [set(int(v) for v in rec.levels if v > 0) for rec in records]
    common = sorted(set.intersection(*sets))
    top = records[-1]
    by_level = {int(v): int(t) for t, v in zip(top.times, top.levels)}
    pts = np.array(
        [paths[-1].steps[by_level[L]] for L in common], dtype=np.int64
    ).reshape(len(common), paths[-1].d)
    return np.array(common, dtype=np.int64), pts


def cut_points(path: WalkPath) -> np.ndarray:
    """Indices whose past and strict-future vertex sets are disjoint.

    Linear-time: n' is a cut-point iff no point visited after n' was first
    visited at or before n', i.e. the suffix minimum of first-visit times
    stays above n'. The final index is always a cut-point (empty future).
    """
    steps = path.steps
    n1 = steps.shape[0]
    keys = pack_array(steps)
    if path.d <= 2:
        arr = np.array(keys, dtype=np.uint64)
        order = np.argsort(arr, kind="stable")
        sa = arr[order]
        starts = np.flatnonzero(np.r_[True, sa[1:] != sa[:-1]])
        counts = np.diff(np.r_[starts, len(sa)])
        first_pos = order[starts]
        gid = np.repeat(np.arange(len(starts)), counts)
        F = np.empty(n1, dtype=np.int64)
        F[order] = first_pos[gid]
    else:
        first: dict[int, int] = {}
        F = np.empty(n1, dtype=np.int64)
        for i, k in enumerate(keys):
            v = first.get(k)
            if v is None:
                first[k] = i
                F[i] = i
            else:
                F[i] = v
    sufF = np.minimum.accumulate(F[::-1])[::-1]
    cut = np.empty(n1, dtype=bool)
    cut[:-1] = sufF[1:] > np.arange(n1 - 1)
    cut[-1] = True
    return np.flatnonzero(cut)


def _floor_guarded(x: float) -> int:
    return int(math.floor(x + _FLOOR_GUARD))


@dataclass
class TrapCensus:
    """Per-block trap events of one path at a single depth h.

    events[j] says whether block j (between certified regeneration times
    j and j+1) contains two cut-point times m <= n whose projection gap
    has floor h (mode "exact") or floor >= h (mode "deep"). Each event
    stores a witnessing pair of path indices.
    """

    h: int
    mode: str
    n_blocks: int
    events: np.ndarray
    witnesses: dict[int, tuple[int, int]]

    @property
    def fraction(self) -> float:
        return float(self.events.mean()) if self.n_blocks else 0.0


def trap_events(
    path: WalkPath,
    record: RegenerationRecord,
    ell: Sequence[float],
    h: int,
    cuts: np.ndarray | None = None,
    mode: str = "exact",
) -> TrapCensus:
    """Scan each regeneration block for a trapped backtrack of depth h.

    A block event needs cut-point times m <= n inside the block with
    floor((X_m - X_n).ell) equal to h ("exact") or at least h ("deep").
    Heights are exact integers along e_1; other directions use a floating
    floor with a 1e-9 guard. Completed blocks are unaffected by anything
    the generating walk does later, because pre-block, in-block, and
    post-block vertices live at disjoint projection ranges.
    """
    if h < 1:
        raise ValueError("trap depth h must be >= 1")
    if mode not in ("exact", "deep"):
        raise ValueError(f"unknown mode {mode!r}")
    ell = np.asarray(ell, dtype=np.float64)
    proj = _project(path, ell)
    integer = _is_e1(ell)
    if cuts is None:
        cuts = cut_points(path)
    times = record.times
    n_blocks = max(len(times) - 1, 0)
    events = np.zeros(n_blocks, dtype=bool)
    witnesses: dict[int, tuple[int, int]] = {}
    cproj = proj[cuts]
    for j in range(n_blocks):
        lo = int(np.searchsorted(cuts, times[j], side="left"))
        hi = int(np.searchsorted(cuts, times[j + 1], side="right"))
        if hi - lo < 2:
            continue
        if integer:
            seen: dict[int, int] = {}
            for idx in range(lo, hi):
                v = int(cproj[idx])
                if mode == "exact":
                    m_time = seen.get(v + h)
                    if m_time is not None:
                        events[j] = True
                        witnesses[j] = (m_time, int(cuts[idx]))
                        break
                else:
                    deep = [u for u in seen if u - v >= h]
                    if deep:
                        events[j] = True
                        witnesses[j] = (seen[min(deep)], int(cuts[idx]))
                        break
                if v not in seen:
                    seen[v] = int(cuts[idx])
        else:
            vals: list[float] = []
            when: dict[float, int] = {}
            for idx in range(lo, hi):
                v = float(cproj[idx])
                if mode == "exact":
                    lo_v = v + h - _FLOOR_GUARD
                    hi_v = v + h + 1 - _FLOOR_GUARD
                else:
                    lo_v = v + h - _FLOOR_GUARD
                    hi_v = math.inf
                i = bisect_left(vals, lo_v)
                if i < len(vals) and vals[i] < hi_v:
                    events[j] = True
                    witnesses[j] = (when[vals[i]], int(cuts[idx]))
                    break
                if v not in when:
                    when[v] = int(cuts[idx])
                    insort(vals, v)
    return TrapCensus(
        h=h, mode=mode, n_blocks=n_blocks, events=events, witnesses=witnesses
    )


@dataclass
class TrapScalingReport:
    """Trap counts at the scaling depth for an ensemble of paths."""

    n: int
    epsilon: float
    h_raw: float
    h_int: int
    threshold: float
    counts: np.ndarray
    accepted: np.ndarray
    rejected: int
    mode: str

    @property
    def fraction(self) -> float:
        if len(self.counts) == 0:
            return 0.0
        return float(np.mean(self.counts >= self.threshold))


def trap_scaling(
    runs: Sequence[tuple[WalkPath, RegenerationRecord]],
    ell: Sequence[float],
    n: int,
    epsilon: float,
    t_root: float,
    mode: str = "deep",
) -> TrapScalingReport:
    """Count blocks carrying traps at the scaling depth over an ensemble.

    The scaling depth (1 - epsilon) log(n) / t is rounded up to an integer
    height of at least 1. Block j runs between the j-th and (j+1)-th
    strictly positive certified regeneration, and the count per replica is
    over blocks 1..n-1; the block started at the origin is excluded
    because it is not distributed like the others. Replicas with fewer
    than n positive certified regenerations are rejected, never padded.
    The default counting mode is "deep" (floor of the gap at least h):
    the depth threshold is a real number, so the event asks for a trap at
    least that deep.
    """
    if not 0 < epsilon < 1:
        raise ValueError("need 0 < epsilon < 1")
    if n < 2:
        raise ValueError("need n >= 2")
    h_raw = (1.0 - epsilon) * math.log(n) / t_root
    h_int = max(1, math.ceil(h_raw - _FLOOR_GUARD))
    counts = []
    accepted = []
    rejected = 0
    for i, (path, record) in enumerate(runs):
        pos = record.times > 0
        times = record.times[pos]
        levels = record.levels[pos]
        if len(times) < n:
            rejected += 1
            continue
        sub = RegenerationRecord(
            ell=record.ell,
            times=times[:n],
            levels=levels[:n],
            h_la=record.h_la,
            per_event_error=record.per_event_error,
            n_points=record.n_points,
        )
        census = trap_events(path, sub, ell, h_int, mode=mode)
        counts.append(int(census.events.sum()))
        accepted.append(i)
    if not accepted:
        raise InsufficientBlocks(
            f"no replica carries {n} positive certified regenerations"
        )
    return TrapScalingReport(
        n=n,
        epsilon=epsilon,
        h_raw=h_raw,
        h_int=h_int,
        threshold=float(n ** (epsilon / 2.0)),
        counts=np.array(counts, dtype=np.int64),
        accepted=np.array(accepted, dtype=np.int64),
        rejected=rejected,
        mode=mode,
    )

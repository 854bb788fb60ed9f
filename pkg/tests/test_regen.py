import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_lattice_walk
from tracewalk.regen import (
    CertificationError,
    FrontierScanner,
    InsufficientBlocks,
    RegenerationRecord,
    audit_record,
    cut_points,
    regenerations,
    trap_events,
    trap_scaling,
    uber_levels,
)
from tracewalk.trace import WalkPath

E1 = [1.0, 0.0]


# -- brute-force oracles ------------------------------------------------------

def brute_cut_points(steps):
    """Quadratic reference: past and strict future share no vertex."""
    pts = [tuple(v) for v in steps]
    out = []
    for i in range(len(pts)):
        past = set(pts[: i + 1])
        future = set(pts[i + 1:])
        if not past & future:
            out.append(i)
    return np.array(out, dtype=np.int64)


def brute_regens(proj, h_la):
    """Reference certification by direct scanning.

    A candidate is a strict running maximum. It is certified when the rest
    of the path never goes below it and climbs by h_la, unresolved when it
    never goes below but also never climbs enough.
    """
    proj = np.asarray(proj, dtype=np.float64)
    certified, unresolved = [], []
    running = -math.inf
    for t, v in enumerate(proj):
        if t > 0 and v <= running:
            running = max(running, v)
            continue
        running = v
        tail = proj[t:]
        if tail.min() >= v:
            if tail.max() >= v + h_la:
                certified.append(t)
            else:
                unresolved.append(t)
    return certified, unresolved


def brute_trap_events(path, record, ell, h, mode):
    """Reference block census by direct pair enumeration over cut times."""
    ell = np.asarray(ell, dtype=np.float64)
    proj = path.steps.astype(np.float64) @ ell
    cuts = brute_cut_points(path.steps)
    out = []
    for j in range(max(len(record.times) - 1, 0)):
        a, b = record.times[j], record.times[j + 1]
        inside = [c for c in cuts if a <= c <= b]
        hit = False
        for x in range(len(inside)):
            for y in range(x, len(inside)):
                gap = proj[inside[x]] - proj[inside[y]]
                if mode == "exact":
                    hit = math.floor(gap + 1e-9) == h
                else:
                    hit = gap >= h - 1e-9
                if hit:
                    break
            if hit:
                break
        out.append(hit)
    return np.array(out, dtype=bool)


def path_from_proj(proj):
    """d=2 nearest-neighbour path whose e_1 projection is the given +-1 walk."""
    proj = np.asarray(proj, dtype=np.int64)
    assert np.all(np.abs(np.diff(proj)) == 1)
    steps = np.zeros((len(proj), 2), dtype=np.int64)
    steps[:, 0] = proj - proj[0]
    steps[:, 0] += proj[0]
    steps[:, 0] = proj
    return WalkPath(steps)


proj_walks = st.lists(st.sampled_from([1, 1, 1, -1]), min_size=1, max_size=300)


# -- cut points ---------------------------------------------------------------

def test_cut_points_match_brute_d2(rng):
    for _ in range(5):
        steps = random_lattice_walk(rng, 400, d=2)
        np.testing.assert_array_equal(
            cut_points(WalkPath(steps)), brute_cut_points(steps)
        )


def test_cut_points_match_brute_d3(rng):
    for _ in range(3):
        steps = random_lattice_walk(rng, 250, d=3)
        np.testing.assert_array_equal(
            cut_points(WalkPath(steps)), brute_cut_points(steps)
        )


def test_cut_points_edge_cases():
    one = WalkPath(np.zeros((1, 2), dtype=np.int64))
    np.testing.assert_array_equal(cut_points(one), [0])
    # immediate backtrack: the midpoint is not a cut point
    back = path_from_proj([0, 1, 0, 1, 2])
    got = cut_points(back)
    assert 1 not in got and 2 not in got
    assert got[-1] == 4


# -- certification ------------------------------------------------------------

@given(proj_walks, st.integers(1, 6))
@settings(max_examples=200, deadline=None)
def test_offline_matches_brute(incs, h_la):
    proj = np.concatenate([[0], np.cumsum(incs)])
    path = path_from_proj(proj)
    want_cert, want_unres = brute_regens(proj, h_la)
    rec = regenerations(path, E1, h_la, on_undercut="demote")
    assert rec.times.tolist() == want_cert
    assert rec.unresolved_times.tolist() == want_unres
    np.testing.assert_array_equal(rec.levels, proj[rec.times])


@given(proj_walks, st.integers(1, 6), st.integers(1, 7))
@settings(max_examples=200, deadline=None)
def test_scanner_matches_offline(incs, h_la, chunk):
    """The scanner certifies on window completion; the offline pass keeps
    the suffix-clean subset of exactly those and demotes the rest."""
    proj = np.concatenate([[0], np.cumsum(incs)])
    path = path_from_proj(proj)
    offline = regenerations(path, E1, h_la, on_undercut="demote")
    sc = FrontierScanner(h_la, start_level=0.0)
    for i in range(1, len(proj), chunk):
        sc.push_many(proj[i : i + chunk].astype(np.float64))
    rec = sc.to_record(np.array(E1))
    sufmin = np.minimum.accumulate(proj[::-1].astype(np.float64))[::-1]
    keep = sufmin[rec.times] >= rec.levels if len(rec.times) else np.array([], bool)
    assert rec.times[keep].tolist() == offline.times.tolist()
    np.testing.assert_allclose(rec.levels[keep], offline.levels)
    assert offline.demoted == int((~keep).sum())
    if offline.demoted:
        with pytest.raises(CertificationError):
            audit_record(proj.astype(np.float64), rec)
    else:
        audit_record(proj.astype(np.float64), rec)
    assert rec.unresolved_times.tolist() == offline.unresolved_times.tolist()
    assert rec.n_points == len(proj)


def test_scanner_push_one_at_a_time():
    proj = [0, 1, 2, 1, 2, 3, 4, 5]
    sc = FrontierScanner(2.0)
    for v in proj[1:]:
        sc.push(float(v))
    # the dip to 1 kills the level-2 candidate but not level 1; levels
    # 0, 1, 3 clear their windows, 4 and 5 stay pending
    assert sc.times == [0, 1, 5]
    assert sc.levels == [0.0, 1.0, 3.0]
    assert sc.frontier == 3.0
    assert sc.certified_count == 3
    assert [lvl for _, lvl in sc.pending] == [4.0, 5.0]


def test_scanner_rejects_bad_margin():
    with pytest.raises(ValueError):
        FrontierScanner(0.0)


def test_record_times_levels_increasing(rng):
    steps = random_lattice_walk(rng, 3000, d=2, p_forward=0.45)
    rec = regenerations(WalkPath(steps), E1, 25.0, on_undercut="demote")
    assert rec.n_blocks >= 1
    assert np.all(np.diff(rec.times) > 0)
    assert np.all(np.diff(rec.levels) > 0)
    if len(rec.unresolved_times):
        assert rec.unresolved_times[0] > rec.times[-1]


def test_audit_rejects_undercut_record():
    proj = np.array([0, 1, 2, 3, 2, 1, 0, -1], dtype=np.float64)
    fake = RegenerationRecord(
        ell=np.array(E1), times=np.array([2]), levels=np.array([2.0]), h_la=1.0
    )
    with pytest.raises(CertificationError):
        audit_record(proj, fake)
    clean = RegenerationRecord(
        ell=np.array(E1), times=np.array([], dtype=np.int64),
        levels=np.array([]), h_la=1.0,
    )
    audit_record(proj, clean)


def test_demote_counts_window_certified_undercuts():
    # climbs to 3, collapses to -1, then climbs away for good: with
    # h_la = 2 the first two candidates complete their windows before the
    # collapse, so they are exactly the demotable ones
    proj = [0, 1, 2, 3, 2, 1, 0, -1, 0, 1, 2, 3, 4, 5, 6, 7]
    path = path_from_proj(proj)
    with pytest.raises(CertificationError):
        regenerations(path, E1, 2.0)
    rec = regenerations(path, E1, 2.0, on_undercut="demote")
    assert rec.demoted == 2
    assert rec.times.tolist() == [12, 13]
    assert rec.levels.tolist() == [4.0, 5.0]
    assert rec.unresolved_times.tolist() == [14, 15]
    with pytest.raises(ValueError):
        regenerations(path, E1, 2.0, on_undercut="ignore")


# -- trap census --------------------------------------------------------------

def test_trap_events_monotone_path_has_none():
    path = path_from_proj(np.arange(50))
    rec = regenerations(path, E1, 3.0)
    for h in (1, 2, 3):
        for mode in ("exact", "deep"):
            census = trap_events(path, rec, E1, h, mode=mode)
            assert census.n_blocks == rec.n_blocks
            assert not census.events.any()
            assert census.fraction == 0.0


def test_trap_events_hand_built_integer_drop():
    # self-avoiding detour dropping one unit between cut points
    steps = np.array(
        [[0, 0], [1, 0], [1, 1], [1, 2], [0, 2], [0, 3], [1, 3], [2, 3], [3, 3]],
        dtype=np.int64,
    )
    path = WalkPath(steps)
    rec = RegenerationRecord(
        ell=np.array(E1), times=np.array([0, 8]), levels=np.array([0.0, 3.0]),
        h_la=1.0,
    )
    got1 = trap_events(path, rec, E1, 1, mode="exact")
    assert got1.events.tolist() == [True]
    m, n = got1.witnesses[0]
    assert steps[m][0] - steps[n][0] == 1 and m <= n
    assert trap_events(path, rec, E1, 2, mode="exact").events.tolist() == [False]
    assert trap_events(path, rec, E1, 1, mode="deep").events.tolist() == [True]
    assert trap_events(path, rec, E1, 2, mode="deep").events.tolist() == [False]


def test_trap_events_float_direction_drop():
    # projection along (1, 0.15) drops from 1.3 to 0.3 between cut points:
    # depth floors to 1 and nothing reaches 2
    steps = np.array(
        [[0, 0], [1, 0], [1, 1], [1, 2], [0, 2], [0, 3]], dtype=np.int64
    )
    path = WalkPath(steps)
    ell = [1.0, 0.15]
    rec = RegenerationRecord(
        ell=np.asarray(ell), times=np.array([0, 5]),
        levels=np.array([0.0, 0.45]), h_la=0.1,
    )
    assert trap_events(path, rec, ell, 1, mode="exact").events.tolist() == [True]
    assert trap_events(path, rec, ell, 2, mode="exact").events.tolist() == [False]
    assert trap_events(path, rec, ell, 1, mode="deep").events.tolist() == [True]
    assert trap_events(path, rec, ell, 2, mode="deep").events.tolist() == [False]


def test_trap_events_validation(rng):
    path = WalkPath(random_lattice_walk(rng, 50))
    rec = regenerations(path, E1, 30.0, on_undercut="demote")
    with pytest.raises(ValueError):
        trap_events(path, rec, E1, 0)
    with pytest.raises(ValueError):
        trap_events(path, rec, E1, 1, mode="both")


def test_trap_events_match_brute_census(rng):
    for trial in range(4):
        steps = random_lattice_walk(rng, 1500, d=2, p_forward=0.45)
        path = WalkPath(steps)
        rec = regenerations(path, E1, 20.0, on_undercut="demote")
        if rec.n_blocks < 3:
            continue
        for h in (1, 2):
            for mode in ("exact", "deep"):
                got = trap_events(path, rec, E1, h, mode=mode)
                want = brute_trap_events(path, rec, E1, h, mode)
                np.testing.assert_array_equal(got.events, want)
                for j, (m, n) in got.witnesses.items():
                    assert rec.times[j] <= m <= n <= rec.times[j + 1]


def test_trap_events_match_brute_float_direction(rng):
    ell = [0.8, 0.6]
    for trial in range(3):
        steps = random_lattice_walk(rng, 900, d=2, p_forward=0.5)
        path = WalkPath(steps)
        rec = regenerations(path, ell, 12.0, on_undercut="demote")
        if rec.n_blocks < 2:
            continue
        for h in (1, 2):
            for mode in ("exact", "deep"):
                got = trap_events(path, rec, ell, h, mode=mode)
                want = brute_trap_events(path, rec, ell, h, mode)
                np.testing.assert_array_equal(got.events, want)


# -- shared levels across a stack ---------------------------------------------

def test_uber_levels_straight_stack():
    path = path_from_proj(np.arange(30))
    rec = regenerations(path, E1, 4.0)
    levels, pts = uber_levels([rec, rec], [path, path])
    want = [int(v) for v in rec.levels if v > 0]
    assert levels.tolist() == want
    assert pts.shape == (len(want), 2)
    np.testing.assert_array_equal(pts[:, 0], want)


def test_uber_levels_intersection():
    path_a = path_from_proj(np.arange(30))
    rec_a = regenerations(path_a, E1, 4.0)
    proj_b = [0, 1, 2, 3, 4, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15]
    path_b = path_from_proj(proj_b)
    rec_b = regenerations(path_b, E1, 4.0)
    levels, pts = uber_levels([rec_a, rec_b], [path_a, path_b])
    set_a = {int(v) for v in rec_a.levels if v > 0}
    set_b = {int(v) for v in rec_b.levels if v > 0}
    assert set(levels.tolist()) == set_a & set_b
    # level 4 regenerates in path_b only at the second visit
    if 4 in levels:
        k = levels.tolist().index(4)
        assert pts[k, 0] == 4


def test_uber_levels_validation():
    path = path_from_proj(np.arange(10))
    rec = regenerations(path, E1, 3.0)
    with pytest.raises(ValueError):
        uber_levels([], [])
    with pytest.raises(ValueError):
        uber_levels([rec], [path, path])
    skew = regenerations(path, [0.8, 0.6], 3.0)
    with pytest.raises(ValueError):
        uber_levels([skew], [path])


# -- scaling census -----------------------------------------------------------

def straight_run(n):
    path = path_from_proj(np.arange(n))
    return path, regenerations(path, E1, 3.0)


def test_trap_scaling_depth_rounding():
    runs = [straight_run(200)]
    rep = trap_scaling(runs, E1, 100, 0.5, math.log(2.0))
    assert rep.h_raw == pytest.approx(0.5 * math.log(100) / math.log(2))
    assert rep.h_int == 4
    assert rep.threshold == pytest.approx(100 ** 0.25)
    assert rep.mode == "deep"
    assert rep.counts.tolist() == [0]
    assert rep.fraction == 0.0
    assert rep.rejected == 0
    # exact integer depth stays put instead of rounding up
    rep16 = trap_scaling(runs, E1, 16, 0.5, math.log(2.0))
    assert rep16.h_int == 2


def test_trap_scaling_rejects_short_replicas():
    runs = [straight_run(200), straight_run(30)]
    rep = trap_scaling(runs, E1, 100, 0.5, math.log(2.0))
    assert rep.rejected == 1
    assert rep.accepted.tolist() == [0]
    with pytest.raises(InsufficientBlocks):
        trap_scaling([straight_run(30)], E1, 100, 0.5, math.log(2.0))


def test_trap_scaling_excludes_origin_block():
    # a drop right after the origin counts for nothing: block 0 of the
    # census starts at the first positive regeneration
    proj = list(range(0, 8)) + [6, 7] + list(range(8, 40))
    path = path_from_proj(proj)
    rec = regenerations(path, E1, 2.0, on_undercut="demote")
    rep = trap_scaling([(path, rec)], E1, 4, 0.9, math.log(2.0))
    assert rep.h_int == 1
    # the 7 -> 6 dip sits between positive certified levels, so with the
    # whole prefix present the census sees it only if its block is inside
    # blocks 1..n-1 of the positive list
    first_pos = rec.times[rec.times > 0][0]
    assert first_pos > 0


def test_trap_scaling_validation():
    runs = [straight_run(200)]
    with pytest.raises(ValueError):
        trap_scaling(runs, E1, 100, 0.0, math.log(2.0))
    with pytest.raises(ValueError):
        trap_scaling(runs, E1, 100, 1.0, math.log(2.0))
    with pytest.raises(ValueError):
        trap_scaling(runs, E1, 1, 0.5, math.log(2.0))


# -- block independence on a long seeded run ----------------------------------

def test_block_lengths_look_independent():
    rng = np.random.default_rng(515151)
    n = 120_000
    w = np.array([0.4, 0.2, 0.2, 0.2])
    moves = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=np.int64)
    ks = rng.choice(4, size=n, p=w)
    steps = np.zeros((n + 1, 2), dtype=np.int64)
    steps[1:] = np.cumsum(moves[ks], axis=0)
    rec = regenerations(WalkPath(steps), E1, 40.0 / math.log(2.0))
    gaps = np.diff(rec.times).astype(np.float64)
    assert len(gaps) > 5000
    a, b = gaps[:-1], gaps[1:]
    rho = np.corrcoef(a, b)[0, 1]
    assert abs(rho) <= 4.0 / math.sqrt(len(gaps))
    # height increments along e_1 are geometric-like positive integers
    hgaps = np.diff(rec.levels)
    assert hgaps.min() >= 1.0

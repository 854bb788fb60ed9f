import math

import numpy as np
import pytest

from tracewalk.bias import conductance_params, ratio_bias
from tracewalk.engine import simulate_level0
from tracewalk.resistance import (
    FiniteNetwork,
    SingularSystem,
    effective_resistance,
    escape_probability,
    hit_before,
    never_return_probability,
    ray_tail_resistance,
    truncated_network,
)
from tracewalk.trace import TraceGraph, WalkPath


def network_walk_hits(net, start, target, avoid, n_trials, rng):
    """Independent network walker: next vertex chosen with probability
    proportional to edge conductance."""
    target = {net.index[v] for v in target}
    avoid = {net.index[v] for v in avoid}
    nbrs = [
        (np.array([j for j, _ in adj]), np.array([c for _, c in adj]))
        for adj in net._adj
    ]
    hits = 0
    for _ in range(n_trials):
        i = net.index[start]
        while True:
            if i in target:
                hits += 1
                break
            if i in avoid:
                break
            js, cs = nbrs[i]
            i = int(rng.choice(js, p=cs / cs.sum()))
    return hits / n_trials


# -- exact fixtures -----------------------------------------------------------

def test_series_resistors():
    net = FiniteNetwork.from_edges([("a", "m", 1 / 3.0), ("m", "b", 1 / 7.0)])
    assert effective_resistance(net, "a", "b") == pytest.approx(10.0, abs=1e-12)


def test_parallel_edges_combine():
    net = FiniteNetwork.from_edges([("a", "b", 2.0), ("a", "b", 3.0)])
    assert len(net.edges) == 1
    assert effective_resistance(net, "a", "b") == pytest.approx(0.2, abs=1e-12)


def test_square_cycle():
    net = FiniteNetwork.from_edges(
        [("a", "b", 1.0), ("b", "c", 1.0), ("c", "d", 1.0), ("d", "a", 1.0)]
    )
    assert effective_resistance(net, "a", "c") == pytest.approx(1.0, abs=1e-12)
    assert effective_resistance(net, "a", "b") == pytest.approx(0.75, abs=1e-12)


def test_bridged_square_reduces_by_symmetry():
    # the diagonal of a symmetric square carries no current
    square = [("a", "b", 1.0), ("b", "c", 1.0), ("c", "d", 1.0), ("d", "a", 1.0)]
    plain = FiniteNetwork.from_edges(square)
    bridged = FiniteNetwork.from_edges(square + [("b", "d", 5.0)])
    assert effective_resistance(bridged, "a", "c") == pytest.approx(
        effective_resistance(plain, "a", "c"), abs=1e-12
    )


def test_resistance_to_a_set():
    # grounding both far corners of a path through them
    net = FiniteNetwork.from_edges(
        [("x", "u", 1.0), ("x", "v", 1.0), ("u", "g1", 1.0), ("v", "g2", 1.0)]
    )
    # two series pairs of resistance 2 in parallel
    assert effective_resistance(net, "x", ["g1", "g2"]) == pytest.approx(
        1.0, abs=1e-12
    )


def test_network_validation():
    with pytest.raises(ValueError):
        FiniteNetwork(nodes=["a"], edges=[(0, 0, 1.0)])
    with pytest.raises(ValueError):
        FiniteNetwork(nodes=["a", "b"], edges=[(0, 1, -1.0)])
    with pytest.raises(ValueError):
        FiniteNetwork(nodes=["a", "a"], edges=[])
    net = FiniteNetwork.from_edges([("a", "b", 1.0)])
    with pytest.raises(ValueError):
        effective_resistance(net, "a", ["a"])
    with pytest.raises(KeyError):
        effective_resistance(net, "a", ["zz"])


def test_disconnected_target_is_singular():
    net = FiniteNetwork.from_edges([("a", "b", 1.0), ("c", "d", 1.0)])
    with pytest.raises(SingularSystem):
        effective_resistance(net, "a", "c")


def test_drop_edge():
    net = FiniteNetwork.from_edges(
        [("a", "b", 1.0), ("b", "c", 1.0), ("a", "c", 1.0)]
    )
    cut = net.drop_edge("a", "c")
    assert effective_resistance(cut, "a", "c") == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(KeyError):
        net.drop_edge("a", "zz")
    with pytest.raises(KeyError):
        cut.drop_edge("a", "c")


def test_rayleigh_monotonicity(rng):
    # deleting edges never lowers effective resistance
    for trial in range(5):
        m = 12
        triples = []
        for k in range(30):
            u, v = rng.choice(m, size=2, replace=False)
            triples.append((int(u), int(v), float(rng.uniform(0.2, 3.0))))
        net = FiniteNetwork.from_edges(triples)
        try:
            base = effective_resistance(net, 0, 1)
        except (SingularSystem, ValueError):
            continue
        for i, j, _ in net.edges[:10]:
            u, v = net.nodes[i], net.nodes[j]
            if {u, v} == {0, 1} and len(net._adj[net.index[0]]) == 1:
                continue
            try:
                worse = effective_resistance(net.drop_edge(u, v), 0, 1)
            except SingularSystem:
                continue
            assert worse >= base - 1e-9


def test_triangle_inequality_sampled(rng):
    for trial in range(4):
        m = 10
        triples = [
            (int(a), int(b), float(rng.uniform(0.3, 2.0)))
            for a, b in rng.integers(0, m, size=(25, 2))
            if a != b
        ]
        net = FiniteNetwork.from_edges(triples)
        labels = net.nodes
        for _ in range(6):
            a, b, c = rng.choice(len(labels), size=3, replace=False)
            a, b, c = labels[int(a)], labels[int(b)], labels[int(c)]
            try:
                rab = effective_resistance(net, a, b)
                rbc = effective_resistance(net, b, c)
                rac = effective_resistance(net, a, c)
            except SingularSystem:
                continue
            assert rac <= rab + rbc + 1e-9


# -- hitting probabilities ----------------------------------------------------

def test_hit_before_trivial_and_symmetric():
    net = FiniteNetwork.from_edges([("a", "b", 1.0), ("b", "c", 1.0)])
    assert hit_before(net, "a", "a", "c") == 1.0
    assert hit_before(net, "c", "a", "c") == 0.0
    assert hit_before(net, "b", "a", "c") == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        hit_before(net, "b", "a", "a")


def test_hit_before_weighted_step():
    net = FiniteNetwork.from_edges([("a", "b", 3.0), ("b", "c", 1.0)])
    assert hit_before(net, "b", "a", "c") == pytest.approx(0.75, abs=1e-12)


def test_hit_before_gamblers_ruin():
    n = 7
    net = FiniteNetwork.from_edges([(k, k + 1, 1.0) for k in range(n)])
    for k in range(1, n):
        assert hit_before(net, k, n, 0) == pytest.approx(k / n, abs=1e-12)


def test_hit_before_one_sided_reachability():
    net = FiniteNetwork.from_edges([("a", "b", 1.0), ("c", "d", 1.0)])
    assert hit_before(net, "a", "b", "c") == 1.0
    assert hit_before(net, "a", "c", "b") == 0.0
    with pytest.raises(SingularSystem):
        hit_before(net, "a", "c", "d")


def test_hit_before_matches_direct_walker(rng):
    for trial in range(3):
        m = 9
        triples = [
            (int(a), int(b), float(rng.uniform(0.3, 2.0)))
            for a, b in rng.integers(0, m, size=(18, 2))
            if a != b
        ]
        triples += [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]
        net = FiniteNetwork.from_edges(triples)
        want = hit_before(net, 1, [3], [0])
        if want in (0.0, 1.0):
            continue
        n_trials = 4000
        got = network_walk_hits(net, 1, [3], [0], n_trials, rng)
        sigma = math.sqrt(want * (1 - want) / n_trials)
        assert abs(got - want) <= 3 * sigma + 1e-9


# -- escape and never-return --------------------------------------------------

def test_escape_probability_line():
    net = FiniteNetwork.from_edges([(0, 1, 1.0), (1, 2, 1.0)])
    # from 0: R(0, {2}) = 2, c(0) = 1
    assert escape_probability(net, 0, [2]) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        escape_probability(net, 2, [2])


def test_escape_probability_is_scale_free():
    triples = [(0, 1, 1.0), (1, 2, 0.5), (0, 2, 2.0), (2, 3, 1.5)]
    a = FiniteNetwork.from_edges(triples)
    b = FiniteNetwork.from_edges([(u, v, 1e6 * c) for u, v, c in triples])
    assert escape_probability(a, 0, [3]) == pytest.approx(
        escape_probability(b, 0, [3]), abs=1e-12
    )


def test_ray_tail_resistance_geometric_sum():
    params = conductance_params(ratio_bias(2))
    got = ray_tail_resistance(params, (3, 0))
    # brute partial sums of the outward ray resistances
    total = 0.0
    for k in range(200):
        x = (3 + k, 0)
        y = (4 + k, 0)
        total += math.exp(-params.log_conductance(x, y))
    assert got == pytest.approx(total, rel=1e-12)
    flat = conductance_params(
        ratio_bias(1)
    )
    assert ray_tail_resistance(flat, (0, 0)) == math.inf


def straight_trace(n):
    steps = np.zeros((n + 1, 2), dtype=np.int64)
    steps[:, 0] = np.arange(n + 1)
    return TraceGraph.from_path(WalkPath(steps))


def test_never_return_exact_on_straight_trace():
    # 1-d network: the left side is a dead end, so escape flows only
    # through the right ray and both bracket ends are geometric sums
    params = conductance_params(ratio_bias(2))
    g = straight_trace(12)
    x = (4, 0)
    net = truncated_network(g, params, far=12, tail="ray")

    def cond(k):
        return math.exp(params.log_conductance((k, 0), (k + 1, 0)))

    r_right_finite = sum(1.0 / cond(k) for k in range(4, 12))
    r_tail = ray_tail_resistance(params, (12, 0))
    cx = cond(3) + cond(4)
    want_upper = (1.0 / r_right_finite) / cx
    want_lower = (1.0 / (r_right_finite + r_tail)) / cx
    got = never_return_probability(net, x)
    assert got.upper == pytest.approx(want_upper, rel=1e-10)
    assert got.lower == pytest.approx(want_lower, rel=1e-10)
    assert got.tail_finite
    assert 0.0 < got.lower < got.upper < 1.0

    ground = truncated_network(g, params, far=12, tail="ground")
    point = never_return_probability(ground, x)
    assert point.lower == point.upper == pytest.approx(want_upper, rel=1e-10)


def test_never_return_infinite_tail_drops_lower_bound():
    params = conductance_params(ratio_bias(1))
    g = straight_trace(8)
    net = truncated_network(g, params, far=8, tail="ray")
    got = never_return_probability(net, (2, 0))
    assert got.lower == 0.0
    assert not got.tail_finite
    assert got.upper > 0.0


def test_truncated_network_validation():
    params = conductance_params(ratio_bias(2))
    g = straight_trace(5)
    with pytest.raises(ValueError):
        truncated_network(g, params, far=5, tail="open")
    with pytest.raises(ValueError):
        truncated_network(g, params, far=99)
    net = truncated_network(g, params)
    assert net.boundary == [(5, 0)]
    with pytest.raises(ValueError):
        never_return_probability(net, (5, 0))
    bare = FiniteNetwork.from_edges([(0, 1, 1.0)])
    with pytest.raises(ValueError):
        never_return_probability(bare, 0)


def test_bracket_narrows_with_radius():
    # deeper truncation planes leave less unknown continuation
    params = conductance_params(ratio_bias(2))
    path = simulate_level0(ratio_bias(2), 4000, 2026)
    g = TraceGraph.from_path(path)
    widths = []
    for far in (10, 20, 40):
        net = truncated_network(g, params, far=far, tail="ray")
        br = never_return_probability(net, (0, 0))
        assert 0.0 <= br.lower <= br.upper <= 1.0
        widths.append(br.width)
    assert widths[0] > widths[1] > widths[2]
    assert widths[2] < 1e-6


def test_from_trace_applies_rescaling():
    params = conductance_params(ratio_bias(2))
    g = straight_trace(6)
    net = FiniteNetwork.from_trace(g, params)
    assert net.scale_log != 0.0
    want = sum(
        math.exp(-params.log_conductance((k, 0), (k + 1, 0))) for k in range(6)
    )
    assert effective_resistance(net, (0, 0), (6, 0)) == pytest.approx(
        want, rel=1e-10
    )
    with pytest.raises(ValueError):
        FiniteNetwork.from_trace(
            TraceGraph.from_path(WalkPath(np.zeros((1, 3), dtype=np.int64))),
            params,
        )


def test_return_counts_are_geometric(rng):
    # number of visits to x before escape is geometric with the escape
    # probability as its success parameter
    net = FiniteNetwork.from_edges(
        [(0, 1, 1.0), (1, 2, 2.0), (0, 2, 1.0), (2, 3, 1.0), (1, 3, 0.5)]
    )
    p_esc = escape_probability(net, 0, [3])
    nbrs = [
        (np.array([j for j, _ in adj]), np.array([c for _, c in adj]))
        for adj in net._adj
    ]
    n_trials = 3000
    counts = np.zeros(n_trials, dtype=np.int64)
    for trial in range(n_trials):
        i = 0
        visits = 0
        while i != 3:
            if i == 0:
                visits += 1
            js, cs = nbrs[i]
            i = int(rng.choice(js, p=cs / cs.sum()))
        counts[trial] = visits
    # chi-square against Geometric(p_esc), tail-lumped at 6
    kmax = 6
    obs = np.array(
        [(counts == k).sum() for k in range(1, kmax)] + [(counts >= kmax).sum()],
        dtype=np.float64,
    )
    probs = np.array(
        [p_esc * (1 - p_esc) ** (k - 1) for k in range(1, kmax)]
        + [(1 - p_esc) ** (kmax - 1)]
    )
    exp = n_trials * probs
    chi2 = float(((obs - exp) ** 2 / exp).sum())
    import scipy.stats
    assert scipy.stats.chi2.sf(chi2, df=kmax - 1) > 1e-4

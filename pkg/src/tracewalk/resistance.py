"""Electrical-network computations on finite traces.

The conductance model makes the walk on a trace reversible, so hitting
probabilities and escape probabilities reduce to harmonic potentials and
effective resistances on the weighted graph. Conductances grow like
beta to the projection, which overflows quickly; networks therefore
store conductances rescaled so the largest equals 1, and quantities
where the scale cancels (probabilities) are computed in scaled units
throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, diags
from scipy.sparse.linalg import cg, spsolve

from .bias import ConductanceParams
from .phase import NonConvergence
from .trace import TraceGraph

_DIRECT_SOLVE_MAX = 10_000


class SingularSystem(ValueError):
    """No boundary vertex is reachable, so the potential is undetermined."""


@dataclass
class FiniteNetwork:
    """A finite weighted graph with conductances in rescaled units.

    scale_log is the natural log of the true conductance that was mapped
    to 1; true conductances are the stored ones times exp(scale_log).
    Nodes may be any hashable labels. boundary optionally designates the
    far-field proxy vertices of a truncated infinite network, and tails
    their outward continuation: a map from boundary node to the scaled
    conductance of its collapsed infinite tail, or None when the boundary
    is to be read as a perfect ground.
    """

    nodes: list
    edges: list[tuple[int, int, float]]
    scale_log: float = 0.0
    boundary: list | None = None
    tails: dict | None = None
    index: dict = field(init=False)
    _adj: list[list[tuple[int, float]]] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {v: i for i, v in enumerate(self.nodes)}
        if len(self.index) != len(self.nodes):
            raise ValueError("duplicate node labels")
        adj: list[list[tuple[int, float]]] = [[] for _ in self.nodes]
        for i, j, c in self.edges:
            if i == j:
                raise ValueError("self loops are not allowed")
            if c <= 0:
                raise ValueError("conductances must be positive")
            adj[i].append((j, c))
            adj[j].append((i, c))
        self._adj = adj

    @classmethod
    def from_edges(cls, triples) -> "FiniteNetwork":
        """Build from (u, v, conductance) triples in true units.

        Parallel edges are combined by adding their conductances.
        """
        nodes: list = []
        index: dict = {}
        combined: dict[tuple[int, int], float] = {}
        for u, v, c in triples:
            for w in (u, v):
                if w not in index:
                    index[w] = len(nodes)
                    nodes.append(w)
            i, j = index[u], index[v]
            if i > j:
                i, j = j, i
            combined[(i, j)] = combined.get((i, j), 0.0) + float(c)
        edges = [(i, j, c) for (i, j), c in combined.items()]
        return cls(nodes=nodes, edges=edges, scale_log=0.0)

    @classmethod
    def from_trace(cls, g: TraceGraph, params: ConductanceParams) -> "FiniteNetwork":
        if g.d != params.d:
            raise ValueError("dimension mismatch")
        nodes = sorted(g.vertices())
        index = {v: i for i, v in enumerate(nodes)}
        raw: list[tuple[int, int, float]] = []
        logs: list[float] = []
        for x, axis in g.edges():
            y = tuple(c + (1 if j == axis else 0) for j, c in enumerate(x))
            raw.append((index[x], index[y], 0.0))
            logs.append(params.log_conductance(x, y))
        if not logs:
            return cls(nodes=nodes, edges=[], scale_log=0.0)
        arr = np.array(logs)
        scale = float(arr.max())
        scaled = np.exp(arr - scale)
        edges = [(i, j, float(c)) for (i, j, _), c in zip(raw, scaled)]
        return cls(nodes=nodes, edges=edges, scale_log=scale)

    def drop_edge(self, u, v) -> "FiniteNetwork":
        """A copy with the edge between u and v removed."""
        i, j = self.index[u], self.index[v]
        if i > j:
            i, j = j, i
        kept = [
            e for e in self.edges
            if (min(e[0], e[1]), max(e[0], e[1])) != (i, j)
        ]
        if len(kept) == len(self.edges):
            raise KeyError(f"no edge between {u!r} and {v!r}")
        return FiniteNetwork(
            nodes=list(self.nodes), edges=kept, scale_log=self.scale_log,
            boundary=self.boundary, tails=self.tails,
        )

    def with_extra_edges(self, triples_scaled) -> "FiniteNetwork":
        """A copy with extra (node, node, scaled conductance) edges; new
        labels are appended as new nodes."""
        nodes = list(self.nodes)
        index = dict(self.index)
        edges = list(self.edges)
        for u, v, c in triples_scaled:
            for w in (u, v):
                if w not in index:
                    index[w] = len(nodes)
                    nodes.append(w)
            edges.append((index[u], index[v], float(c)))
        return FiniteNetwork(
            nodes=nodes, edges=edges, scale_log=self.scale_log,
            boundary=self.boundary, tails=self.tails,
        )

    def scaled_vertex_conductance(self, u) -> float:
        i = self.index[u]
        return float(sum(c for _, c in self._adj[i]))


def _component(net: FiniteNetwork, seed: int, absorbing: set[int]) -> set[int]:
    """Vertices reachable from seed, not expanding through absorbing ones."""
    comp = {seed}
    stack = [seed]
    while stack:
        i = stack.pop()
        if i in absorbing and i != seed:
            continue
        for j, _ in net._adj[i]:
            if j not in comp:
                comp.add(j)
                stack.append(j)
    return comp


def _sparse_solve(A, b) -> np.ndarray:
    n = A.shape[0]
    if n <= _DIRECT_SOLVE_MAX:
        return spsolve(A.tocsc(), b)
    M = diags(1.0 / A.diagonal())
    try:
        x, info = cg(A.tocsr(), b, rtol=1e-12, atol=0.0, maxiter=40 * n, M=M)
    except TypeError:
        x, info = cg(A.tocsr(), b, tol=1e-12, atol=0.0, maxiter=40 * n, M=M)
    if info != 0:
        raise NonConvergence(f"conjugate gradient stalled (info={info})")
    return x


def _potentials(net: FiniteNetwork, fixed: dict[int, float], seed: int) -> dict[int, float]:
    """Harmonic potential on the component of seed with the given boundary
    values; raises SingularSystem when no fixed vertex is reachable."""
    comp = _component(net, seed, set(fixed))
    reached_fixed = {i for i in fixed if i in comp}
    if not reached_fixed:
        raise SingularSystem("no boundary vertex is reachable from the source")
    interior = sorted(i for i in comp if i not in fixed)
    pot = {i: fixed[i] for i in reached_fixed}
    if not interior:
        return pot
    loc = {i: k for k, i in enumerate(interior)}
    n = len(interior)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    diag = np.zeros(n)
    rhs = np.zeros(n)
    for i in interior:
        k = loc[i]
        for j, c in net._adj[i]:
            diag[k] += c
            if j in loc:
                rows.append(k)
                cols.append(loc[j])
                vals.append(-c)
            elif j in fixed:
                rhs[k] += c * fixed[j]
    rows.extend(range(n))
    cols.extend(range(n))
    vals.extend(diag)
    L = coo_matrix((vals, (rows, cols)), shape=(n, n))
    x = _sparse_solve(L, rhs)
    for i in interior:
        pot[i] = float(x[loc[i]])
    return pot


def _current_out(net: FiniteNetwork, i: int, pot: dict[int, float]) -> float:
    vi = pot[i]
    return float(
        sum(c * (vi - pot[j]) for j, c in net._adj[i] if j in pot)
    )


def _as_node_set(net: FiniteNetwork, spec) -> set[int]:
    """spec is either one node label or a list/set of them."""
    if isinstance(spec, (list, set, frozenset)):
        return {net.index[v] for v in spec}
    if spec in net.index:
        return {net.index[spec]}
    raise KeyError(f"unknown vertex {spec!r}")


def effective_resistance(net: FiniteNetwork, a, B) -> float:
    """Effective resistance between a and the vertex set B, in true units.

    Raises SingularSystem when B is unreachable from a. For heavily
    rescaled trace networks the true-unit value can overflow or
    underflow; probability-level quantities avoid this by staying in
    scaled units.
    """
    ia = net.index[a]
    ib = _as_node_set(net, B)
    if ia in ib:
        raise ValueError("source belongs to the target set")
    fixed = {i: 0.0 for i in ib}
    fixed[ia] = 1.0
    pot = _potentials(net, fixed, ia)
    current = _current_out(net, ia, pot)
    if current <= 0:
        raise SingularSystem("no current flows; the system is degenerate")
    return (1.0 / current) * math.exp(-net.scale_log)


def hit_before(net: FiniteNetwork, start, target, avoid) -> float:
    """P(walk from start hits the target set before the avoid set).

    The walk moves with probabilities proportional to conductances, so
    this is the harmonic potential that is 1 on target and 0 on avoid.
    Exact 1.0 or 0.0 is returned when only one of the sets is reachable;
    SingularSystem when neither is.
    """
    it = _as_node_set(net, target)
    iv = _as_node_set(net, avoid)
    if it & iv:
        raise ValueError("target and avoid sets overlap")
    i0 = net.index[start]
    if i0 in it:
        return 1.0
    if i0 in iv:
        return 0.0
    fixed = {i: 1.0 for i in it}
    fixed.update({i: 0.0 for i in iv})
    pot = _potentials(net, fixed, i0)
    return min(1.0, max(0.0, pot[i0]))


def escape_probability(net: FiniteNetwork, x, boundary) -> float:
    """P(walk from x reaches the boundary set before returning to x).

    Equals 1 / (c(x) R(x, boundary)) where c(x) is the total conductance
    at x; the rescaling cancels, so this is exact in scaled units.
    """
    ix = net.index[x]
    ib = _as_node_set(net, boundary)
    if ix in ib:
        raise ValueError("x belongs to the boundary set")
    fixed = {i: 0.0 for i in ib}
    fixed[ix] = 1.0
    pot = _potentials(net, fixed, ix)
    current = _current_out(net, ix, pot)
    cx = net.scaled_vertex_conductance(x)
    return min(1.0, current / cx)


def ray_tail_resistance(params: ConductanceParams, b) -> float:
    """True-unit resistance of the straight ray b, b+e1, b+2e1, ...

    Consecutive edge conductances grow by the factor beta**ell_1, so the
    resistances form a geometric series; infinite when that factor is
    not above 1 (no drift along e_1 to pay for the escape).
    """
    q = math.exp(-params.log_beta * params.ell[0])
    if q >= 1.0 - 1e-15:
        return math.inf
    b = tuple(int(c) for c in b)
    b1 = list(b)
    b1[0] += 1
    r0 = math.exp(-params.log_conductance(b, tuple(b1)))
    return r0 / (1.0 - q)


def truncated_network(
    g: TraceGraph,
    params: ConductanceParams,
    far: int | None = None,
    tail: str = "ray",
) -> FiniteNetwork:
    """Cut the trace network at the plane of first coordinate far.

    Vertices at or past the plane form the boundary proxy for the
    unsampled continuation. tail "ray" equips each boundary vertex with
    the collapsed resistance of a straight outward ray (infinite tails
    are recorded as conductance 0); tail "ground" declares the boundary
    to be a perfect conductor to infinity, which collapses the
    never-return bracket to a point.
    """
    if tail not in ("ray", "ground"):
        raise ValueError(f"unknown tail treatment {tail!r}")
    net = FiniteNetwork.from_trace(g, params)
    if far is None:
        far = max(v[0] for v in net.nodes)
    boundary = [v for v in net.nodes if v[0] >= far]
    if not boundary:
        raise ValueError(f"no vertex lies at first coordinate {far} or above")
    tails: dict | None
    if tail == "ground":
        tails = None
    else:
        q = math.exp(-params.log_beta * params.ell[0])
        tails = {}
        for b in boundary:
            if q >= 1.0 - 1e-15:
                tails[b] = 0.0
                continue
            b1 = list(b)
            b1[0] += 1
            log_c = (
                params.log_conductance(b, tuple(b1))
                + math.log1p(-q)
                - net.scale_log
            )
            tails[b] = math.exp(log_c)
    return FiniteNetwork(
        nodes=net.nodes, edges=net.edges, scale_log=net.scale_log,
        boundary=boundary, tails=tails,
    )


@dataclass
class NeverReturnBracket:
    """Bracket on the probability of never returning to x when the trace
    keeps growing past the truncation plane.

    upper treats the boundary as shorted to a perfect ground, which no
    continuation can beat; lower keeps only the recorded tail resistances
    (a straight outward ray per boundary vertex; any extra structure in
    the true continuation only raises escape). The two coincide when the
    network declares its boundary to be exact ground, and lower is 0 when
    some walk reaching the boundary has no transient ray to leave by.
    """

    lower: float
    upper: float
    n_boundary: int
    tail_finite: bool

    @property
    def width(self) -> float:
        return self.upper - self.lower


def never_return_probability(net: FiniteNetwork, x) -> NeverReturnBracket:
    """Bracket P_x(the walk on the ever-growing trace never returns to x).

    Needs a network from truncated_network (or any network with a
    designated boundary). Both bounds are 1 / (c(x) R(x, infinity)) with
    the continuation past the boundary replaced by its best and recorded
    cases; the rescaling cancels.
    """
    if net.boundary is None:
        raise ValueError("the network has no designated far boundary")
    if x in net.boundary:
        raise ValueError("x lies on the far boundary")
    upper = escape_probability(net, x, net.boundary)
    if net.tails is None:
        return NeverReturnBracket(
            lower=upper, upper=upper, n_boundary=len(net.boundary),
            tail_finite=True,
        )
    if any(c <= 0.0 for c in net.tails.values()):
        return NeverReturnBracket(
            lower=0.0, upper=upper, n_boundary=len(net.boundary),
            tail_finite=False,
        )
    aux = ("__far_field__",)
    net_ray = net.with_extra_edges(
        [(b, aux, c) for b, c in net.tails.items()]
    )
    ix = net_ray.index[x]
    pot = _potentials(net_ray, {net_ray.index[aux]: 0.0, ix: 1.0}, ix)
    current = _current_out(net_ray, ix, pot)
    lower = min(1.0, current / net.scaled_vertex_conductance(x))
    return NeverReturnBracket(
        lower=lower, upper=upper, n_boundary=len(net.boundary),
        tail_finite=True,
    )

"""Step distributions on the 2d signed unit directions and their
derived analytic quantities.

A bias is a probability vector over the steps {+-e_j : j = 1..d}. From it
we derive the drift vector, the log-odds direction along which the edge
conductances grow, the growth rate beta, the conductance of any lattice
edge, the kernel of the walk restricted to a subgraph, and the
transience/recurrence verdict for a walk placed on the trace of a walk
driven by a base bias.

Weight ordering everywhere: index k = 2j is +e_j, k = 2j+1 is -e_j,
axes numbered from 0. This matches the edge-bit convention of
:mod:`tracewalk.trace`, so a trace incidence mask indexes directly into
the weight vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Sequence

import numpy as np

from .trace import TraceGraph, directions

_SUM_TOL = 1e-12


class ZeroWeight(ValueError):
    """Log-odds quantities need strictly positive weights."""


class NotAdjacent(ValueError):
    """Conductance is defined on lattice edges only."""


class IsolatedVertex(ValueError):
    """The restricted kernel is undefined at a degree-0 vertex."""


@dataclass(frozen=True)
class BiasDistribution:
    """Probability vector over the 2d signed unit steps.

    Weights may be floats or exact rationals; rationals are kept as given
    so that small fixtures stay exact, and are converted on demand for
    numeric work.
    """

    d: int
    weights: tuple

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("dimension must be >= 2")
        if len(self.weights) != 2 * self.d:
            raise ValueError(
                f"need {2 * self.d} weights for d={self.d}, got {len(self.weights)}"
            )
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be nonnegative")
        total = float(sum(self.weights))
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"weights sum to {total!r}, not 1")

    @classmethod
    def from_ratios(cls, d: int, ratios: Sequence) -> "BiasDistribution":
        """Normalize a vector of nonnegative ratios exactly."""
        fr = [Fraction(r) for r in ratios]
        total = sum(fr)
        if total == 0:
            raise ValueError("all ratios zero")
        return cls(d, tuple(w / total for w in fr))

    @property
    def exact(self) -> bool:
        return all(isinstance(w, Rational) for w in self.weights)

    def as_array(self) -> np.ndarray:
        return np.array([float(w) for w in self.weights], dtype=np.float64)

    def weight(self, e: Sequence[int]) -> float:
        for vec, k in directions(self.d):
            if tuple(e) == vec:
                return float(self.weights[k])
        raise ValueError(f"{tuple(e)} is not a signed unit direction in d={self.d}")

    @property
    def all_positive(self) -> bool:
        return all(w > 0 for w in self.weights)


def direction_vectors(d: int) -> np.ndarray:
    """(2d, d) array of the step vectors in weight order."""
    return np.array([vec for vec, _ in directions(d)], dtype=np.int64)


def drift(p: BiasDistribution) -> np.ndarray:
    """delta_j = p(e_j) - p(-e_j)."""
    w = p.as_array()
    return w[0::2] - w[1::2]


@dataclass(frozen=True)
class LogOdds:
    """Log-odds vector, its unit direction, and the growth rate beta.

    unit is None when the raw vector vanishes (fully balanced weights);
    beta is then exactly 1 and no growth direction exists.
    """

    raw: np.ndarray
    unit: np.ndarray | None
    beta: float

    @property
    def degenerate(self) -> bool:
        return self.unit is None


def log_odds(p: BiasDistribution) -> LogOdds:
    if not p.all_positive:
        raise ZeroWeight("log-odds need all 2d weights strictly positive")
    w = p.as_array()
    raw = np.log(w[0::2]) - np.log(w[1::2])
    norm = float(np.linalg.norm(raw))
    if norm == 0.0:
        return LogOdds(raw=raw, unit=None, beta=1.0)
    return LogOdds(raw=raw, unit=raw / norm, beta=float(np.exp(norm)))


@dataclass(frozen=True)
class ConductanceParams:
    """Parameters of the edge conductances induced by a bias.

    The conductance of edge (x, y) is prod_j c_j^{|y_j - x_j|} times
    beta^{(x v y) . ell} with the componentwise maximum x v y. c_j is the
    backward weight p(-e_j). Values are handled in log space because the
    beta power overflows within a few hundred lattice units.
    """

    d: int
    c: np.ndarray          # c_j = p(-e_j)
    log_c: np.ndarray
    beta: float
    log_beta: float
    ell: np.ndarray        # unit growth direction; zero vector when beta == 1

    def log_conductance(self, x: Sequence[int], y: Sequence[int]) -> float:
        xa = np.asarray(x, dtype=np.int64)
        ya = np.asarray(y, dtype=np.int64)
        diff = np.abs(ya - xa)
        if int(diff.sum()) != 1:
            raise NotAdjacent(f"{tuple(x)} and {tuple(y)} are not adjacent")
        top = np.maximum(xa, ya)
        return float(self.log_c @ diff + self.log_beta * (top @ self.ell))

    def conductance(self, x: Sequence[int], y: Sequence[int]) -> float:
        return float(np.exp(self.log_conductance(x, y)))


def conductance_params(p: BiasDistribution) -> ConductanceParams:
    lo = log_odds(p)
    w = p.as_array()
    c = w[1::2].copy()
    ell = np.zeros(p.d) if lo.degenerate else lo.unit
    return ConductanceParams(
        d=p.d,
        c=c,
        log_c=np.log(c),
        beta=lo.beta,
        log_beta=float(np.log(lo.beta)),
        ell=ell,
    )


def conductance(params: ConductanceParams, x: Sequence[int], y: Sequence[int]) -> float:
    return params.conductance(x, y)


def restricted_kernel(
    p: BiasDistribution, g: TraceGraph, x: Sequence[int]
) -> np.ndarray:
    """Step law of the p-walk on g at x, as a (2d,) vector in weight order.

    Directions whose edge is absent get probability 0; present directions
    are renormalized by the total weight over present edges.
    """
    mask = g.incident_mask(x)
    if mask == 0:
        raise IsolatedVertex(tuple(x))
    w = p.as_array()
    out = np.zeros_like(w)
    for k in range(2 * p.d):
        if mask & (1 << k):
            out[k] = w[k]
    total = out.sum()
    if total == 0:
        raise IsolatedVertex(
            f"{tuple(x)}: all incident edges carry zero weight under the bias"
        )
    return out / total


@dataclass(frozen=True)
class Condition1Report:
    """Transience verdict for a walk with bias pi on the trace chain of p0.

    part_a: the base drift is nonnegative with a strictly positive first
    component. part_b: all weights of pi are positive. part_c: the base
    drift has positive inner product with pi's log-odds direction;
    None when that direction does not exist. The walk is transient when
    all three hold and recurrent when a and b hold but the inner product
    is <= 0; anything else is undefined.
    """

    part_a: bool
    part_b: bool
    part_c: bool | None
    verdict: str
    dot: float | None = None
    note: str = ""


def check_condition1(p0: BiasDistribution, pi: BiasDistribution) -> Condition1Report:
    if p0.d != pi.d:
        raise ValueError("dimension mismatch")
    d0 = drift(p0)
    part_a = bool(np.all(d0 >= 0.0) and d0[0] > 0.0)
    part_b = pi.all_positive
    if not part_b:
        return Condition1Report(part_a, False, None, "undefined",
                                note="pi has a zero weight")
    lo = log_odds(pi)
    if lo.degenerate:
        return Condition1Report(part_a, True, None, "undefined",
                                note="pi is balanced (beta = 1), no growth direction")
    dot = float(d0 @ lo.unit)
    part_c = dot > 0.0
    if part_a and part_c:
        verdict = "transient"
    elif part_a:
        verdict = "recurrent"
    else:
        verdict = "undefined"
    return Condition1Report(part_a, part_b, part_c, verdict, dot=dot)


# -- built-in families -------------------------------------------------------

def ratio_bias(r, d: int = 2) -> BiasDistribution:
    """Forward weight r on +e_1 against weight 1 on every other direction.

    ratio_bias(2) is the base walk of the reference sweep family
    (p(e_1) = 2/5 in d = 2); the sweep varies r in the child walk.
    """
    ratios = [Fraction(r) if isinstance(r, (int, Fraction)) else r] + [1] * (2 * d - 1)
    if isinstance(ratios[0], Fraction):
        return BiasDistribution.from_ratios(d, ratios)
    total = float(r) + (2 * d - 1)
    return BiasDistribution(d, tuple([float(r) / total] + [1.0 / total] * (2 * d - 1)))


def boosted_axes_bias(d: int, k: int, gamma) -> BiasDistribution:
    """Weight gamma on +e_1..+e_k, weight 1 on all remaining directions."""
    if not 1 <= k <= d:
        raise ValueError("need 1 <= k <= d")
    ratios = [0] * (2 * d)
    for j in range(d):
        ratios[2 * j] = gamma if j < k else 1
        ratios[2 * j + 1] = 1
    if isinstance(gamma, (int, Fraction)):
        return BiasDistribution.from_ratios(d, ratios)
    total = float(sum(ratios))
    return BiasDistribution(d, tuple(float(x) / total for x in ratios))


def shrinking_drift_bias(eps: float) -> BiasDistribution:
    """d=2 bias (1/4+eps, 1/4-eps, 1/4, 1/4): drift eps*2 along e_1."""
    if not 0 < eps < 0.25:
        raise ValueError("need 0 < eps < 1/4")
    return BiasDistribution(2, (0.25 + eps, 0.25 - eps, 0.25, 0.25))


def lateral_concentration_bias(eps: float) -> BiasDistribution:
    """d=2 bias (eps/2, eps/4, 1-eps, eps/4): mass concentrates on +e_2."""
    if not 0 < eps < 1:
        raise ValueError("need 0 < eps < 1")
    return BiasDistribution(2, (eps / 2, eps / 4, 1 - eps, eps / 4))

"""Ballisticity phase criterion and related analytic machinery.

For a base bias p0 and a child bias pi with growth direction ell and
growth rate beta, the deciding quantity is the moment generating function

    phi(t) = E[exp(-t X_1 . ell)] = sum_e p0(e) exp(-t e.ell),

a strictly convex function with phi(0) = 1 and phi'(0) = -delta0.ell.
When delta0.ell > 0 it dips below 1 and crosses back up at a unique
positive root t; alpha = exp(t). The child walk is ballistic when
beta < alpha and sub-ballistic when beta > alpha. The same root gives
the exponential backtracking bound exp(-t h), the tilted trap drift
delta_hat, and the closed-form value of the rate function at delta_hat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bias import (
    BiasDistribution,
    Condition1Report,
    check_condition1,
    conductance_params,
    direction_vectors,
    drift,
    log_odds,
)

BISECT_TOL = 1e-12
CRITICAL_TOL = 1e-9


class NoPositiveRoot(ValueError):
    """phi never returns to 1 on t > 0 (drift along ell is <= 0)."""


class NonConvergence(RuntimeError):
    """Iteration cap hit before reaching the requested tolerance."""


class TargetOutsideHull(ValueError):
    """Rate function target outside the open step hull."""


class DomainError(ValueError):
    """Argument outside the domain of a closed-form expression."""


def _projections(p0: BiasDistribution, ell: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = p0.as_array()
    s = direction_vectors(p0.d).astype(np.float64) @ np.asarray(ell, dtype=np.float64)
    return w, s


def phi(p0: BiasDistribution, ell: Sequence[float], t) -> float | np.ndarray:
    """One-step MGF of -X_1 . ell under p0; accepts scalar or array t."""
    w, s = _projections(p0, np.asarray(ell, dtype=np.float64))
    ta = np.asarray(t, dtype=np.float64)
    vals = np.exp(-np.multiply.outer(ta, s)) @ w
    if np.ndim(t) == 0:
        return float(vals)
    return vals


def phi_prime(p0: BiasDistribution, ell: Sequence[float], t) -> float | np.ndarray:
    w, s = _projections(p0, np.asarray(ell, dtype=np.float64))
    ta = np.asarray(t, dtype=np.float64)
    vals = np.exp(-np.multiply.outer(ta, s)) @ (-s * w)
    if np.ndim(t) == 0:
        return float(vals)
    return vals


def solve_root(
    p0: BiasDistribution,
    ell: Sequence[float],
    tol: float = BISECT_TOL,
    max_iter: int = 400,
) -> float:
    """Unique positive solution of phi(t) = 1, by bracketed bisection.

    The upper bracket is found by doubling from t = 1 until phi > 1; the
    lower bracket is 0, where phi equals 1 and enters with negative slope.
    Deterministic for fixed inputs. Raises NoPositiveRoot when the drift
    projection is <= 0 (phi never dips below 1 or never comes back up).
    """
    ell = np.asarray(ell, dtype=np.float64)
    w, s = _projections(p0, ell)
    if float(drift(p0) @ ell) <= 0.0:
        raise NoPositiveRoot("drift projection onto ell is <= 0")
    if not np.any((w > 0) & (s < 0)):
        raise NoPositiveRoot("no backward step mass along ell, phi stays below 1")
    hi = 1.0
    doublings = 0
    while phi(p0, ell, hi) <= 1.0:
        hi *= 2.0
        doublings += 1
        if doublings > 200:
            raise NonConvergence("upper bracket not found")
    lo = 0.0
    it = 0
    while hi - lo > tol:
        it += 1
        if it > max_iter:
            raise NonConvergence(f"bisection did not reach tol={tol}")
        mid = 0.5 * (lo + hi)
        if phi(p0, ell, mid) > 1.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def trap_drift(p0: BiasDistribution, ell: Sequence[float], t: float) -> np.ndarray:
    """Tilted mean step sum_e p0(e) exp(-t e.ell) e.

    At the root of phi the tilted weights are again a probability vector
    and the result points against ell: delta_hat . ell = -phi'(t) < 0.
    """
    ell = np.asarray(ell, dtype=np.float64)
    w = p0.as_array()
    E = direction_vectors(p0.d).astype(np.float64)
    tilt = w * np.exp(-t * (E @ ell))
    return tilt @ E


def backtrack_bound(p0: BiasDistribution, ell: Sequence[float], h: float) -> float:
    """Exponential bound exp(-t h) on P(-min_n X_n . ell >= h)."""
    if h < 0:
        raise DomainError("depth h must be >= 0")
    t = solve_root(p0, ell)
    return math.exp(-t * h)


def rate_function(
    p0: BiasDistribution,
    target: Sequence[float],
    grad_tol: float = 1e-10,
    max_iter: int = 200,
) -> float:
    """Legendre transform sup_x (x.target - log E[exp(X_1 . x)]).

    Damped Newton ascent on a smooth concave objective; the gradient is
    target minus the tilted mean and the Hessian is minus the tilted
    covariance. Requires strictly positive weights, in which case the
    open step hull is the open L1 unit ball.
    """
    if not p0.all_positive:
        raise DomainError("rate function needs strictly positive weights")
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (p0.d,):
        raise DomainError(f"target must have shape ({p0.d},)")
    if float(np.abs(target).sum()) >= 1.0:
        raise TargetOutsideHull(f"|target|_1 = {float(np.abs(target).sum())} >= 1")
    w = p0.as_array()
    E = direction_vectors(p0.d).astype(np.float64)

    def objective(x):
        a = E @ x
        amax = a.max()
        z = w * np.exp(a - amax)
        zsum = z.sum()
        logZ = amax + math.log(zsum)
        q = z / zsum
        mu = q @ E
        cov = (E * q[:, None]).T @ E - np.outer(mu, mu)
        return float(x @ target - logZ), mu, cov

    x = np.zeros(p0.d)
    val, mu, cov = objective(x)
    for _ in range(max_iter):
        grad = target - mu
        if float(np.abs(grad).max()) <= grad_tol:
            return max(val, 0.0)
        try:
            step = np.linalg.solve(cov, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(cov + 1e-13 * np.eye(p0.d), grad)
        eta = 1.0
        for _ in range(60):
            new_val, new_mu, new_cov = objective(x + eta * step)
            if new_val >= val + 1e-4 * eta * float(grad @ step):
                break
            eta *= 0.5
        else:
            raise NonConvergence("line search failed")
        x = x + eta * step
        val, mu, cov = new_val, new_mu, new_cov
    raise NonConvergence(f"gradient norm above {grad_tol} after {max_iter} iterations")


def boosted_root_closed_form(
    d: int, k0: int, ki: int, gamma0: float, gammai: float
) -> float:
    """Closed-form root for the boosted-axes family.

    Base bias: weight gamma0 on +e_1..+e_k0, 1 elsewhere; child bias the
    same shape with (ki, gammai). The child's growth direction is the
    normalized indicator of its boosted axes, and the root of phi comes
    out of a quadratic in exp(-t/sqrt(ki)):

        t = sqrt(ki) * log(1 + min(ki, k0) * (gamma0 - 1) / ki).

    gammai enters only through the requirement gammai > 1, which fixes
    the direction; the value of the root does not depend on it.
    """
    if not (isinstance(k0, (int, np.integer)) and isinstance(ki, (int, np.integer))):
        raise DomainError("k0 and ki must be integers")
    if not (1 <= k0 <= d and 1 <= ki <= d):
        raise DomainError("need 1 <= k0, ki <= d")
    if not (gamma0 > 1 and gammai > 1):
        raise DomainError("need gamma0 > 1 and gammai > 1")
    m = min(int(ki), int(k0))
    return math.sqrt(ki) * math.log1p(m * (gamma0 - 1.0) / ki)


@dataclass(frozen=True)
class PhaseReport:
    """Everything the phase criterion derives for a (p0, pi) pair."""

    condition1: Condition1Report
    phase: str                       # ballistic | sub-ballistic | critical | undefined
    beta: float | None
    t: float | None
    alpha: float | None
    delta0: np.ndarray = field(default=None)
    delta_i: np.ndarray = field(default=None)
    ell_hat: np.ndarray | None = None
    ell: np.ndarray | None = None
    trap_drift: np.ndarray | None = None
    lambda_value: float | None = None
    tol: float = CRITICAL_TOL

    def to_record(self) -> dict:
        """Flat key/value view for CSV and JSON writers."""
        rec: dict[str, object] = {
            "phase": self.phase,
            "verdict": self.condition1.verdict,
            "cond1_a": self.condition1.part_a,
            "cond1_b": self.condition1.part_b,
            "cond1_c": self.condition1.part_c,
            "beta": self.beta,
            "t": self.t,
            "alpha": self.alpha,
            "lambda_value": self.lambda_value,
        }
        for name, vec in (
            ("delta0", self.delta0),
            ("delta_i", self.delta_i),
            ("ell_hat", self.ell_hat),
            ("ell", self.ell),
            ("trap_drift", self.trap_drift),
        ):
            if vec is not None:
                for j, v in enumerate(np.asarray(vec, dtype=np.float64)):
                    rec[f"{name}_{j + 1}"] = float(v)
        return rec


def classify(
    p0: BiasDistribution, pi: BiasDistribution, tol: float = CRITICAL_TOL
) -> PhaseReport:
    """Full phase report for the pi-walk on the trace chain of p0.

    The critical band |beta - alpha| <= tol * max(alpha, beta) is reported
    as its own phase because the boundary case is genuinely unresolved;
    outside the band the verdict depends only on the sign of alpha - beta.
    Condition-1 failures yield phase "undefined" with the verdict attached.
    """
    cond = check_condition1(p0, pi)
    d0 = drift(p0)
    di = drift(pi)
    beta = None
    ell_hat = None
    ell = None
    if cond.part_b:
        lo = log_odds(pi)
        beta = lo.beta
        ell_hat = lo.raw
        ell = lo.unit
    if cond.verdict != "transient":
        return PhaseReport(
            condition1=cond, phase="undefined", beta=beta, t=None, alpha=None,
            delta0=d0, delta_i=di, ell_hat=ell_hat, ell=ell, tol=tol,
        )
    t = solve_root(p0, ell)
    alpha = math.exp(t)
    if abs(beta - alpha) <= tol * max(alpha, beta):
        phase_name = "critical"
    elif beta < alpha:
        phase_name = "ballistic"
    else:
        phase_name = "sub-ballistic"
    dhat = trap_drift(p0, ell, t)
    lam = -t * float(ell @ dhat)
    return PhaseReport(
        condition1=cond, phase=phase_name, beta=beta, t=t, alpha=alpha,
        delta0=d0, delta_i=di, ell_hat=ell_hat, ell=ell,
        trap_drift=dhat, lambda_value=lam, tol=tol,
    )


# -- simplicity of the limit trace -------------------------------------------

def simplicity_summand(
    pi: BiasDistribution, p0: BiasDistribution, e: Sequence[int], c: float
) -> float:
    """One term of the non-simplicity series for direction e != e_1:

        (c_i(0, e_1) / c_i(0, e)) * min(1, (beta^{c delta0.ell} - 1) beta^c).

    Computed in log space; the conductance ratio reduces to the weight
    ratio pi(e_1)/pi(e) but is evaluated through the conductance form.
    """
    e = tuple(int(v) for v in e)
    d = pi.d
    e1 = tuple(1 if j == 0 else 0 for j in range(d))
    if e == e1:
        raise DomainError("summand is defined for directions e != e_1")
    if sum(abs(v) for v in e) != 1:
        raise DomainError(f"{e} is not a signed unit direction")
    if c <= 0:
        raise DomainError("need c > 0")
    lo = log_odds(pi)
    if lo.degenerate:
        return 0.0
    params = conductance_params(pi)
    origin = (0,) * d
    log_ratio = params.log_conductance(origin, e1) - params.log_conductance(origin, e)
    dot = float(drift(p0) @ lo.unit)
    if dot <= 0:
        raise DomainError("base drift must project positively on pi's growth direction")
    log_beta = math.log(lo.beta)
    a = c * dot * log_beta
    b = c * log_beta
    log_first = a if a > 40 else math.log(math.expm1(a))
    log_term = log_first + b
    term = 1.0 if log_term >= 0 else math.exp(log_term)
    return math.exp(log_ratio) * term


@dataclass(frozen=True)
class SeriesReport:
    """Partial sums of the non-simplicity series plus a decay heuristic."""

    e: tuple
    c: float
    terms: np.ndarray
    partial_sums: np.ndarray
    summable: bool
    note: str

    @property
    def total(self) -> float:
        return float(self.partial_sums[-1]) if len(self.partial_sums) else 0.0


def simplicity_series(
    pseq: Sequence[BiasDistribution],
    p0: BiasDistribution,
    e: Sequence[int],
    c: float,
    n_terms: int,
) -> SeriesReport:
    """Partial sums of the summand over the first n_terms child biases.

    The summability flag is a ratio test over the provided prefix only
    and is reported as a heuristic, not a proof.
    """
    if n_terms > len(pseq):
        raise ValueError(f"asked for {n_terms} terms, sequence has {len(pseq)}")
    terms = np.array(
        [simplicity_summand(pseq[i], p0, e, c) for i in range(n_terms)],
        dtype=np.float64,
    )
    sums = np.cumsum(terms)
    if n_terms == 0:
        return SeriesReport(tuple(e), c, terms, sums, False, "empty prefix")
    tail = terms[n_terms // 2:]
    if np.all(tail == 0.0):
        return SeriesReport(tuple(e), c, terms, sums, True, "tail is identically zero")
    ratios = []
    for i in range(len(tail) - 1):
        if tail[i] > 0:
            ratios.append(tail[i + 1] / tail[i])
    if not ratios:
        return SeriesReport(tuple(e), c, terms, sums, False, "too few terms")
    worst = max(ratios)
    summable = bool(worst < 0.999)
    note = (
        f"ratio test over prefix: max tail ratio {worst:.6g}"
        + ("" if summable else " (no decay, heuristic says not summable)")
    )
    return SeriesReport(tuple(e), c, terms, sums, summable, note)

"""Distinctness measures between density operators.

``delta_tilde(rho, sigma)`` is the smallest weight ``eps`` such that ``rho``
is a mixture ``(1 - eps) sigma + eps sigma'``; ``delta_hat`` symmetrizes it.
The maximum distinctness probability is the infimum of ``delta_hat`` path
costs between two states. It is not computed exactly: ``p_neq_max_bounds``
returns a certified interval whose lower end is the trace distance and whose
upper end is the cost of an explicit witness path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimMismatch, EmptyPath
from .statekit import (
    DensityOperator,
    as_matrix,
    eigvalsh,
    jordan_decompose,
    operator_to_json,
    random_channel,
    random_density,
    random_pure,
    schatten_1_norm,
    symmetrize,
)

# eigenvalue floor for the bisection feasibility test; far below tol so the
# returned value stays an over-approximation of the infimum
FEASIBILITY_FLOOR = 1e-13


def _pair(rho, sigma) -> tuple[np.ndarray, np.ndarray]:
    a, b = as_matrix(rho), as_matrix(sigma)
    if a.shape != b.shape:
        raise DimMismatch(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a, b


def trace_distance(rho, sigma) -> float:
    a, b = _pair(rho, sigma)
    return 0.5 * schatten_1_norm(a - b)


def delta_tilde(rho, sigma, tol: float = 1e-9, max_iter: int = 60) -> float:
    """Smallest ``eps`` with ``rho - (1 - eps) sigma`` positive semi-definite.

    Feasibility is monotone in ``eps`` and always holds at ``eps = 1``, so a
    bisection on ``[0, 1]`` brackets the infimum; the upper end of the final
    bracket is returned, which overshoots by at most ``tol``.
    """
    a, b = _pair(rho, sigma)
    diff = symmetrize(a - b)
    b = symmetrize(b)

    def feasible(eps: float) -> bool:
        return eigvalsh(diff + eps * b)[0] >= -FEASIBILITY_FLOOR

    if feasible(0.0):
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def delta_hat(rho, sigma, tol: float = 1e-9) -> float:
    return min(delta_tilde(rho, sigma, tol), delta_tilde(sigma, rho, tol))


@dataclass(frozen=True)
class Midpoint:
    """State reachable from both inputs by mixing in weight ``eps_prime``."""

    omega: DensityOperator
    eps_prime: float
    rho_residue: np.ndarray | None = field(default=None, repr=False)
    sigma_residue: np.ndarray | None = field(default=None, repr=False)


def midpoint_state(rho, sigma) -> Midpoint:
    """Build ``omega = (rho - N) / (1 + eps) = (sigma + P) / (1 + eps)``.

    ``P`` and ``N`` are the positive and negative parts of ``rho - sigma`` and
    ``eps`` is their trace distance. Then ``omega = (1 - e') rho + e' rho'``
    and ``omega = (1 - e') sigma + e' sigma'`` with ``e' = eps / (1 + eps)``,
    ``rho' = -N / eps`` and ``sigma' = P / eps``.
    """
    a, b = _pair(rho, sigma)
    pos, neg = jordan_decompose(a - b)
    eps = float(np.trace(pos).real)
    if eps <= 0.0:
        return Midpoint(DensityOperator(a), 0.0)
    omega = (a - neg) / (1.0 + eps)
    return Midpoint(
        omega=DensityOperator(omega),
        eps_prime=eps / (1.0 + eps),
        rho_residue=-neg / eps,
        sigma_residue=pos / eps,
    )


def path_cost(states: Sequence, tol: float = 1e-9) -> float:
    """Sum of ``delta_hat`` over consecutive states of a path."""
    if len(states) < 2:
        raise EmptyPath("a path needs at least two states")
    mats = [as_matrix(s) for s in states]
    for m in mats[1:]:
        _pair(mats[0], m)
    return float(sum(delta_hat(mats[i], mats[i + 1], tol) for i in range(len(mats) - 1)))


@dataclass
class DistinctnessBounds:
    """Certified interval ``[lower, upper]`` for the maximum distinctness probability."""

    lower: float
    upper: float
    witness_path: list = field(repr=False)
    evaluations: int = 0

    def to_json(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "witness_path": [operator_to_json(s) for s in self.witness_path],
            "evaluations": self.evaluations,
        }


class _PathSearch:
    """Coordinate-descent search over paths, counting delta_hat evaluations."""

    def __init__(self, tol: float, budget: int, rng: np.random.Generator):
        self.tol = tol
        self.budget = budget
        self.rng = rng
        self.used = 0

    def edge(self, a, b) -> float:
        self.used += 1
        return delta_hat(a, b, self.tol)

    def can_spend(self, n: int) -> bool:
        return self.used + n <= self.budget

    def refine(self, path: list[np.ndarray], costs: list[float]) -> tuple[list, list]:
        """Improve ``path`` in place until the budget is exhausted."""
        step = 0
        stale = 0
        while self.can_spend(2):
            n_inner = len(path) - 2
            move = step % 3
            step += 1
            if n_inner == 0 or move == 2:
                # split the most expensive edge at its midpoint
                i = int(np.argmax(costs))
                mid = midpoint_state(path[i], path[i + 1]).omega.matrix
                c1, c2 = self.edge(path[i], mid), self.edge(mid, path[i + 1])
                if c1 + c2 < costs[i] - 1e-15:
                    path.insert(i + 1, mid)
                    costs[i:i + 1] = [c1, c2]
                    stale = 0
                else:
                    stale += 1
                continue
            i = 1 + int(self.rng.integers(n_inner))
            if move == 0:
                cand = midpoint_state(path[i - 1], path[i + 1]).omega.matrix
            else:
                eta = float(self.rng.uniform(0.01, 0.3))
                g = random_density(path[i].shape[0], self.rng)
                cand = (1.0 - eta) * path[i] + eta * g
            c1, c2 = self.edge(path[i - 1], cand), self.edge(cand, path[i + 1])
            if c1 + c2 < costs[i - 1] + costs[i] - 1e-15:
                path[i] = cand
                costs[i - 1], costs[i] = c1, c2
                stale = 0
            else:
                stale += 1
            if stale > 60:
                break
        return path, costs


def p_neq_max_bounds(rho, sigma, refine_budget: int = 0, seed: int = 0,
                     tol: float = 1e-9) -> DistinctnessBounds:
    """Two-sided bounds on the maximum distinctness probability.

    The lower bound is the trace distance. The upper bound is the cheapest
    of the direct path, the path through :func:`midpoint_state` (cost at
    most ``2 TD / (1 + TD)``) and, if ``refine_budget > 0``, paths found by a
    seeded coordinate-descent search spending that many ``delta_hat``
    evaluations. The witness path realizing ``upper`` is returned.
    """
    a, b = _pair(rho, sigma)
    lower = trace_distance(a, b)
    if lower == 0.0:
        return DistinctnessBounds(0.0, 0.0, [DensityOperator(a), DensityOperator(b)], 0)

    direct = delta_hat(a, b, tol)
    mid = midpoint_state(a, b).omega.matrix
    mid_costs = [delta_hat(a, mid, tol), delta_hat(mid, b, tol)]
    evaluations = 3
    best_path, best_cost = [a, b], direct
    if sum(mid_costs) < best_cost:
        best_path, best_cost = [a, mid, b], sum(mid_costs)

    if refine_budget > 0:
        search = _PathSearch(tol, refine_budget, np.random.default_rng(seed))
        path, costs = search.refine([a, mid, b], list(mid_costs))
        evaluations += search.used
        if sum(costs) < best_cost:
            best_path, best_cost = path, float(sum(costs))

    # lower <= P_max is a theorem; the clamp only absorbs bisection roundoff
    upper = min(1.0, max(best_cost, lower))
    return DistinctnessBounds(
        lower=lower,
        upper=upper,
        witness_path=[DensityOperator(s) for s in best_path],
        evaluations=evaluations,
    )


# --- axiom conformance ------------------------------------------------------

MetricFunctional = Callable[[np.ndarray, np.ndarray], float]


@dataclass
class AxiomResult:
    name: str
    passed: bool
    worst_violation: float
    checked: int
    witness: dict | None = None

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "worst_violation": self.worst_violation,
            "checked": self.checked,
            "witness": self.witness,
        }


@dataclass
class ConformanceReport:
    results: dict[str, AxiomResult]
    seed: int
    samples: int
    tol: float

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def __getitem__(self, key: str) -> AxiomResult:
        return self.results[key]

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "samples": self.samples,
            "tol": self.tol,
            "all_passed": self.all_passed,
            "axioms": {k: v.to_json() for k, v in self.results.items()},
        }


def _sample_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    kind = rng.random()
    if kind < 0.5:
        return random_density(dim, rng)
    if kind < 0.75:
        return random_pure(dim, rng)
    return random_density(dim, rng, rank=int(rng.integers(1, dim + 1)))


class _Tracker:
    def __init__(self, name: str, tol: float):
        self.name = name
        self.tol = tol
        self.worst = 0.0
        self.checked = 0
        self.witness = None

    def record(self, violation: float, states: dict, **extra) -> None:
        self.checked += 1
        if violation > self.worst:
            self.worst = float(violation)
            self.witness = {k: operator_to_json(v) for k, v in states.items()}
            self.witness.update({k: float(v) for k, v in extra.items()})

    def result(self) -> AxiomResult:
        passed = self.worst <= self.tol
        return AxiomResult(self.name, passed, self.worst, self.checked,
                           None if passed else self.witness)


def conformance_check(f: MetricFunctional, samples: int = 1000, seed: int = 0,
                      dims: Sequence[int] = (2, 3, 4), tol: float = 1e-9) -> ConformanceReport:
    """Test a candidate distinctness functional against the axioms.

    Checks, each on ``samples`` seeded random instances:

    - ``A1`` triangle inequality on triples,
    - ``A2`` symmetry on pairs,
    - ``A3`` operational bound on mixtures ``(1 - e) sigma + e sigma'``,
    - ``P1`` vanishing on identical pairs and only there,
    - ``P2`` data processing under random Kraus channels.

    A violation is the amount by which the inequality fails; an axiom passes
    when its worst violation is at most ``tol``. Failing axioms carry an
    explicit witness.
    """
    rng = np.random.default_rng(seed)
    dims = list(dims)
    t = {name: _Tracker(name, tol) for name in ("A1", "A2", "A3", "P1", "P2")}

    for _ in range(samples):
        d = int(rng.choice(dims))
        rho, sigma, omega = (_sample_state(d, rng) for _ in range(3))

        v = f(rho, sigma) - f(rho, omega) - f(omega, sigma)
        t["A1"].record(v, {"rho": rho, "sigma": sigma, "omega": omega})

        v = abs(f(rho, sigma) - f(sigma, rho))
        t["A2"].record(v, {"rho": rho, "sigma": sigma})

        eps = 0.0 if rng.random() < 0.05 else float(rng.random())
        mix = (1.0 - eps) * sigma + eps * omega
        t["A3"].record(f(mix, sigma) - eps, {"rho": mix, "sigma": sigma, "sigma_prime": omega},
                       eps=eps)

        t["P1"].record(abs(f(rho, rho)), {"rho": rho, "sigma": rho})
        td = trace_distance(rho, sigma)
        if td > 1e-6 and f(rho, sigma) <= tol:
            t["P1"].record(td, {"rho": rho, "sigma": sigma}, value=f(rho, sigma))
        else:
            t["P1"].record(0.0, {})

        d_out = int(rng.choice(dims))
        ch = random_channel(d, rng, dim_out=d_out, n_kraus=int(rng.integers(1, 5)))
        v = f(ch.apply(rho), ch.apply(sigma)) - f(rho, sigma)
        t["P2"].record(v, {"rho": rho, "sigma": sigma})

    return ConformanceReport({k: v.result() for k, v in t.items()}, seed, samples, tol)


def unhalved_trace_norm(rho, sigma) -> float:
    a, b = _pair(rho, sigma)
    return schatten_1_norm(a - b)


def zero_functional(rho, sigma) -> float:
    return 0.0

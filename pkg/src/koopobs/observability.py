"""Observability tests: Koopman rank condition, Lie-derivative rank, empirical Gramian."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import DEFAULT_DT, NonlinearSystem, flow
from .exprlang import Expr, compile_exprs, gradient, lie_derivative, node_count
from .koopman import CanonicalSystem
from .linalg import EXACT_RANK_TOL, GRAMIAN_RANK_TOL, gram_schmidt, numerical_rank

GROUP_TOL = 1e-8
LIE_NODE_BUDGET = 20_000

OBSERVABLE = "Observable"
UNOBSERVABLE = "Unobservable"
INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True, eq=False)
class EigenGroup:
    lam: complex
    indices: tuple[int, ...]
    eigenvectors: np.ndarray  # N x r, orthonormal columns

    @property
    def multiplicity(self) -> int:
        return len(self.indices)


def group_eigenvalues(spectrum: Sequence[complex], tol: float = GROUP_TOL,
                      eigenvectors: np.ndarray | None = None) -> list[EigenGroup]:
    """Group eigenvalues under the transitive closure of ``|a - b| <= tol (1 + |a|)``.

    ``eigenvectors`` holds one column per eigenvalue (default: coordinate
    vectors); each group's columns are orthonormalised.
    """
    if tol <= 0:
        raise ValueError("grouping tolerance must be positive")
    lam = np.asarray(spectrum, dtype=complex)
    N = lam.size
    W = np.eye(N, dtype=complex) if eigenvectors is None else np.asarray(eigenvectors, dtype=complex)
    parent = list(range(N))

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(N):
        for j in range(i + 1, N):
            if abs(lam[i] - lam[j]) <= tol * (1.0 + abs(lam[i])):
                parent[root(j)] = root(i)
    members: dict[int, list[int]] = {}
    for i in range(N):
        members.setdefault(root(i), []).append(i)
    groups = []
    for idx in sorted(members.values(), key=lambda m: m[0]):
        basis = gram_schmidt(W[:, idx])
        if basis.shape[1] != len(idx):
            raise ValueError(f"eigenvectors for eigenvalue {lam[idx[0]]} are linearly dependent")
        groups.append(EigenGroup(complex(lam[idx[0]]), tuple(idx), basis))
    return groups


def build_observability_matrix(group: EigenGroup, C: np.ndarray) -> np.ndarray:
    """``q x r`` matrix with entries ``c_k . w_j`` over the group's basis."""
    C = np.atleast_2d(np.asarray(C))
    if C.shape[1] != group.eigenvectors.shape[0]:
        raise ValueError("measurement matrix and eigenvectors disagree on N")
    return C @ group.eigenvectors


@dataclass(frozen=True, eq=False)
class GroupResult:
    lam: complex
    indices: tuple[int, ...]
    multiplicity: int
    rank: int
    O: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.rank == self.multiplicity

    def to_json(self) -> dict:
        return {"lambda_re": self.lam.real, "lambda_im": self.lam.imag, "multiplicity": self.multiplicity,
                "rank": self.rank, "required": self.multiplicity,
                "indices": [i + 1 for i in self.indices], "passed": self.passed}


@dataclass(frozen=True, eq=False)
class ObservabilityReport:
    method: str  # koopman-rank | lie-rank | empirical-gramian
    verdict: str
    groups: tuple[GroupResult, ...] = ()
    tolerances: dict = field(default_factory=dict)
    samples: tuple[dict, ...] = ()

    @property
    def observable(self) -> bool:
        return self.verdict == OBSERVABLE

    @property
    def failing(self) -> list[GroupResult]:
        return [g for g in self.groups if not g.passed]

    def to_json(self) -> dict:
        return {"method": self.method, "verdict": self.verdict,
                "groups": [g.to_json() for g in self.groups],
                "tolerances": dict(self.tolerances), "samples": list(self.samples)}


def koopman_rank_test(cs: CanonicalSystem, tol_rank: float = EXACT_RANK_TOL,
                      tol_group: float = GROUP_TOL) -> ObservabilityReport:
    """Observable iff ``rank(O_i) = r_i`` for every eigenvalue group.

    Ranks use the package SVD cutoff scaled by the largest singular value of
    the whole ``C``, so a group that only sees rounding noise gets rank 0.
    """
    if cs.C is None:
        raise ValueError("canonical system has no measurement expansion")
    groups = group_eigenvalues(cs.eigenvalues, tol_group, cs.eigenvectors())
    sigma = float(np.linalg.norm(cs.C, 2)) if cs.C.size else 0.0
    results = []
    for g in groups:
        O = build_observability_matrix(g, cs.C)
        results.append(GroupResult(g.lam, g.indices, g.multiplicity, numerical_rank(O, tol_rank, scale=sigma), O))
    verdict = OBSERVABLE if all(r.passed for r in results) else UNOBSERVABLE
    return ObservabilityReport("koopman-rank", verdict, tuple(results),
                               {"rank": tol_rank, "group": tol_group})


def min_measurements(report: ObservabilityReport) -> int:
    """Fewest measurements that could satisfy every group's rank condition."""
    if not report.groups:
        raise ValueError("report has no eigenvalue groups")
    return max(g.multiplicity for g in report.groups)


@dataclass(frozen=True, eq=False)
class LieRankResult:
    rank: int
    n: int
    orders: int
    truncated: bool
    gradients: np.ndarray = field(repr=False)

    @property
    def observable(self) -> bool:
        return self.rank == self.n


def lie_rank_test(sys: NonlinearSystem, x0: Sequence[float], max_order: int | None = None,
                  tol_rank: float = EXACT_RANK_TOL, node_budget: int = LIE_NODE_BUDGET) -> LieRankResult:
    """Rank of stacked gradients of ``L_f^k h`` for ``k = 0 .. max_order-1`` at ``x0``.

    Stops early once the rank reaches ``n``. Repeated Lie derivatives can
    blow up in size; past ``node_budget`` nodes the stack is cut short and
    the result is marked ``truncated``.
    """
    n = sys.n
    max_order = n if max_order is None else max_order
    if max_order < 1:
        raise ValueError("max_order must be at least 1")
    x = np.asarray(x0, dtype=float).reshape(1, n)
    level: list[Expr] = list(sys.h.components)
    rows: list[np.ndarray] = []
    rank, orders, truncated = 0, 0, False
    for k in range(max_order):
        grads = [g for e in level for g in gradient(e, n).components]
        vals = compile_exprs(grads, "numpy")(x).reshape(len(level), n)
        rows.extend(vals)
        orders = k + 1
        rank = numerical_rank(np.array(rows), tol_rank)
        if rank == n or k + 1 == max_order:
            break
        nxt = [lie_derivative(e, sys.f) for e in level]
        if sum(node_count(e) for e in nxt) > node_budget:
            truncated = True
            break
        level = nxt
    return LieRankResult(rank, n, orders, truncated, np.array(rows))


def lie_rank_report(sys: NonlinearSystem, points: np.ndarray, max_order: int | None = None,
                    tol_rank: float = EXACT_RANK_TOL) -> ObservabilityReport:
    """Lie rank at several points; observable iff full rank at all of them.

    A rank deficit found only after truncation is a lower bound, so the
    verdict is then ``Inconclusive`` rather than ``Unobservable``.
    """
    samples, full, cut = [], True, False
    for x0 in np.atleast_2d(points):
        r = lie_rank_test(sys, x0, max_order, tol_rank)
        full &= r.observable
        cut |= r.truncated and not r.observable
        samples.append({"x0": [float(v) for v in x0], "rank": r.rank, "required": r.n,
                        "orders": r.orders, "truncated": r.truncated})
    verdict = OBSERVABLE if full else (INCONCLUSIVE if cut else UNOBSERVABLE)
    return ObservabilityReport("lie-rank", verdict, (),
                               {"rank": tol_rank, "max_order": max_order or sys.n}, tuple(samples))


@dataclass(frozen=True, eq=False)
class GramianResult:
    G: np.ndarray
    rank: int
    singular_values: np.ndarray

    @property
    def n(self) -> int:
        return self.G.shape[0]

    @property
    def observable(self) -> bool:
        return self.rank == self.n


def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    w = np.zeros_like(times)
    if times.size > 1:
        dt = np.diff(times)
        w[:-1] += dt / 2
        w[1:] += dt / 2
    return w


def empirical_gramian(sys: NonlinearSystem, x0: Sequence[float], eps: float = 1e-4, t_final: float = 1.0,
                      dt: float = DEFAULT_DT, tol_rank: float = GRAMIAN_RANK_TOL) -> GramianResult:
    """Central-difference observability Gramian over ``[0, t_final]``.

    ``G = 1/(4 eps^2) int Phi^T Phi`` where column ``i`` of ``Phi(t)`` is
    ``y(t; x0 + eps e_i) - y(t; x0 - eps e_i)``. Trapezoid quadrature on
    the RK4 grid; rank cutoff relative to the largest singular value.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.asarray(x0, dtype=float)
    n = sys.n
    cols = []
    times = None
    for i in range(n):
        e = np.zeros(n)
        e[i] = eps
        plus = flow(sys, x0 + e, t_final, dt)
        minus = flow(sys, x0 - e, t_final, dt)
        times = plus.times
        cols.append(plus.measurements - minus.measurements)
    Phi = np.stack(cols, axis=2)  # (time, q, n)
    w = trapezoid_weights(times)
    G = np.einsum("tki,tkj,t->ij", Phi, Phi, w, optimize=False) / (4.0 * eps * eps)
    s = np.linalg.svd(G, compute_uv=False)
    return GramianResult(G, numerical_rank(G, tol_rank, dims_factor=False), s)


def gramian_report(sys: NonlinearSystem, points: np.ndarray, eps: float = 1e-4, t_final: float = 1.0,
                   dt: float = DEFAULT_DT, tol_rank: float = GRAMIAN_RANK_TOL) -> ObservabilityReport:
    samples, full = [], True
    for x0 in np.atleast_2d(points):
        g = empirical_gramian(sys, x0, eps, t_final, dt, tol_rank)
        full &= g.observable
        samples.append({"x0": [float(v) for v in x0], "rank": g.rank, "required": g.n,
                        "singular_values": [float(v) for v in g.singular_values]})
    return ObservabilityReport("empirical-gramian", OBSERVABLE if full else UNOBSERVABLE, (),
                               {"rank": tol_rank, "eps": eps, "t_final": t_final, "dt": dt}, tuple(samples))

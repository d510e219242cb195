"""Permutation symmetries of dynamics and measurements, and what they imply.

A permutation is stored as a 1-based image map ``perm`` with
``P e_i = e_{perm[i]}``, so ``(P x)[perm[i]] = x[i]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import NonlinearSystem
from .koopman import KoopmanSet
from .linalg import lstsq_fit
from .observability import group_eigenvalues

STATE_TOL = 1e-9
FIT_TOL = 1e-8
MODE_TOL = 1e-9

SYMMETRIC_MEASUREMENT = "symmetric-measurement"
MULTIPLICITY_BOUND = "multiplicity-bound"
NO_RULE = "none"


class ClassificationError(ValueError):
    """An eigenfunction's image under ``P`` is not covered by the Koopman set."""

    def __init__(self, index: int, residual: float):
        super().__init__(f"eigenfunction {index + 1} maps outside the Koopman set under P "
                         f"(fit residual {residual:.3e}); the set is incomplete")
        self.index = index
        self.residual = residual


@dataclass(frozen=True)
class PermutationSymmetry:
    perm: tuple[int, ...]
    label: str = "P"

    def __post_init__(self):
        perm = tuple(int(p) for p in self.perm)
        object.__setattr__(self, "perm", perm)
        if sorted(perm) != list(range(1, len(perm) + 1)):
            raise ValueError(f"{list(perm)} is not a permutation of 1..{len(perm)}")
        if perm == tuple(range(1, len(perm) + 1)):
            raise ValueError("the identity permutation is not a symmetry")

    @classmethod
    def from_matrix(cls, P: np.ndarray, label: str = "P") -> "PermutationSymmetry":
        P = np.asarray(P)
        ones = np.ones(len(P))
        if (P.ndim != 2 or P.shape[0] != P.shape[1] or not np.isin(P, (0, 1)).all()
                or not np.array_equal(P.sum(axis=0), ones) or not np.array_equal(P.sum(axis=1), ones)):
            raise ValueError("not a permutation matrix")
        return cls(tuple(int(np.argmax(P[:, i])) + 1 for i in range(len(P))), label)

    @property
    def n(self) -> int:
        return len(self.perm)

    @property
    def order(self) -> int:
        """Smallest ``k >= 1`` with ``P^k = I`` (lcm of cycle lengths)."""
        seen = [False] * self.n
        k = 1
        for start in range(self.n):
            length = 0
            i = start
            while not seen[i]:
                seen[i] = True
                i = self.perm[i] - 1
                length += 1
            if length:
                k = k * length // math.gcd(k, length)
        return k

    @property
    def source_of(self) -> tuple[int, ...]:
        """``source_of[k-1]`` is the coordinate of ``x`` landing in slot ``k`` of ``P x``."""
        src = [0] * self.n
        for i, p in enumerate(self.perm):
            src[p - 1] = i + 1
        return tuple(src)

    def matrix(self) -> np.ndarray:
        P = np.zeros((self.n, self.n))
        for i, p in enumerate(self.perm):
            P[p - 1, i] = 1.0
        return P

    def apply(self, x: np.ndarray) -> np.ndarray:
        """``P x`` along the last axis (rows of a sample matrix are permuted individually)."""
        x = np.asarray(x)
        if x.shape[-1] != self.n:
            raise ValueError(f"expected vectors of length {self.n}")
        return x[..., [s - 1 for s in self.source_of]]

    def power_map(self, k: int) -> tuple[int, ...]:
        """Image map of ``P^k`` for ``k >= 0`` (may be the identity)."""
        img = list(range(1, self.n + 1))
        for _ in range(k % self.order):
            img = [self.perm[i - 1] for i in img]
        return tuple(img)

    def power_matrix(self, k: int) -> np.ndarray:
        M = np.zeros((self.n, self.n))
        for i, p in enumerate(self.power_map(k)):
            M[p - 1, i] = 1.0
        return M

    def inverse(self) -> "PermutationSymmetry":
        return PermutationSymmetry(self.source_of, f"{self.label}^-1")

    def text(self) -> str:
        return "[" + ",".join(map(str, self.perm)) + "]"


@dataclass(frozen=True)
class SymmetryCheck:
    passed: bool
    max_residual: float
    tolerance: float


def _rows(samples) -> np.ndarray:
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    return X


def verify_state_symmetry(sys: NonlinearSystem, P: PermutationSymmetry, samples,
                          rel_tol: float = STATE_TOL) -> SymmetryCheck:
    """Check ``f(P x) = P f(x)`` on the samples, relative to ``1 + |f(x)|``."""
    if P.n != sys.n:
        raise ValueError("permutation and system dimensions differ")
    X = _rows(samples)
    F = sys.vector_field_many(X)
    FP = sys.vector_field_many(P.apply(X))
    resid = np.max(np.abs(FP - P.apply(F)), axis=1)
    ratio = resid / (1.0 + np.max(np.abs(F), axis=1))
    return SymmetryCheck(bool(np.all(ratio <= rel_tol)), float(np.max(resid)), rel_tol)


def verify_measurement_symmetry(sys: NonlinearSystem, P: PermutationSymmetry, samples,
                                rel_tol: float = STATE_TOL) -> SymmetryCheck:
    """Check ``h(P x) = h(x)`` on the samples."""
    if P.n != sys.n:
        raise ValueError("permutation and system dimensions differ")
    X = _rows(samples)
    H = sys.measure_many(X)
    HP = sys.measure_many(P.apply(X))
    resid = np.max(np.abs(HP - H), axis=1)
    ratio = resid / (1.0 + np.max(np.abs(H), axis=1))
    return SymmetryCheck(bool(np.all(ratio <= rel_tol)), float(np.max(resid)), rel_tol)


@dataclass(frozen=True, eq=False)
class SymmetryClassification:
    """How ``P`` acts on each eigenfunction.

    ``action`` is the matrix ``M`` with ``psi_j(P x) = sum_m M[m, j] psi_m(x)``,
    fitted within each eigenvalue group. Indices are 0-based.
    """

    rotational: tuple[tuple[int, complex], ...]
    reflectional: tuple[tuple[int, int, complex], ...]
    unresolved: tuple[int, ...]
    action: np.ndarray
    residuals: np.ndarray = field(repr=False, default=None)

    @property
    def complete(self) -> bool:
        return not self.unresolved

    def bucket_of(self, index: int) -> str:
        if any(i == index for i, _ in self.rotational):
            return "rotational"
        if any(index in (i, j) for i, j, _ in self.reflectional):
            return "reflectional"
        return "unresolved"

    def to_json(self) -> dict:
        def cplx(c):
            return [float(np.real(c)), float(np.imag(c))]
        return {
            "rotational": [{"index": i + 1, "c": cplx(c)} for i, c in self.rotational],
            "reflectional": [{"i": i + 1, "j": j + 1, "c": cplx(c)} for i, j, c in self.reflectional],
            "unresolved": [i + 1 for i in self.unresolved],
        }


def _fit(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    c, resid = lstsq_fit(a.reshape(len(b), -1), b)
    return c, resid / (1.0 + float(np.max(np.abs(b))))


def classify_eigenfunctions(kset: KoopmanSet, P: PermutationSymmetry, samples,
                            tol: float = FIT_TOL, group_tol: float = 1e-8,
                            strict: bool = True) -> SymmetryClassification:
    """Sort eigenfunctions into rotational and reflectional ones under ``P``.

    ``psi_i o P = c psi_i`` makes ``i`` rotational. Otherwise a partner ``j``
    in the same eigenvalue group with ``psi_i o P = c psi_j`` makes ``(i, j)``
    a reflectional pair, and ``j`` counts as covered provided its own image
    stays inside the group span. Anything else is unresolved; with ``strict``
    that raises :class:`ClassificationError`.
    """
    if P.n != kset.n:
        raise ValueError("permutation and Koopman set dimensions differ")
    X = _rows(samples)
    A = kset.values(X)
    B = kset.values(P.apply(X))
    N = len(kset)
    groups = group_eigenvalues(kset.eigenvalues, group_tol)
    group_of = {i: g for g in groups for i in g.indices}

    action = np.zeros((N, N), dtype=complex)
    span_resid = np.zeros(N)
    for g in groups:
        idx = list(g.indices)
        for i in idx:
            coef, r = _fit(A[:, idx], B[:, i])
            action[idx, i] = coef.ravel()
            span_resid[i] = r

    rotational, reflectional, covered = [], [], set()
    for i in range(N):
        c, r = _fit(A[:, i], B[:, i])
        if r <= tol:
            rotational.append((i, complex(c[0])))
            covered.add(i)
    for i in range(N):
        if i in covered:
            continue
        for j in group_of[i].indices:
            if j == i or j in covered:
                continue
            c, r = _fit(A[:, j], B[:, i])
            if r <= tol:
                reflectional.append((i, j, complex(c[0])))
                covered.update((i, j))
                break
    unresolved = []
    for i in range(N):
        if i not in covered or span_resid[i] > tol:
            unresolved.append(i)
    if strict and unresolved:
        i = unresolved[0]
        raise ClassificationError(i, float(span_resid[i]))
    return SymmetryClassification(tuple(rotational), tuple(reflectional), tuple(unresolved),
                                  action, span_resid)


@dataclass(frozen=True)
class ModeCheck:
    index: int
    kind: str
    residual: float
    passed: bool


def mode_symmetry_check(kset: KoopmanSet, P: PermutationSymmetry, classification: SymmetryClassification,
                        tol: float = MODE_TOL) -> list[ModeCheck]:
    """Check how ``P`` acts on the modes, given its action on eigenfunctions.

    From ``x = sum psi_m(x) v_m`` at ``P x`` one gets
    ``v_j = P^(k-1) sum_m M[j, m] v_m``. For a rotational ``i`` this is
    ``v_i = c P^(k-1) v_i``; for a pair that swaps ``(i, j)`` it is
    ``v_j = c P^(k-1) v_i``.
    """
    V = kset.modes
    Pk1 = P.power_matrix(P.order - 1)
    M = classification.action
    checks = []
    for j in range(len(kset)):
        predicted = Pk1 @ (V @ M[j, :])
        resid = float(np.linalg.norm(V[:, j] - predicted))
        checks.append(ModeCheck(j, classification.bucket_of(j), resid, resid <= tol))
    return checks


@dataclass(frozen=True, eq=False)
class InducedKoopmanSymmetry:
    perm: tuple[int, ...]  # 0-based image map on Koopman-set indices

    @property
    def is_identity(self) -> bool:
        return self.perm == tuple(range(len(self.perm)))

    def matrix(self) -> np.ndarray:
        N = len(self.perm)
        Q = np.zeros((N, N))
        for i, p in enumerate(self.perm):
            Q[p, i] = 1.0
        return Q

    def note(self) -> str:
        return "no nonidentity induced symmetry" if self.is_identity else "nonidentity induced symmetry"


def induced_Q(classification: SymmetryClassification, eigenvalues: Sequence[complex],
              tol: float = 1e-8) -> InducedKoopmanSymmetry:
    """Permutation of Koopman indices that swaps reflectional partners.

    Raises if the result fails to commute with ``diag(eigenvalues)``, which
    means partners were matched across different eigenvalues.
    """
    if classification.unresolved:
        raise ClassificationError(classification.unresolved[0], float("nan"))
    img = list(range(len(eigenvalues)))
    for i, j, _ in classification.reflectional:
        img[i], img[j] = j, i
    Q = InducedKoopmanSymmetry(tuple(img))
    L = np.diag(np.asarray(eigenvalues, dtype=complex))
    Qm = Q.matrix()
    if np.max(np.abs(Qm @ L - L @ Qm)) > tol * (1.0 + np.max(np.abs(L))):
        raise ValueError("induced Koopman symmetry does not commute with the spectrum")
    return Q


@dataclass(frozen=True)
class SymmetryVerdict:
    verdict: str  # Unobservable | Inconclusive
    rule: str
    rationale: str
    state_symmetric: bool
    measurement_symmetric: bool
    witness_groups: tuple[complex, ...] = ()

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict, "theorem": self.rule, "rationale": self.rationale,
            "state_symmetric": self.state_symmetric, "measurement_symmetric": self.measurement_symmetric,
            "witness_groups": [[w.real, w.imag] for w in self.witness_groups],
        }


def symmetry_verdict(sys: NonlinearSystem, P: PermutationSymmetry, kset: KoopmanSet | None, samples,
                     group_tol: float = 1e-8) -> SymmetryVerdict:
    """What a permutation symmetry alone says about observability.

    A symmetric measurement on symmetric dynamics makes ``x0`` and ``P x0``
    indistinguishable. Otherwise fewer measurements than the largest
    eigenvalue multiplicity is still fatal. Nothing here can prove a system
    observable; the fallback is ``Inconclusive``.
    """
    state = verify_state_symmetry(sys, P, samples)
    if not state.passed:
        return SymmetryVerdict("Inconclusive", NO_RULE, f"{P.text()} is not a symmetry of the dynamics "
                               f"(residual {state.max_residual:.3e})", False, False)
    meas = verify_measurement_symmetry(sys, P, samples)
    groups = group_eigenvalues(kset.eigenvalues, group_tol) if kset is not None else []
    repeated = tuple(g.lam for g in groups if g.multiplicity >= 2)
    if meas.passed:
        why = (f"dynamics and measurement are both invariant under {P.text()}, so x0 and P x0 "
               "produce identical measurement histories")
        if kset is None:
            why += "; no Koopman set is available, so no eigenvalue group is named"
        return SymmetryVerdict("Unobservable", SYMMETRIC_MEASUREMENT, why, True, True, repeated)
    if groups:
        rmax = max(g.multiplicity for g in groups)
        if sys.q < rmax:
            worst = tuple(g.lam for g in groups if g.multiplicity > sys.q)
            return SymmetryVerdict("Unobservable", MULTIPLICITY_BOUND,
                                   f"q={sys.q} < max multiplicity {rmax}", True, False, worst)
    return SymmetryVerdict("Inconclusive", NO_RULE,
                           "measurement breaks the symmetry and q covers every multiplicity; defer to the rank test",
                           True, False)


def candidate_permutations(n: int, blocks: Sequence[int] | None = None) -> list[PermutationSymmetry]:
    """Cyclic shifts and reflections applied identically to each block.

    ``blocks`` gives block sizes summing to ``n`` (all equal); by default the
    whole state is one block.
    """
    blocks = list(blocks) if blocks else [n]
    if sum(blocks) != n or len(set(blocks)) != 1:
        raise ValueError("blocks must be equal sizes summing to n")
    b = blocks[0]
    maps = []
    for s in range(1, b):
        maps.append([(i + s) % b for i in range(b)])
    for s in range(b):
        maps.append([(s - i) % b for i in range(b)])
    out, seen = [], set()
    for m in maps:
        perm = tuple(off + m[i] + 1 for off in range(0, n, b) for i in range(b))
        if perm in seen or perm == tuple(range(1, n + 1)):
            continue
        seen.add(perm)
        out.append(PermutationSymmetry(perm))
    return out


def find_symmetries(sys: NonlinearSystem, candidates: Sequence[PermutationSymmetry], samples) -> list[PermutationSymmetry]:
    return [P for P in candidates if verify_state_symmetry(sys, P, samples).passed]

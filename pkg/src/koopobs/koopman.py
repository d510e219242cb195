"""Koopman eigenpairs, span checks and the real canonical linear system.

A :class:`KoopmanSet` is a finite, user-supplied list of eigenpairs. Its
span must numerically contain the full-state observable (checked through
the modes) and the measurement (checked when expanding ``h``).

Canonical coordinates: for a real eigenvalue the coordinate is ``psi(x)``;
for a conjugate pair ``(lam, conj(lam))`` at indices ``(i, i+1)`` the two
coordinates are ``Re psi_i(x)`` and ``Im psi_{i+1}(x) = -Im psi_i(x)``. With
``lam = |lam| e^{j theta}`` this choice makes the 2x2 block of ``Lambda``
equal ``|lam| [[cos theta, sin theta], [-sin theta, cos theta]]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .dynamics import DEFAULT_BOX, NonlinearSystem, sample_box
from .exprlang import Expr, compile_exprs, lie_derivative, max_var_index, permute_vars, to_text
from .linalg import EXACT_RANK_TOL, lstsq_fit, numerical_rank

GENERATOR_TOL = 1e-6
SPAN_TOL = 1e-8
OVERSAMPLE = 10
CONJ_TOL = 1e-10


class SpanError(ValueError):
    """A span precondition failed (state or measurement not representable)."""


@dataclass(frozen=True, eq=False)
class KoopmanEigenpair:
    """Eigenvalue, eigenfunction (real part and optional imaginary part), mode."""

    lam: complex
    psi_re: Expr
    psi_im: Expr | None = None
    mode: np.ndarray = field(default=None)
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "lam", complex(self.lam))
        if self.mode is None:
            raise ValueError("a Koopman mode is required")
        mode = np.asarray(self.mode, dtype=complex).ravel()
        object.__setattr__(self, "mode", mode)
        if not np.any(mode != 0):
            raise ValueError("Koopman modes must be nonzero")
        if max(max_var_index(self.psi_re), max_var_index(self.psi_im) if self.psi_im else 0) > mode.size:
            raise ValueError("eigenfunction uses variables beyond the mode dimension")

    @property
    def is_complex(self) -> bool:
        return self.psi_im is not None

    @property
    def n(self) -> int:
        return self.mode.size

    def exprs(self) -> list[Expr]:
        return [self.psi_re] if self.psi_im is None else [self.psi_re, self.psi_im]

    def values(self, X: np.ndarray) -> np.ndarray:
        """Complex eigenfunction values on the rows of ``X``."""
        out = compile_exprs(self.exprs(), "numpy")(X)
        return out[:, 0] + 1j * out[:, 1] if self.psi_im is not None else out[:, 0].astype(complex)

    def composed(self, source_of: Sequence[int], label: str | None = None) -> "KoopmanEigenpair":
        """The pair with eigenfunction ``psi(P x)``; ``source_of[k-1]`` is the
        state index feeding coordinate ``k`` of ``P x``."""
        im = permute_vars(self.psi_im, source_of) if self.psi_im is not None else None
        return KoopmanEigenpair(self.lam, permute_vars(self.psi_re, source_of), im, self.mode,
                                label if label is not None else f"{self.label}∘P")

    def describe(self) -> dict:
        d = {"lambda": [self.lam.real, self.lam.imag], "psi_re": to_text(self.psi_re)}
        if self.psi_im is not None:
            d["psi_im"] = to_text(self.psi_im)
        d["mode_re"] = self.mode.real.tolist()
        d["mode_im"] = self.mode.imag.tolist()
        return d


@dataclass(frozen=True)
class EigenpairCheck:
    max_residual: float
    mean_residual: float
    scale: float
    tolerance: float
    passed: bool


def _lie_parts(pair: KoopmanEigenpair, sys: NonlinearSystem) -> list[Expr]:
    return [lie_derivative(e, sys.f) for e in pair.exprs()]


def validate_eigenpair(sys: NonlinearSystem, pair: KoopmanEigenpair, samples: np.ndarray,
                       rel_tol: float = GENERATOR_TOL) -> EigenpairCheck:
    """Generator residual ``|L_f psi - lam psi|`` on the sample points.

    Passes iff the max residual is at most ``rel_tol * (1 + max|psi|)``.
    """
    if pair.n != sys.n:
        raise ValueError("eigenpair mode and system dimension differ")
    X = np.atleast_2d(samples)
    psi = pair.values(X)
    lie = compile_exprs(_lie_parts(pair, sys), "numpy")(X)
    lpsi = lie[:, 0] + 1j * lie[:, 1] if pair.is_complex else lie[:, 0].astype(complex)
    resid = np.abs(lpsi - pair.lam * psi)
    scale = 1.0 + float(np.max(np.abs(psi)))
    return EigenpairCheck(float(np.max(resid)), float(np.mean(resid)), scale, rel_tol,
                          bool(np.max(resid) <= rel_tol * scale))


@dataclass(frozen=True, eq=False)
class KoopmanSet:
    """Ordered eigenpairs; complex eigenvalues sit in adjacent conjugate pairs."""

    pairs: tuple[KoopmanEigenpair, ...]
    n: int
    domain_box: tuple[tuple[float, float], ...] | None = None
    generator_tol: float = GENERATOR_TOL

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if not self.pairs:
            raise ValueError("a Koopman set needs at least one eigenpair")
        if any(p.n != self.n for p in self.pairs):
            raise ValueError("every mode must have the state dimension")
        if self.domain_box is None:
            object.__setattr__(self, "domain_box", tuple(DEFAULT_BOX for _ in range(self.n)))
        self.conjugate_blocks()

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([p.lam for p in self.pairs], dtype=complex)

    @property
    def modes(self) -> np.ndarray:
        """``n x N`` complex matrix whose columns are the modes."""
        return np.stack([p.mode for p in self.pairs], axis=1)

    def conjugate_blocks(self) -> list[tuple[int, ...]]:
        """Index blocks: ``(i,)`` for real eigenvalues, ``(i, i+1)`` for pairs."""
        blocks = []
        i = 0
        N = len(self.pairs)
        while i < N:
            lam = self.pairs[i].lam
            if abs(lam.imag) <= CONJ_TOL * (1 + abs(lam)):
                blocks.append((i,))
                i += 1
                continue
            if i + 1 >= N or abs(self.pairs[i + 1].lam - lam.conjugate()) > CONJ_TOL * (1 + abs(lam)):
                raise ValueError(f"complex eigenvalue {lam} at index {i + 1} has no adjacent conjugate partner")
            blocks.append((i, i + 1))
            i += 2
        return blocks

    def values(self, X: np.ndarray) -> np.ndarray:
        """``m x N`` complex matrix of eigenfunction values."""
        X = np.atleast_2d(X)
        exprs, slots = [], []
        for p in self.pairs:
            slots.append((len(exprs), p.is_complex))
            exprs.extend(p.exprs())
        raw = compile_exprs(exprs, "numpy")(X)
        cols = [raw[:, s] + 1j * raw[:, s + 1] if cplx else raw[:, s].astype(complex) for s, cplx in slots]
        return np.stack(cols, axis=1)

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        return sample_box(self.domain_box, m, rng)

    def independence_rank(self, rng: np.random.Generator) -> int:
        X = self.sample(OVERSAMPLE * len(self), rng)
        return numerical_rank(self.values(X))

    def validate(self, sys: NonlinearSystem, samples: np.ndarray) -> list[EigenpairCheck]:
        return [validate_eigenpair(sys, p, samples, self.generator_tol) for p in self.pairs]


@dataclass(frozen=True, eq=False)
class CanonicalSystem:
    """Real block-diagonal linear system ``z' = Lambda z, x = V z, y = C z``."""

    Lambda: np.ndarray
    V: np.ndarray
    C: np.ndarray | None
    kset: KoopmanSet
    C_complex: np.ndarray | None = None
    blocks: tuple[tuple[int, ...], ...] = ()

    @property
    def N(self) -> int:
        return self.Lambda.shape[0]

    @property
    def q(self) -> int:
        return 0 if self.C is None else self.C.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalue attached to each canonical coordinate."""
        return self.kset.eigenvalues

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Canonical coordinates ``z = T(x)``; rows of ``X`` map to rows of the result."""
        single = np.ndim(X) == 1
        vals = self.kset.values(np.atleast_2d(X))
        Z = np.empty(vals.shape, dtype=float)
        for blk in self.blocks:
            if len(blk) == 1:
                Z[:, blk[0]] = vals[:, blk[0]].real
            else:
                i, j = blk
                Z[:, i] = vals[:, i].real
                Z[:, j] = -vals[:, i].imag
        return Z[0] if single else Z

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        return reconstruct_state(self, z)

    def propagate(self, z0: np.ndarray, t: float) -> np.ndarray:
        return expm(self.Lambda * t) @ np.asarray(z0, dtype=float)

    def eigenvectors(self) -> np.ndarray:
        """Complex eigenvectors of ``Lambda`` as columns, one per coordinate."""
        W = np.zeros((self.N, self.N), dtype=complex)
        for blk in self.blocks:
            if len(blk) == 1:
                W[blk[0], blk[0]] = 1.0
            else:
                i, j = blk
                s = 1.0 / np.sqrt(2.0)
                # eigenvalue lam_i = a + jb  <->  (e_i + j e_j)/sqrt2 ; conj  <->  (e_i - j e_j)/sqrt2
                W[i, i], W[j, i] = s, 1j * s
                W[i, j], W[j, j] = s, -1j * s
        return W


def _real_columns(M: np.ndarray, blocks) -> np.ndarray:
    """Map complex coefficients (one column per eigenpair) to canonical real columns."""
    out = np.zeros(M.shape, dtype=float)
    for blk in blocks:
        if len(blk) == 1:
            out[:, blk[0]] = M[:, blk[0]].real
        else:
            i, j = blk
            out[:, i] = 2.0 * M[:, i].real
            out[:, j] = 2.0 * M[:, i].imag
    return out


def _check_conjugate_structure(kset: KoopmanSet, X: np.ndarray) -> None:
    vals = kset.values(X)
    for blk in kset.conjugate_blocks():
        if len(blk) == 2:
            i, j = blk
            scale = 1.0 + np.max(np.abs(vals[:, i]))
            if np.max(np.abs(vals[:, j] - vals[:, i].conj())) > SPAN_TOL * scale:
                raise SpanError(f"eigenfunction {j + 1} is not the conjugate of eigenfunction {i + 1}")
            mi, mj = kset.pairs[i].mode, kset.pairs[j].mode
            if np.max(np.abs(mj - mi.conj())) > SPAN_TOL * (1.0 + np.max(np.abs(mi))):
                raise SpanError(f"mode {j + 1} is not the conjugate of mode {i + 1}")


def build_canonical(kset: KoopmanSet, C: np.ndarray | None = None,
                    rng: np.random.Generator | None = None, samples: np.ndarray | None = None,
                    span_tol: float = SPAN_TOL) -> CanonicalSystem:
    """Assemble ``Lambda``, ``V`` (and ``C`` if complex coefficients are given).

    Verifies independence of the eigenfunctions and that ``V T(x) = x`` on
    sample points; raises :class:`SpanError` otherwise.
    """
    rng = rng or np.random.default_rng(0)
    blocks = tuple(kset.conjugate_blocks())
    N = len(kset)
    Lam = np.zeros((N, N))
    for blk in blocks:
        lam = kset.pairs[blk[0]].lam
        if len(blk) == 1:
            Lam[blk[0], blk[0]] = lam.real
        else:
            i, j = blk
            a, b = lam.real, lam.imag
            Lam[i, i], Lam[i, j] = a, b
            Lam[j, i], Lam[j, j] = -b, a
    X = samples if samples is not None else kset.sample(OVERSAMPLE * N, rng)
    if numerical_rank(kset.values(kset.sample(OVERSAMPLE * N, rng))) < N:
        raise SpanError("eigenfunctions are not linearly independent")
    _check_conjugate_structure(kset, X)
    V = _real_columns(kset.modes, blocks)
    C_real = None
    if C is not None:
        C = np.atleast_2d(np.asarray(C, dtype=complex))
        if C.shape[1] != N:
            raise ValueError("measurement expansion has the wrong number of columns")
        C_real = _real_columns(C, blocks)
    cs = CanonicalSystem(Lam, V, C_real, kset, C, blocks)
    recon = cs.transform(X) @ V.T
    err = np.max(np.abs(recon - X), axis=1) / (1.0 + np.max(np.abs(X), axis=1))
    if np.max(err) > span_tol:
        raise SpanError(f"cannot span state: modes reconstruct x with relative error {np.max(err):.3e}")
    return cs


def expand_measurement(sys: NonlinearSystem, kset: KoopmanSet, rng: np.random.Generator | None = None,
                       samples: np.ndarray | None = None, span_tol: float = SPAN_TOL) -> np.ndarray:
    """Complex ``q x N`` coefficients with ``h(x) = C psi(x)``, by least squares.

    Raises :class:`SpanError` when ``h`` is not in the span of the set.
    """
    rng = rng or np.random.default_rng(0)
    X = samples if samples is not None else kset.sample(OVERSAMPLE * len(kset), rng)
    if X.shape[0] < len(kset):
        raise ValueError("need at least as many samples as eigenfunctions")
    A = kset.values(X)
    H = sys.measure_many(X).astype(complex)
    coef, resid = lstsq_fit(A, H, EXACT_RANK_TOL)
    scale = 1.0 + float(np.max(np.abs(H)))
    if resid > span_tol * scale:
        raise SpanError(f"measurement not in Koopman span (residual {resid:.3e})")
    return coef.T


def canonicalize(sys: NonlinearSystem, kset: KoopmanSet, rng: np.random.Generator | None = None,
                 span_tol: float = SPAN_TOL) -> CanonicalSystem:
    """Expand ``sys.h`` over ``kset`` and build the canonical system."""
    rng = rng or np.random.default_rng(0)
    C = expand_measurement(sys, kset, rng, span_tol=span_tol)
    return build_canonical(kset, C, rng, span_tol=span_tol)


def reconstruct_state(cs: CanonicalSystem, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != cs.N:
        raise ValueError(f"canonical state must have {cs.N} entries")
    return z @ cs.V.T if z.ndim > 1 else cs.V @ z

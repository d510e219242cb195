"""Built-in models: two 3-agent consensus networks, a polynomial system with
a known finite Koopman set, and a ring of amplitude-phase oscillators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import NonlinearSystem
from .exprlang import Const, Cos, Expr, ExprVector, Sin, Var, s_add, s_mul, s_neg, s_sub
from .koopman import KoopmanEigenpair, KoopmanSet
from .symmetry import PermutationSymmetry

CONDITION_LIMIT = 1e8
# rounding in four-decimal eigenfunction coefficients
PRINTED_COEFF_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class Model:
    """A system with named measurement choices and optional Koopman data."""

    name: str
    system: NonlinearSystem
    measurements: dict[str, ExprVector]
    kset: KoopmanSet | None = None
    symmetries: tuple[PermutationSymmetry, ...] = ()
    x0: tuple[float, ...] | None = None
    t_final: float = 1.0
    A: np.ndarray | None = None
    notes: tuple[str, ...] = field(default=())

    def with_measurement(self, key: str) -> NonlinearSystem:
        if key not in self.measurements:
            raise KeyError(f"model {self.name} has no measurement {key!r} (choices: {', '.join(self.measurements)})")
        return self.system.with_measurement(self.measurements[key])


def linear_form(coeffs: Sequence[float]) -> Expr:
    """``sum c_i x_i`` with zero terms dropped."""
    e: Expr = Const(0.0)
    for i, c in enumerate(coeffs, start=1):
        if c == 0:
            continue
        term = Var(i) if abs(c) == 1 else s_mul(Const(float(abs(c))), Var(i))
        if c > 0:
            e = s_add(e, term)
        elif isinstance(e, Const) and e.value == 0:
            e = s_neg(Var(i)) if c == -1 else s_mul(Const(float(c)), Var(i))
        else:
            e = s_sub(e, term)
    return e


def linear_system(A: np.ndarray, h: Sequence[Sequence[float]], name: str) -> NonlinearSystem:
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    f = ExprVector(tuple(linear_form(row) for row in A), n)
    return NonlinearSystem(f, ExprVector(tuple(linear_form(row) for row in h), n), name=name)


def _complex_pairs(W: np.ndarray, lam: np.ndarray, R: np.ndarray, tol: float) -> list[KoopmanEigenpair]:
    """Eigenpairs from left-eigenvector rows ``W`` and right-eigenvector columns ``R``."""
    pairs = []
    i = 0
    while i < lam.size:
        w, v = W[i], R[:, i]
        if abs(lam[i].imag) <= tol:
            pairs.append(KoopmanEigenpair(lam[i].real, linear_form(w.real), None, v.real, f"psi{i + 1}"))
            i += 1
            continue
        pairs.append(KoopmanEigenpair(lam[i], linear_form(w.real), linear_form(w.imag), v, f"psi{i + 1}"))
        pairs.append(KoopmanEigenpair(lam[i].conjugate(), linear_form(w.real), linear_form(-w.imag),
                                      v.conj(), f"psi{i + 2}"))
        i += 2
    return pairs


def linear_koopman_extract(A: np.ndarray, tol: float = 1e-10) -> KoopmanSet:
    """Koopman set of ``x' = A x``: ``psi_i(x) = <w_i, x>`` with ``w_i`` left
    eigenvectors, modes the right eigenvectors.

    Eigenvalues are sorted by real part then imaginary part, both descending,
    which puts each complex eigenvalue directly before its conjugate.
    """
    A = np.asarray(A, dtype=float)
    lam, R = np.linalg.eig(A)
    # a repeated real eigenvalue can come back as a conjugate pair with ~1e-16
    # imaginary part; (Re v, Im v) spans the same eigenspace with real vectors
    i = 0
    while i + 1 < lam.size:
        if 0 < abs(lam[i].imag) <= tol and abs(lam[i + 1] - lam[i].conjugate()) <= tol:
            v = R[:, i]
            lam[i] = lam[i + 1] = lam[i].real
            R[:, i], R[:, i + 1] = v.real / np.linalg.norm(v.real), v.imag / np.linalg.norm(v.imag)
            i += 2
        else:
            i += 1
    order = sorted(range(lam.size), key=lambda i: (-round(lam[i].real, 12), -lam[i].imag))
    lam, R = lam[order], R[:, order]
    for i in range(lam.size):
        if lam[i].imag > tol and i + 1 < lam.size and lam[i + 1].imag < -tol:
            R[:, i + 1] = R[:, i].conj()
            lam[i + 1] = lam[i].conjugate()
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond >= CONDITION_LIMIT:
        raise ValueError(f"matrix is defective or nearly so (eigenvector condition {cond:.3e})")
    W = np.linalg.inv(R)
    return KoopmanSet(tuple(_complex_pairs(W, lam, R, tol)), A.shape[0])


def _modes_from_coefficients(W: np.ndarray) -> np.ndarray:
    """Modes are the columns of ``W^-1`` when eigenfunctions are ``W x``."""
    return np.linalg.inv(W)


CONSENSUS_P = (2, 3, 1)
A_UNDIRECTED = np.array([[-2.0, 1, 1], [1, -2, 1], [1, 1, -2]])
A_DIRECTED = np.array([[-1.0, 0, 1], [1, -1, 0], [0, 1, -1]])
CONSENSUS_MEASUREMENTS = {"default": [[1.0, 0, 0]], "alt": [[1.0, 1, 1]]}


def _consensus(A: np.ndarray, kset: KoopmanSet, name: str) -> Model:
    sys = linear_system(A, CONSENSUS_MEASUREMENTS["default"], name)
    meas = {k: ExprVector(tuple(linear_form(r) for r in rows), 3) for k, rows in CONSENSUS_MEASUREMENTS.items()}
    return Model(name, sys, meas, kset, (PermutationSymmetry(CONSENSUS_P),), (1.0, 2.0, 3.0), 10.0, A)


def consensus_undirected() -> Model:
    """Consensus on the complete graph with three agents.

    One rotational eigenfunction and a reflectional pair at ``-3``; the
    pair's coefficients are kept at four decimals.
    """
    W = np.array([[1.0, 1.0, 1.0],
                  [-1.3223, 1.0954, 0.2269],
                  [1.0954, 0.2269, -1.3223]])
    V = _modes_from_coefficients(W)
    lam = (0.0, -3.0, -3.0)
    pairs = tuple(KoopmanEigenpair(lam[i], linear_form(W[i]), None, V[:, i], f"psi_u{i + 1}") for i in range(3))
    kset = KoopmanSet(pairs, 3, generator_tol=PRINTED_COEFF_TOL)
    return _consensus(A_UNDIRECTED, kset, "consensus-undirected")


def consensus_directed() -> Model:
    """Consensus on the directed 3-cycle.

    Eigenfunctions are discrete Fourier modes. The eigenvalue of
    ``x1 + w x2 + conj(w) x3`` with ``w = exp(2 pi j / 3)`` is
    ``w - 1 = -3/2 + j sqrt(3)/2``.
    """
    w = complex(-0.5, math.sqrt(3) / 2)
    W = np.array([[1, 1, 1], [1, w, w.conjugate()], [1, w.conjugate(), w]], dtype=complex)
    V = _modes_from_coefficients(W)
    lam = w - 1
    pairs = (
        KoopmanEigenpair(0.0, linear_form([1.0, 1.0, 1.0]), None, V[:, 0].real, "psi_d1"),
        KoopmanEigenpair(lam, linear_form(W[1].real), linear_form(W[1].imag), V[:, 1], "psi_d2"),
        KoopmanEigenpair(lam.conjugate(), linear_form(W[2].real), linear_form(W[2].imag), V[:, 2], "psi_d3"),
    )
    return _consensus(A_DIRECTED, KoopmanSet(pairs, 3), "consensus-directed")


def example2() -> Model:
    """Polynomial system with a five-term Koopman set and a swap symmetry.

    ``x1' = x1, x2' = x2, x3' = -2 x1^2 - 2 x2^2 + 4 x3``; swapping ``x1``
    and ``x2`` commutes with the flow.
    """
    x1, x2, x3 = Var(1), Var(2), Var(3)
    f = ExprVector.parse(["x1", "x2", "-2*x1^2 - 2*x2^2 + 4*x3"], 3)
    meas = {
        "default": ExprVector.parse(["x1^2 + x2^2 + x3"], 3),
        "alt": ExprVector.parse(["2*x1 - x2^2 + x3", "-x1^2 + x2 + x3"], 3),
    }
    e1, e2, e3 = np.eye(3)
    pairs = (
        KoopmanEigenpair(1.0, x1, None, e1, "psi1"),
        KoopmanEigenpair(1.0, x2, None, e2, "psi2"),
        KoopmanEigenpair(2.0, x1 ** 2, None, e3, "psi3"),
        KoopmanEigenpair(2.0, x2 ** 2, None, e3, "psi4"),
        KoopmanEigenpair(4.0, -x1 ** 2 - x2 ** 2 + x3, None, e3, "psi5"),
    )
    sys = NonlinearSystem(f, meas["default"], name="example2")
    return Model("example2", sys, meas, KoopmanSet(pairs, 3), (PermutationSymmetry((2, 1, 3)),),
                 (1.0, 2.0, 1.0), 1.0)


def nems_field(N: int, alpha: float, beta: float) -> ExprVector:
    """Amplitude-phase ring field; state is ``[a_1..a_N, phi_1..phi_N]``.

    The phase equation uses ``cos(phi_{i-1} - phi_i)`` for the left
    neighbour, mirroring the amplitude equation, and the constant ``-2``
    inside the coupling bracket as written for the model.
    """
    a = [Var(i) for i in range(1, N + 1)]
    phi = [Var(N + i) for i in range(1, N + 1)]
    half_b = Const(beta / 2)
    amp, ph = [], []
    for i in range(N):
        nxt, prv = (i + 1) % N, (i - 1) % N
        dn, dp = phi[nxt] - phi[i], phi[prv] - phi[i]
        amp.append(-(a[i] - Const(1.0)) / Const(2.0) - half_b * (a[nxt] * Sin(dn) + a[prv] * Sin(dp)))
        ph.append(Const(float(alpha)) * a[i] ** 2
                  + half_b / a[i] * (a[nxt] * Cos(dn) + a[prv] * Cos(dp) - Const(2.0)))
    return ExprVector(tuple(amp + ph), 2 * N)


def nems_measurement(N: int) -> ExprVector:
    terms = [Cos(Var(N + i + 1) - Var(N + (i + 1) % N + 1)) for i in range(N)]
    h = terms[0]
    for t in terms[1:]:
        h = h + t
    return ExprVector((h,), 2 * N)


def nems_shift(N: int, shift: int | None = None) -> PermutationSymmetry:
    """Ring rotation by ``shift`` applied to amplitudes and phases alike."""
    s = N // 2 if shift is None else shift
    ring = [(i + s) % N + 1 for i in range(N)]
    return PermutationSymmetry(tuple(ring + [N + r for r in ring]), f"shift-{s}")


def nems_initial_state(N: int, seed: int = 42) -> np.ndarray:
    rng = np.random.default_rng(seed)
    amp = rng.uniform(0.8, 1.2, N)
    phase = np.pi - rng.uniform(0.0, 2 * np.pi, N)  # lands in (-pi, pi]
    return np.concatenate([amp, phase])


def nems_ring(N: int = 8, alpha: float = 1.0, beta: float = 0.1) -> Model:
    """Ring of ``N`` reactively coupled oscillators in amplitude-phase form.

    Amplitudes are guarded at ``1e-6`` because the phase equation divides by
    them. No Koopman set is known for this model.
    """
    if N < 3:
        raise ValueError("the ring needs at least three oscillators")
    f = nems_field(N, alpha, beta)
    h = nems_measurement(N)
    box = tuple([(0.5, 1.5)] * N + [(-math.pi, math.pi)] * N)
    sys = NonlinearSystem(f, h, box, f"nems-ring-{N}", guard=tuple(range(1, N + 1)))
    syms = (nems_shift(N),) if N % 2 == 0 else (nems_shift(N, 1),)
    return Model("nems-ring", sys, {"default": h}, None, syms, tuple(nems_initial_state(N)), 50.0,
                 notes=("no Koopman set is available; the Koopman rank test is skipped",
                        "symmetry of the amplitude-phase field and of the measurement is established by sampling, "
                        "and the trajectory distance below is the supporting evidence"))


MODELS: dict[str, Callable[[], Model]] = {
    "consensus-undirected": consensus_undirected,
    "consensus-directed": consensus_directed,
    "example2": example2,
    "nems-ring": nems_ring,
}


def get_model(name: str) -> Model:
    try:
        return MODELS[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; choose from {', '.join(MODELS)}") from None

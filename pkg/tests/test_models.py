import math

import numpy as np
import pytest

from koopobs.koopman import build_canonical, canonicalize, reconstruct_state
from koopobs.models import (A_DIRECTED, A_UNDIRECTED, MODELS, get_model, linear_koopman_extract, nems_field,
                            nems_measurement, nems_ring)
from koopobs.exprlang import evaluate_many


def _close(a, b, tol):
    a = sorted(a, key=lambda z: (round(z.real, 6), round(z.imag, 6)))
    b = sorted(b, key=lambda z: (round(z.real, 6), round(z.imag, 6)))
    return max(abs(x - y) for x, y in zip(a, b)) <= tol


def test_undirected_spectrum(undirected):
    assert _close(undirected.kset.eigenvalues, [0, -3, -3], 1e-10)
    assert _close(linear_koopman_extract(A_UNDIRECTED).eigenvalues, [0, -3, -3], 1e-10)


def test_directed_spectrum(directed):
    lam = math.sqrt(3) * np.exp(1j * 5 * math.pi / 6)
    assert _close(directed.kset.eigenvalues, [0, lam, lam.conjugate()], 1e-10)
    assert _close(linear_koopman_extract(A_DIRECTED).eigenvalues, [0, lam, lam.conjugate()], 1e-10)


def test_diagonal_extract():
    kset = linear_koopman_extract(np.diag([2.0, 3.0]))
    np.testing.assert_allclose(kset.eigenvalues, [3, 2])
    np.testing.assert_allclose(np.abs(kset.modes), np.eye(2)[:, ::-1])


def test_defective_matrix_rejected():
    with pytest.raises(ValueError, match="defective"):
        linear_koopman_extract(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_repeated_eigenvalue_keeps_full_span():
    # eig may return a repeated real eigenvalue as a conjugate pair with ~1e-16 imaginary part
    rng = np.random.default_rng(3)
    lams = rng.choice([-1.0, -2.0, 0.5, 1.5], size=4)
    rng.integers(-2, 3, size=(3, 4))  # keep the draw order of the case that exposed this
    T = rng.normal(size=(4, 4)) + 3 * np.eye(4)
    A = T @ np.diag(lams) @ np.linalg.inv(T)
    kset = linear_koopman_extract(A)
    assert np.linalg.matrix_rank(kset.modes) == 4
    assert all(abs(l.imag) == 0 for l in kset.eigenvalues)


def test_undirected_printed_coefficients_are_consistent(undirected):
    # psi_u2 is orthogonal to the consensus direction
    X = np.eye(3)
    vals = undirected.kset.values(X)
    assert abs(vals[:, 1].sum()) <= 1e-3
    assert abs(vals[:, 2].sum()) <= 1e-3


@pytest.mark.parametrize("name", ["example2", "consensus-undirected", "consensus-directed"])
def test_koopman_sets_validate(name):
    m = get_model(name)
    X = m.kset.sample(200, np.random.default_rng(0))
    assert all(c.passed for c in m.kset.validate(m.system, X))


def test_example2_reconstructs_state(ex2):
    cs = canonicalize(ex2.system, ex2.kset)
    x = np.array([0.3, -0.7, 1.1])
    np.testing.assert_allclose(reconstruct_state(cs, cs.transform(x)), x, atol=1e-10)


def test_consensus_reconstructs_state(directed):
    cs = build_canonical(directed.kset)
    x = np.array([0.3, -0.7, 1.1])
    np.testing.assert_allclose(cs.reconstruct(cs.transform(x)), x, atol=1e-10)


def test_nems_synchronised_state_rotates_uniformly():
    N, alpha = 8, 1.0
    f = nems_field(N, alpha, 0.1)
    x = np.concatenate([np.ones(N), np.full(N, 0.4)])
    dx = evaluate_many(list(f), x[None, :])[0]
    np.testing.assert_allclose(dx[:N], 0.0, atol=1e-15)
    np.testing.assert_allclose(dx[N:], alpha, atol=1e-15)


def test_nems_measurement_of_synchronised_state():
    x = np.concatenate([np.ones(8), np.full(8, -1.2)])
    assert evaluate_many(list(nems_measurement(8)), x[None, :])[0, 0] == pytest.approx(8.0)


def test_nems_ring_needs_three_oscillators():
    with pytest.raises(ValueError):
        nems_ring(2)


def test_nems_odd_ring_uses_unit_shift():
    assert nems_ring(5).symmetries[0].perm[:5] == (2, 3, 4, 5, 1)


def test_nems_initial_state_is_seeded(nems):
    x0 = np.array(nems.x0)
    assert np.all((x0[:8] >= 0.8) & (x0[:8] <= 1.2))
    assert np.all((x0[8:] > -math.pi) & (x0[8:] <= math.pi))
    assert nems_ring().x0 == nems.x0


def test_registry():
    assert set(MODELS) == {"example2", "consensus-undirected", "consensus-directed", "nems-ring"}
    with pytest.raises(KeyError):
        get_model("lorenz")
    with pytest.raises(KeyError):
        get_model("example2").with_measurement("missing")

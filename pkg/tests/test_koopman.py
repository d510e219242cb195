import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from koopobs.dynamics import flow
from koopobs.exprlang import Const, ExprVector, Mul, parse
from koopobs.koopman import (KoopmanEigenpair, KoopmanSet, SpanError, build_canonical, canonicalize,
                             expand_measurement, reconstruct_state, validate_eigenpair)


@pytest.fixture(scope="module")
def ex2_cs():
    from koopobs.models import example2
    m = example2()
    return m, canonicalize(m.system, m.kset, np.random.default_rng(0))


def _samples(kset, m=100, seed=5):
    return kset.sample(m, np.random.default_rng(seed))


def test_quadratic_eigenfunction_passes(ex2):
    pair = KoopmanEigenpair(2.0, parse("x1^2", 3), None, [0, 0, 1])
    assert validate_eigenpair(ex2.system, pair, _samples(ex2.kset)).passed


def test_wrong_eigenvalue_fails(ex2):
    pair = KoopmanEigenpair(3.0, parse("x1^2", 3), None, [0, 0, 1])
    check = validate_eigenpair(ex2.system, pair, _samples(ex2.kset))
    assert not check.passed and check.max_residual > 0.1


@pytest.mark.parametrize("name", ["example2", "consensus-directed", "nems-ring"])
def test_constant_is_always_an_eigenfunction(name):
    from koopobs.models import get_model
    sys = get_model(name).system
    pair = KoopmanEigenpair(0.0, Const(1.0), None, np.eye(sys.n)[0])
    X = np.random.default_rng(0).uniform(0.6, 1.4, (100, sys.n))
    assert validate_eigenpair(sys, pair, X).passed


def test_zero_mode_rejected():
    with pytest.raises(ValueError, match="nonzero"):
        KoopmanEigenpair(1.0, parse("x1", 1), None, [0.0])


def test_unpaired_complex_eigenvalue_rejected():
    pair = KoopmanEigenpair(1 + 1j, parse("x1", 2), parse("x2", 2), [1, 0])
    with pytest.raises(ValueError, match="conjugate"):
        KoopmanSet((pair,), 2)


def test_example2_lambda(ex2_cs):
    _, cs = ex2_cs
    np.testing.assert_array_equal(cs.Lambda, np.diag([1.0, 1, 2, 2, 4]))


def test_directed_lambda_block(directed):
    cs = build_canonical(directed.kset)
    assert cs.Lambda[0, 0] == 0.0
    block = cs.Lambda[1:, 1:]
    a, b = block[0, 0], block[0, 1]
    assert block[1, 0] == -b and block[1, 1] == a
    assert abs(math.hypot(a, b) - math.sqrt(3)) <= 1e-12
    assert abs(abs(math.atan2(b, a)) - 5 * math.pi / 6) <= 1e-12


def test_lambda_block_eigenvectors(directed):
    cs = build_canonical(directed.kset)
    W = cs.eigenvectors()
    np.testing.assert_allclose(cs.Lambda @ W, W @ np.diag(directed.kset.eigenvalues), atol=1e-12)


def test_constant_alone_cannot_span_state():
    kset = KoopmanSet((KoopmanEigenpair(0.0, Const(1.0), None, [1.0, 0, 0]),), 3)
    with pytest.raises(SpanError, match="cannot span state"):
        build_canonical(kset)


def test_example2_measurement_expansion(ex2):
    C = expand_measurement(ex2.system, ex2.kset)
    np.testing.assert_allclose(C, [[0, 0, 2, 2, 1]], atol=1e-10)


def test_example2_alternative_expansion(ex2):
    C = expand_measurement(ex2.with_measurement("alt"), ex2.kset)
    np.testing.assert_allclose(C, [[2, 0, 1, 0, 1], [0, 1, 0, 1, 1]], atol=1e-10)


def test_single_eigenfunction_measurement(ex2):
    sys = ex2.system.with_measurement(ExprVector.parse(["-x1^2-x2^2+x3"], 3))
    np.testing.assert_allclose(expand_measurement(sys, ex2.kset), [[0, 0, 0, 0, 1]], atol=1e-10)


def test_measurement_outside_span(ex2):
    sys = ex2.system.with_measurement(ExprVector.parse(["x1*x3"], 3))
    with pytest.raises(SpanError, match="not in Koopman span"):
        expand_measurement(sys, ex2.kset)


def test_directed_complex_expansion(directed):
    C = expand_measurement(directed.system, directed.kset)
    np.testing.assert_allclose(C, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-12)
    cs = build_canonical(directed.kset, C)
    np.testing.assert_allclose(cs.C, [[1 / 3, 2 / 3, 0]], atol=1e-12)


def test_reconstruct_hand_example(ex2_cs):
    _, cs = ex2_cs
    z = cs.transform(np.array([1.0, 2.0, 1.0]))
    np.testing.assert_array_equal(z, [1, 2, 1, 4, -4])
    np.testing.assert_array_equal(reconstruct_state(cs, z), [1, 2, 1])


def test_reconstruct_origin(ex2_cs):
    _, cs = ex2_cs
    np.testing.assert_array_equal(reconstruct_state(cs, cs.transform(np.zeros(3))), np.zeros(3))


def test_reconstruct_dimension_mismatch(ex2_cs):
    with pytest.raises(ValueError):
        reconstruct_state(ex2_cs[1], np.zeros(4))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=3, max_size=3))
def test_round_trip_property(x):
    from koopobs.models import example2, consensus_directed
    for m in (example2(), consensus_directed()):
        cs = build_canonical(m.kset)
        x = np.asarray(x)
        assert np.max(np.abs(cs.reconstruct(cs.transform(x)) - x)) <= 1e-8


def test_spectral_propagation_matches_flow(ex2_cs, rng):
    m, cs = ex2_cs
    for x0 in rng.uniform(-1, 1, (3, 3)):
        traj = flow(m.system, x0, 1.0)
        z0 = cs.transform(x0)
        for k in range(0, len(traj.times), 100):
            x_lin = cs.reconstruct(expm(cs.Lambda * traj.times[k]) @ z0)
            assert np.max(np.abs(x_lin - traj.states[k])) <= 1e-5


def test_product_of_eigenfunctions(ex2):
    X = _samples(ex2.kset)
    p1, p2 = ex2.kset[0], ex2.kset[1]
    prod = KoopmanEigenpair(p1.lam + p2.lam, Mul(p1.psi_re, p2.psi_re), None, [0, 0, 1])
    assert validate_eigenpair(ex2.system, prod, X).passed


def test_expansion_reproduces_measurement_on_fresh_points(ex2_cs):
    m, cs = ex2_cs
    X = _samples(m.kset, seed=99)
    np.testing.assert_allclose(cs.transform(X) @ cs.C.T, m.system.measure_many(X), atol=1e-8, rtol=0)


def test_directed_real_form_reproduces_measurement(directed):
    C = expand_measurement(directed.system, directed.kset)
    cs = build_canonical(directed.kset, C)
    X = _samples(directed.kset, seed=3)
    np.testing.assert_allclose(cs.transform(X) @ cs.C.T, directed.system.measure_many(X), atol=1e-10)


def test_dependent_eigenfunctions_rejected():
    pairs = (KoopmanEigenpair(1.0, parse("x1", 1), None, [1.0]),
             KoopmanEigenpair(1.0, parse("2*x1", 1), None, [1.0]))
    with pytest.raises(SpanError, match="independent"):
        build_canonical(KoopmanSet(pairs, 1))
